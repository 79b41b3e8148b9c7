"""CLEAR-MOT and identity metrics.

Boxes are (left, top, width, height). Track sets are mappings
``frame -> {object id: box}``; see ``tracks_from_records`` for building them
from MOT rows.
"""
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError

_FORBIDDEN = 1e12


def iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def hungarian(cost):
    """Minimum-cost assignment. ``inf`` entries are forbidden pairs and never
    returned. Returns a list of (row, col) pairs sorted by row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    n = max(cost.shape)
    padded = np.full((n, n), 0.0)
    finite = np.where(np.isfinite(cost), cost, _FORBIDDEN)
    padded[:cost.shape[0], :cost.shape[1]] = finite
    rows, cols = linear_sum_assignment(padded)
    return [(int(r), int(c)) for r, c in zip(rows, cols)
            if r < cost.shape[0] and c < cost.shape[1] and np.isfinite(cost[r, c])]


@dataclass
class EvalReport:
    mota: float
    idf1: float
    ids: int
    fp: int
    fn: int
    frag: int
    mt_ratio: float
    ml_ratio: float
    total_gt: int
    matches: int
    idtp: int
    idfp: int
    idfn: int
    mt: int
    ml: int
    num_gt_tracks: int
    per_frame: dict = field(default_factory=dict, repr=False)

    _KEYS = ("mota", "idf1", "ids", "fp", "fn", "frag", "mt_ratio", "ml_ratio",
             "total_gt", "matches", "idtp", "idfp", "idfn", "mt", "ml", "num_gt_tracks")

    def summary(self):
        return {k: getattr(self, k) for k in self._KEYS}

    def to_text(self):
        lines = []
        for k, v in self.summary().items():
            lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps(self.summary(), indent=2) + "\n"

    def frame_counts(self):
        """Per-frame (frame, matches, fp, fn, switches) rows, frame order."""
        return [(f, len(v["matches"]), v["fp"], v["fn"], v["switches"])
                for f, v in sorted(self.per_frame.items())]


def _check_frames(tracks, what):
    for frame, objs in tracks.items():
        if len(set(objs)) != len(objs):
            raise DataError(f"duplicate {what} id in frame {frame}")


def tracks_from_records(records):
    """MOT rows -> {frame: {id: box}}; a repeated id within a frame is a data error."""
    out = defaultdict(dict)
    for r in records:
        if r.id in out[r.frame]:
            raise DataError(f"id {r.id} appears twice in frame {r.frame}")
        out[r.frame][r.id] = (r.left, r.top, r.width, r.height)
    return dict(out)


def evaluate(gt, hyp, iou_threshold=0.5):
    """CLEAR-MOT counts plus IDF1.

    A ground-truth object keeps the hypothesis it was last matched to while
    their overlap stays at or above ``iou_threshold``; the rest is solved by
    Hungarian matching on 1 - IoU.
    """
    _check_frames(gt, "ground-truth")
    _check_frames(hyp, "hypothesis")
    frames = sorted(set(gt) | set(hyp))
    last_match = {}
    tracked = defaultdict(list)  # gt id -> [(frame, matched?)]
    id_overlap = defaultdict(int)
    gt_count = defaultdict(int)
    hyp_count = defaultdict(int)
    per_frame = {}
    fp = fn = ids = total_gt = n_matches = 0

    for frame in frames:
        g = gt.get(frame, {})
        h = hyp.get(frame, {})
        total_gt += len(g)
        for gid, gbox in g.items():
            gt_count[gid] += 1
            for hid, hbox in h.items():
                if iou(gbox, hbox) >= iou_threshold:
                    id_overlap[(gid, hid)] += 1
        for hid in h:
            hyp_count[hid] += 1

        matches = {}
        for gid in sorted(g):
            hid = last_match.get(gid)
            if hid is not None and hid in h and hid not in matches.values() \
                    and iou(g[gid], h[hid]) >= iou_threshold:
                matches[gid] = hid
        rest_g = [gid for gid in sorted(g) if gid not in matches]
        used = set(matches.values())
        rest_h = [hid for hid in sorted(h) if hid not in used]
        if rest_g and rest_h:
            cost = np.full((len(rest_g), len(rest_h)), np.inf)
            for a, gid in enumerate(rest_g):
                for b, hid in enumerate(rest_h):
                    ov = iou(g[gid], h[hid])
                    if ov >= iou_threshold:
                        cost[a, b] = 1.0 - ov
            for a, b in hungarian(cost):
                matches[rest_g[a]] = rest_h[b]

        switches = 0
        for gid, hid in matches.items():
            prev = last_match.get(gid)
            if prev is not None and prev != hid:
                switches += 1
            last_match[gid] = hid
        for gid in g:
            tracked[gid].append(gid in matches)

        f_fn = len(g) - len(matches)
        f_fp = len(h) - len(matches)
        fn += f_fn
        fp += f_fp
        ids += switches
        n_matches += len(matches)
        per_frame[frame] = {"matches": sorted(matches.items()), "fp": f_fp,
                            "fn": f_fn, "switches": switches}

    frag = 0
    mt = ml = 0
    for gid, states in tracked.items():
        ratio = sum(states) / len(states)
        if ratio >= 0.8:
            mt += 1
        elif ratio <= 0.2:
            ml += 1
        frag += _fragmentations(states)

    gids = sorted(gt_count)
    hids = sorted(hyp_count)
    idtp = 0
    if gids and hids:
        overlap = np.zeros((len(gids), len(hids)))
        for (gid, hid), n in id_overlap.items():
            overlap[gids.index(gid), hids.index(hid)] = n
        for a, b in hungarian(-overlap):
            idtp += int(overlap[a, b])
    total_hyp = sum(hyp_count.values())
    idfn = total_gt - idtp
    idfp = total_hyp - idtp
    denom = total_gt + total_hyp
    idf1 = 2.0 * idtp / denom if denom else 1.0
    mota = 1.0 - (fn + fp + ids) / total_gt if total_gt else 0.0
    n_tracks = len(tracked)
    return EvalReport(
        mota=mota, idf1=idf1, ids=ids, fp=fp, fn=fn, frag=frag,
        mt_ratio=mt / n_tracks if n_tracks else 0.0,
        ml_ratio=ml / n_tracks if n_tracks else 0.0,
        total_gt=total_gt, matches=n_matches, idtp=idtp, idfp=idfp, idfn=idfn,
        mt=mt, ml=ml, num_gt_tracks=n_tracks, per_frame=per_frame)


def _fragmentations(states):
    """Count tracked -> untracked transitions that are later resumed."""
    count = 0
    was_tracked = False
    gap = False
    for s in states:
        if s:
            if gap and was_tracked:
                count += 1
            was_tracked = True
            gap = False
        elif was_tracked:
            gap = True
    return count


def merge_reports(reports):
    """Sum counts over sequences, then recompute the ratios."""
    keys = ("ids", "fp", "fn", "frag", "total_gt", "matches", "idtp", "idfp",
            "idfn", "mt", "ml", "num_gt_tracks")
    tot = {k: sum(getattr(r, k) for r in reports) for k in keys}
    denom = 2 * tot["idtp"] + tot["idfp"] + tot["idfn"]
    n = tot["num_gt_tracks"]
    return EvalReport(
        mota=1.0 - (tot["fn"] + tot["fp"] + tot["ids"]) / tot["total_gt"] if tot["total_gt"] else 0.0,
        idf1=2.0 * tot["idtp"] / denom if denom else 1.0,
        mt_ratio=tot["mt"] / n if n else 0.0, ml_ratio=tot["ml"] / n if n else 0.0,
        **tot)

