"""End-to-end training of the embedding net and frame-by-frame tracking."""
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .association import TrackletStore, associate_frame
from .cva import (BETA, TEMPERATURE, OffsetField, build_cost_volume, build_supervision, pooled_origin,
                  cva_loss, cva_loss_grad, match_gate, offset_field, upsample_offsets)
from .embedding import (EmbeddingNet, OptimizerState, downsample_backward,
                        downsample_embedding, optimizer_step)
from .errors import InputError
from .gridmath import FeatureGrid
from .io import MotRecord
from .mfw import (HEATMAP_CHANNEL, AggregationConfig, WarpKernel, aggregate,
                  center_attentive, detect_peaks, make_dcn_offsets, spread_offsets, warp)
from .synth import GroundTruthTrack, gt_at

log = logging.getLogger(__name__)


def embedding_channels(grid):
    """Number of channels the embedding net reads: everything but the heatmap."""
    return grid.channels - 1


def new_embedding_net(grid, rng=None, **kw):
    """Embedding net sized for ``grid``'s appearance channels."""
    return EmbeddingNet.init(embedding_channels(grid), rng=rng, **kw)


def embed_frames(net, grids):
    """Run the net once over the stacked cells of several frames.

    The heatmap channel is left out: it is shared by every visible object and
    missing for hidden ones, so it carries no identity.
    """
    h, w, c = grids[0].shape
    keep = [k for k in range(c) if k != HEATMAP_CHANNEL]
    x = np.concatenate([g.data[:, :, keep].reshape(h * w, c - 1) for g in grids])
    y = net.forward_cells(x)
    return [FeatureGrid(blk.reshape(h, w, -1), g.stride)
            for blk, g in zip(np.split(y, len(grids)), grids)]


def supervision_pairs(n, taus=(1,)):
    """(t, t - tau) index pairs over ``n`` frames."""
    pairs = []
    for t in range(n):
        for tau in taus:
            if t - tau < 0:
                continue
            pairs.append((t, t - tau))
    return pairs


def train_embedding(net, grids, tracks, steps=200, lr=1.25e-4, beta=BETA,
                    temperature=TEMPERATURE, seed=0, batch=4, taus=(1,), callback=None,
                    include_occluded=False):
    """Fit ``net`` with the cost-volume loss on frame pairs of one scene.

    ``grids`` are the per-frame feature grids, ``tracks`` the ground truth
    used to build supervision. ``include_occluded`` also supervises objects
    hidden in a frame, which only makes sense when they leave a faint trace
    there. Returns the per-step mean loss.
    """
    vis = not include_occluded
    rng = np.random.default_rng(seed)
    stride = grids[0].stride * 2
    hc, wc = grids[0].height // 2, grids[0].width // 2
    pairs = []
    for t, tp in supervision_pairs(len(grids), taus):
        cur = [(i, c) for i, c, _ in gt_at(tracks, t, visible_only=vis)]
        prev = [(i, c) for i, c, _ in gt_at(tracks, tp, visible_only=vis)]
        y = build_supervision(cur, prev, stride, hc, wc, strict=False,
                                  origin=pooled_origin(stride))
        if len(y):
            pairs.append((t, tp, y))
    if not pairs:
        raise InputError("scene has no frame pair with a shared visible object")
    opt = OptimizerState(learning_rate=lr)
    losses = []
    for step in range(steps):
        pick = rng.choice(len(pairs), size=min(batch, len(pairs)), replace=False)
        chosen = [pairs[k] for k in sorted(pick)]
        frames = sorted({t for t, _, _ in chosen} | {tp for _, tp, _ in chosen})
        slot = {t: k for k, t in enumerate(frames)}
        emb = embed_frames(net, [grids[t] for t in frames])
        coarse = [downsample_embedding(e) for e in emb]
        cgrad = [np.zeros_like(c.data) for c in coarse]
        total = 0.0
        for t, tp, y in chosen:
            a, b = coarse[slot[t]], coarse[slot[tp]]
            cv = build_cost_volume(a, b)
            loss, ga, gb = cva_loss_grad(cv, y, a, b, beta, temperature)
            total += loss
            cgrad[slot[t]] += ga / len(chosen)
            cgrad[slot[tp]] += gb / len(chosen)
        up = np.concatenate([downsample_backward(g).reshape(-1, g.shape[-1]) for g in cgrad])
        grads, _ = net.backward_cells(up)
        optimizer_step(opt, net.parameters(), grads)
        losses.append(total / len(chosen))
        if callback is not None:
            callback(step, losses[-1])
    return losses


def cva_loss_of(net, grids, pairs, beta=BETA, temperature=TEMPERATURE):
    """Mean loss over (t, tp, mask) pairs without touching the optimiser."""
    total = 0.0
    for t, tp, y in pairs:
        a, b = (downsample_embedding(e) for e in embed_frames(net, [grids[t], grids[tp]]))
        total += cva_loss(build_cost_volume(a, b), y, beta, temperature)
    return total / len(pairs)


@dataclass
class TrackerConfig:
    mode: str = "cva"
    T: int = 2
    threshold: float = 0.3
    max_age: int = 32
    mfw: bool = True
    score_threshold: float = 0.3
    weight_mode: str = "average"
    temperature: float = TEMPERATURE
    embedding_policy: str = "latest"
    gate: bool = True
    spread: float = 6.0
    default_box: tuple = (24.0, 24.0)

    def __post_init__(self):
        if self.mode not in ("cva", "baseline"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.T < 1:
            raise InputError("T must be >= 1")


def gt_box_lookup(tracks, default=(24.0, 24.0)):
    """Box size for a detection: that of the nearest ground-truth center in the
    same frame, occluded objects included."""
    def lookup(t, center):
        best = None
        for _, c, box in gt_at(tracks, t, visible_only=False):
            d = np.hypot(c[0] - center[0], c[1] - center[1])
            if best is None or d < best[0]:
                best = (d, box)
        return default if best is None else best[1]
    return lookup


@dataclass
class FrameResult:
    frame: int
    detections: list
    offsets: OffsetField  # O^C towards the previous frame (zeros when unavailable)
    heatmap: np.ndarray  # heatmap the detections were picked from


class Tracker:
    """Online tracker over (features, heatmap) frames."""

    def __init__(self, cfg, net=None, box_lookup=None, kernel=None, residual_weights=None):
        if cfg.mode == "cva" and net is None:
            raise InputError("cva mode needs an embedding net")
        self.cfg = cfg
        self.net = net
        self.box_lookup = box_lookup or (lambda t, c: cfg.default_box)
        self.kernel = kernel or WarpKernel()
        self.residual_weights = residual_weights
        self.store = TrackletStore(cfg.threshold, cfg.max_age, cfg.embedding_policy)
        self.history = deque(maxlen=cfg.T)  # (f, p_agn, e, e_coarse), newest last
        self.frame = -1

    def _embed(self, f):
        if self.net is None:
            return None, None
        e = embed_frames(self.net, [f])[0]
        return e, downsample_embedding(e)

    def step(self, f, p_agn):
        self.frame += 1
        t = self.frame
        cfg = self.cfg
        e, ec = self._embed(f)
        prev = list(self.history)[::-1]  # tau = 1, 2, ...
        o_cs = []
        gates = []
        for _, _, _, ec_prev in prev:
            if cfg.mode == "cva":
                cv = build_cost_volume(ec, ec_prev)
                o = offset_field(cv, cfg.temperature)
                o_cs.append(upsample_offsets(o))
                gate = match_gate(cv, ec_prev, o)
                gates.append(np.repeat(np.repeat(gate, 2, axis=0), 2, axis=1)
                             if cfg.gate else None)
            else:
                o_cs.append(OffsetField.zeros(f.height, f.width, f.stride))
                gates.append(None)

        heat = p_agn.data[:, :, 0]
        if cfg.mfw and prev:
            warped, valid = [], []
            for (f_prev, p_prev, _, _), o_c, gate in zip(prev, o_cs, gates):
                residual = FeatureGrid(f.data - f_prev.data, f.stride) \
                    if self.residual_weights is not None else None
                if gate is not None:
                    o_c, gate = spread_offsets(o_c, gate, cfg.spread)
                    valid.append(gate)
                else:
                    valid.append(None)
                o_d = make_dcn_offsets(o_c, residual, self.kernel.size, self.residual_weights)
                warped.append(warp(center_attentive(f_prev, p_prev), o_d, self.kernel))
            agg = aggregate(f, warped, AggregationConfig(len(warped), cfg.weight_mode), valid)
            heat = agg.data[:, :, HEATMAP_CHANNEL]

        dets = detect_peaks(FeatureGrid(heat, f.stride), cfg.score_threshold, frame=t)
        for d in dets:
            d.box = tuple(self.box_lookup(t, d.center))
            if e is not None:
                d.embedding = e.data[d.cell[0], d.cell[1]].copy()
        o_c = o_cs[0] if o_cs else OffsetField.zeros(f.height, f.width, f.stride)
        associate_frame(self.store, dets, o_c, mode=cfg.mode, frame=t)
        self.history.append((f, p_agn, e, ec))
        return FrameResult(t, dets, o_c, heat)


def track_sequence(frames, cfg, net=None, box_lookup=None, **kw):
    """Track an iterable of (features, heatmap) pairs; returns FrameResults."""
    tracker = Tracker(cfg, net, box_lookup, **kw)
    return [tracker.step(f, p) for f, p in frames]


def results_to_records(results):
    recs = []
    for res in results:
        for d in res.detections:
            left, top, w, h = d.tlwh()
            recs.append(MotRecord(res.frame + 1, d.track_id, left, top, w, h, d.score))
    return recs


def tracks_to_records(tracks):
    """Ground truth as MOT rows, every frame of every object.

    Occluded objects stay in (they are still expected targets); their conf
    column is 0 instead of 1.
    """
    recs = []
    for tr in tracks:
        w, h = tr.box
        for f, (x, y), vis in zip(tr.frames, tr.centers, tr.visible):
            recs.append(MotRecord(int(f) + 1, tr.id, x - w / 2, y - h / 2, w, h,
                                  1.0 if vis else 0.0))
    return recs


def gt_tracks_from_records(records):
    """Inverse of ``tracks_to_records``: one track per id, box from its first row."""
    by_id = {}
    for r in sorted(records, key=lambda r: (r.id, r.frame)):
        by_id.setdefault(r.id, []).append(r)
    tracks = []
    for oid, rows in sorted(by_id.items()):
        tracks.append(GroundTruthTrack(
            oid,
            np.array([r.frame - 1 for r in rows]),
            np.array([(r.left + r.width / 2, r.top + r.height / 2) for r in rows]),
            (rows[0].width, rows[0].height),
            np.array([r.conf > 0 for r in rows])))
    return tracks
