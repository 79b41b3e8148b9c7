"""Tracklet bookkeeping and two-round data association.

Round one matches each detection to the closest unclaimed detection of the
previous frame near its offset-corrected position. Round two falls back to
cosine similarity against tracklets that are still unmatched, including ones
that have been unseen for a while.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, StateError

ROUND_TWO_THRESHOLD = 0.3
MAX_AGE = 32


@dataclass
class Detection:
    frame: int
    center: tuple  # (x, y) input pixels
    box: tuple = (1.0, 1.0)  # (width, height) input pixels
    score: float = 1.0
    embedding: np.ndarray = field(default=None, repr=False)
    cell: tuple = None  # (row, col) on the grid it was picked from
    track_id: int = None

    def __post_init__(self):
        if self.box[0] <= 0 or self.box[1] <= 0:
            raise InputError(f"box extents must be positive, got {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score must lie in [0, 1], got {self.score}")

    @property
    def radius(self):
        return float(np.sqrt(self.box[0] * self.box[1]))

    def tlwh(self):
        w, h = self.box
        return (self.center[0] - w / 2.0, self.center[1] - h / 2.0, w, h)


@dataclass
class Tracklet:
    id: int
    detections: list = field(default_factory=list)
    embedding: np.ndarray = field(default=None, repr=False)
    state: str = "active"
    last_seen: int = -1
    age_since_seen: int = 0


def cosine_similarity(a, b):
    if a is None or b is None:
        return 0.0
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def update_tracklet_embedding(tracklet, det, policy="latest", momentum=0.9):
    """Refresh the tracklet's appearance vector after a match.

    ``latest`` replaces it; ``ema`` keeps momentum*old + (1-momentum)*new.
    """
    new = None if det.embedding is None else np.asarray(det.embedding, dtype=np.float64)
    if policy == "ema" and tracklet.embedding is not None and new is not None:
        tracklet.embedding = momentum * tracklet.embedding + (1.0 - momentum) * new
    elif policy in ("latest", "ema"):
        tracklet.embedding = None if new is None else new.copy()
    else:
        raise InputError(f"unknown embedding policy {policy!r}")
    return tracklet


def da_round_one(dets, prev_unmatched, o_c):
    """Greedy offset-guided proximity matching.

    Returns {current index: previous index}. Each detection searches a disc of
    radius sqrt(w*h) around center + O^C(center); pairs are taken in ascending
    (distance, previous index, current index) order.
    """
    pairs = []
    for ci, det in enumerate(dets):
        if o_c is None:
            dy, dx = 0.0, 0.0
        else:
            dy, dx = o_c.at_pixel(*det.center)
        sx = det.center[0] + dx
        sy = det.center[1] + dy
        r = det.radius
        for pi, prev in enumerate(prev_unmatched):
            d = float(np.hypot(prev.center[0] - sx, prev.center[1] - sy))
            if d <= r:
                pairs.append((d, pi, ci))
    pairs.sort()
    taken_cur = set()
    taken_prev = set()
    match = {}
    for d, pi, ci in pairs:
        if ci in taken_cur or pi in taken_prev:
            continue
        taken_cur.add(ci)
        taken_prev.add(pi)
        match[ci] = pi
    return match


def da_round_two(det, tracklets, threshold=ROUND_TWO_THRESHOLD):
    """Id of the most similar candidate tracklet if that similarity exceeds
    ``threshold``; ties go to the lower id."""
    best_id = None
    best = -np.inf
    for t in sorted(tracklets, key=lambda t: t.id):
        sim = cosine_similarity(det.embedding, t.embedding)
        if sim > best:
            best = sim
            best_id = t.id
    if best_id is not None and best > threshold:
        return best_id
    return None


class TrackletStore:
    """Per-sequence tracklet state. Not safe to share between threads."""

    def __init__(self, threshold=ROUND_TWO_THRESHOLD, max_age=MAX_AGE,
                 embedding_policy="latest", momentum=0.9):
        self.threshold = threshold
        self.max_age = max_age
        self.embedding_policy = embedding_policy
        self.momentum = momentum
        self.tracklets = {}
        self.retired = {}
        self.prev_dets = []
        self.frame = None
        self.next_id = 1
        self.round_two_matches = 0

    def active(self):
        return [t for t in self.tracklets.values() if t.state == "active"]

    def _new_tracklet(self):
        t = Tracklet(id=self.next_id)
        self.next_id += 1
        self.tracklets[t.id] = t
        return t

    def _attach(self, tracklet, det, frame):
        det.track_id = tracklet.id
        tracklet.detections.append(det)
        tracklet.state = "active"
        tracklet.last_seen = frame
        tracklet.age_since_seen = 0
        update_tracklet_embedding(tracklet, det, self.embedding_policy, self.momentum)


def associate_frame(store, dets, o_c=None, mode="cva", frame=None):
    """Assign track ids to one frame's detections, updating ``store`` in place.

    mode "cva" uses ``o_c`` for round one and runs round two; "baseline" uses a
    zero offset and skips round two (no learned embedding in that ablation).
    Returns the detections with ``track_id`` filled in.
    """
    if mode not in ("cva", "baseline"):
        raise InputError(f"unknown association mode {mode!r}")
    if frame is None:
        frame = dets[0].frame if dets else (0 if store.frame is None else store.frame + 1)
    if store.frame is not None and frame <= store.frame:
        raise StateError(f"frame {frame} does not follow frame {store.frame}")

    offsets = o_c if mode == "cva" else None
    live_prev = [d for d in store.prev_dets if d.track_id in store.tracklets]
    r1 = da_round_one(dets, live_prev, offsets)

    claimed = set()
    assigned = {}
    for ci in sorted(r1):
        tid = live_prev[r1[ci]].track_id
        assigned[ci] = tid
        claimed.add(tid)

    if mode == "cva":
        for ci, det in enumerate(dets):
            if ci in assigned:
                continue
            candidates = [t for tid, t in store.tracklets.items() if tid not in claimed]
            tid = da_round_two(det, candidates, store.threshold)
            if tid is not None:
                assigned[ci] = tid
                claimed.add(tid)
                store.round_two_matches += 1

    for ci, det in enumerate(dets):
        if ci in assigned:
            store._attach(store.tracklets[assigned[ci]], det, frame)
        else:
            t = store._new_tracklet()
            claimed.add(t.id)
            store._attach(t, det, frame)

    for tid in list(store.tracklets):
        t = store.tracklets[tid]
        if tid in claimed:
            continue
        t.age_since_seen = frame - t.last_seen
        t.state = "inactive"
        if t.age_since_seen > store.max_age:
            store.retired[tid] = store.tracklets.pop(tid)

    store.prev_dets = list(dets)
    store.frame = frame
    return dets
