"""Deterministic synthetic sequences standing in for backbone output.

Objects are axis-aligned boxes moving at constant velocity with reflective
walls. Each frame renders a class-agnostic center heatmap (sum of Gaussian
blobs, clipped to [0, 1]) and a feature grid whose channel 0 repeats the
heatmap and whose remaining channels carry each object's fixed appearance
vector over its blob, plus i.i.d. noise.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .association import Detection
from .errors import ConfigError, InputError
from .gridmath import FeatureGrid


@dataclass
class ObjectSpec:
    center: tuple  # (x, y) px at frame 0
    velocity: tuple  # (vx, vy) px per raw frame
    box: tuple  # (w, h) px


@dataclass
class SceneConfig:
    height: int = 64  # feature cells
    width: int = 64
    stride: int = 4
    n_objects: int = 4
    velocity_range: tuple = (2.0, 6.0)
    box_range: tuple = (32.0, 48.0)
    appearance_dim: int = 32
    noise: float = 0.05
    occlusions: list = field(default_factory=list)  # (object id, first, last), kept-frame indices
    n_frames: int = 20
    frame_stride: int = 1
    seed: int = 0
    lattice: int = 0  # snap centers to multiples of this many px; 0 disables
    occlusion_residual: float = 0.0  # appearance fraction still rendered while occluded
    objects: list = None  # explicit ObjectSpec list overrides random placement

    def validate(self):
        if min(self.height, self.width, self.stride, self.n_objects,
               self.appearance_dim, self.n_frames, self.frame_stride) < 1:
            raise ConfigError("grid dims, counts and strides must all be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if not 0.0 <= self.occlusion_residual <= 1.0:
            raise ConfigError("occlusion_residual must lie in [0, 1]")
        lo, hi = self.velocity_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad velocity range {self.velocity_range}")
        blo, bhi = self.box_range
        if blo <= 0 or bhi < blo:
            raise ConfigError(f"bad box range {self.box_range}")
        ext = self.extent
        biggest = bhi if self.objects is None else max(max(o.box) for o in self.objects)
        if biggest >= min(ext):
            raise ConfigError("objects do not fit inside the grid")

    @property
    def extent(self):
        """Largest addressable pixel coordinate (x, y)."""
        return ((self.width - 1) * self.stride, (self.height - 1) * self.stride)


@dataclass
class GroundTruthTrack:
    id: int
    frames: np.ndarray  # frame indices
    centers: np.ndarray  # n x 2, (x, y) px
    box: tuple  # (w, h) px
    visible: np.ndarray  # n bools
    appearance: np.ndarray = field(default=None, repr=False)

    def index_of(self, t):
        hits = np.nonzero(self.frames == t)[0]
        return int(hits[0]) if hits.size else None


def simulate(center, velocity, box, n_frames, extent):
    """Constant-velocity path reflected off [box/2, extent - box/2] on each axis."""
    pos = np.array(center, dtype=np.float64)
    vel = np.array(velocity, dtype=np.float64)
    lo = np.array(box, dtype=np.float64) / 2.0
    hi = np.array(extent, dtype=np.float64) - lo
    out = np.zeros((n_frames, 2))
    for t in range(n_frames):
        out[t] = pos
        pos = pos + vel
        for a in range(2):
            # a velocity larger than the corridor can bounce more than once
            while pos[a] < lo[a] or pos[a] > hi[a]:
                if pos[a] < lo[a]:
                    pos[a] = 2 * lo[a] - pos[a]
                else:
                    pos[a] = 2 * hi[a] - pos[a]
                vel[a] = -vel[a]
    return out


def subsample(tracks, frame_stride):
    """Keep every ``frame_stride``-th frame and renumber frames from 0."""
    if frame_stride < 1:
        raise InputError("frame_stride must be >= 1")
    out = []
    for tr in tracks:
        keep = (tr.frames % frame_stride) == 0
        out.append(GroundTruthTrack(tr.id, tr.frames[keep] // frame_stride,
                                    tr.centers[keep].copy(), tr.box,
                                    tr.visible[keep].copy(), tr.appearance))
    return out


def generate_scene(cfg):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    ext = np.array(cfg.extent, dtype=np.float64)
    specs = cfg.objects
    if specs is None:
        specs = []
        for _ in range(cfg.n_objects):
            w, h = rng.uniform(*cfg.box_range, size=2)
            c = rng.uniform([w / 2, h / 2], ext - [w / 2, h / 2])
            speed = rng.uniform(*cfg.velocity_range)
            ang = rng.uniform(0, 2 * math.pi)
            specs.append(ObjectSpec(tuple(c), (speed * math.cos(ang), speed * math.sin(ang)),
                                    (float(w), float(h))))
    tracks = []
    frames = np.arange(cfg.n_frames)
    for k, spec in enumerate(specs):
        centers = simulate(spec.center, spec.velocity, spec.box, cfg.n_frames, ext)
        tracks.append(GroundTruthTrack(k + 1, frames.copy(), centers, tuple(spec.box),
                                       np.ones(cfg.n_frames, dtype=bool)))
    for tr in tracks:
        a = rng.normal(size=cfg.appearance_dim)
        tr.appearance = a / np.linalg.norm(a)
    if cfg.frame_stride > 1:
        tracks = subsample(tracks, cfg.frame_stride)
    if cfg.lattice:
        for tr in tracks:
            half = np.array(tr.box) / 2.0
            lo = np.ceil(half / cfg.lattice) * cfg.lattice
            hi = np.floor((ext - half) / cfg.lattice) * cfg.lattice
            tr.centers = np.clip(np.round(tr.centers / cfg.lattice) * cfg.lattice, lo, hi)
    by_id = {tr.id: tr for tr in tracks}
    for oid, first, last in cfg.occlusions:
        if oid not in by_id:
            raise ConfigError(f"occlusion names unknown object {oid}")
        tr = by_id[oid]
        tr.visible[(tr.frames >= first) & (tr.frames <= last)] = False
    return tracks


def blob_sigma(box, stride):
    """Gaussian radius in cells for a (w, h) box."""
    return max(1.0, math.sqrt(box[0] * box[1]) / (4.0 * stride))


def render_frame(tracks, t, cfg):
    """(features, heatmap, visible detections) for frame ``t``."""
    h, w, s = cfg.height, cfg.width, cfg.stride
    rows, cols = np.meshgrid(np.arange(h) * float(s), np.arange(w) * float(s), indexing="ij")
    heat = np.zeros((h, w))
    app = np.zeros((h, w, cfg.appearance_dim))
    dets = []
    for tr in tracks:
        k = tr.index_of(t)
        if k is None:
            continue
        x, y = tr.centers[k]
        sig = blob_sigma(tr.box, s) * s
        blob = np.exp(-((cols - x) ** 2 + (rows - y) ** 2) / (2 * sig * sig))
        blob[blob < 1e-4] = 0.0
        if tr.visible[k]:
            heat += blob
            app += blob[:, :, None] * tr.appearance
            dets.append(Detection(frame=t, center=(float(x), float(y)), box=tr.box,
                                  score=1.0, embedding=tr.appearance, track_id=tr.id))
        elif cfg.occlusion_residual > 0:
            app += cfg.occlusion_residual * blob[:, :, None] * tr.appearance
    heat = np.clip(heat, 0.0, 1.0)
    if cfg.noise > 0:
        noise_rng = np.random.default_rng([cfg.seed, t])
        app += noise_rng.normal(0.0, cfg.noise, size=app.shape)
    f = FeatureGrid(np.concatenate([heat[:, :, None], app], axis=2), s)
    return f, FeatureGrid(heat[:, :, None], s), dets


def n_frames(tracks):
    return int(max(tr.frames.max() for tr in tracks)) + 1 if tracks else 0


def gt_at(tracks, t, visible_only=True):
    """[(id, (x, y), (w, h))] for frame ``t``."""
    out = []
    for tr in tracks:
        k = tr.index_of(t)
        if k is None or (visible_only and not tr.visible[k]):
            continue
        out.append((tr.id, tuple(tr.centers[k]), tr.box))
    return out
