"""Motion-guided feature warping.

Previous features are masked by their center heatmap, pulled forward along
the tracking offsets with a deformable-sampling kernel, and blended into the
current frame. Peak picking on the blended heatmap channel gives detections.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .association import Detection
from .errors import InputError, ShapeError
from .gridmath import FeatureGrid, bilinear_sample_grid, softmax_t

HEATMAP_CHANNEL = 0


@dataclass
class WarpKernel:
    size: int = 3
    weights: np.ndarray = None  # size*size taps x channels (or taps x 1)

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise InputError(f"kernel size must be odd, got {self.size}")
        taps = self.size * self.size
        if self.weights is None:
            w = np.zeros((taps, 1))
            w[taps // 2] = 1.0
            self.weights = w
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim == 1:
            self.weights = self.weights[:, None]
        if self.weights.shape[0] != taps:
            raise ShapeError(f"expected {taps} tap rows, got {self.weights.shape[0]}")
        if not np.all(np.isfinite(self.weights)):
            raise InputError("kernel weights must be finite")

    def taps(self):
        """Grid displacements (dy, dx) of each tap, row-major."""
        r = self.size // 2
        return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


@dataclass
class AggregationConfig:
    T: int = 2
    weight_mode: str = "average"

    def __post_init__(self):
        if self.T < 1:
            raise InputError(f"T must be >= 1, got {self.T}")
        if self.weight_mode not in ("average", "confidence"):
            raise InputError(f"unknown weight mode {self.weight_mode!r}")


def center_attentive(f_prev, p_agn_prev):
    if f_prev.shape[:2] != p_agn_prev.shape[:2]:
        raise ShapeError(
            f"feature {f_prev.shape[:2]} and heatmap {p_agn_prev.shape[:2]} differ")
    return FeatureGrid(f_prev.data * p_agn_prev.data[:, :, :1], f_prev.stride)


def make_dcn_offsets(o_c, residual=None, kernel_size=3, residual_weights=None):
    """Per-tap DCN offsets in feature cells, laid out (dy0, dx0, dy1, dx1, ...).

    Every tap takes O^C converted from pixels to cells. With a residual grid
    (f^t - f^{t-tau}) a fixed linear read-out ``residual_weights`` (2 x C) of its
    3x3 local mean is added as a per-cell correction.
    """
    taps = kernel_size * kernel_size
    base = o_c.data / float(o_c.stride)
    if residual is not None and residual_weights is not None:
        rw = np.asarray(residual_weights, dtype=np.float64)
        if rw.shape != (2, residual.channels):
            raise ShapeError(f"residual weights must be 2 x {residual.channels}")
        base = base + local_mean(residual.data) @ rw.T
    return np.tile(base, (1, 1, taps))


def spread_offsets(o_c, trusted, radius=6.0):
    """Rigid-object propagation of trusted offsets.

    Every cell within ``radius`` cells (Euclidean) of a trusted cell takes the
    offset of the nearest trusted cell and is marked valid; all other cells
    are invalid and keep their own offset. Returns (OffsetField, valid mask).
    """
    trusted = np.asarray(trusted, dtype=bool)
    if trusted.shape != o_c.data.shape[:2]:
        raise ShapeError(f"trusted mask {trusted.shape} does not fit {o_c.data.shape[:2]}")
    if not trusted.any():
        return o_c, np.zeros_like(trusted)
    dist, (ri, ci) = ndimage.distance_transform_edt(~trusted, return_indices=True)
    valid = dist <= radius
    data = np.where(valid[:, :, None], o_c.data[ri, ci], o_c.data)
    return type(o_c)(data, o_c.stride), valid


def local_mean(data):
    """3x3 box mean with zero padding, per channel."""
    h, w, _ = data.shape
    padded = np.pad(data, ((1, 1), (1, 1), (0, 0)))
    acc = np.zeros_like(data)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy:dy + h, dx:dx + w]
    return acc / 9.0


def warp(f_bar_prev, o_d, kernel=None, modulation=None):
    """Deformable sampling: out(p) = sum_g w_g * m_g(p) * sample(f, p + g + delta_g(p)).

    ``modulation`` is an optional per-cell (H x W) or per-tap (H x W x K*K)
    scale in [0, 1]; omitted means 1 everywhere.
    """
    kernel = kernel or WarpKernel()
    h, w, c = f_bar_prev.shape
    taps = kernel.taps()
    o_d = np.asarray(o_d, dtype=np.float64)
    if o_d.shape != (h, w, 2 * len(taps)):
        raise ShapeError(f"offsets {o_d.shape} do not fit grid {h}x{w} with {len(taps)} taps")
    if kernel.weights.shape[1] not in (1, c):
        raise ShapeError("kernel channel count does not match the feature grid")
    if modulation is not None:
        modulation = np.asarray(modulation, dtype=np.float64)
        if modulation.ndim == 2:
            modulation = np.repeat(modulation[:, :, None], len(taps), axis=2)
        if modulation.shape != (h, w, len(taps)):
            raise ShapeError(f"modulation {modulation.shape} does not fit {h}x{w}x{len(taps)}")
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    out = np.zeros((h, w, c))
    for g, (dy, dx) in enumerate(taps):
        wg = kernel.weights[g]
        if not np.any(wg):
            continue
        ys = rows + dy + o_d[:, :, 2 * g]
        xs = cols + dx + o_d[:, :, 2 * g + 1]
        sampled = bilinear_sample_grid(f_bar_prev.data, ys, xs)
        if modulation is not None:
            sampled *= modulation[:, :, g, None]
        out += wg * sampled
    return FeatureGrid(out, f_bar_prev.stride)


def aggregation_weights(f_cur, warped, cfg, valid=None):
    """Per-cell weights (T+1 x H x W), current frame first, summing to one.

    ``valid`` optionally holds one H x W boolean mask per warped grid; where a
    mask is False that frame abstains and the rest share its weight.
    """
    grids = [f_cur] + list(warped)
    n = len(grids)
    h, w = f_cur.shape[:2]
    mask = np.ones((n, h, w), dtype=bool)
    if valid is not None:
        if len(valid) != len(warped):
            raise InputError(f"{len(valid)} validity masks for {len(warped)} warped grids")
        for k, v in enumerate(valid, start=1):
            if v is not None:
                v = np.asarray(v, dtype=bool)
                if v.shape != (h, w):
                    raise ShapeError(f"validity mask {v.shape} does not fit {h}x{w}")
                mask[k] = v
    if cfg.weight_mode == "average":
        return mask / mask.sum(axis=0)
    conf = np.stack([g.data[:, :, HEATMAP_CHANNEL] for g in grids])
    conf = np.where(mask, conf, -np.inf)
    return softmax_t(conf, 1.0, axis=0)


def aggregate(f_cur, warped, cfg, valid=None):
    if not warped:
        raise InputError("aggregate needs at least one warped grid")
    if len(warped) != cfg.T:
        raise InputError(f"expected {cfg.T} warped grids, got {len(warped)}")
    for g in warped:
        if g.shape != f_cur.shape:
            raise ShapeError(f"warped grid {g.shape} differs from current {f_cur.shape}")
    wts = aggregation_weights(f_cur, warped, cfg, valid)
    out = wts[0][:, :, None] * f_cur.data
    for k, g in enumerate(warped, start=1):
        out = out + wts[k][:, :, None] * g.data
    return FeatureGrid(out, f_cur.stride)


def detect_peaks(heatmap, score_threshold=0.3, frame=0):
    """Strict 3x3 local maxima at or above the threshold, highest score first.

    Boundary cells are compared with their in-bounds neighbours only. Centers
    are ``cell * stride`` in (x, y) pixels; embeddings are left for the caller.
    """
    hm = heatmap.data[:, :, 0] if isinstance(heatmap, FeatureGrid) else np.asarray(heatmap)
    stride = heatmap.stride if isinstance(heatmap, FeatureGrid) else 1
    h, w = hm.shape
    padded = np.pad(hm, 1, constant_values=-np.inf)
    is_peak = hm >= score_threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_peak &= hm > padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    rows, cols = np.nonzero(is_peak)
    scores = hm[rows, cols]
    # stable ordering: score descending, then row-major position
    order = np.lexsort((cols, rows, -scores))
    dets = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        dets.append(Detection(frame=frame, center=(float(c * stride), float(r * stride)),
                              score=float(min(max(scores[k], 0.0), 1.0)), cell=(r, c)))
    return dets
