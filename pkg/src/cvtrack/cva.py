"""Cost volume association: similarity volume between two embedding grids,
position likelihoods, expected tracking offsets, and the focal-style
training loss with its exact gradient."""
from dataclasses import dataclass

import numpy as np

from .embedding import downsample_embedding
from .errors import DataError, InputError, ShapeError, UndefinedLossError
from .gridmath import FeatureGrid, axis_maxpool, matmul, softmax_t

TEMPERATURE = 5.0
BETA = 2.0
LOG_FLOOR = 1e-12


@dataclass
class CostVolume:
    values: np.ndarray  # hc x wc x hc x wc
    stride: int = 8

    @property
    def hc(self):
        return self.values.shape[0]

    @property
    def wc(self):
        return self.values.shape[1]


@dataclass
class OffsetField:
    """Per-cell (vertical, horizontal) displacement in input pixels, pointing
    from a current-frame cell to where it was in the earlier frame."""

    data: np.ndarray  # H x W x 2
    stride: int

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def at_pixel(self, x, y):
        """Offset stored at the cell nearest to pixel (x, y), clamped to the grid."""
        i, j = center_to_cell((x, y), self.stride)
        i = min(max(i, 0), self.height - 1)
        j = min(max(j, 0), self.width - 1)
        return self.data[i, j]

    @classmethod
    def zeros(cls, height, width, stride):
        return cls(np.zeros((height, width, 2)), stride)


@dataclass
class SupervisionMask:
    entries: list  # (i, j, k, l) tuples
    hc: int
    wc: int

    def __post_init__(self):
        seen = set()
        for i, j, k, l in self.entries:
            if not (0 <= i < self.hc and 0 <= k < self.hc
                    and 0 <= j < self.wc and 0 <= l < self.wc):
                raise DataError(f"supervision index {(i, j, k, l)} out of range")
            if (i, j) in seen:
                raise DataError(f"cell {(i, j)} supervised twice")
            seen.add((i, j))

    def __len__(self):
        return len(self.entries)


def build_cost_volume(e_cur, e_prev):
    if e_cur.shape != e_prev.shape:
        raise ShapeError(f"embedding grids differ: {e_cur.shape} vs {e_prev.shape}")
    h, w, c = e_cur.shape
    a = e_cur.data.reshape(h * w, c)
    b = e_prev.data.reshape(h * w, c)
    return CostVolume(matmul(a, b.T).reshape(h, w, h, w), e_cur.stride)


def _check_cell(cv, i, j):
    if not (0 <= i < cv.hc and 0 <= j < cv.wc):
        raise InputError(f"cell ({i}, {j}) outside {cv.hc}x{cv.wc} volume")


def marginal_likelihoods(cv, i, j, temperature=TEMPERATURE):
    """(C^W, C^H) for current cell (i, j): likelihood of each earlier column / row."""
    _check_cell(cv, i, j)
    s = cv.values[i, j]
    cw = softmax_t(axis_maxpool(s, "cols"), temperature)
    ch = softmax_t(axis_maxpool(s, "rows"), temperature)
    return cw, ch


def all_marginals(cv, temperature=TEMPERATURE):
    """Vectorised marginals for every cell: shapes (hc, wc, wc) and (hc, wc, hc)."""
    v = cv.values
    cw = softmax_t(v.max(axis=2), temperature, axis=-1)
    ch = softmax_t(v.max(axis=3), temperature, axis=-1)
    return cw, ch


def offset_templates(i, j, hc, wc, s):
    """Horizontal template M (length wc) and vertical template V (length hc).

    Indices are 0-based: M[l] = (l - j) * s, V[k] = (k - i) * s.
    """
    if not s > 0:
        raise InputError(f"stride must be positive, got {s}")
    m = (np.arange(wc) - j) * float(s)
    v = (np.arange(hc) - i) * float(s)
    return m, v


def infer_offset(cw, ch, m, v):
    cw, ch, m, v = (np.asarray(a, dtype=np.float64) for a in (cw, ch, m, v))
    if cw.shape != m.shape or ch.shape != v.shape:
        raise ShapeError("likelihood and template lengths differ")
    return np.array([ch @ v, cw @ m])


def offset_field(cv, temperature=TEMPERATURE):
    """Expected offset at every cost-volume cell (stride of the volume)."""
    cw, ch = all_marginals(cv, temperature)
    s = float(cv.stride)
    rows = np.arange(cv.hc, dtype=np.float64)
    cols = np.arange(cv.wc, dtype=np.float64)
    # E[k] - i and E[l] - j, scaled by the stride
    vert = (ch @ rows - rows[:, None]) * s
    horiz = (cw @ cols - cols[None, :]) * s
    return OffsetField(np.stack([vert, horiz], axis=-1), cv.stride)


def offset_confidence(cv, temperature=TEMPERATURE):
    """max(C^W) * max(C^H) per cell: near 1 for a single clear match, near
    1/(hc*wc) for a flat slice."""
    cw, ch = all_marginals(cv, temperature)
    return cw.max(axis=-1) * ch.max(axis=-1)


def match_gate(cv, e_prev=None, offsets=None, tolerance=1.0, min_ratio=0.25, suppress=1):
    """Cells whose offset is trustworthy enough to warp along.

    Each current cell has a hard match: the earlier cell with the largest
    similarity. Many current cells can hard-match the same object (every cell
    of its support does), so claims are taken greedily by similarity and a
    claim landing within ``suppress`` coarse cells (Chebyshev) of an accepted
    one is dropped. With ``e_prev`` the similarity must also reach
    ``min_ratio`` times the earlier cell's squared norm, so faint background
    cannot hijack an object's fringe. With ``offsets`` (the soft field from
    ``offset_field``) the soft offset must lie within ``tolerance`` coarse
    cells of the hard match on both axes, which rules out flat marginals
    whose expectation drifts towards the middle of the grid.
    """
    hc, wc = cv.values.shape[:2]
    n = hc * wc
    sim = cv.values.reshape(n, n)
    fwd = sim.argmax(axis=1)
    score = sim[np.arange(n), fwd]
    cand = np.ones(n, dtype=bool)
    if e_prev is not None:
        if e_prev.shape[:2] != (hc, wc):
            raise ShapeError(f"embedding {e_prev.shape} does not fit {hc}x{wc}")
        flat = e_prev.data.reshape(n, -1)
        cand &= score >= min_ratio * np.einsum("ij,ij->i", flat, flat)[fwd]
    if offsets is not None:
        if offsets.data.shape[:2] != (hc, wc):
            raise ShapeError(f"offset field {offsets.data.shape[:2]} does not fit {hc}x{wc}")
        src = np.arange(n)
        hard = np.stack([fwd // wc - src // wc, fwd % wc - src % wc], axis=1) * float(cv.stride)
        cand &= np.all(np.abs(offsets.data.reshape(n, 2) - hard) <= tolerance * cv.stride, axis=1)
    ok = np.zeros(n, dtype=bool)
    taken = []
    for idx in sorted(np.flatnonzero(cand), key=lambda k: (-score[k], k)):
        ti, tj = divmod(int(fwd[idx]), wc)
        if any(abs(ti - a) <= suppress and abs(tj - b) <= suppress for a, b in taken):
            continue
        taken.append((ti, tj))
        ok[idx] = True
    return ok.reshape(hc, wc)


def upsample_offsets(o):
    """Nearest-neighbour 2x; values stay in input pixels, stride halves."""
    data = np.repeat(np.repeat(o.data, 2, axis=0), 2, axis=1)
    return OffsetField(data, max(1, o.stride // 2))


def _focal_term(p, beta):
    """-(1-p)^beta log p and its derivative in p, with log clamped at LOG_FLOOR."""
    q = 1.0 - p
    if p < LOG_FLOOR:
        logp = np.log(LOG_FLOOR)
        dlog = 0.0
    else:
        logp = np.log(p)
        dlog = 1.0 / p
    value = -(q ** beta) * logp
    dvalue = beta * q ** (beta - 1) * logp - q ** beta * dlog if q > 0 else 0.0
    return value, dvalue


def cva_loss(cv, y, beta=BETA, temperature=TEMPERATURE):
    if len(y) == 0:
        raise UndefinedLossError("supervision mask is empty")
    total = 0.0
    for i, j, k, l in y.entries:
        cw, ch = marginal_likelihoods(cv, i, j, temperature)
        total += _focal_term(cw[l], beta)[0] + _focal_term(ch[k], beta)[0]
    return total / len(y)


def _pool_softmax_backward(s, target, axis, beta, temperature):
    """Gradient of one focal term w.r.t. a cost-volume slice ``s``.

    axis=0 pools each column (C^W), axis=1 pools each row (C^H). The max routes
    its gradient to the lowest-index argmax.
    """
    pooled = s.max(axis=axis)
    arg = s.argmax(axis=axis)
    p = softmax_t(pooled, temperature)
    value, dp = _focal_term(p[target], beta)
    dz = -dp * p[target] * p
    dz[target] += dp * p[target]
    da = temperature * dz
    ds = np.zeros_like(s)
    idx = np.arange(pooled.shape[0])
    if axis == 0:
        ds[arg, idx] = da
    else:
        ds[idx, arg] = da
    return value, ds


def cva_loss_grad(cv, y, e_cur, e_prev, beta=BETA, temperature=TEMPERATURE):
    """Loss and gradients w.r.t. both downsampled embedding grids.

    The volume must have been built from ``e_cur`` and ``e_prev``.
    """
    if len(y) == 0:
        raise UndefinedLossError("supervision mask is empty")
    a = e_cur.data
    b = e_prev.data
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    n = len(y)
    total = 0.0
    for i, j, k, l in y.entries:
        s = cv.values[i, j]
        vw, dsw = _pool_softmax_backward(s, l, 0, beta, temperature)
        vh, dsh = _pool_softmax_backward(s, k, 1, beta, temperature)
        total += vw + vh
        ds = (dsw + dsh) / n
        ga[i, j] += np.tensordot(ds, b, axes=([0, 1], [0, 1]))
        gb += ds[:, :, None] * a[i, j][None, None, :]
    return total / n, ga, gb


def center_to_cell(center, stride, origin=0.0):
    """Nearest (row, col) cell for a pixel center given as (x, y), where cell
    (i, j) sits at pixel (origin + j*stride, origin + i*stride). Exact
    half-cell positions round down."""
    x, y = center
    j = int(np.ceil((x - origin) / stride - 0.5))
    i = int(np.ceil((y - origin) / stride - 0.5))
    return i, j


def pooled_origin(stride):
    """Pixel position of cell (0, 0) after one 2x average pool of a grid whose
    cell (0, 0) sat at pixel 0: the mean of pixels 0 and stride/2."""
    return stride / 4.0


def build_supervision(gt_cur, gt_prev, stride, hc, wc, strict=True, origin=0.0):
    """Association targets between two frames.

    ``gt_cur``/``gt_prev`` are iterables of (identity, (x, y)). Identities present
    in both frames yield one (i, j, k, l) entry each; ``origin`` is the pixel
    position of cell (0, 0) (see pooled_origin). With ``strict`` a second
    identity landing on an already-supervised current cell raises DataError;
    otherwise it is skipped.
    """
    def index(items):
        out = {}
        for ident, center in items:
            if ident in out:
                raise DataError(f"identity {ident} appears twice in one frame")
            out[ident] = center
        return out

    cur = index(gt_cur)
    prev = index(gt_prev)
    entries = []
    used = set()
    for ident, center in cur.items():
        if ident not in prev:
            continue
        i, j = center_to_cell(center, stride, origin)
        k, l = center_to_cell(prev[ident], stride, origin)
        i, k = (min(max(v, 0), hc - 1) for v in (i, k))
        j, l = (min(max(v, 0), wc - 1) for v in (j, l))
        if (i, j) in used:
            if strict:
                raise DataError(f"identity {ident} collides with another at cell {(i, j)}")
            continue
        used.add((i, j))
        entries.append((i, j, k, l))
    return SupervisionMask(entries, hc, wc)


def embeddings_to_offsets(e_cur, e_prev, temperature=TEMPERATURE):
    """Full-resolution embeddings of two frames -> (O at stride 2s, O^C at stride s)."""
    cv = build_cost_volume(downsample_embedding(e_cur), downsample_embedding(e_prev))
    o = offset_field(cv, temperature)
    return o, upsample_offsets(o)
