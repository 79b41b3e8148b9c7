"""Report figures: training loss, offset arrows over a heatmap, per-frame errors.

Everything renders through the Agg backend to files; nothing is shown on
screen. PNG metadata is stripped so the same inputs give the same bytes.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_loss_curve(losses, path, title="cost-volume loss"):
    losses = np.asarray(losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    steps = np.arange(1, len(losses) + 1)
    positive = losses > 0
    if positive.all() and len(losses):
        ax.semilogy(steps, losses, lw=1.2)
    else:
        ax.plot(steps, losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_offsets(heatmap, offsets, path, every=2, min_heat=0.1, title="tracking offsets"):
    """Quiver of the offset field (pixels, vertical then horizontal) over the heatmap.

    Arrows point from each cell towards where its object was in the earlier
    frame. ``every`` thins them; cells colder than ``min_heat`` get none, since
    background offsets are arbitrary and would bury the picture.
    """
    heat = np.asarray(heatmap, dtype=np.float64)
    data = offsets.data
    stride = offsets.stride
    h, w = data.shape[:2]
    fig, ax = plt.subplots(figsize=(5, 5 * h / max(w, 1)))
    ax.imshow(heat, cmap="magma", vmin=0.0, vmax=max(1.0, float(heat.max())),
              extent=(-0.5, heat.shape[1] - 0.5, heat.shape[0] - 0.5, -0.5))
    rows, cols = np.mgrid[0:h:every, 0:w:every]
    dy = data[::every, ::every, 0] / stride
    dx = data[::every, ::every, 1] / stride
    hot = heat[::every, ::every] >= min_heat
    ax.quiver(cols[hot], rows[hot], dx[hot], dy[hot], color="cyan", angles="xy", scale_units="xy",
              scale=1.0, width=0.003)
    ax.set_xlim(-0.5, heat.shape[1] - 0.5)
    ax.set_ylim(heat.shape[0] - 0.5, -0.5)
    ax.set_title(title)
    return _finish(fig, path)


def plot_eval_timeline(report, path, title="errors per frame"):
    """Stacked FN / FP / ID-switch counts for every evaluated frame."""
    rows = np.asarray(report.frame_counts(), dtype=np.float64).reshape(-1, 5)
    frames, fp, fn, ids = rows[:, 0], rows[:, 2], rows[:, 3], rows[:, 4]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(frames, fn, label="FN", color="tab:blue")
    ax.bar(frames, fp, bottom=fn, label="FP", color="tab:orange")
    ax.bar(frames, ids, bottom=fn + fp, label="IDS", color="tab:red")
    ax.set_xlabel("frame")
    ax.set_ylabel("count")
    ax.set_ylim(0, max(1.0, float((fn + fp + ids).max(initial=0)) * 1.1))
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    return _finish(fig, path)


def render_offset_arrows(heatmap, offsets, every=2, min_heat=0.1):
    """RGB raster (uint8) of offset arrows over the heatmap, one pixel per image pixel.

    Heat is drawn in red, arrow shafts in cyan and their tails (the cell the
    arrow starts from) in white; cells below ``min_heat`` get no arrow. Plain numpy, so it needs no imaging library.
    """
    heat = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    stride = offsets.stride
    h, w = offsets.data.shape[:2]
    img = np.zeros((h * stride, w * stride, 3), dtype=np.uint8)
    img[:, :, 0] = np.kron(heat, np.ones((stride, stride))) * 255
    for r in range(0, h, every):
        for c in range(0, w, every):
            if heat[r, c] < min_heat:
                continue
            dy, dx = offsets.data[r, c]
            y0, x0 = r * stride + stride // 2, c * stride + stride // 2
            n = int(max(abs(dy), abs(dx))) + 1
            ys = np.rint(np.linspace(y0, y0 + dy, n + 1)).astype(int)
            xs = np.rint(np.linspace(x0, x0 + dx, n + 1)).astype(int)
            keep = (ys >= 0) & (ys < img.shape[0]) & (xs >= 0) & (xs < img.shape[1])
            img[ys[keep], xs[keep]] = (0, 255, 255)
            img[y0, x0] = (255, 255, 255)
    return img
