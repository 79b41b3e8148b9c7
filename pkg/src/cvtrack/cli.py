"""Command-line entry point: synth, train, track, eval, inspect-offsets.

Every command writes into ``--out``. Option values resolve as
flag > ``--config`` file > built-in default, and the resolved set is echoed to
``<out>/<command>.cfg``. Exit status: 0 success, 1 missing or unreadable
input, 2 usage error.
"""
import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .cva import build_cost_volume, offset_field, upsample_offsets
from .embedding import EMBED_DIM, downsample_embedding
from .errors import ConfigError, CVTrackError
from .io import (format_config, load_checkpoint, parse_config, parse_mot_csv, read_grid,
                 save_checkpoint, write_grid, write_mot_csv, write_ppm)
from .metrics import evaluate, tracks_from_records
from .pipeline import (Tracker, TrackerConfig, embed_frames, gt_box_lookup, gt_tracks_from_records,
                       new_embedding_net, results_to_records, tracks_to_records, train_embedding)
from .synth import SceneConfig, generate_scene, n_frames, render_frame

log = logging.getLogger("cvtrack")


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _occlusions(text):
    """'id:first:last,...' -> [(id, first, last)]; empty string means none."""
    out = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"occlusion {part!r} is not id:first:last")
        out.append(tuple(int(b) for b in bits))
    return out


@dataclass
class Opt:
    name: str
    type: object
    default: object
    help: str
    flag: bool = False  # store_true switch


SYNTH = [
    Opt("seed", int, 0, "scene seed"),
    Opt("height", int, 64, "grid height in cells"),
    Opt("width", int, 64, "grid width in cells"),
    Opt("stride", int, 4, "pixels per cell"),
    Opt("n-objects", int, 4, "object count"),
    Opt("n-frames", int, 20, "frames kept after subsampling"),
    Opt("frame-stride", int, 1, "keep every k-th simulated frame"),
    Opt("velocity-min", float, 2.0, "min speed, px per simulated frame"),
    Opt("velocity-max", float, 6.0, "max speed, px per simulated frame"),
    Opt("box-min", float, 32.0, "min box side, px"),
    Opt("box-max", float, 48.0, "max box side, px"),
    Opt("appearance-dim", int, 32, "appearance channels"),
    Opt("noise", float, 0.05, "feature noise std"),
    Opt("occlusions", _occlusions, "", "id:first:last,... (kept-frame indices)"),
    Opt("occlusion-residual", float, 0.0, "appearance fraction left while occluded"),
    Opt("lattice", int, 0, "snap centers to this many px (0: off)"),
]

TRAIN = [
    Opt("scene", str, None, "scene directory from synth"),
    Opt("steps", int, 200, "optimizer steps"),
    Opt("lr", float, 1.25e-4, "Adam learning rate"),
    Opt("beta", float, 2.0, "focal exponent"),
    Opt("temperature", float, 5.0, "softmax temperature"),
    Opt("seed", int, 0, "init and batching seed"),
    Opt("batch", int, 4, "frame pairs per step"),
    Opt("hidden", int, 64, "hidden width"),
    Opt("layers", int, 3, "layer count"),
    Opt("dim", int, EMBED_DIM, "embedding width"),
    Opt("include-occluded", _bool, False, "supervise occluded objects too", flag=True),
]

TRACK = [
    Opt("scene", str, None, "scene directory from synth"),
    Opt("weights", str, "", "embedding checkpoint (needed for --mode cva)"),
    Opt("mode", str, "cva", "cva or baseline"),
    Opt("T", int, 2, "previous frames aggregated"),
    Opt("threshold", float, 0.3, "second-round cosine threshold"),
    Opt("max-age", int, 32, "frames a lost tracklet is kept"),
    Opt("no-mfw", _bool, False, "skip feature warping", flag=True),
    Opt("score-threshold", float, 0.3, "heatmap peak threshold"),
    Opt("weight-mode", str, "average", "average or confidence"),
    Opt("temperature", float, 5.0, "softmax temperature"),
    Opt("no-gate", _bool, False, "warp every cell, not only trusted matches", flag=True),
    Opt("spread", float, 6.0, "cells a trusted offset reaches"),
]

EVAL = [
    Opt("gt", str, None, "ground-truth MOT file"),
    Opt("hyp", str, None, "tracker MOT file"),
    Opt("iou", float, 0.5, "match IoU threshold"),
]

INSPECT = [
    Opt("scene", str, None, "scene directory from synth"),
    Opt("weights", str, None, "embedding checkpoint"),
    Opt("frame", int, 1, "0-based frame, compared with the one before"),
    Opt("temperature", float, 5.0, "softmax temperature"),
    Opt("every", int, 2, "draw one arrow per this many cells"),
]

COMMANDS = {"synth": SYNTH, "train": TRAIN, "track": TRACK, "eval": EVAL,
            "inspect-offsets": INSPECT}


def _key(name):
    return name.replace("-", "_")


def build_parser():
    parser = argparse.ArgumentParser(prog="cvtrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMANDS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="key=value file; flags override it")
        for o in opts:
            if o.flag:
                p.add_argument(f"--{o.name}", dest=_key(o.name), action="store_true",
                               default=argparse.SUPPRESS, help=o.help)
            else:
                p.add_argument(f"--{o.name}", dest=_key(o.name), type=o.type,
                               default=argparse.SUPPRESS, help=f"{o.help} (default {o.default!r})")
    return parser


def resolve(opts, args):
    """Merge defaults, the config file and explicit flags, in rising priority."""
    values = {_key(o.name): o.default for o in opts}
    if args.config:
        known = {_key(o.name): o for o in opts}
        for k, v in parse_config(Path(args.config).read_text()).items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                values[k] = known[k].type(v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r}") from exc
    for k in values:
        if k in vars(args):
            values[k] = getattr(args, k)
    missing = [o.name for o in opts if values[_key(o.name)] is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m for m in missing))
    return values


def _echo(out, command, values):
    shown = dict(values)
    if isinstance(shown.get("occlusions"), list):
        shown["occlusions"] = ",".join(":".join(map(str, o)) for o in shown["occlusions"])
    (out / f"{command}.cfg").write_text(format_config(shown))


def _frame_name(t):
    return f"{t:05d}.tdfg"


def load_scene(scene):
    scene = Path(scene)
    files = sorted((scene / "frames").glob("*.tdfg"))
    if not files:
        raise FileNotFoundError(f"no frames under {scene / 'frames'}")
    frames = [(read_grid(f), read_grid(scene / "heat" / f.name)) for f in files]
    gt_path = scene / "gt.txt"
    gt = parse_mot_csv(gt_path.read_text()) if gt_path.exists() else None
    return frames, gt


def cmd_synth(v, out):
    cfg = SceneConfig(height=v["height"], width=v["width"], stride=v["stride"],
                      n_objects=v["n_objects"],
                      velocity_range=(v["velocity_min"], v["velocity_max"]),
                      box_range=(v["box_min"], v["box_max"]),
                      appearance_dim=v["appearance_dim"], noise=v["noise"],
                      occlusions=v["occlusions"], n_frames=v["n_frames"],
                      frame_stride=v["frame_stride"], seed=v["seed"], lattice=v["lattice"],
                      occlusion_residual=v["occlusion_residual"])
    tracks = generate_scene(cfg)
    (out / "frames").mkdir(exist_ok=True)
    (out / "heat").mkdir(exist_ok=True)
    for t in range(n_frames(tracks)):
        f, p, _ = render_frame(tracks, t, cfg)
        write_grid(out / "frames" / _frame_name(t), f)
        write_grid(out / "heat" / _frame_name(t), p)
    (out / "gt.txt").write_text(write_mot_csv(tracks_to_records(tracks)))
    print(f"wrote {n_frames(tracks)} frames of {len(tracks)} objects to {out}")


def cmd_train(v, out):
    frames, gt = load_scene(v["scene"])
    if gt is None:
        raise FileNotFoundError(f"{v['scene']}/gt.txt is needed for training")
    grids = [f for f, _ in frames]
    net = new_embedding_net(grids[0], np.random.default_rng(v["seed"]), hidden=v["hidden"],
                            n_layers=v["layers"], output_channels=v["dim"])
    losses = train_embedding(net, grids, gt_tracks_from_records(gt), steps=v["steps"],
                             lr=v["lr"], beta=v["beta"], temperature=v["temperature"],
                             seed=v["seed"], batch=v["batch"],
                             include_occluded=v["include_occluded"])
    save_checkpoint(out / "weights.tdsw", net)
    (out / "losses.csv").write_text(
        "step,loss\n" + "".join(f"{k + 1},{x!r}\n" for k, x in enumerate(losses)))
    plotting.plot_loss_curve(losses, out / "loss.png")
    print(f"loss {losses[0]:.6g} -> {losses[-1]:.6g} after {len(losses)} steps")


def cmd_track(v, out):
    if v["mode"] not in ("cva", "baseline"):
        raise ConfigError(f"--mode must be cva or baseline, not {v['mode']!r}")
    if v["weight_mode"] not in ("average", "confidence"):
        raise ConfigError(f"--weight-mode must be average or confidence, not {v['weight_mode']!r}")
    frames, gt = load_scene(v["scene"])
    net = None
    if v["mode"] == "cva":
        if not v["weights"]:
            raise ConfigError("--mode cva needs --weights")
        net = load_checkpoint(v["weights"])
    cfg = TrackerConfig(mode=v["mode"], T=v["T"], threshold=v["threshold"],
                        max_age=v["max_age"], mfw=not v["no_mfw"],
                        score_threshold=v["score_threshold"], weight_mode=v["weight_mode"],
                        temperature=v["temperature"], gate=not v["no_gate"],
                        spread=v["spread"])
    lookup = gt_box_lookup(gt_tracks_from_records(gt)) if gt else None
    tracker = Tracker(cfg, net, lookup)
    results = [tracker.step(f, p) for f, p in frames]
    records = results_to_records(results)
    (out / "results.txt").write_text(write_mot_csv(records))
    print(f"tracked {len(frames)} frames, {len({r.id for r in records})} identities")


def cmd_eval(v, out):
    gt = tracks_from_records(parse_mot_csv(Path(v["gt"]).read_text()))
    hyp = tracks_from_records(parse_mot_csv(Path(v["hyp"]).read_text()))
    report = evaluate(gt, hyp, v["iou"])
    text = report.to_text()
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(report.to_json())
    plotting.plot_eval_timeline(report, out / "timeline.png")
    sys.stdout.write(text)


def cmd_inspect(v, out):
    frames, _ = load_scene(v["scene"])
    t = v["frame"]
    if not 1 <= t < len(frames):
        raise ConfigError(f"--frame must lie in 1..{len(frames) - 1}")
    net = load_checkpoint(v["weights"])
    e_cur, e_prev = embed_frames(net, [frames[t][0], frames[t - 1][0]])
    cv = build_cost_volume(downsample_embedding(e_cur), downsample_embedding(e_prev))
    o_c = upsample_offsets(offset_field(cv, v["temperature"]))
    heat = frames[t][1].data[:, :, 0]
    stem = f"offsets_{t:05d}"
    write_ppm(out / f"{stem}.ppm", plotting.render_offset_arrows(heat, o_c, v["every"]))
    plotting.plot_offsets(heat, o_c, out / f"{stem}.png", every=v["every"])
    print(f"wrote {stem}.ppm and {stem}.png")


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "inspect-offsets": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(COMMANDS[args.command], args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(out, args.command, values)
        HANDLERS[args.command](values, out)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"cvtrack: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CVTrackError) as exc:
        print(f"cvtrack: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
