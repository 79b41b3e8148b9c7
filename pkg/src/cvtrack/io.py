"""File formats: MOTChallenge CSV, TDFG feature grids, TDSW embedding
checkpoints, key=value configs and binary PPM images."""
import re
import struct
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingNet, Layer
from .errors import FormatError, ParseError
from .gridmath import FeatureGrid

GRID_MAGIC = b"TDFG"
CKPT_MAGIC = b"TDSW"
VERSION = 1


@dataclass
class MotRecord:
    frame: int  # 1-based
    id: int  # -1 for raw detections
    left: float
    top: float
    width: float
    height: float
    conf: float = 1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0


def parse_mot_csv(text):
    records = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 10:
            raise ParseError(f"expected 10 fields, got {len(parts)}", n)
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"malformed field ({exc})", n) from None
        if not vals[0].is_integer() or not vals[1].is_integer():
            raise ParseError("frame and id must be integers", n)
        rec = MotRecord(int(vals[0]), int(vals[1]), *vals[2:])
        if rec.frame < 1:
            raise ParseError(f"frame must be >= 1, got {rec.frame}", n)
        if rec.width <= 0 or rec.height <= 0:
            raise ParseError("box width and height must be positive", n)
        records.append(rec)
    return records


def _num(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_mot_csv(records):
    rows = sorted(records, key=lambda r: (r.frame, r.id))
    lines = [",".join([str(r.frame), str(r.id)] + [_num(v) for v in
             (r.left, r.top, r.width, r.height, r.conf, r.x, r.y, r.z)]) for r in rows]
    return "".join(line + "\n" for line in lines)


def grid_to_bytes(grid):
    h, w, c = grid.shape
    header = GRID_MAGIC + struct.pack("<5I", VERSION, h, w, c, grid.stride)
    return header + np.ascontiguousarray(grid.data, dtype="<f4").tobytes()


def grid_from_bytes(buf):
    if len(buf) < 24:
        raise FormatError("grid file shorter than its header")
    if buf[:4] != GRID_MAGIC:
        raise FormatError(f"bad grid magic {buf[:4]!r}")
    version, h, w, c, stride = struct.unpack("<5I", buf[4:24])
    if version != VERSION:
        raise FormatError(f"unsupported grid version {version}")
    expected = h * w * c * 4
    if len(buf) - 24 != expected:
        raise FormatError(f"grid payload is {len(buf) - 24} bytes, header implies {expected}")
    data = np.frombuffer(buf, dtype="<f4", offset=24).reshape(h, w, c)
    return FeatureGrid(data.astype(np.float64), stride)


def write_grid(path, grid):
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid))


def read_grid(path):
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


def checkpoint_to_bytes(net):
    out = [CKPT_MAGIC, struct.pack("<2I", VERSION, len(net.layers))]
    for layer in net.layers:
        c_in, c_out = layer.weight.shape
        out.append(struct.pack("<3I", c_in, c_out, int(layer.relu)))
    for layer in net.layers:
        out.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(out)


def checkpoint_from_bytes(buf):
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    if len(buf) < 12:
        raise FormatError("checkpoint shorter than its header")
    version, n = struct.unpack("<2I", buf[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    dims = []
    for _ in range(n):
        if len(buf) < pos + 12:
            raise FormatError("truncated layer table")
        dims.append(struct.unpack("<3I", buf[pos:pos + 12]))
        pos += 12
    layers = []
    for c_in, c_out, relu in dims:
        need = (c_in * c_out + c_out) * 4
        if len(buf) < pos + need:
            raise FormatError("truncated checkpoint payload")
        w = np.frombuffer(buf, "<f4", c_in * c_out, pos).reshape(c_in, c_out)
        pos += c_in * c_out * 4
        b = np.frombuffer(buf, "<f4", c_out, pos)
        pos += c_out * 4
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), bool(relu)))
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint payload")
    return EmbeddingNet(layers)


def save_checkpoint(path, net):
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(net))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def parse_config(text):
    """key=value lines; '#' starts a comment. Values stay strings."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key=value", n)
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def format_config(values):
    return "".join(f"{k}={v}\n" for k, v in values.items())


def write_ppm(path, rgb):
    """Binary P6 image from an H x W x 3 uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", buf)
    if m is None:
        raise FormatError("not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    data = buf[m.end():]
    if len(data) != w * h * 3:
        raise FormatError("PPM payload length mismatch")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3)
