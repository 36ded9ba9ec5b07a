"""PLY export/import of activated Gaussian frames.

One file per frame, named ``frame_%04d.ply``, ascii or binary little-endian,
with per-vertex properties:

    float x, y, z
    float quat_w, quat_x, quat_y, quat_z
    float scale_x, scale_y, scale_z
    uchar red, green, blue
    float opacity

Colors are quantized to 8 bits on write and mapped back to [0, 1] on read;
all other attributes round-trip at f32 precision.
"""

from pathlib import Path

import numpy as np
import torch

from stp4d.errors import ConfigError

FLOAT_PROPS_HEAD = [
    "x", "y", "z",
    "quat_w", "quat_x", "quat_y", "quat_z",
    "scale_x", "scale_y", "scale_z",
]
UCHAR_PROPS = ["red", "green", "blue"]
FLOAT_PROPS_TAIL = ["opacity"]

_DTYPE = np.dtype(
    [(name, "<f4") for name in FLOAT_PROPS_HEAD]
    + [(name, "u1") for name in UCHAR_PROPS]
    + [(name, "<f4") for name in FLOAT_PROPS_TAIL]
)


def _header(count: int, binary: bool) -> str:
    fmt = "binary_little_endian" if binary else "ascii"
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {count}"]
    lines += [f"property float {n}" for n in FLOAT_PROPS_HEAD]
    lines += [f"property uchar {n}" for n in UCHAR_PROPS]
    lines += [f"property float {n}" for n in FLOAT_PROPS_TAIL]
    lines.append("end_header")
    return "\n".join(lines) + "\n"


def _to_records(attrs: torch.Tensor) -> np.ndarray:
    arr = attrs.detach().cpu().numpy().astype(np.float64)
    records = np.empty(arr.shape[0], dtype=_DTYPE)
    for i, name in enumerate(FLOAT_PROPS_HEAD):
        records[name] = arr[:, i].astype("<f4")
    colors = np.clip(np.round(arr[:, 10:13] * 255.0), 0, 255).astype("u1")
    for i, name in enumerate(UCHAR_PROPS):
        records[name] = colors[:, i]
    records["opacity"] = arr[:, 13].astype("<f4")
    return records


def write_ply(path, attrs: torch.Tensor, binary: bool = True) -> None:
    """Write one frame of activated attributes [N, 14]."""
    if attrs.ndim != 2 or attrs.shape[1] != 14:
        raise ConfigError(f"expected [N, 14] activated attributes, got {tuple(attrs.shape)}")
    records = _to_records(attrs)
    path = Path(path)
    with path.open("wb") as f:
        f.write(_header(len(records), binary).encode("ascii"))
        if binary:
            f.write(records.tobytes())
        else:
            for rec in records:
                fields = [repr(float(rec[n])) for n in FLOAT_PROPS_HEAD]
                fields += [str(int(rec[n])) for n in UCHAR_PROPS]
                fields += [repr(float(rec[n])) for n in FLOAT_PROPS_TAIL]
                f.write((" ".join(fields) + "\n").encode("ascii"))


def read_ply(path) -> torch.Tensor:
    """Read a frame back to activated attributes [N, 14] (f64)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ConfigError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]

    binary = any("binary_little_endian" in line for line in header)
    count = None
    props: list[tuple[str, str]] = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            props.append((parts[1], parts[2]))
    expected = (
        [("float", n) for n in FLOAT_PROPS_HEAD]
        + [("uchar", n) for n in UCHAR_PROPS]
        + [("float", n) for n in FLOAT_PROPS_TAIL]
    )
    if count is None or props != expected:
        raise ConfigError(f"{path}: unexpected PLY layout")

    if binary:
        records = np.frombuffer(body, dtype=_DTYPE, count=count)
    else:
        rows = body.decode("ascii").split()
        table = np.asarray(rows, dtype=object).reshape(count, len(expected))
        records = np.empty(count, dtype=_DTYPE)
        for col, (_, name) in enumerate(expected):
            kind = _DTYPE[name]
            records[name] = table[:, col].astype(np.float64).astype(kind)

    out = np.empty((count, 14), dtype=np.float64)
    for i, name in enumerate(FLOAT_PROPS_HEAD):
        out[:, i] = records[name]
    for i, name in enumerate(UCHAR_PROPS):
        out[:, 10 + i] = records[name] / 255.0
    out[:, 13] = records["opacity"]
    return torch.from_numpy(out)


def export_frames(directory, frame_attrs: torch.Tensor, binary: bool = True) -> list[Path]:
    """Write [frames, N, 14] activated attributes as frame_%04d.ply files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(frame_attrs.shape[0]):
        path = directory / f"frame_{t:04d}.ply"
        write_ply(path, frame_attrs[t], binary=binary)
        paths.append(path)
    return paths


def load_frames(directory) -> torch.Tensor:
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.ply"))
    if not paths:
        raise ConfigError(f"{directory}: no frame_*.ply files")
    return torch.stack([read_ply(p) for p in paths])
