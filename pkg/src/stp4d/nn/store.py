"""Named parameter access and the binary checkpoint format.

Checkpoint layout (little-endian throughout):

    magic   8 bytes  b"STP4DCKP"
    version u32      1
    records repeated until EOF:
        name_len u32, name utf-8, rank u32, extents u32 * rank, payload f32

Payloads are stored as f32; training therefore runs in f32 when exact
save/resume round-trips matter, while f64 is used for numerical tests.
"""

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from stp4d.errors import CheckpointError

MAGIC = b"STP4DCKP"
VERSION = 1


def write_checkpoint(path, tensors: "OrderedDict[str, torch.Tensor]") -> None:
    path = Path(path)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, tensor in tensors.items():
            data = tensor.detach().cpu().to(torch.float32).numpy()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            for extent in data.shape:
                f.write(struct.pack("<I", extent))
            f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        extents = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(extents)) if rank else 1
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        out[name] = values.reshape(extents).copy()
    return out


class ParameterStore:
    """Deterministically-ordered named view of a module's parameters/gradients."""

    def __init__(self, module: nn.Module):
        self.module = module
        names = [name for name, _ in module.named_parameters()]
        if len(names) != len(set(names)):
            raise CheckpointError("duplicate parameter names")

    def names(self) -> list[str]:
        return [name for name, _ in self.module.named_parameters()]

    def parameters(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict(self.module.named_parameters())

    def gradients(self) -> "OrderedDict[str, torch.Tensor]":
        out: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        for name, p in self.module.named_parameters():
            out[name] = p.grad if p.grad is not None else torch.zeros_like(p)
        return out

    def save(self, path, extra: "OrderedDict[str, torch.Tensor] | None" = None) -> None:
        tensors = OrderedDict(
            (name, p.detach()) for name, p in self.module.named_parameters()
        )
        if extra:
            for name, tensor in extra.items():
                if name in tensors:
                    raise CheckpointError(f"extra record {name!r} collides with a parameter")
                tensors[name] = tensor
        write_checkpoint(path, tensors)

    def load(self, path) -> "OrderedDict[str, np.ndarray]":
        """Load parameters in place; returns the non-parameter extra records.

        Raises :class:`CheckpointError` naming every missing/unexpected/
        mismatched parameter.
        """
        records = read_checkpoint(path)
        params = self.parameters()
        missing = [n for n in params if n not in records]
        shape_bad = [
            n for n in params
            if n in records and tuple(records[n].shape) != tuple(params[n].shape)
        ]
        if missing or shape_bad:
            raise CheckpointError(
                f"{path}: incompatible checkpoint; missing={missing} shape_mismatch={shape_bad}"
            )
        with torch.no_grad():
            for name, p in params.items():
                p.copy_(torch.from_numpy(records.pop(name)).to(p.dtype))
        return records
