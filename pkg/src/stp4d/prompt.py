"""Text conditioning: encoders, per-frame prompt rows, and token injection.

Three encoder backends produce a unit-norm prompt feature:

- ``toy``: deterministic hash-based pseudo-random vector (order-sensitive in
  the tokens), so the full suite runs offline with no model weights;
- ``file``: a precomputed embedding loaded from JSON
  (``{"dim": D, "values": [...]}``) or the binary format
  (magic ``STP4DEMB``, u32 dim, little-endian f32 payload);
- ``service``: an HTTP endpoint returning a JSON float array.

The prompt feature is expanded to one row per anchor frame by an MLP over
(feature, fourier time encoding), and injected into Gaussian tokens by
cross-attention with a residual. By default each frame's tokens see only that
frame's prompt row; ``attend_all_frames`` lifts the restriction.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
import torch
from torch import nn

from stp4d.errors import DimensionError, EncoderError
from stp4d.nn import CrossAttention, Mlp, fourier_time_features
from stp4d.nn.modules import AttentionConfig
from stp4d.seeding import stable_hash64, torch_generator

EMBED_MAGIC = b"STP4DEMB"


@dataclass
class PromptEmbedding:
    values: torch.Tensor
    source: str

    def __post_init__(self):
        norm = torch.linalg.vector_norm(self.values).item()
        if not np.isfinite(norm) or norm < 1e-12:
            raise EncoderError("prompt embedding has zero norm")
        self.values = self.values / norm

    @property
    def dim(self) -> int:
        return self.values.shape[0]


class ToyTextEncoder:
    """Order-sensitive bag of seeded token vectors, normalized to unit length."""

    def __init__(self, dim: int, seed: int = 0, dtype: torch.dtype = torch.float64):
        self.dim = dim
        self.seed = seed
        self.dtype = dtype

    def encode(self, text: str) -> PromptEmbedding:
        tokens = text.split()
        if not tokens:
            raise EncoderError("empty prompt")
        total = torch.zeros(self.dim, dtype=self.dtype)
        for position, token in enumerate(tokens):
            gen = torch_generator(stable_hash64("tok", self.seed, position, token))
            total += torch.randn(self.dim, generator=gen, dtype=self.dtype)
        return PromptEmbedding(values=total, source="toy")


def write_embedding_file(path, values: torch.Tensor, binary: bool = False) -> None:
    path = Path(path)
    data = values.detach().cpu().to(torch.float64).numpy()
    if binary:
        payload = struct.pack("<I", data.shape[0]) + data.astype("<f4").tobytes()
        path.write_bytes(EMBED_MAGIC + payload)
    else:
        path.write_text(json.dumps({"dim": data.shape[0], "values": data.tolist()}))


def read_embedding_file(path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise EncoderError(f"embedding file not found: {path}")
    raw = path.read_bytes()
    if raw[:8] == EMBED_MAGIC:
        (dim,) = struct.unpack_from("<I", raw, 8)
        values = np.frombuffer(raw, dtype="<f4", count=dim, offset=12)
        return torch.from_numpy(values.astype(np.float64))
    try:
        doc = json.loads(raw.decode("utf-8"))
        values = np.asarray(doc["values"], dtype=np.float64)
        if len(values) != int(doc["dim"]):
            raise EncoderError(f"{path}: dim field {doc['dim']} != {len(values)} values")
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise EncoderError(f"{path}: not a valid embedding file") from exc
    return torch.from_numpy(values)


class FileTextEncoder:
    """Serves one precomputed embedding regardless of the prompt text."""

    def __init__(self, path, dim: int, dtype: torch.dtype = torch.float64):
        values = read_embedding_file(path)
        if values.shape[0] != dim:
            raise EncoderError(f"embedding dim {values.shape[0]} != configured {dim}")
        self._embedding = PromptEmbedding(values=values.to(dtype), source="file")

    def encode(self, text: str) -> PromptEmbedding:
        if not text.strip():
            raise EncoderError("empty prompt")
        return self._embedding


class ServiceTextEncoder:
    def __init__(self, url: str, dim: int, timeout: float = 5.0,
                 dtype: torch.dtype = torch.float64):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self.dtype = dtype

    def encode(self, text: str) -> PromptEmbedding:
        if not text.strip():
            raise EncoderError("empty prompt")
        try:
            response = requests.post(self.url, json={"text": text}, timeout=self.timeout)
            response.raise_for_status()
            values = np.asarray(response.json(), dtype=np.float64)
        except (requests.RequestException, ValueError) as exc:
            raise EncoderError(f"prompt service failed: {exc}") from exc
        if values.ndim != 1 or values.shape[0] != self.dim:
            raise EncoderError(
                f"prompt service returned shape {values.shape}, expected ({self.dim},)"
            )
        return PromptEmbedding(values=torch.from_numpy(values).to(self.dtype), source="service")


def make_text_encoder(backend: str, dim: int, seed: int = 0, path=None, url=None,
                      timeout: float = 5.0, dtype: torch.dtype = torch.float64):
    if backend == "toy":
        return ToyTextEncoder(dim, seed=seed, dtype=dtype)
    if backend == "file":
        if path is None:
            raise EncoderError("file backend needs an embedding path")
        return FileTextEncoder(path, dim, dtype=dtype)
    if backend == "service":
        if not url:
            raise EncoderError("service backend needs a URL")
        return ServiceTextEncoder(url, dim, timeout=timeout, dtype=dtype)
    raise EncoderError(f"unknown encoder backend {backend!r}")


class TimeVaryingPrompt(nn.Module):
    """Expand a prompt feature into one row per anchor frame.

    Row t is MLP(concat(feature, fourier(t / anchor_frames))); rows depend only
    on (feature, t), so the expansion is deterministic.
    """

    def __init__(self, dim: int, time_dim: int = 8, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.dim = dim
        self.time_dim = time_dim
        self.mlp = Mlp(dim + time_dim, dim, dim, dtype=dtype)
        self.dtype = dtype

    def forward(self, embedding: PromptEmbedding, anchor_frames: int) -> torch.Tensor:
        if anchor_frames < 1:
            raise DimensionError("anchor_frames must be >= 1")
        feature = embedding.values.to(self.dtype)
        rows = []
        for t in range(anchor_frames):
            clock = fourier_time_features(t, anchor_frames, self.time_dim).to(self.dtype)
            rows.append(torch.cat([feature, clock]))
        return self.mlp(torch.stack(rows))


class PromptInjection(nn.Module):
    """Cross-attend Gaussian tokens (queries) to prompt rows, with a residual.

    Tokens must be frame-major: rows [t*G, (t+1)*G) belong to frame t. Unless
    ``attend_all_frames`` is set, frame t's tokens may only attend to prompt
    row t.
    """

    def __init__(self, dim: int, head_count: int = 4, attend_all_frames: bool = False,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.attn = CrossAttention(AttentionConfig(model_dim=dim, head_count=head_count),
                                   dtype=dtype)
        self.attend_all_frames = attend_all_frames

    def forward(self, tokens: torch.Tensor, prompt_rows: torch.Tensor) -> torch.Tensor:
        frames = prompt_rows.shape[0]
        if tokens.shape[0] % frames != 0:
            raise DimensionError(
                f"{tokens.shape[0]} tokens not frame-major over {frames} frames"
            )
        mask = None
        if not self.attend_all_frames:
            per_frame = tokens.shape[0] // frames
            frame_of_token = torch.arange(tokens.shape[0]) // per_frame
            mask = frame_of_token[:, None] == torch.arange(frames)[None, :]
        return tokens + self.attn(tokens, prompt_rows, prompt_rows, mask=mask)
