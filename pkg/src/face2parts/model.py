"""Channel-attention MLP triplet network, distances, loss and checkpoints.

The network maps a k x D region stack to a 256-d embedding:

* channel attention: the stack is average- and max-pooled over the feature
  axis, both k-vectors go through one shared k -> 2k -> 2k -> k MLP, the
  two outputs are summed and squashed into per-row gates;
* the gated stack is flattened and passed through k*D -> 512 -> 256.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .encoders import FeatureStack
from .errors import (CheckpointCorrupt, LengthMismatch, NegativeDistance,
                     RowCountMismatch, WidthMismatch)

EMBED_DIM = 256
HIDDEN_DIM = 512


def init_uniform_fan_in(module: nn.Module, seed: int) -> None:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a seeded generator; biases zero."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Linear):
                bound = 1.0 / math.sqrt(m.in_features)
                w = torch.rand(m.weight.shape, generator=gen, dtype=torch.float64) * 2 - 1
                m.weight.copy_(w * bound)
                if m.bias is not None:
                    m.bias.zero_()


class ChannelAttention(nn.Module):
    """Per-row gates from pooled row statistics; returns ``(gated, gates)``."""

    def __init__(self, k: int, gate: str = "sigmoid"):
        super().__init__()
        if gate not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown gate {gate!r}")
        self.k = k
        self.gate = gate
        self.mlp = nn.Sequential(
            nn.Linear(k, 2 * k), nn.ReLU(),
            nn.Linear(2 * k, 2 * k), nn.ReLU(),
            nn.Linear(2 * k, k),
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-2] != self.k:
            raise RowCountMismatch(f"attention built for {self.k} rows, got {x.shape[-2]}")
        logits = self.mlp(x.mean(dim=-1)) + self.mlp(x.amax(dim=-1))
        if self.gate == "sigmoid":
            gates = torch.sigmoid(logits)
        else:
            gates = torch.softmax(logits, dim=-1)
        return x * gates.unsqueeze(-1), gates


class TripletNetwork(nn.Module):
    def __init__(self, k: int, dim: int, hidden: int = HIDDEN_DIM, embed_dim: int = EMBED_DIM,
                 seed: int = 0, gate: str = "sigmoid"):
        super().__init__()
        self.k, self.dim, self.hidden, self.embed_dim = k, dim, hidden, embed_dim
        self.seed, self.gate = int(seed), gate
        self.attention = ChannelAttention(k, gate)
        self.head = nn.Sequential(nn.Linear(k * dim, hidden), nn.ReLU(), nn.Linear(hidden, embed_dim))
        init_uniform_fan_in(self, seed)

    @property
    def config(self) -> dict:
        return {"k": self.k, "D": self.dim, "hidden": self.hidden, "embed_dim": self.embed_dim,
                "seed": self.seed, "gate": self.gate}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.k, self.dim):
            raise WidthMismatch(f"network expects {self.k}x{self.dim} stacks, got "
                                f"{tuple(x.shape[-2:])}")
        weighted, _ = self.attention(x)
        return self.head(weighted.flatten(start_dim=-2))


class FCClassifier(nn.Module):
    """Standardize the embedding, then a fully connected head to one logit."""

    def __init__(self, in_dim: int = EMBED_DIM, hidden: int = 0, seed: int = 0):
        super().__init__()
        self.in_dim, self.hidden, self.seed = in_dim, hidden, int(seed)
        self.register_buffer("center", torch.zeros(in_dim))
        self.register_buffer("scale", torch.ones(in_dim))
        if hidden:
            self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))
        else:
            self.net = nn.Sequential(nn.Linear(in_dim, 1))
        init_uniform_fan_in(self, seed)

    @property
    def config(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": self.hidden, "seed": self.seed}

    def fit_standardization(self, x: torch.Tensor) -> None:
        with torch.no_grad():
            self.center.copy_(x.mean(dim=0))
            std = x.std(dim=0, unbiased=False)
            self.scale.copy_(torch.where(std > 1e-12, std, torch.ones_like(std)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net((x - self.center) / self.scale).squeeze(-1)

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward(x))


# -- FeatureStack level API --------------------------------------------------

def _as_tensor(stack_or_array, like: nn.Module) -> torch.Tensor:
    rows = stack_or_array.rows if isinstance(stack_or_array, FeatureStack) else stack_or_array
    p = next(like.parameters())
    return torch.as_tensor(np.asarray(rows), dtype=p.dtype)


def channel_attention(s: FeatureStack, attention: ChannelAttention) -> tuple[FeatureStack, np.ndarray]:
    if s.k != attention.k:
        raise RowCountMismatch(f"attention built for {attention.k} rows, stack has {s.k}")
    with torch.no_grad():
        weighted, gates = attention(_as_tensor(s, attention))
    out = FeatureStack(weighted.numpy(), s.region_ids, s.encoder_id, s.source)
    return out, gates.numpy()


def embed(s, net: TripletNetwork) -> np.ndarray:
    """Embedding of one stack (a FeatureStack or a k x D array)."""
    x = _as_tensor(s, net)
    if x.ndim != 2 or x.shape[0] * x.shape[1] != net.k * net.dim:
        raise WidthMismatch(f"stack of shape {tuple(x.shape)} does not fit a "
                            f"{net.k * net.dim}-wide input")
    with torch.no_grad():
        return net(x.reshape(net.k, net.dim)).numpy()


def embed_many(x: np.ndarray, net: TripletNetwork, batch_size: int = 4096) -> np.ndarray:
    p = next(net.parameters())
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(net(torch.as_tensor(x[start:start + batch_size], dtype=p.dtype)))
    if not out:
        return np.zeros((0, net.embed_dim), dtype=np.float32)
    return torch.cat(out).numpy()


def triplet_forward(anchors, positives, negatives, net: TripletNetwork):
    """Embed the three members of every triplet with the same network."""
    a, p, n = (torch.as_tensor(np.asarray(v), dtype=next(net.parameters()).dtype)
               if not isinstance(v, torch.Tensor) else v for v in (anchors, positives, negatives))
    if not (len(a) == len(p) == len(n)):
        raise LengthMismatch("anchors, positives and negatives differ in length")
    if len(a) == 0:
        empty = a.new_zeros((0, net.embed_dim))
        return empty, empty.clone(), empty.clone()
    out = net(torch.cat([a, p, n]))
    return out[: len(a)], out[len(a): 2 * len(a)], out[2 * len(a):]


def pairwise_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise LengthMismatch(f"{u.shape} vs {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def margin_ranking_loss(d_ap, d_an, margin: float = 0.0):
    """``max(0, d_ap - d_an + margin)``, elementwise for arrays."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    d_ap = np.asarray(d_ap, dtype=np.float64)
    d_an = np.asarray(d_an, dtype=np.float64)
    if np.any(d_ap < 0) or np.any(d_an < 0):
        raise NegativeDistance("distances must be non-negative")
    out = np.maximum(0.0, (d_ap - d_an) + margin)
    return float(out) if out.ndim == 0 else out


def triplet_loss(fa: torch.Tensor, fp: torch.Tensor, fn: torch.Tensor, margin: float = 0.0) -> torch.Tensor:
    """Batch mean of the margin ranking loss on Euclidean embedding distances."""
    d_ap = torch.linalg.vector_norm(fa - fp, dim=-1)
    d_an = torch.linalg.vector_norm(fa - fn, dim=-1)
    return torch.clamp(d_ap - d_an + margin, min=0).mean()


# -- checkpoints -------------------------------------------------------------

MAGIC = b"F2PCKPT\x00"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sHI")  # magic, version, header length
_CRC = struct.Struct("<I")


def checkpoint_bytes(module: nn.Module, kind: str) -> bytes:
    state = module.state_dict()
    header = {
        "kind": kind,
        "config": module.config,
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(t.detach().cpu().numpy().astype("<f4").tobytes() for t in state.values())
    body = _HEAD.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload
    return body + _CRC.pack(zlib.crc32(body))


def save_checkpoint(module: nn.Module, path, kind: str | None = None) -> int:
    """Write ``module`` to ``path``; returns the CRC32 of the file body."""
    kind = kind or type(module).__name__
    data = checkpoint_bytes(module, kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return _CRC.unpack(data[-4:])[0]


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + _CRC.size:
        raise CheckpointCorrupt(f"{path}: truncated")
    body, (crc,) = data[:-4], _CRC.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCorrupt(f"{path}: checksum mismatch")
    magic, version, hlen = _HEAD.unpack_from(body)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise CheckpointCorrupt(f"{path}: unsupported format")
    header = json.loads(body[_HEAD.size:_HEAD.size + hlen])
    offset = _HEAD.size + hlen
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=offset).reshape(shape)
        tensors[name] = arr.copy()
        offset += 4 * n
    if offset != len(body):
        raise CheckpointCorrupt(f"{path}: payload size mismatch")
    return header, tensors


_KINDS = {"TripletNetwork": TripletNetwork, "FCClassifier": FCClassifier}


def load_checkpoint(path) -> nn.Module:
    header, tensors = read_checkpoint(path)
    cls = _KINDS.get(header["kind"])
    if cls is None:
        raise CheckpointCorrupt(f"{path}: unknown kind {header['kind']!r}")
    cfg = dict(header["config"])
    if cls is TripletNetwork:
        module = cls(cfg["k"], cfg["D"], cfg["hidden"], cfg["embed_dim"], cfg["seed"], cfg["gate"])
    else:
        module = cls(cfg["in_dim"], cfg["hidden"], cfg["seed"])
    module.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return module


def parameter_vector(module: nn.Module) -> np.ndarray:
    return np.concatenate([p.detach().cpu().numpy().ravel() for p in module.parameters()])


def stacks_to_array(stacks: Sequence[FeatureStack]) -> np.ndarray:
    return np.stack([s.rows for s in stacks]).astype(np.float32)
