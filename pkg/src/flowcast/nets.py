"""Feed-forward networks: plain ReLU MLPs, MADE, permutations, and the
additive conditioner that sums a MADE over the autoregressive inputs with an
MLP over the context features.

Also holds the binary weight container used by checkpoints.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = [
    "Mlp",
    "MaskedMlp",
    "Permutation",
    "AdditiveConditioner",
    "made_degrees",
    "write_container",
    "read_container",
    "ContainerError",
]


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    bias = rng.uniform(-bound, bound, size=fan_out)
    return Tensor(weight, requires_grad=True), Tensor(bias, requires_grad=True)


class Mlp:
    """ReLU multilayer perceptron; the output layer has no activation."""

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        out_dim: int,
        rng: np.random.Generator,
        zero_last: bool = False,
    ):
        dims = [in_dim, *hidden, out_dim]
        self.layers = [_uniform_layer(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        if zero_last:
            w, b = self.layers[-1]
            w.data[...] = 0.0
            b.data[...] = 0.0
        self.in_dim = in_dim
        self.out_dim = out_dim

    @classmethod
    def from_layers(cls, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> "Mlp":
        net = cls.__new__(cls)
        net.layers = [
            (Tensor(np.array(w, dtype=float), True), Tensor(np.array(b, dtype=float), True))
            for w, b in layers
        ]
        for (w0, _), (w1, _) in zip(net.layers[:-1], net.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError(f"layer widths do not chain: {w0.shape} -> {w1.shape}")
        net.in_dim = net.layers[0][0].shape[0]
        net.out_dim = net.layers[-1][0].shape[1]
        return net

    def __call__(self, x) -> Tensor:
        x = ad.tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Mlp expects (N, {self.in_dim}) input, got {x.shape}")
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.affine(h, w, b)
            if i < last:
                h = ad.relu(h)
        return h

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}layer{i}.weight"] = w
            out[f"{prefix}layer{i}.bias"] = b
        return out


def made_degrees(d: int, hidden: Sequence[int], params_per_dim: int):
    """Unit degrees for a MADE over ``d`` ordered inputs.

    Inputs get degrees 1..d, hidden units cycle through 1..d-1 (all 1 when
    d == 1), and output block i (``params_per_dim`` units) gets degree i+1.
    """
    cycle = max(d - 1, 1)
    degrees = [np.arange(1, d + 1)]
    for width in hidden:
        degrees.append(np.arange(width) % cycle + 1)
    degrees.append(np.repeat(np.arange(1, d + 1), params_per_dim))
    return degrees


def _made_masks(degrees) -> list[np.ndarray]:
    masks = []
    for prev, nxt in zip(degrees[:-2], degrees[1:-1]):
        masks.append((nxt[None, :] >= prev[:, None]).astype(float))
    masks.append((degrees[-1][None, :] > degrees[-2][:, None]).astype(float))
    return masks


class MaskedMlp:
    """MADE: output block i depends on inputs 1..i-1 only."""

    def __init__(
        self,
        d: int,
        hidden: Sequence[int],
        params_per_dim: int,
        rng: np.random.Generator,
        zero_last: bool = False,
    ):
        self.d = d
        self.params_per_dim = params_per_dim
        self.hidden = list(hidden)
        self.net = Mlp(d, hidden, d * params_per_dim, rng, zero_last=zero_last)
        self.masks = _made_masks(made_degrees(d, hidden, params_per_dim))

    def __call__(self, z) -> Tensor:
        z = ad.tensor(z)
        if z.ndim != 2 or z.shape[1] != self.d:
            raise ShapeError(f"MaskedMlp expects (N, {self.d}) input, got {z.shape}")
        h = z
        last = len(self.net.layers) - 1
        for i, ((w, b), mask) in enumerate(zip(self.net.layers, self.masks)):
            h = ad.affine(h, ad.mul(w, mask), b)
            if i < last:
                h = ad.relu(h)
        return h

    def connectivity(self) -> np.ndarray:
        """Boolean (d, d*P) matrix: can input j reach output unit u?"""
        reach = np.eye(self.d)
        for mask in self.masks:
            reach = (reach @ mask) > 0
            reach = reach.astype(float)
        return reach > 0

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return self.net.parameters(prefix)


class AdditiveConditioner:
    """Sum of a MADE over the autoregressive prefix and an MLP over context.

    Returns raw transformer parameters of shape (N, d, P).
    """

    def __init__(self, made: MaskedMlp, ctx_net: Mlp):
        if made.net.out_dim != ctx_net.out_dim:
            raise ShapeError(
                f"conditioner widths differ: MADE {made.net.out_dim} vs context {ctx_net.out_dim}"
            )
        self.made = made
        self.ctx_net = ctx_net
        self.d = made.d
        self.params_per_dim = made.params_per_dim

    def context_part(self, x) -> Tensor:
        return self.ctx_net(x)

    def made_part(self, z) -> Tensor:
        return self.made(z)

    def combine(self, made_out: Tensor, ctx_out: Tensor) -> Tensor:
        n = made_out.shape[0]
        return ad.reshape(ad.add(made_out, ctx_out), (n, self.d, self.params_per_dim))

    def __call__(self, z, x) -> Tensor:
        return self.combine(self.made_part(z), self.context_part(x))

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {**self.made.parameters(prefix + "made."), **self.ctx_net.parameters(prefix + "ctx.")}


@dataclass(frozen=True)
class Permutation:
    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"not a permutation: {self.order}")

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls(tuple(range(d)))

    @classmethod
    def reverse(cls, d: int) -> "Permutation":
        return cls(tuple(range(d - 1, -1, -1)))

    @property
    def inverse_order(self) -> tuple[int, ...]:
        inv = np.empty(len(self.order), dtype=int)
        inv[list(self.order)] = np.arange(len(self.order))
        return tuple(int(i) for i in inv)

    def apply(self, v):
        if isinstance(v, Tensor):
            return ad.take(v, self.order, axis=-1)
        return np.take(np.asarray(v), self.order, axis=-1)

    def invert(self, v):
        if isinstance(v, Tensor):
            return ad.take(v, self.inverse_order, axis=-1)
        return np.take(np.asarray(v), self.inverse_order, axis=-1)


# ------------------------------------------------------------------ container

MAGIC = b"FLOWCAST"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(fh: BinaryIO, tensors: dict[str, np.ndarray], header: dict | None = None) -> None:
    """Serialize named float64 arrays.

    Layout (little-endian): magic ``FLOWCAST``, u32 version, u32 header
    length + UTF-8 JSON header, u32 tensor count, then per tensor: u16 name
    length + UTF-8 name, u8 ndim, ndim x u64 dims, f64 payload row-major.
    """
    head = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(head)))
    fh.write(head)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerError("truncated container")
    return buf


def read_container(fh: BinaryIO) -> tuple[dict, dict[str, np.ndarray]]:
    if _read_exact(fh, len(MAGIC)) != MAGIC:
        raise ContainerError("bad magic: not a flowcast container")
    version, head_len = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(_read_exact(fh, head_len).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        payload = _read_exact(fh, 8 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return header, tensors


def container_bytes(tensors: dict[str, np.ndarray], header: dict | None = None) -> bytes:
    buf = io.BytesIO()
    write_container(buf, tensors, header)
    return buf.getvalue()
