"""Dense tensor values, seeded randomness, parameter storage, and the
finite-difference harness used to validate every backward pass.

Tensors are plain ``numpy.ndarray`` values in float64, C-order (row-major,
last index fastest). Functions in this module enforce the library's shape
and finiteness contracts on top of numpy's arithmetic.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericError

__all__ = [
    "Rng",
    "Param",
    "ParamStore",
    "as_tensor",
    "matmul",
    "concat_features",
    "glorot_uniform",
    "clip_global_norm",
    "grad_check",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
]


def as_tensor(x) -> np.ndarray:
    """Coerce input to a float64, C-contiguous array."""
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _tag_to_int(tag) -> int:
    if isinstance(tag, int):
        return tag
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Seeded random stream backed by the Philox counter-based generator.

    Identical seeds produce identical draw sequences on every platform.
    Substreams derived with :meth:`child` are independent and equally
    reproducible, which lets one experiment seed drive initialization,
    per-epoch shuffles, and dropout masks without coupling them.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        ss = np.random.SeedSequence([self.seed, *(_path or (0,))])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *tags) -> "Rng":
        """Derive an independent substream keyed by ``tags``."""
        return Rng(self.seed, self._path + tuple(_tag_to_int(t) for t in tags))

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def poisson(self, lam: float, shape=None) -> np.ndarray:
        return self._gen.poisson(lam, size=shape)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


@dataclass
class Param:
    """A trainable tensor and its gradient accumulator (same shape)."""

    value: np.ndarray
    grad: np.ndarray


class ParamStore:
    """Ordered map from parameter path (e.g. ``head.dense.weight``) to
    a value/grad pair. Iteration order is insertion order and names are
    unique, so optimizer sweeps and serialization are deterministic."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name: {name}")
        value = as_tensor(value)
        self._entries[name] = Param(value, np.zeros_like(value))
        return value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Param]]:
        return iter(self._entries.items())

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad[...] = 0.0

    def add_grad(self, name: str, g: np.ndarray) -> None:
        self._entries[name].grad += g

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self._entries.items():
            out.add(name, p.value.copy())
            out._entries[name].grad[...] = p.grad
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match."""
        missing = set(self._entries) - set(values)
        extra = set(values) - set(self._entries)
        if missing or extra:
            raise DimensionError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, arr in values.items():
            p = self._entries[name]
            arr = as_tensor(arr)
            if arr.shape != p.value.shape:
                raise DimensionError(
                    f"shape mismatch for {name}: stored {arr.shape} vs expected {p.value.shape}"
                )
            p.value[...] = arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with an explicit inner-extent check.

    ``a`` may carry leading batch extents that broadcast over a 2-D ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def concat_features(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate B x L x c_i feature maps along the channel axis.

    Channel slice i of the output is part i, bitwise.
    """
    if not parts:
        raise DimensionError("concat_features needs at least one part")
    lead = parts[0].shape[:-1]
    for i, p in enumerate(parts[1:], start=1):
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat_features part {i} has leading shape {p.shape[:-1]}, expected {lead}"
            )
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=-1)


def glorot_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def clip_global_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. Applying twice is equivalent to applying
    once. Raises on NaN gradients.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for name, p in params.items():
        if np.isnan(p.grad).any():
            raise NumericError(f"NaN gradient in {name}")
        total += float(np.dot(p.grad.ravel(), p.grad.ravel()))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            p.grad *= scale
    return norm


def grad_check(
    f: Callable[[ParamStore], float],
    params: ParamStore,
    h: float = 1e-5,
) -> float:
    """Compare the gradients stored in ``params`` against central differences.

    The caller runs its forward/backward once to populate ``params`` grads,
    then passes the same deterministic scalar function ``f`` here. Every
    scalar entry is perturbed by +-h; the relative error is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`` and the
    maximum over all entries is returned.
    """
    analytic = {name: p.grad.copy() for name, p in params.items()}
    max_rel = 0.0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = float(flat[i])
            flat[i] = orig + h
            f_plus = float(f(params))
            flat[i] = orig - h
            f_minus = float(f(params))
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[i])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > max_rel:
                max_rel = rel
    return max_rel


# --- binary tensor container -------------------------------------------------
#
# Layout: magic "ITNS", u32 version (=1), u32 rank, rank x u64 extents,
# then little-endian float32 payload in row-major order. Values are widened
# to float64 on load.

_MAGIC = b"ITNS"
_VERSION = 1


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = as_tensor(arr)
    header = _MAGIC + struct.pack("<II", _VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype("<f4").tobytes(order="C")


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def tensor_from_bytes(buf: bytes, base_offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor record; returns (array, bytes consumed)."""
    off = 0
    if buf[off : off + 4] != _MAGIC:
        raise FormatError("bad tensor magic", base_offset + off)
    off += 4
    if len(buf) < off + 8:
        raise FormatError("truncated tensor header", base_offset + off)
    version, rank = struct.unpack_from("<II", buf, off)
    if version != _VERSION:
        raise FormatError(f"unsupported tensor version {version}", base_offset + off)
    off += 8
    if len(buf) < off + 8 * rank:
        raise FormatError("truncated extent list", base_offset + off)
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    count = int(np.prod(shape)) if rank else 1
    need = 4 * count
    if len(buf) < off + need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(buf) - off}",
            base_offset + off,
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    off += need
    return data.astype(np.float64).reshape(shape), off


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, used = tensor_from_bytes(buf)
    if used != len(buf):
        raise FormatError(f"{len(buf) - used} trailing bytes after tensor", used)
    return arr


# --- checkpoints --------------------------------------------------------------
#
# A checkpoint is a name-index preamble followed by one tensor record per
# name, in preamble order: u32 entry count, then per entry u16 name length +
# UTF-8 name, then the tensor records. Model buffers (batch-norm running
# statistics) are stored alongside trainable parameters so evaluation
# behavior survives a round trip. Payloads are float32 on disk.


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    names = list(tensors)
    blob = struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        blob += struct.pack("<H", len(raw)) + raw
    for name in names:
        blob += tensor_bytes(tensors[name])
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise FormatError("truncated checkpoint header", 0)
    (count,) = struct.unpack_from("<I", buf, 0)
    off = 4
    names = []
    for _ in range(count):
        if len(buf) < off + 2:
            raise FormatError("truncated name index", off)
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        if len(buf) < off + nlen:
            raise FormatError("truncated name entry", off)
        names.append(buf[off : off + nlen].decode("utf-8"))
        off += nlen
    out: dict[str, np.ndarray] = {}
    for name in names:
        arr, used = tensor_from_bytes(buf[off:], off)
        out[name] = arr
        off += used
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after checkpoint", off)
    return out
