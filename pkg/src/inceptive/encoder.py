"""Produces the contextual token representations the classification head
consumes: either a small trainable encoder (token + learned positional
embeddings feeding pre-norm self-attention blocks), or frozen tensors
ingested from an embedding file exported by any external model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, VocabularyError
from .layers import (
    MhaCache,
    MhaParams,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    mha_backward,
    mha_forward,
    relu,
    relu_backward,
)
from .tensor import ParamStore, Rng, glorot_uniform

__all__ = [
    "EncoderConfig",
    "init_encoder_params",
    "embed",
    "embed_backward",
    "encode",
    "encode_forward",
    "encode_backward",
    "EncoderCache",
    "save_embeddings",
    "load_embeddings",
]


@dataclass
class EncoderConfig:
    vocab_size: int
    d: int
    n_layers: int = 2
    n_heads: int = 4
    ffn_size: int = 64
    max_len: int = 128

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ConfigError(f"hidden size {self.d} not divisible by {self.n_heads} heads")
        if self.vocab_size < 1 or self.max_len < 1:
            raise ConfigError("vocab_size and max_len must be positive")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads


def init_encoder_params(
    cfg: EncoderConfig, rng: Rng, store: ParamStore | None = None, prefix: str = "encoder."
) -> ParamStore:
    """Glorot-uniform weights, unit norm scales, zero biases and shifts."""
    store = store if store is not None else ParamStore()
    d, dh = cfg.d, cfg.head_dim
    store.add(prefix + "tok_embed", glorot_uniform(rng, (cfg.vocab_size, d), cfg.vocab_size, d))
    store.add(prefix + "pos_embed", glorot_uniform(rng, (cfg.max_len, d), cfg.max_len, d))
    for i in range(cfg.n_layers):
        b = f"{prefix}block{i}."
        store.add(b + "ln1.scale", np.ones(d))
        store.add(b + "ln1.shift", np.zeros(d))
        for name in ("attn.w_q", "attn.w_k", "attn.w_v"):
            store.add(b + name, glorot_uniform(rng, (cfg.n_heads, d, dh), d, dh))
        store.add(b + "attn.w_o", glorot_uniform(rng, (cfg.n_heads * dh, d), cfg.n_heads * dh, d))
        store.add(b + "ln2.scale", np.ones(d))
        store.add(b + "ln2.shift", np.zeros(d))
        store.add(b + "ffn.w1", glorot_uniform(rng, (d, cfg.ffn_size), d, cfg.ffn_size))
        store.add(b + "ffn.b1", np.zeros(cfg.ffn_size))
        store.add(b + "ffn.w2", glorot_uniform(rng, (cfg.ffn_size, d), cfg.ffn_size, d))
        store.add(b + "ffn.b2", np.zeros(d))
    return store


def embed(
    cfg: EncoderConfig, params: ParamStore, ids: np.ndarray, prefix: str = "encoder."
) -> np.ndarray:
    """Token lookup plus learned positional embedding, summed; ``B x L x d``."""
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise DimensionError(f"ids must be a non-empty B x L array, got {ids.shape}")
    if ids.shape[1] > cfg.max_len:
        raise DimensionError(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        bad = int(ids.max() if ids.max() >= cfg.vocab_size else ids.min())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {cfg.vocab_size}")
    tok = params.value(prefix + "tok_embed")
    pos = params.value(prefix + "pos_embed")
    return tok[ids] + pos[: ids.shape[1]]


def embed_backward(
    cfg: EncoderConfig,
    params: ParamStore,
    ids: np.ndarray,
    dx: np.ndarray,
    prefix: str = "encoder.",
) -> None:
    """Scatter-add gradients into the embedding tables."""
    dtok = params.grad(prefix + "tok_embed")
    np.add.at(dtok, ids, dx)
    params.grad(prefix + "pos_embed")[: ids.shape[1]] += dx.sum(axis=0)


@dataclass
class _BlockCache:
    x_in: np.ndarray
    mha: MhaCache
    x_mid: np.ndarray
    f1: np.ndarray  # pre-activation of the first feed-forward layer


@dataclass
class EncoderCache:
    blocks: list[_BlockCache]

    @property
    def last_attention_weights(self) -> np.ndarray | None:
        """``B x h x L x L`` weight rows of the final block, if any."""
        if not self.blocks:
            return None
        return self.blocks[-1].mha.weights


def _block_params(params: ParamStore, b: str) -> MhaParams:
    return MhaParams(
        params.value(b + "attn.w_q"),
        params.value(b + "attn.w_k"),
        params.value(b + "attn.w_v"),
        params.value(b + "attn.w_o"),
    )


def encode_forward(
    cfg: EncoderConfig, params: ParamStore, x: np.ndarray, prefix: str = "encoder."
) -> tuple[np.ndarray, EncoderCache]:
    """Run the pre-norm block stack; zero layers passes the input through."""
    caches = []
    for i in range(cfg.n_layers):
        b = f"{prefix}block{i}."
        x_in = x
        n1 = layer_norm(params.value(b + "ln1.scale"), params.value(b + "ln1.shift"), x_in)
        attn_out, mha_cache = mha_forward(_block_params(params, b), n1)
        x_mid = x_in + attn_out
        n2 = layer_norm(params.value(b + "ln2.scale"), params.value(b + "ln2.shift"), x_mid)
        f1 = linear(params.value(b + "ffn.w1"), params.value(b + "ffn.b1"), n2)
        f2 = linear(params.value(b + "ffn.w2"), params.value(b + "ffn.b2"), relu(f1))
        x = x_mid + f2
        caches.append(_BlockCache(x_in, mha_cache, x_mid, f1))
    return x, EncoderCache(caches)


def encode(cfg: EncoderConfig, params: ParamStore, x: np.ndarray, prefix: str = "encoder.") -> np.ndarray:
    h, _ = encode_forward(cfg, params, x, prefix)
    return h


def encode_backward(
    cfg: EncoderConfig,
    params: ParamStore,
    cache: EncoderCache,
    dh: np.ndarray,
    prefix: str = "encoder.",
) -> np.ndarray:
    """Accumulate parameter gradients and return the input gradient."""
    dx = dh
    for i in reversed(range(cfg.n_layers)):
        b = f"{prefix}block{i}."
        blk = cache.blocks[i]
        # feed-forward residual: x = x_mid + ffn(ln2(x_mid))
        n2 = layer_norm(params.value(b + "ln2.scale"), params.value(b + "ln2.shift"), blk.x_mid)
        r = relu(blk.f1)
        dr, dw2, db2 = linear_backward(params.value(b + "ffn.w2"), r, dx)
        df1 = relu_backward(blk.f1, dr)
        dn2, dw1, db1 = linear_backward(params.value(b + "ffn.w1"), n2, df1)
        dx_mid_ln, dg2, db2ln = layer_norm_backward(params.value(b + "ln2.scale"), blk.x_mid, dn2)
        dx_mid = dx + dx_mid_ln
        params.add_grad(b + "ffn.w2", dw2)
        params.add_grad(b + "ffn.b2", db2)
        params.add_grad(b + "ffn.w1", dw1)
        params.add_grad(b + "ffn.b1", db1)
        params.add_grad(b + "ln2.scale", dg2)
        params.add_grad(b + "ln2.shift", db2ln)
        # attention residual: x_mid = x_in + attn(ln1(x_in))
        dn1, mha_grads = mha_backward(_block_params(params, b), blk.mha, dx_mid)
        dx_in_ln, dg1, db1ln = layer_norm_backward(params.value(b + "ln1.scale"), blk.x_in, dn1)
        dx = dx_mid + dx_in_ln
        params.add_grad(b + "attn.w_q", mha_grads.w_q)
        params.add_grad(b + "attn.w_k", mha_grads.w_k)
        params.add_grad(b + "attn.w_v", mha_grads.w_v)
        params.add_grad(b + "attn.w_o", mha_grads.w_o)
        params.add_grad(b + "ln1.scale", dg1)
        params.add_grad(b + "ln1.shift", db1ln)
    return dx


# --- embedding file format -----------------------------------------------------
#
# Layout: magic "IEMB", u32 version (=1), u32 B, u32 L, u32 d,
# u8 label_kind (0 = class index, 1 = multi-label), u32 C, then B labels
# (u32 each for class indices, C x u8 each for multi-label rows), then
# B*L*d little-endian float32 values in row-major order.

_EMB_MAGIC = b"IEMB"
_EMB_VERSION = 1


def save_embeddings(path, h: np.ndarray, labels: np.ndarray, n_classes: int) -> None:
    """Write hidden states and labels; 1-D integer labels are class indices,
    a 2-D 0/1 matrix is treated as multi-label rows."""
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels)
    if h.ndim != 3:
        raise DimensionError(f"hidden states must be B x L x d, got {h.shape}")
    b, length, d = h.shape
    multilabel = labels.ndim == 2
    if multilabel and labels.shape != (b, n_classes):
        raise DimensionError(f"multi-label matrix {labels.shape} vs ({b}, {n_classes})")
    if not multilabel and labels.shape != (b,):
        raise DimensionError(f"label vector {labels.shape} vs ({b},)")
    blob = _EMB_MAGIC + struct.pack(
        "<IIIIBI", _EMB_VERSION, b, length, d, 1 if multilabel else 0, n_classes
    )
    if multilabel:
        blob += labels.astype(np.uint8).tobytes(order="C")
    else:
        blob += labels.astype("<u4").tobytes(order="C")
    blob += h.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(blob)


def load_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an embedding file; returns (hidden states, labels).

    The tensor is float64 in memory but carries no gradient: it enters the
    pipeline as a frozen input.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _EMB_MAGIC:
        raise FormatError("bad embedding-file magic", 0)
    off = 4
    if len(buf) < off + 21:
        raise FormatError("truncated embedding header", off)
    version, b, length, d, label_kind, n_classes = struct.unpack_from("<IIIIBI", buf, off)
    if version != _EMB_VERSION:
        raise FormatError(f"unsupported embedding-file version {version}", off)
    off += 21
    if label_kind == 0:
        need = 4 * b
        if len(buf) < off + need:
            raise FormatError("truncated class-index labels", off)
        labels = np.frombuffer(buf, dtype="<u4", count=b, offset=off).astype(np.int64)
        off += need
    elif label_kind == 1:
        need = b * n_classes
        if len(buf) < off + need:
            raise FormatError("truncated multi-label rows", off)
        labels = (
            np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
            .reshape(b, n_classes)
            .astype(np.float64)
        )
        off += need
    else:
        raise FormatError(f"unknown label kind {label_kind}", off - 5)
    count = b * length * d
    if len(buf) < off + 4 * count:
        raise FormatError(
            f"truncated payload: need {4 * count} bytes, have {len(buf) - off}", off
        )
    h = np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float64)
    off += 4 * count
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return h.reshape(b, length, d), labels
