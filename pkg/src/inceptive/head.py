"""The classification head: parallel multi-scale convolutions over token
representations, residual feature concatenation, multi-head self-attention,
sequence-wide average pooling, a dense reduction block, and a linear
classifier.

Two ablation variants remove exactly one named stage each (``no_attn``
pools the enriched features directly; ``no_dense`` classifies the pooled
attention output directly), and a first-token baseline head serves as the
conventional comparator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError
from .layers import (
    BatchNormState,
    DropoutSpec,
    MhaCache,
    MhaParams,
    batchnorm_apply,
    batchnorm_backward,
    conv1d_backward,
    conv1d_forward,
    conv_branch,
    dropout,
    dropout_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    mha_backward,
    mha_forward,
    relu,
    relu_backward,
)
from .tensor import ParamStore, Rng, concat_features, glorot_uniform

__all__ = [
    "KERNEL_SIZES",
    "VARIANTS",
    "ModelConfig",
    "AttentionMap",
    "init_head_params",
    "make_head_state",
    "HeadState",
    "inception_forward",
    "inception_backward",
    "enrich",
    "multi_head_attention",
    "adaptive_avg_pool",
    "head_forward",
    "head_backward",
    "HeadPass",
    "init_baseline_params",
    "baseline_cls_forward",
    "baseline_cls_backward",
    "BaselinePass",
    "attention_received",
    "received_entropy",
    "shape_probe",
    "write_attention_csv",
    "write_attention_pgm",
]

KERNEL_SIZES = (2, 3, 5, 7)
VARIANTS = ("full", "no_attn", "no_dense")
TASKS = ("multi-class", "binary", "multi-label")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``c`` is the channel count of each convolution branch, so the enriched
    feature width is ``d_r = d + 4c``. ``head_dim`` defaults to
    ``d_r // n_heads`` and may be overridden.
    """

    d: int
    c: int
    n_heads: int = 2
    head_dim: int | None = None
    dense_dim: int = 64
    n_classes: int = 2
    task: str = "multi-class"
    dropout_rate: float = 0.1
    variant: str = "full"
    kernel_sizes: tuple[int, ...] = KERNEL_SIZES

    def __post_init__(self):
        if tuple(self.kernel_sizes) != KERNEL_SIZES:
            raise ConfigError(f"kernel sizes are fixed at {KERNEL_SIZES}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d < 1 or self.c < 1 or self.dense_dim < 1 or self.n_heads < 1:
            raise ConfigError("d, c, dense_dim, and n_heads must be positive")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.resolved_head_dim < 1:
            raise ConfigError("head_dim resolved to zero; raise head_dim or lower n_heads")
        if self.n_heads * self.resolved_head_dim > 4 * self.d_r:
            raise ConfigError(
                f"attention width {self.n_heads} x {self.resolved_head_dim} exceeds 4 x d_r = {4 * self.d_r}"
            )

    @property
    def d_r(self) -> int:
        return self.d + 4 * self.c

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim if self.head_dim is not None else self.d_r // self.n_heads

    @property
    def has_attention(self) -> bool:
        return self.variant in ("full", "no_dense")

    @property
    def has_dense(self) -> bool:
        return self.variant in ("full", "no_attn")

    @property
    def classifier_in(self) -> int:
        return self.dense_dim if self.has_dense else self.d_r


def init_head_params(
    cfg: ModelConfig, rng: Rng, store: ParamStore | None = None, prefix: str = "head."
) -> ParamStore:
    """Create exactly the parameters the configured variant uses.

    Weights are Glorot-uniform (convolution fans count kernel taps);
    biases and norm shifts start at zero, norm scales at one.
    """
    store = store if store is not None else ParamStore()
    d, c = cfg.d, cfg.c
    for k in cfg.kernel_sizes:
        # No conv bias: batch norm follows immediately and its mean
        # subtraction cancels a per-channel constant, so the shift term
        # below carries that role.
        b = f"{prefix}inception.branch_k{k}."
        store.add(b + "weight", glorot_uniform(rng, (c, k, d), k * d, k * c))
        store.add(b + "bn.scale", np.ones(c))
        store.add(b + "bn.shift", np.zeros(c))
    if cfg.has_attention:
        h, da = cfg.n_heads, cfg.resolved_head_dim
        for name in ("attn.w_q", "attn.w_k", "attn.w_v"):
            store.add(prefix + name, glorot_uniform(rng, (h, cfg.d_r, da), cfg.d_r, da))
        store.add(prefix + "attn.w_o", glorot_uniform(rng, (h * da, cfg.d_r), h * da, cfg.d_r))
    if cfg.has_dense:
        store.add(
            prefix + "dense.weight", glorot_uniform(rng, (cfg.d_r, cfg.dense_dim), cfg.d_r, cfg.dense_dim)
        )
        store.add(prefix + "dense.bias", np.zeros(cfg.dense_dim))
        store.add(prefix + "dense.ln.scale", np.ones(cfg.dense_dim))
        store.add(prefix + "dense.ln.shift", np.zeros(cfg.dense_dim))
    store.add(
        prefix + "classifier.weight",
        glorot_uniform(rng, (cfg.classifier_in, cfg.n_classes), cfg.classifier_in, cfg.n_classes),
    )
    store.add(prefix + "classifier.bias", np.zeros(cfg.n_classes))
    return store


@dataclass
class HeadState:
    """Non-parameter state: batch-norm running statistics per branch and the
    dropout applied to the incoming hidden states."""

    bn: dict[int, BatchNormState]
    dropout: DropoutSpec

    def set_mode(self, train: bool) -> None:
        mode = "train" if train else "eval"
        self.dropout.mode = mode
        for state in self.bn.values():
            state.mode = mode

    def buffers(self, prefix: str = "head.") -> dict[str, np.ndarray]:
        out = {}
        for k, state in self.bn.items():
            out[f"{prefix}inception.branch_k{k}.bn.running_mean"] = state.running_mean
            out[f"{prefix}inception.branch_k{k}.bn.running_var"] = state.running_var
        return out

    def load_buffers(self, values: dict[str, np.ndarray], prefix: str = "head.") -> None:
        for name, arr in self.buffers(prefix).items():
            if name not in values:
                raise DimensionError(f"checkpoint missing buffer {name}")
            if values[name].shape != arr.shape:
                raise DimensionError(
                    f"buffer {name} shape {values[name].shape} vs expected {arr.shape}"
                )
            arr[...] = values[name]


def make_head_state(cfg: ModelConfig, store: ParamStore, prefix: str = "head.") -> HeadState:
    bn = {}
    for k in cfg.kernel_sizes:
        b = f"{prefix}inception.branch_k{k}."
        bn[k] = BatchNormState(store.value(b + "bn.scale"), store.value(b + "bn.shift"))
    return HeadState(bn=bn, dropout=DropoutSpec(cfg.dropout_rate))


@dataclass
class _InceptionCache:
    conv_out: dict[int, np.ndarray]  # pre batch-norm
    bn_out: dict[int, np.ndarray]  # pre ReLU


def _branch(cfg: ModelConfig, store: ParamStore, prefix: str, k: int):
    b = f"{prefix}inception.branch_k{k}."
    return conv_branch(k, store.value(b + "weight"), np.zeros(cfg.c))


def inception_forward(
    cfg: ModelConfig,
    store: ParamStore,
    state: HeadState,
    h: np.ndarray,
    prefix: str = "head.",
) -> tuple[np.ndarray, _InceptionCache]:
    """Four convolution branches (widths 2, 3, 5, 7), each followed by batch
    norm and ReLU, concatenated channel-wise in kernel order."""
    conv_out, bn_out, parts = {}, {}, []
    for k in cfg.kernel_sizes:
        y = conv1d_forward(_branch(cfg, store, prefix, k), h)
        z = batchnorm_apply(state.bn[k], y)
        conv_out[k], bn_out[k] = y, z
        parts.append(relu(z))
    return concat_features(parts), _InceptionCache(conv_out, bn_out)


def inception_backward(
    cfg: ModelConfig,
    store: ParamStore,
    state: HeadState,
    h: np.ndarray,
    cache: _InceptionCache,
    dc_map: np.ndarray,
    prefix: str = "head.",
) -> np.ndarray:
    dh = np.zeros_like(h)
    for i, k in enumerate(cfg.kernel_sizes):
        b = f"{prefix}inception.branch_k{k}."
        dslice = dc_map[..., i * cfg.c : (i + 1) * cfg.c]
        dz = relu_backward(cache.bn_out[k], dslice)
        dy, dgamma, dbeta = batchnorm_backward(state.bn[k], cache.conv_out[k], dz)
        dh_k, dw, _ = conv1d_backward(_branch(cfg, store, prefix, k), h, dy)
        dh += dh_k
        store.add_grad(b + "weight", dw)
        store.add_grad(b + "bn.scale", dgamma)
        store.add_grad(b + "bn.shift", dbeta)
    return dh


def enrich(h_dropped: np.ndarray, c_map: np.ndarray) -> np.ndarray:
    """Concatenate the incoming representation with the convolution features
    along the feature axis; the first ``d`` channels remain the input,
    bitwise."""
    if h_dropped.shape[:2] != c_map.shape[:2]:
        raise DimensionError(
            f"batch/length mismatch: {h_dropped.shape[:2]} vs {c_map.shape[:2]}"
        )
    return concat_features([h_dropped, c_map])


@dataclass
class AttentionMap:
    """Attention mass landing on each key position, averaged over heads and
    query positions; one probability row per example."""

    received: np.ndarray  # (B, L)
    weights: np.ndarray | None = None  # (B, h, L, L) raw rows, optional


def attention_received(weights: np.ndarray, keep_weights: bool = False) -> AttentionMap:
    """Average probability rows over heads and queries.

    Every input row must already sum to 1 (checked to 1e-6); the averaged
    row then sums to 1 as well.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4:
        raise DimensionError(f"weights must be B x h x L x L, got {weights.shape}")
    sums = weights.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise InputError("attention rows are not normalized")
    received = weights.mean(axis=(1, 2))
    return AttentionMap(received, weights if keep_weights else None)


def received_entropy(received: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each received-attention row; 0 log 0 = 0."""
    r = np.asarray(received, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(r > 0, -r * np.log(r), 0.0)
    return terms.sum(axis=-1)


def multi_head_attention(
    cfg: ModelConfig, store: ParamStore, r: np.ndarray, prefix: str = "head."
) -> tuple[np.ndarray, AttentionMap, MhaCache]:
    """Self-attention over the enriched features; also returns the received
    map computed from the pre-projection weight rows."""
    params = MhaParams(
        store.value(prefix + "attn.w_q"),
        store.value(prefix + "attn.w_k"),
        store.value(prefix + "attn.w_v"),
        store.value(prefix + "attn.w_o"),
    )
    a, cache = mha_forward(params, r)
    return a, attention_received(cache.weights, keep_weights=True), cache


def adaptive_avg_pool(a: np.ndarray) -> np.ndarray:
    """Mean over sequence positions: ``B x L x f`` to ``B x f``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] < 1:
        raise DimensionError(f"pooling expects B x L x f with L >= 1, got {a.shape}")
    return a.mean(axis=1)


@dataclass
class HeadPass:
    """Everything the backward pass needs, plus the staged outputs that
    shape probes and splice tests inspect."""

    h: np.ndarray
    mask: np.ndarray
    h_dropped: np.ndarray
    inception: _InceptionCache
    c_map: np.ndarray
    r: np.ndarray
    mha: MhaCache | None
    attended: np.ndarray | None
    pooled: np.ndarray
    dense_pre: np.ndarray | None  # pre-ReLU dense activation
    dense_out: np.ndarray | None  # post layer-norm dense output
    logits: np.ndarray
    amap: AttentionMap | None


def head_forward(
    cfg: ModelConfig,
    store: ParamStore,
    state: HeadState,
    h: np.ndarray,
    rng: Rng | None = None,
    prefix: str = "head.",
) -> HeadPass:
    """Run the configured pipeline over hidden states ``B x L x d``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3 or h.shape[2] != cfg.d:
        raise DimensionError(f"hidden states must be B x L x {cfg.d}, got {h.shape}")
    _check_store(cfg, store, prefix)
    h_dropped, mask = dropout(state.dropout, h, rng)
    c_map, inc_cache = inception_forward(cfg, store, state, h_dropped, prefix)
    r = enrich(h_dropped, c_map)
    if cfg.has_attention:
        attended, amap, mha_cache = multi_head_attention(cfg, store, r, prefix)
        pooled = adaptive_avg_pool(attended)
    else:
        attended, amap, mha_cache = None, None, None
        pooled = adaptive_avg_pool(r)
    if cfg.has_dense:
        dense_pre = linear(store.value(prefix + "dense.weight"), store.value(prefix + "dense.bias"), pooled)
        dense_out = layer_norm(
            store.value(prefix + "dense.ln.scale"),
            store.value(prefix + "dense.ln.shift"),
            relu(dense_pre),
        )
        cls_in = dense_out
    else:
        dense_pre, dense_out = None, None
        cls_in = pooled
    logits = linear(store.value(prefix + "classifier.weight"), store.value(prefix + "classifier.bias"), cls_in)
    return HeadPass(
        h, mask, h_dropped, inc_cache, c_map, r, mha_cache, attended, pooled, dense_pre, dense_out, logits, amap
    )


def _check_store(cfg: ModelConfig, store: ParamStore, prefix: str) -> None:
    needed = f"{prefix}attn.w_q" if cfg.has_attention else f"{prefix}dense.weight" if cfg.has_dense else None
    if needed and needed not in store:
        raise ConfigError(f"variant {cfg.variant!r} needs parameter {needed} but the store lacks it")
    w = store.value(prefix + "classifier.weight")
    if w.shape[0] != cfg.classifier_in:
        raise ConfigError(
            f"classifier expects input {cfg.classifier_in} for variant {cfg.variant!r}, "
            f"store has {w.shape[0]}"
        )


def head_backward(
    cfg: ModelConfig,
    store: ParamStore,
    state: HeadState,
    hp: HeadPass,
    dlogits: np.ndarray,
    prefix: str = "head.",
) -> np.ndarray:
    """Accumulate parameter gradients; returns the gradient w.r.t. the
    (pre-dropout) hidden states."""
    if cfg.has_dense:
        dcls_in, dwc, dbc = linear_backward(store.value(prefix + "classifier.weight"), hp.dense_out, dlogits)
        relu_pre = relu(hp.dense_pre)
        ddense_relu, dg, dbln = layer_norm_backward(store.value(prefix + "dense.ln.scale"), relu_pre, dcls_in)
        ddense_pre = relu_backward(hp.dense_pre, ddense_relu)
        dpooled, dwd, dbd = linear_backward(store.value(prefix + "dense.weight"), hp.pooled, ddense_pre)
        store.add_grad(prefix + "dense.weight", dwd)
        store.add_grad(prefix + "dense.bias", dbd)
        store.add_grad(prefix + "dense.ln.scale", dg)
        store.add_grad(prefix + "dense.ln.shift", dbln)
    else:
        dpooled, dwc, dbc = linear_backward(store.value(prefix + "classifier.weight"), hp.pooled, dlogits)
    store.add_grad(prefix + "classifier.weight", dwc)
    store.add_grad(prefix + "classifier.bias", dbc)
    length = hp.r.shape[1]
    dpool_in = np.broadcast_to(dpooled[:, None, :] / length, hp.r.shape).copy()
    if cfg.has_attention:
        params = MhaParams(
            store.value(prefix + "attn.w_q"),
            store.value(prefix + "attn.w_k"),
            store.value(prefix + "attn.w_v"),
            store.value(prefix + "attn.w_o"),
        )
        dr, grads = mha_backward(params, hp.mha, dpool_in)
        store.add_grad(prefix + "attn.w_q", grads.w_q)
        store.add_grad(prefix + "attn.w_k", grads.w_k)
        store.add_grad(prefix + "attn.w_v", grads.w_v)
        store.add_grad(prefix + "attn.w_o", grads.w_o)
    else:
        dr = dpool_in
    dh_dropped = dr[..., : cfg.d].copy()
    dc_map = dr[..., cfg.d :]
    dh_dropped += inception_backward(cfg, store, state, hp.h_dropped, hp.inception, dc_map, prefix)
    return dropout_backward(state.dropout, hp.mask, dh_dropped)


# --- first-token baseline comparator --------------------------------------------


def init_baseline_params(
    d: int, n_classes: int, rng: Rng, store: ParamStore | None = None, prefix: str = "head."
) -> ParamStore:
    store = store if store is not None else ParamStore()
    store.add(prefix + "cls.weight", glorot_uniform(rng, (d, n_classes), d, n_classes))
    store.add(prefix + "cls.bias", np.zeros(n_classes))
    return store


@dataclass
class BaselinePass:
    h_shape: tuple[int, ...]
    first: np.ndarray
    mask: np.ndarray
    dropped: np.ndarray
    logits: np.ndarray


def baseline_cls_forward(
    store: ParamStore,
    h: np.ndarray,
    spec: DropoutSpec,
    rng: Rng | None = None,
    prefix: str = "head.",
) -> BaselinePass:
    """Classify from the first-position representation: dropout then a
    single affine map."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3 or h.shape[1] < 1:
        raise DimensionError(f"hidden states must be B x L x d with L >= 1, got {h.shape}")
    first = h[:, 0, :]
    dropped, mask = dropout(spec, first, rng)
    logits = linear(store.value(prefix + "cls.weight"), store.value(prefix + "cls.bias"), dropped)
    return BaselinePass(h.shape, first, mask, dropped, logits)


def baseline_cls_backward(
    store: ParamStore,
    spec: DropoutSpec,
    bp: BaselinePass,
    dlogits: np.ndarray,
    prefix: str = "head.",
) -> np.ndarray:
    ddropped, dw, db = linear_backward(store.value(prefix + "cls.weight"), bp.dropped, dlogits)
    store.add_grad(prefix + "cls.weight", dw)
    store.add_grad(prefix + "cls.bias", db)
    dfirst = dropout_backward(spec, bp.mask, ddropped)
    dh = np.zeros(bp.h_shape)
    dh[:, 0, :] = dfirst
    return dh


# --- diagnostics ----------------------------------------------------------------


def shape_probe(cfg: ModelConfig, batch: int = 2, length: int = 8, seed: int = 0) -> dict[str, tuple]:
    """Run a forward pass on random input and report each stage's shape."""
    rng = Rng(seed)
    store = init_head_params(cfg, rng.child("params"))
    state = make_head_state(cfg, store)
    state.set_mode(False)
    hp = head_forward(cfg, store, state, rng.child("input").normal((batch, length, cfg.d)))
    shapes = {
        "hidden": hp.h.shape,
        "conv_concat": hp.c_map.shape,
        "enriched": hp.r.shape,
        "pooled": hp.pooled.shape,
        "logits": hp.logits.shape,
    }
    if hp.attended is not None:
        shapes["attended"] = hp.attended.shape
    if hp.dense_out is not None:
        shapes["dense"] = hp.dense_out.shape
    return shapes


def write_attention_csv(path, received: np.ndarray) -> None:
    """One example's received-attention vector as ``position,received`` rows."""
    received = np.asarray(received, dtype=np.float64).reshape(-1)
    lines = ["position,received"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(received)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_attention_pgm(path, received: np.ndarray) -> None:
    """Grayscale heatmap, one row per example; each row is scaled to 0..255
    by its own maximum."""
    received = np.atleast_2d(np.asarray(received, dtype=np.float64))
    rows, cols = received.shape
    maxes = received.max(axis=1, keepdims=True)
    maxes[maxes <= 0] = 1.0
    pixels = np.rint(received / maxes * 255).astype(int)
    lines = ["P2", f"{cols} {rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pixels]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
