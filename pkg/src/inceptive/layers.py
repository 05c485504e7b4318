"""Differentiable building blocks with explicit forward and backward passes.

There is no autodiff tape: every operation ships its own adjoint, and the
model modules chain them by hand. Backward functions recompute cheap
intermediates from the saved inputs rather than carrying opaque caches, so
each pair is usable standalone and checkable with
:func:`inceptive.tensor.grad_check`.

Shapes follow the batch-first convention ``B x L x features`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateBatchError, DimensionError
from .tensor import Rng

__all__ = [
    "ConvBranch",
    "conv_branch",
    "conv1d_forward",
    "conv1d_backward",
    "BatchNormState",
    "batchnorm_apply",
    "batchnorm_backward",
    "relu",
    "relu_backward",
    "DropoutSpec",
    "dropout",
    "dropout_backward",
    "linear",
    "linear_backward",
    "layer_norm",
    "layer_norm_backward",
    "softmax_rows",
    "scaled_dot_product_attention",
    "sdpa_backward",
    "MhaParams",
    "mha_forward",
    "mha_backward",
]

SUPPORTED_KERNELS = (2, 3, 5, 7)


# --- multi-scale 1-D convolution ---------------------------------------------


@dataclass
class ConvBranch:
    """One convolution branch: ``c`` filters of width ``kernel_size`` over
    the feature dimension, zero-padded so the sequence length is preserved.

    Width-2 kernels pad one position on the right only; odd widths pad
    symmetrically. ``pad_left + pad_right == kernel_size - 1`` always holds.
    """

    kernel_size: int
    weight: np.ndarray  # (c, k, d)
    bias: np.ndarray  # (c,)
    pad_left: int
    pad_right: int


def conv_branch(kernel_size: int, weight: np.ndarray, bias: np.ndarray) -> ConvBranch:
    """Build a branch with the padding rule implied by the kernel width."""
    if kernel_size not in SUPPORTED_KERNELS:
        raise ConfigError(f"kernel size must be one of {SUPPORTED_KERNELS}, got {kernel_size}")
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weight.ndim != 3 or weight.shape[1] != kernel_size:
        raise DimensionError(f"conv weight must be (c, {kernel_size}, d), got {weight.shape}")
    if kernel_size == 2:
        pads = (0, 1)
    else:
        pads = ((kernel_size - 1) // 2, (kernel_size - 1) // 2)
    return ConvBranch(kernel_size, weight, bias, *pads)


def _padded(branch: ConvBranch, h: np.ndarray) -> np.ndarray:
    b, length, d = h.shape
    out = np.zeros((b, length + branch.kernel_size - 1, d))
    out[:, branch.pad_left : branch.pad_left + length, :] = h
    return out


def conv1d_forward(branch: ConvBranch, h: np.ndarray) -> np.ndarray:
    """Slide each filter over the token axis: ``y[b,i,f]`` is the sum over
    kernel offsets j of ``weight[f,j,:] . h_padded[b,i+j,:]`` plus bias.

    Output is ``B x L x c`` with L identical to the input length.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3:
        raise DimensionError(f"conv input must be B x L x d, got {h.shape}")
    if h.shape[2] != branch.weight.shape[2]:
        raise DimensionError(
            f"feature dim mismatch: input {h.shape[2]} vs filter {branch.weight.shape[2]}"
        )
    padded = _padded(branch, h)
    length = h.shape[1]
    y = np.broadcast_to(branch.bias, (h.shape[0], length, branch.weight.shape[0])).copy()
    for j in range(branch.kernel_size):
        y += padded[:, j : j + length, :] @ branch.weight[:, j, :].T
    return y


def conv1d_backward(
    branch: ConvBranch, h: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of :func:`conv1d_forward`; padding positions get no input grad."""
    h = np.asarray(h, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    length = h.shape[1]
    padded = _padded(branch, h)
    dpadded = np.zeros_like(padded)
    dweight = np.zeros_like(branch.weight)
    for j in range(branch.kernel_size):
        window = padded[:, j : j + length, :]
        dweight[:, j, :] = np.tensordot(dy, window, axes=((0, 1), (0, 1)))
        dpadded[:, j : j + length, :] += dy @ branch.weight[:, j, :]
    dbias = dy.sum(axis=(0, 1))
    dh = dpadded[:, branch.pad_left : branch.pad_left + length, :]
    return dh, dweight, dbias


# --- batch normalization -------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel affine normalization state.

    In train mode, statistics pool over the batch and every sequence
    position; running estimates are updated as
    ``r <- (1 - momentum) * r + momentum * batch_stat``. In eval mode the
    running estimates are used and the op is a pure function of its input.
    """

    scale: np.ndarray  # gamma, (c,)
    shift: np.ndarray  # beta, (c,)
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros_like(np.asarray(self.scale, dtype=np.float64))
        if self.running_var is None:
            self.running_var = np.ones_like(np.asarray(self.scale, dtype=np.float64))


def _bn_stats(state: BatchNormState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if state.mode == "train":
        if x.shape[0] * x.shape[1] < 2:
            raise DegenerateBatchError(
                f"batch norm needs at least 2 pooled positions, got {x.shape[0] * x.shape[1]}"
            )
        return x.mean(axis=(0, 1)), x.var(axis=(0, 1))
    return state.running_mean, state.running_var


def batchnorm_apply(state: BatchNormState, x: np.ndarray) -> np.ndarray:
    """Normalize ``B x L x c`` per channel, then apply the learned affine."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[2] != state.scale.shape[0]:
        raise DimensionError(f"channel mismatch: input {x.shape[2]} vs state {state.scale.shape[0]}")
    mean, var = _bn_stats(state, x)
    if state.mode == "train":
        state.running_mean[...] = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var[...] = (1 - state.momentum) * state.running_var + state.momentum * var
    xhat = (x - mean) / np.sqrt(var + state.eps)
    return state.scale * xhat + state.shift


def batchnorm_backward(
    state: BatchNormState, x: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, scale, and shift.

    Train mode differentiates through the batch statistics (each input
    element moves the shared mean and variance); eval mode treats the
    running statistics as constants. Running estimates are not touched.
    """
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    mean, var = _bn_stats(state, x)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * state.scale
    if state.mode != "train":
        return dxhat * inv_std, dgamma, dbeta
    n = x.shape[0] * x.shape[1]
    centered = x - mean
    dvar = (dxhat * centered).sum(axis=(0, 1)) * (-0.5) * inv_std**3
    dmean = -(dxhat.sum(axis=(0, 1))) * inv_std + dvar * (-2.0) * centered.mean(axis=(0, 1))
    dx = dxhat * inv_std + dvar * 2.0 * centered / n + dmean / n
    return dx, dgamma, dbeta


# --- elementwise pieces --------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Subgradient 0 at exactly 0.
    return dy * (x > 0)


@dataclass
class DropoutSpec:
    """Inverted dropout: kept activations are rescaled by 1/(1-rate) at
    train time so eval mode is the exact identity."""

    rate: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout(spec: DropoutSpec, x: np.ndarray, rng: Rng | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Returns (output, keep mask). Eval mode and rate 0 pass ``x`` through
    unchanged and consume no randomness."""
    if spec.mode != "train" or spec.rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ConfigError("train-mode dropout needs an Rng")
    mask = (rng.random(x.shape) >= spec.rate).astype(np.float64)
    return x * mask / (1.0 - spec.rate), mask


def dropout_backward(spec: DropoutSpec, mask: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if spec.mode != "train" or spec.rate == 0.0:
        return dy
    return dy * mask / (1.0 - spec.rate)


def linear(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine map over the trailing axis: ``y = x @ w + b``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear input dim {x.shape[-1]} vs weight {w.shape}")
    return x @ w + b


def linear_backward(
    w: np.ndarray, x: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = dy @ w.T
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


_LN_EPS = 1e-5


def layer_norm(gamma: np.ndarray, beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Normalize the trailing axis to zero mean, unit population variance
    (eps 1e-5), then apply the learned affine."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise DimensionError(f"layer norm needs >= 2 features, got {x.shape[-1]}")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mean) / np.sqrt(var + _LN_EPS) + beta


def layer_norm_backward(
    gamma: np.ndarray, x: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * inv_std
    lead = tuple(range(x.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dxhat = dy * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row softmax over the trailing axis, max-shifted for stability."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# --- attention -----------------------------------------------------------------


def scaled_dot_product_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """``softmax(q k^T / sqrt(d)) v`` over the trailing two axes.

    Accepts any leading batch extents (e.g. ``B x h x L x d``). Returns the
    attended output and the weight rows, each row a probability
    distribution over key positions.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    if d == 0:
        raise DimensionError("attention head dimension must be positive")
    scores = q @ k.swapaxes(-1, -2) / np.sqrt(d)
    weights = softmax_rows(scores)
    return weights @ v, weights


def sdpa_backward(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    weights: np.ndarray,
    dout: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of attention given the forward's weight rows.

    Gradient flows only through the attended output; the weight rows
    returned by the forward are diagnostics.
    """
    d = q.shape[-1]
    dv = weights.swapaxes(-1, -2) @ dout
    dweights = dout @ v.swapaxes(-1, -2)
    # softmax rows: dS = W * (dW - sum(dW * W, row))
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(d)
    dq = dscores @ k
    dk = dscores.swapaxes(-1, -2) @ q
    return dq, dk, dv


@dataclass
class MhaParams:
    """Stacked per-head projections. ``w_q/w_k/w_v`` are ``h x d_in x d_head``
    (slice ``[i]`` is head i); ``w_o`` is ``(h * d_head) x d_out`` and acts on
    the heads concatenated in index order."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


@dataclass
class MhaCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    weights: np.ndarray  # (B, h, L, L)
    merged: np.ndarray  # (B, L, h * d_head)


def _project_heads(x2: np.ndarray, w: np.ndarray, b: int, length: int) -> np.ndarray:
    """(B*L, d_in) by (h, d_in, d_head) -> (B, h, L, d_head) via one matmul."""
    h, d_in, d_head = w.shape
    flat = x2 @ w.transpose(1, 0, 2).reshape(d_in, h * d_head)
    return flat.reshape(b, length, h, d_head).transpose(0, 2, 1, 3)


def mha_forward(params: MhaParams, x: np.ndarray) -> tuple[np.ndarray, MhaCache]:
    """Multi-head self-attention over ``B x L x d_in``; heads run scaled
    dot-product attention independently, then concatenate and project."""
    h, d_in, d_head = params.w_q.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"attention input dim {x.shape[-1]} vs projections {params.w_q.shape}")
    b, length, _ = x.shape
    x2 = x.reshape(b * length, d_in)
    q = _project_heads(x2, params.w_q, b, length)
    k = _project_heads(x2, params.w_k, b, length)
    v = _project_heads(x2, params.w_v, b, length)
    out, weights = scaled_dot_product_attention(q, k, v)
    merged = out.transpose(0, 2, 1, 3).reshape(b, length, h * d_head)
    y = merged @ params.w_o
    return y, MhaCache(x, q, k, v, weights, merged)


def mha_backward(
    params: MhaParams, cache: MhaCache, dy: np.ndarray
) -> tuple[np.ndarray, MhaParams]:
    """Returns (dx, gradient bundle shaped like the parameter bundle)."""
    h, d_in, d_head = params.w_q.shape
    b, length, _ = cache.merged.shape
    dw_o = cache.merged.reshape(-1, h * d_head).T @ dy.reshape(-1, dy.shape[-1])
    dmerged = dy @ params.w_o.T
    dout = dmerged.reshape(b, length, h, d_head).transpose(0, 2, 1, 3)
    dq, dk, dv = sdpa_backward(cache.q, cache.k, cache.v, cache.weights, dout)
    x2 = cache.x.reshape(b * length, d_in)
    dx2 = np.zeros_like(x2)
    grads = []
    for dproj, w in ((dq, params.w_q), (dk, params.w_k), (dv, params.w_v)):
        flat = dproj.transpose(0, 2, 1, 3).reshape(b * length, h * d_head)
        w2 = w.transpose(1, 0, 2).reshape(d_in, h * d_head)
        grads.append((x2.T @ flat).reshape(d_in, h, d_head).transpose(1, 0, 2))
        dx2 += flat @ w2.T
    dx = dx2.reshape(b, length, d_in)
    return dx, MhaParams(grads[0], grads[1], grads[2], dw_o)
