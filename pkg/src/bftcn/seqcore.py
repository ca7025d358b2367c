"""Channel-by-time numeric primitives with hand-written backward passes.

All arrays are ``(channels, frames)`` float64. Convolutions zero-pad along
time; a dilated layer with dilation ``d`` and future pad ``m`` reads input
frames ``t-(2d-m)``, ``t-(d-m)`` and ``t+m`` to produce output frame ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
FD_STEP = 1e-5


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_ct(x, n_channels: int | None = None) -> np.ndarray:
    """Validate a channel-by-time matrix and return it as float64."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"expected a (channels, frames) matrix, got shape {x.shape}")
    if n_channels is not None and x.shape[0] != n_channels:
        raise ShapeError(f"expected {n_channels} channels, got {x.shape[0]}")
    return x


@dataclass
class DilatedConvLayer:
    weight: np.ndarray  # (out, in, 3)
    bias: np.ndarray  # (out,)
    dilation: int
    future_pad: int

    def __post_init__(self):
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if not 0 <= self.future_pad <= self.dilation:
            raise ValueError(f"future_pad must lie in [0, {self.dilation}], got {self.future_pad}")
        if self.weight.ndim != 3 or self.weight.shape[2] != 3:
            raise ShapeError(f"kernel must be (out, in, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def past_pad(self) -> int:
        return 2 * self.dilation - self.future_pad

    def tap_offsets(self) -> tuple[int, int, int]:
        """Time offsets read by the three kernel taps, relative to output t."""
        m, d = self.future_pad, self.dilation
        return (m - 2 * d, m - d, m)


@dataclass
class PointwiseConvLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"pointwise weight must be (out, in), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def _padded(layer: DilatedConvLayer, x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (layer.past_pad, layer.future_pad)))


def dilated_conv_forward(layer: DilatedConvLayer, x) -> np.ndarray:
    x = as_ct(x, layer.in_channels)
    T = x.shape[1]
    d = layer.dilation
    xp = _padded(layer, x)
    # padded column t + k*d holds x[t - (2d - m) + k*d]
    out = layer.weight[:, :, 0] @ xp[:, 0:T]
    out += layer.weight[:, :, 1] @ xp[:, d:d + T]
    out += layer.weight[:, :, 2] @ xp[:, 2 * d:2 * d + T]
    out += layer.bias[:, None]
    return out


def dilated_conv_backward(layer: DilatedConvLayer, x, grad_out):
    """Return ``(grad_x, grad_weight, grad_bias)`` for ``dilated_conv_forward``."""
    x = as_ct(x, layer.in_channels)
    g = as_ct(grad_out, layer.out_channels)
    if g.shape[1] != x.shape[1]:
        raise ShapeError(f"grad_out has {g.shape[1]} frames, input has {x.shape[1]}")
    T = x.shape[1]
    d = layer.dilation
    xp = _padded(layer, x)
    grad_w = np.empty_like(layer.weight)
    grad_xp = np.zeros_like(xp)
    for k in range(3):
        sl = slice(k * d, k * d + T)
        grad_w[:, :, k] = g @ xp[:, sl].T
        grad_xp[:, sl] += layer.weight[:, :, k].T @ g
    grad_x = grad_xp[:, layer.past_pad:layer.past_pad + T]
    return grad_x, grad_w, g.sum(axis=1)


def pointwise_conv(layer: PointwiseConvLayer, x) -> np.ndarray:
    x = as_ct(x, layer.in_channels)
    return layer.weight @ x + layer.bias[:, None]


def pointwise_conv_backward(layer: PointwiseConvLayer, x, grad_out):
    x = as_ct(x, layer.in_channels)
    g = as_ct(grad_out, layer.out_channels)
    if g.shape[1] != x.shape[1]:
        raise ShapeError(f"grad_out has {g.shape[1]} frames, input has {x.shape[1]}")
    return layer.weight.T @ g, g @ x.T, g.sum(axis=1)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def dropout(x: np.ndarray, p: float, rng: np.random.Generator | None = None,
            training: bool = False):
    """Inverted dropout. Returns ``(y, mask)``; mask is None in eval mode.

    The mask already carries the ``1/(1-p)`` survivor scale, so the backward
    pass is ``grad * mask``.
    """
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask: np.ndarray | None, grad_out: np.ndarray) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def log_softmax_over_channels(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def softmax_over_channels(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the per-frame softmax."""
    return probs * (grad_out - (grad_out * probs).sum(axis=0, keepdims=True))


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def gradient_check(f: Callable[[], float], inputs: Sequence[np.ndarray],
                   analytic: Sequence[np.ndarray], tol: float = 1e-4,
                   h: float = FD_STEP, floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f`` must read ``inputs`` by reference; each array is perturbed in place.
    The relative error is ``|a - n| / max(|a|, |n|, floor)`` per element, so
    gradients that are both ~0 do not blow the ratio up. Central differences
    carry round-off of roughly ``eps * |f| / h``, about 1e-11 for an O(1)
    loss, so checks of whole-network losses should raise ``floor`` to 1e-6.
    """
    worst = 0.0
    count = 0
    for x, a in zip(inputs, analytic):
        if x.dtype != DTYPE:
            raise NumericError("gradient checks need float64 inputs")
        n = numeric_gradient(f, x, h)
        if not (np.all(np.isfinite(n)) and np.all(np.isfinite(a))):
            raise NumericError("non-finite gradient encountered")
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
        count += x.size
    return GradCheckReport(worst, tol, count)
