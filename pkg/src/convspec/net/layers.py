"""Layers of the reverse-mode engine.

Every layer implements forward(x, train) -> y and backward(dy) -> dx,
caching whatever the backward pass needs. Parameter arrays are stable
objects updated in place by the optimizer; gradient arrays are rebound on
every backward and re-read through param_items().
"""

import numpy as np

from .. import backend
from ..errors import DimensionError, StateError


def ceil_div(a, b):
    return -(-a // b)


class Conv2d:
    """Bias-free 2-D convolution, SAME-style padding, weights (k,k,D,C).

    padding='zero' pads with zeros (output = ceil(input/stride));
    padding='circular' wraps indices and requires stride 1.
    """

    def __init__(self, k, in_ch, out_ch, stride=1, padding="zero", rng=None,
                 weights=None):
        self.k = k
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.stride = stride
        if padding not in ("zero", "circular"):
            raise DimensionError(f"unknown padding {padding!r}")
        if padding == "circular" and stride != 1:
            raise DimensionError("circular padding requires stride 1")
        self.circular = padding == "circular"
        if weights is not None:
            self.w = np.array(weights, dtype=np.float64)
        else:
            std = np.sqrt(2.0 / (k * k * in_ch))  # He fan-in
            self.w = rng.normal(0.0, std, size=(k, k, out_ch, in_ch))
        self.gw = np.zeros_like(self.w)
        self._x = None

    def out_hw(self, h, w):
        return ceil_div(h, self.stride), ceil_div(w, self.stride)

    def _pads(self, h, w, oh, ow):
        pt = max((oh - 1) * self.stride + self.k - h, 0) // 2
        pl = max((ow - 1) * self.stride + self.k - w, 0) // 2
        return pt, pl

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise DimensionError(
                f"conv expects (B,{self.in_ch},H,W), got {x.shape}"
            )
        h, w = x.shape[2], x.shape[3]
        oh, ow = self.out_hw(h, w)
        pt, pl = self._pads(h, w, oh, ow)
        self._x = x
        self._geom = (h, w, oh, ow, pt, pl)
        return backend.conv2d_forward(
            x, self.w, self.stride, pt, pl, oh, ow, self.circular
        )

    def backward(self, dy):
        if self._x is None:
            raise StateError("conv backward before forward")
        h, w, oh, ow, pt, pl = self._geom
        self.gw = backend.conv2d_weight_grad(
            dy, self._x, self.k, self.stride, pt, pl, self.circular
        )
        return backend.conv2d_input_grad(
            dy, self.w, self.stride, pt, pl, h, w, self.circular
        )

    def param_items(self, prefix):
        return [(prefix + ".w", self.w, self.gw)]


class BatchNorm2d:
    """Per-channel batch normalization (eps 1e-5, running-stat momentum 0.9)."""

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.ggamma = np.zeros(channels)
        self.gbeta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def forward(self, x, train=True):
        if x.shape[1] != self.channels:
            raise DimensionError(
                f"batchnorm expects {self.channels} channels, got {x.shape}"
            )
        axes = (0, 2, 3)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (
                self.momentum * self.running_mean + (1 - self.momentum) * mean
            )
            self.running_var = (
                self.momentum * self.running_var + (1 - self.momentum) * var
            )
        else:
            mean = self.running_mean
            var = self.running_var
        istd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * istd[None, :, None, None]
        self._cache = (xhat, istd, train, x.shape)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dy):
        if self._cache is None:
            raise StateError("batchnorm backward before forward")
        xhat, istd, train, shape = self._cache
        axes = (0, 2, 3)
        self.ggamma = np.sum(dy * xhat, axis=axes)
        self.gbeta = np.sum(dy, axis=axes)
        dxhat = dy * self.gamma[None, :, None, None]
        if not train:
            return dxhat * istd[None, :, None, None]
        m = shape[0] * shape[2] * shape[3]
        sum_dxhat = np.sum(dxhat, axis=axes)
        sum_dxhat_xhat = np.sum(dxhat * xhat, axis=axes)
        dx = (
            dxhat
            - (sum_dxhat / m)[None, :, None, None]
            - xhat * (sum_dxhat_xhat / m)[None, :, None, None]
        ) * istd[None, :, None, None]
        return dx

    def param_items(self, prefix):
        return [
            (prefix + ".gamma", self.gamma, self.ggamma),
            (prefix + ".beta", self.beta, self.gbeta),
        ]


class ReLU:
    """max(x, 0); the subgradient at 0 is taken as 0."""

    def __init__(self):
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        if self._mask is None:
            raise StateError("relu backward before forward")
        return np.where(self._mask, dy, 0.0)

    def param_items(self, prefix):
        return []


class GlobalAvgPool:
    """(B,C,H,W) -> (B,C) spatial mean."""

    def __init__(self):
        self._hw = None

    def forward(self, x, train=True):
        self._hw = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        h, w = self._hw
        return np.broadcast_to(
            dy[:, :, None, None] / (h * w), dy.shape + (h, w)
        ).copy()

    def param_items(self, prefix):
        return []


class Linear:
    """Affine map on (B, in) activations; weight (out, in)."""

    def __init__(self, in_dim, out_dim, rng=None, bias=True, weights=None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if weights is not None:
            self.w = np.array(weights, dtype=np.float64)
        else:
            self.w = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim))
        self.gw = np.zeros_like(self.w)
        self.use_bias = bias
        if bias:
            self.b = np.zeros(out_dim)
            self.gb = np.zeros(out_dim)
        self._x = None

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"linear expects (B,{self.in_dim}), got {x.shape}"
            )
        self._x = x
        y = x @ self.w.T
        if self.use_bias:
            y = y + self.b
        return y

    def backward(self, dy):
        if self._x is None:
            raise StateError("linear backward before forward")
        self.gw = dy.T @ self._x
        if self.use_bias:
            self.gb = dy.sum(axis=0)
        return dy @ self.w

    def param_items(self, prefix):
        items = [(prefix + ".w", self.w, self.gw)]
        if self.use_bias:
            items.append((prefix + ".b", self.b, self.gb))
        return items


class SoftmaxCrossEntropy:
    """Mean softmax cross-entropy over the batch."""

    def __init__(self):
        self._cache = None

    def forward(self, logits, labels):
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        b = logits.shape[0]
        nll = -np.log(probs[np.arange(b), labels] + 1e-300)
        self._cache = (probs, labels, b)
        return float(nll.mean())

    def backward(self):
        if self._cache is None:
            raise StateError("loss backward before forward")
        probs, labels, b = self._cache
        d = probs.copy()
        d[np.arange(b), labels] -= 1.0
        return d / b


class SquaredError:
    """0.5 ||pred - target||^2, averaged over the batch dimension."""

    def __init__(self):
        self._cache = None

    def forward(self, pred, target):
        diff = pred - target
        self._cache = (diff, pred.shape[0])
        return float(0.5 * np.sum(diff * diff) / pred.shape[0])

    def backward(self):
        if self._cache is None:
            raise StateError("loss backward before forward")
        diff, b = self._cache
        return diff / b
