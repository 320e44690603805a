"""Layers with hand-written forward/backward passes.

Feature maps are channels-last ([B, H, W, C] in 2D, [B, D, H, W, C] in 3D)
so every contraction is a tensordot over the trailing channel axis.
Convolutions are computed as a sum over kernel taps of strided slices,
which keeps peak memory small at these grid sizes.

forward() returns (output, cache); backward(dout, cache) accumulates
parameter gradients and returns the input gradient, so eval-mode forward
passes stay read-only and safe to run concurrently.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .functional import BN_EPS, BN_MOMENTUM, RunningStats


class Param:
    """A learnable array with a gradient slot and a requires-grad flag."""

    __slots__ = ("value", "grad", "trainable")

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = value
        self.grad: np.ndarray | None = None
        self.trainable = trainable

    def add_grad(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {g.shape} does not match value {self.value.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


class Dense:
    def __init__(self, rng, n_in, n_out, dtype=np.float32):
        scale = np.sqrt(2.0 / n_in)
        self.W = Param(rng.normal(0.0, scale, (n_in, n_out)).astype(dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))

    def params(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}

    def forward(self, x):
        return x @ self.W.value + self.b.value, x

    def backward(self, dy, cache):
        x = cache
        self.W.add_grad(x.T @ dy)
        self.b.add_grad(dy.sum(axis=0))
        return dy @ self.W.value.T


def _tap_slices(n_out, stride, tap):
    """Slice selecting input positions stride*i + tap for i in [0, n_out)."""
    return slice(tap, tap + stride * (n_out - 1) + 1, stride)


class ConvNd:
    """k x ... x k convolution with padding 1-per-side semantics via `pad`."""

    def __init__(self, rng, ndim, c_in, c_out, kernel=3, stride=1, pad=1,
                 dtype=np.float32):
        self.ndim = ndim
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        shape = (kernel,) * ndim + (c_in, c_out)
        scale = np.sqrt(2.0 / (c_in * kernel ** ndim))
        self.W = Param(rng.normal(0.0, scale, shape).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))

    def params(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}

    def _out_size(self, n):
        return (n + 2 * self.pad - self.kernel) // self.stride + 1

    def _pad_input(self, x):
        pads = [(0, 0)] + [(self.pad, self.pad)] * self.ndim + [(0, 0)]
        return np.pad(x, pads) if self.pad else x

    def forward(self, x):
        xp = self._pad_input(x)
        out_sp = tuple(self._out_size(n) for n in x.shape[1 : 1 + self.ndim])
        c_out = self.W.value.shape[-1]
        y = np.zeros(x.shape[:1] + out_sp + (c_out,), dtype=x.dtype)
        for tap in np.ndindex(*(self.kernel,) * self.ndim):
            sl = (slice(None),) + tuple(
                _tap_slices(out_sp[d], self.stride, tap[d]) for d in range(self.ndim)
            )
            y += np.tensordot(xp[sl], self.W.value[tap], axes=([-1], [0]))
        y += self.b.value
        return y, (xp, x.shape, out_sp)

    def backward(self, dy, cache):
        xp, x_shape, out_sp = cache
        dW = np.zeros_like(self.W.value)
        dxp = np.zeros_like(xp)
        sum_axes = tuple(range(dy.ndim - 1))
        for tap in np.ndindex(*(self.kernel,) * self.ndim):
            sl = (slice(None),) + tuple(
                _tap_slices(out_sp[d], self.stride, tap[d]) for d in range(self.ndim)
            )
            dW[tap] = np.tensordot(xp[sl], dy, axes=(sum_axes, sum_axes))
            dxp[sl] += np.tensordot(dy, self.W.value[tap], axes=([-1], [1]))
        self.W.add_grad(dW)
        self.b.add_grad(dy.sum(axis=sum_axes))
        if self.pad:
            core = (slice(None),) + tuple(
                slice(self.pad, self.pad + n) for n in x_shape[1 : 1 + self.ndim]
            ) + (slice(None),)
            return dxp[core]
        return dxp


class Conv2d(ConvNd):
    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, pad=1, dtype=np.float32):
        super().__init__(rng, 2, c_in, c_out, kernel, stride, pad, dtype)


class Conv3d(ConvNd):
    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, pad=1, dtype=np.float32):
        super().__init__(rng, 3, c_in, c_out, kernel, stride, pad, dtype)


class ConvTranspose3d:
    """Transposed 3D convolution with stride 2; doubles each spatial side.

    Supported geometries: kernel 4 / pad 1 and kernel 2 / pad 0, both of
    which map D -> 2D. Output position o receives input i through tap t
    when o = 2i + t - pad.
    """

    def __init__(self, rng, c_in, c_out, kernel=4, dtype=np.float32):
        if kernel == 4:
            self.pad = 1
        elif kernel == 2:
            self.pad = 0
        else:
            raise ValueError("kernel must be 2 or 4")
        self.kernel = kernel
        shape = (kernel,) * 3 + (c_in, c_out)
        scale = np.sqrt(2.0 / (c_in * kernel ** 3 / 8.0))  # 8 = stride^3 fan-out
        self.W = Param(rng.normal(0.0, scale, shape).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))

    def params(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}

    def _padded_shape(self, x_shape, c_out):
        sp = tuple(2 * n + 2 * self.pad for n in x_shape[1:4])
        return x_shape[:1] + sp + (c_out,)

    def _tap_slice(self, x_shape, tap):
        return (slice(None),) + tuple(
            slice(tap[d], tap[d] + 2 * (x_shape[1 + d] - 1) + 1, 2) for d in range(3)
        )

    def forward(self, x):
        c_out = self.W.value.shape[-1]
        out_p = np.zeros(self._padded_shape(x.shape, c_out), dtype=x.dtype)
        for tap in np.ndindex(self.kernel, self.kernel, self.kernel):
            out_p[self._tap_slice(x.shape, tap)] += np.tensordot(
                x, self.W.value[tap], axes=([-1], [0])
            )
        if self.pad:
            core = (slice(None),) + tuple(
                slice(self.pad, -self.pad) for _ in range(3)
            ) + (slice(None),)
            y = out_p[core].copy()
        else:
            y = out_p
        y += self.b.value
        return y, (x, x.shape)

    def backward(self, dy, cache):
        x, x_shape = cache
        if self.pad:
            dout_p = np.zeros(
                self._padded_shape(x_shape, dy.shape[-1]), dtype=dy.dtype
            )
            core = (slice(None),) + tuple(
                slice(self.pad, -self.pad) for _ in range(3)
            ) + (slice(None),)
            dout_p[core] = dy
        else:
            dout_p = dy
        dW = np.zeros_like(self.W.value)
        dx = np.zeros_like(x)
        sum_axes = (0, 1, 2, 3)
        for tap in np.ndindex(self.kernel, self.kernel, self.kernel):
            sl = self._tap_slice(x_shape, tap)
            dslice = dout_p[sl]
            dx += np.tensordot(dslice, self.W.value[tap], axes=([-1], [1]))
            dW[tap] = np.tensordot(x, dslice, axes=(sum_axes, sum_axes))
        self.W.add_grad(dW)
        self.b.add_grad(dy.sum(axis=(0, 1, 2, 3)))
        return dx


class AvgPool3d:
    """2x2x2 average pooling (parameter-free)."""

    def forward(self, x):
        b, d, h, w, c = x.shape
        xr = x.reshape(b, d // 2, 2, h // 2, 2, w // 2, 2, c)
        return xr.mean(axis=(2, 4, 6)), x.shape

    def backward(self, dy, cache):
        b, d, h, w, c = cache
        dy = dy[:, :, None, :, None, :, None, :] / 8.0
        return np.broadcast_to(
            dy, (b, d // 2, 2, h // 2, 2, w // 2, 2, c)
        ).reshape(cache).astype(dy.dtype, copy=False)


class BatchNorm:
    """Batch normalization, optionally with class-conditional affine tables.

    With n_classes=None the affine is a shared per-channel (gamma, beta);
    otherwise per-class rows are looked up per sample and gradients are
    scattered back to the rows actually used. Running statistics are
    always shared across classes. `update_stats=False` freezes the running
    buffers while still using batch statistics in train mode.
    """

    def __init__(self, channels, n_classes=None, rng=None, dtype=np.float32,
                 eps=BN_EPS, momentum=BN_MOMENTUM, affine_init_std=0.2):
        self.channels = channels
        self.n_classes = n_classes
        self.eps = eps
        self.momentum = momentum
        if n_classes is None:
            self.gamma = Param(np.ones(channels, dtype=dtype))
            self.beta = Param(np.zeros(channels, dtype=dtype))
        else:
            if rng is None:
                raise ValueError("conditional affine tables need an rng")
            self.gamma = Param(
                rng.normal(1.0, affine_init_std, (n_classes, channels)).astype(dtype)
            )
            self.beta = Param(
                rng.normal(1.0, affine_init_std, (n_classes, channels)).astype(dtype)
            )
        self.running = RunningStats.initial(channels, dtype=dtype)

    def params(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def _affine(self, x, class_ids):
        shape = (x.shape[0],) + (1,) * (x.ndim - 2) + (self.channels,)
        if self.n_classes is None:
            return self.gamma.value, self.beta.value
        if class_ids is None:
            raise ValueError("conditional batch norm needs class_ids")
        class_ids = np.asarray(class_ids)
        if np.any(class_ids < 0) or np.any(class_ids >= self.n_classes):
            raise IndexError("class id out of range")
        return (
            self.gamma.value[class_ids].reshape(shape),
            self.beta.value[class_ids].reshape(shape),
        )

    def forward(self, x, class_ids=None, train=True, update_stats=True):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                m = self.momentum
                self.running.mean *= 1.0 - m
                self.running.mean += m * mean.astype(self.running.mean.dtype)
                self.running.var *= 1.0 - m
                self.running.var += m * var.astype(self.running.var.dtype)
        else:
            mean = self.running.mean.astype(x.dtype, copy=False)
            var = self.running.var.astype(x.dtype, copy=False)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        gamma, beta = self._affine(x, class_ids)
        return gamma * xhat + beta, (xhat, inv, gamma, class_ids, train)

    def backward(self, dy, cache):
        xhat, inv, gamma, class_ids, train = cache
        axes = tuple(range(dy.ndim - 1))
        if self.n_classes is None:
            self.gamma.add_grad((dy * xhat).sum(axis=axes))
            self.beta.add_grad(dy.sum(axis=axes))
        else:
            per_sample_axes = tuple(range(1, dy.ndim - 1))
            dg = (dy * xhat).sum(axis=per_sample_axes)
            db = dy.sum(axis=per_sample_axes)
            dgamma = np.zeros_like(self.gamma.value)
            dbeta = np.zeros_like(self.beta.value)
            np.add.at(dgamma, class_ids, dg.astype(dgamma.dtype, copy=False))
            np.add.at(dbeta, class_ids, db.astype(dbeta.dtype, copy=False))
            self.gamma.add_grad(dgamma)
            self.beta.add_grad(dbeta)
        dxhat = dy * gamma
        if not train:
            return dxhat * inv
        n = dy.size // dy.shape[-1]
        s1 = dxhat.sum(axis=axes)
        s2 = (dxhat * xhat).sum(axis=axes)
        return (inv / n) * (n * dxhat - s1 - xhat * s2)
