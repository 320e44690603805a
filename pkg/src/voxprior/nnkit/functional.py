"""Differentiable primitives: sparsemax, BCE losses, (conditional) batch norm.

All functions are pure given explicit state and operate on numpy arrays.
Feature maps are channels-last: [B, *spatial, C].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError

BCE_EPS = 1e-7
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def sparsemax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Euclidean projection of z onto the probability simplex, along `axis`.

    Output is nonnegative, sums to 1, and is typically sparse. The result
    is invariant to adding a constant to z; the implementation subtracts
    the rowwise max up front so that invariance also holds numerically.
    """
    z = np.asarray(z)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    if z.shape[axis] < 1:
        raise DimensionError("sparsemax needs at least one element")
    if not np.all(np.isfinite(z)):
        raise ValueError("sparsemax requires finite inputs")

    u = np.moveaxis(z, axis, -1)
    u = u - np.max(u, axis=-1, keepdims=True)
    m = u.shape[-1]
    srt = -np.sort(-u, axis=-1)
    csum = np.cumsum(srt, axis=-1)
    ranks = np.arange(1, m + 1, dtype=u.dtype)
    # support size: largest k with 1 + k*z_(k) > sum_{j<=k} z_(j)
    feasible = 1 + ranks * srt > csum
    k = np.max(np.where(feasible, np.arange(1, m + 1), 0), axis=-1)
    csum_k = np.take_along_axis(csum, (k - 1)[..., None], axis=-1)[..., 0]
    tau = (csum_k - 1) / k
    p = np.maximum(u - tau[..., None], 0)
    return np.moveaxis(p, -1, axis)


def sparsemax_vjp(z: np.ndarray, upstream: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of sparsemax at z.

    With S the support of sparsemax(z), the Jacobian is
    diag(1_S) - (1_S 1_S^T) / |S|; at support boundaries this is the
    one-sided Jacobian of the computed support (a subgradient choice).
    """
    p = sparsemax(z, axis=axis)
    upstream = np.asarray(upstream)
    if upstream.shape != p.shape:
        raise DimensionError(
            f"upstream shape {upstream.shape} does not match {p.shape}"
        )
    support = p > 0
    masked = np.where(support, upstream, 0)
    nnz = support.sum(axis=axis, keepdims=True)
    mean = masked.sum(axis=axis, keepdims=True) / nnz
    return np.where(support, upstream - mean, 0).astype(p.dtype, copy=False)


def bce_loss(p: np.ndarray, y: np.ndarray, eps: float = BCE_EPS) -> float:
    """Mean binary cross entropy between probabilities p and targets y.

    p is clipped to [eps, 1-eps] before the logs.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def bce_loss_grad(p: np.ndarray, y: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    """dL/dp of bce_loss; zero where the clip is active."""
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    g = (-y / pc + (1.0 - y) / (1.0 - pc)) / p.size
    return np.where((p > eps) & (p < 1.0 - eps), g, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Fused sigmoid + BCE. Returns (mean loss, dloss/dlogits).

    Numerically stable: loss_i = max(z,0) - z*y + log(1 + exp(-|z|)).
    """
    z = np.asarray(z)
    y = np.asarray(y)
    if z.shape != y.shape:
        raise DimensionError(f"shape mismatch {z.shape} vs {y.shape}")
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - y) / z.size
    return float(loss.mean()), grad.astype(z.dtype, copy=False)


@dataclass
class RunningStats:
    """Per-channel running mean/variance of a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int, dtype=np.float64) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy())


def _bn_normalize(x, running, mode, eps, momentum):
    """Standardize x per channel. Returns (xhat, inv_std, new_running)."""
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_running = RunningStats(
            (1.0 - momentum) * running.mean + momentum * mean,
            (1.0 - momentum) * running.var + momentum * var,
        )
    elif mode == "eval":
        mean = running.mean.astype(x.dtype, copy=False)
        var = running.var.astype(x.dtype, copy=False)
        new_running = running
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat, inv, new_running


def batchnorm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running: RunningStats,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> tuple[np.ndarray, RunningStats]:
    """Plain batch normalization with a shared per-channel affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError("gamma/beta must have one entry per channel")
    xhat, _, new_running = _bn_normalize(x, running, mode, eps, momentum)
    return gamma * xhat + beta, new_running


def cond_batchnorm(
    x: np.ndarray,
    class_ids: np.ndarray,
    gamma_table: np.ndarray,
    beta_table: np.ndarray,
    running: RunningStats,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> tuple[np.ndarray, RunningStats]:
    """Batch norm whose affine parameters are looked up per sample by class.

    Standardization statistics are shared across classes (batch statistics
    in train mode, running statistics in eval mode); only the affine is
    class-conditional: y_b = gamma[class_b] * xhat_b + beta[class_b].
    """
    class_ids = np.asarray(class_ids)
    if class_ids.shape != (x.shape[0],):
        raise DimensionError("class_ids must have one entry per sample")
    if np.any(class_ids < 0) or np.any(class_ids >= gamma_table.shape[0]):
        raise IndexError("class id out of range of the affine tables")
    if gamma_table.shape[1] != x.shape[-1] or beta_table.shape[1] != x.shape[-1]:
        raise DimensionError("affine tables must have one column per channel")
    xhat, _, new_running = _bn_normalize(x, running, mode, eps, momentum)
    shape = (x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],)
    gamma = gamma_table[class_ids].reshape(shape)
    beta = beta_table[class_ids].reshape(shape)
    return gamma * xhat + beta, new_running
