"""Adam and momentum-SGD updates, in functional and stateful forms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError

OPTIMIZER_KINDS = ("adam", "sgd_momentum")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def _adam_update(value, grad, m, v, t, cfg: OptimizerConfig):
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    mhat = m / (1.0 - cfg.beta1 ** t)
    vhat = v / (1.0 - cfg.beta2 ** t)
    value = value - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return value, m, v


def _sgd_update(value, grad, velocity, cfg: OptimizerConfig):
    velocity = cfg.momentum * velocity + grad
    value = value - cfg.learning_rate * velocity
    return value, velocity


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, dict],
    config: OptimizerConfig,
) -> tuple[dict[str, np.ndarray], dict[str, dict]]:
    """One optimizer step over named arrays. Pure: returns fresh params/state.

    state starts as {} and is threaded through successive calls.
    """
    new_params: dict[str, np.ndarray] = {}
    new_state: dict[str, dict] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name])
        value = np.asarray(value, dtype=float)
        if grad.shape != value.shape:
            raise DimensionError(
                f"grad shape {grad.shape} does not match param {value.shape} for {name!r}"
            )
        st = state.get(name, {})
        if config.kind == "adam":
            m = st.get("m", np.zeros_like(value))
            v = st.get("v", np.zeros_like(value))
            t = st.get("t", 0) + 1
            value, m, v = _adam_update(value, grad, m, v, t, config)
            new_state[name] = {"m": m, "v": v, "t": t}
        else:
            vel = st.get("velocity", np.zeros_like(value))
            value, vel = _sgd_update(value, grad, vel, config)
            new_state[name] = {"velocity": vel}
        new_params[name] = value
    return new_params, new_state


class Adam:
    """Stateful Adam over named arrays, updating values in place."""

    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.cfg = OptimizerConfig(
            kind="adam", learning_rate=learning_rate,
            beta1=beta1, beta2=beta2, eps=eps,
        )
        self.state: dict[str, dict] = {}

    def update(self, key: str, value: np.ndarray, grad: np.ndarray) -> None:
        st = self.state.setdefault(
            key, {"m": np.zeros_like(value), "v": np.zeros_like(value), "t": 0}
        )
        st["t"] += 1
        cfg = self.cfg
        m, v = st["m"], st["v"]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        mhat = m / (1.0 - cfg.beta1 ** st["t"])
        vhat = v / (1.0 - cfg.beta2 ** st["t"])
        value -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)).astype(
            value.dtype, copy=False
        )


class MomentumSGD:
    """Stateful momentum SGD over named arrays, updating values in place."""

    def __init__(self, learning_rate=0.01, momentum=0.9):
        self.cfg = OptimizerConfig(
            kind="sgd_momentum", learning_rate=learning_rate, momentum=momentum
        )
        self.state: dict[str, dict] = {}

    def update(self, key: str, value: np.ndarray, grad: np.ndarray) -> None:
        st = self.state.setdefault(key, {"velocity": np.zeros_like(value)})
        vel = st["velocity"]
        vel *= self.cfg.momentum
        vel += grad
        value -= (self.cfg.learning_rate * vel).astype(value.dtype, copy=False)
