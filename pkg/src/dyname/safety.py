"""Emergent-drift safety mechanism: error EWMA, danger signal, blending."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteInput

DEFAULT_ALPHA = 0.95
DEFAULT_DELTA = 0.01
DEFAULT_BETA = 0.2


@dataclass
class SafetyState:
    mu_mse: float = 0.0
    d: float = 0.0
    alpha: float = DEFAULT_ALPHA
    delta: float = DEFAULT_DELTA
    beta: float = DEFAULT_BETA
    initialized: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")


def update_ewma(state: SafetyState, mse_t: float) -> SafetyState:
    """Fold the latest realized error into the running average.

    The first observation seeds the average directly; afterwards
    mu <- (1 - alpha) * mse_t + alpha * mu.
    """
    if not np.isfinite(mse_t) or mse_t < 0.0:
        raise NonFiniteInput(f"mse must be finite and >= 0, got {mse_t}")
    if not state.initialized:
        state.mu_mse = float(mse_t)
        state.initialized = True
    else:
        state.mu_mse = (1.0 - state.alpha) * float(mse_t) + state.alpha * state.mu_mse
    return state


def danger_signal(state: SafetyState, mse_t: float) -> float:
    """d = 1 - exp(-delta * (mse_t - mu)^2), stored on the state.

    Call after :func:`update_ewma` for the same step. Quadratic deviation
    keeps the signal flat for subtle fluctuations and saturating for spikes.
    """
    dev = float(mse_t) - state.mu_mse
    state.d = 1.0 - float(np.exp(-state.delta * dev * dev))
    return state.d


def blend_factor(d: float, beta: float) -> float:
    """gamma = beta + d * (1 - beta); beta is the minimum backbone reliance."""
    return beta + d * (1.0 - beta)


def blend_weights(omega_tilde: np.ndarray, d: float, beta: float) -> np.ndarray:
    """Divert a gamma-fraction of the weight mass to slot 0.

    Works on [K] vectors or [C x K] stacks; rows stay on the simplex and the
    slot-0 weight never decreases.
    """
    gamma = blend_factor(d, beta)
    omega = (1.0 - gamma) * omega_tilde
    omega[..., 0] += gamma
    return omega
