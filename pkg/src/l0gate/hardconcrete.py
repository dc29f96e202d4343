"""Hard concrete gate distribution.

A logistic (binary concrete) variable with location ``phi`` and
temperature ``beta`` is stretched to the interval (gamma, zeta) and
clamped to [0, 1]. Because gamma < 0 < 1 < zeta, the clamp creates point
masses at exactly 0 and 1 while the interior stays differentiable, which
is what makes per-weight gates trainable by plain gradient descent.

Everything here is a pure float64 function of its arguments; callers own
the noise source and pass uniform draws in explicitly.
"""

from dataclasses import dataclass

import numpy as np

# Location init that puts a fresh gate near fully open: sigmoid(2.1972) = 0.9.
OPEN_GATE_LOG_ALPHA = 2.1972245773362196


@dataclass(frozen=True)
class GateHyper:
    """Fixed shape parameters: temperature and stretch bounds."""

    beta: float = 2.0 / 3.0
    gamma: float = -0.1
    zeta: float = 1.1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (self.gamma < 0.0 < 1.0 < self.zeta):
            raise ValueError(
                f"stretch bounds must satisfy gamma < 0 < 1 < zeta, "
                f"got gamma={self.gamma}, zeta={self.zeta}"
            )


@dataclass
class GateParams:
    """Per-gate location parameters plus the shared hyperparameters."""

    log_alpha: np.ndarray
    hyper: GateHyper

    def __post_init__(self):
        self.log_alpha = np.asarray(self.log_alpha, dtype=np.float64)
        if not np.all(np.isfinite(self.log_alpha)):
            raise ValueError("log_alpha entries must be finite")

    @property
    def count(self) -> int:
        return int(self.log_alpha.size)


def _sigmoid(x):
    # exp of a non-positive argument only: overflow-free for any finite x.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _maybe_scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def _check_noise(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniform noise must lie strictly inside (0, 1)")
    return u


def sample_gate(phi, hyper: GateHyper, u):
    """Draw z in [0, 1] from the hard concrete gate given noise u in (0, 1)."""
    u = _check_noise(u)
    phi = np.asarray(phi, dtype=np.float64)
    s = _sigmoid((np.log(u) - np.log1p(-u) + phi) / hyper.beta)
    s_bar = s * (hyper.zeta - hyper.gamma) + hyper.gamma
    return _maybe_scalar(np.clip(s_bar, 0.0, 1.0))


def deterministic_gate(phi, hyper: GateHyper):
    """Zero-noise gate estimate used at test time; a gate is masked iff 0."""
    phi = np.asarray(phi, dtype=np.float64)
    s_bar = _sigmoid(phi) * (hyper.zeta - hyper.gamma) + hyper.gamma
    return _maybe_scalar(np.clip(s_bar, 0.0, 1.0))


def active_probability(phi, hyper: GateHyper):
    """P(z != 0): the closed-form per-gate expected-L0 penalty term."""
    phi = np.asarray(phi, dtype=np.float64)
    return _maybe_scalar(_sigmoid(phi - hyper.beta * np.log(-hyper.gamma / hyper.zeta)))


def gate_sample_gradient(phi, hyper: GateHyper, u):
    """Pathwise dz/dphi for the same draw sample_gate(phi, hyper, u) makes.

    Zero wherever the stretched sample is clamped: the hard gate has no
    straight-through surrogate.
    """
    u = _check_noise(u)
    phi = np.asarray(phi, dtype=np.float64)
    s = _sigmoid((np.log(u) - np.log1p(-u) + phi) / hyper.beta)
    s_bar = s * (hyper.zeta - hyper.gamma) + hyper.gamma
    interior = (s_bar > 0.0) & (s_bar < 1.0)
    grad = (hyper.zeta - hyper.gamma) * s * (1.0 - s) / hyper.beta
    return _maybe_scalar(np.where(interior, grad, 0.0))


def active_probability_gradient(phi, hyper: GateHyper):
    """d/dphi of active_probability; equals p·(1−p)."""
    p = np.asarray(active_probability(phi, hyper))
    return _maybe_scalar(p * (1.0 - p))


def stretched_mean_location(phi, hyper: GateHyper):
    """Mean-noise gate location sigmoid(phi/beta) stretched to (gamma, zeta).

    This is the pre-clamp value the gate takes when the logistic noise term
    is exactly zero; histograms of it show how much mass a trained layer
    keeps near the masked region.
    """
    phi = np.asarray(phi, dtype=np.float64)
    return _maybe_scalar(_sigmoid(phi / hyper.beta) * (hyper.zeta - hyper.gamma) + hyper.gamma)
