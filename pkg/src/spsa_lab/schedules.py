"""Step-size and exploration-gain schedules.

The step size decays polynomially under an initial clamp; exploration
gains are either oblivious (functions of the iteration index only) or
active (functions of the current iterate, bounded below by ``eps_bullet``,
which is the stabilization mechanism).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StepSizeSchedule",
    "ExplorationGain",
    "ConstantGain",
    "DecayingGain",
    "CenterActiveGain",
    "ObjectiveActiveGain",
    "GainFloorError",
]


class GainFloorError(ValueError):
    """Objective fell below the declared floor while evaluating a gain."""


@dataclass(frozen=True)
class StepSizeSchedule:
    """Polynomially decaying step size alpha(n) = min(alpha0, n**-rho).

    alpha(0) is defined as alpha0 so the first update uses alpha(1).
    The decay exponent must lie strictly inside (1/2, 1): the partial
    sums of alpha(n) then diverge while those of alpha(n)**2 converge.
    """

    alpha0: float
    rho: float

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if not 0.5 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0.5, 1.0), got {self.rho}")

    def __call__(self, n):
        """Step size at iteration ``n`` (scalar or integer array)."""
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore"):
            decay = np.where(n >= 1, np.power(np.maximum(n, 1.0), -self.rho), np.inf)
        out = np.minimum(self.alpha0, decay)
        return float(out) if out.ndim == 0 else out


def _squared_norms(theta: np.ndarray) -> np.ndarray:
    """Squared row norms; identical arithmetic for (d,) and (m, d) inputs."""
    theta = np.asarray(theta, dtype=float)
    return np.sum(theta * theta, axis=-1)


class ExplorationGain:
    """Base class for exploration-gain schedules.

    Subclasses implement ``value(theta, n)``; ``theta`` may be a single
    vector of shape (d,) or a batch of shape (m, d), in which case a
    vector of per-row gains is returned.
    """

    eps_bullet: float

    def value(self, theta, n: int = 0):
        raise NotImplementedError

    def __call__(self, theta, n: int = 0):
        return self.value(theta, n)


@dataclass(frozen=True)
class ConstantGain(ExplorationGain):
    """Oblivious constant gain, eps(n) = eps_bullet."""

    eps_bullet: float

    def __post_init__(self):
        if not self.eps_bullet > 0:
            raise ValueError(f"eps_bullet must be positive, got {self.eps_bullet}")

    def value(self, theta, n: int = 0):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim >= 2:
            return np.full(theta.shape[0], self.eps_bullet)
        return self.eps_bullet


@dataclass(frozen=True)
class DecayingGain(ExplorationGain):
    """Oblivious decaying gain, eps(n) = eps_bullet * n**-kappa, eps(0) = eps_bullet."""

    eps_bullet: float
    kappa: float

    def __post_init__(self):
        if not self.eps_bullet > 0:
            raise ValueError(f"eps_bullet must be positive, got {self.eps_bullet}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")

    def value(self, theta, n: int = 0):
        eps = self.eps_bullet * (max(n, 1) ** -self.kappa if n >= 1 else 1.0)
        theta = np.asarray(theta, dtype=float)
        if theta.ndim >= 2:
            return np.full(theta.shape[0], eps)
        return eps


@dataclass(frozen=True)
class CenterActiveGain(ExplorationGain):
    """Active gain growing with the distance from a prior center.

    eps(theta) = eps_bullet * sqrt(1 + ||theta - center||^2 / sigma_p^2),
    so eps >= eps_bullet everywhere.  ``center`` is an a-priori guess of
    the minimizer and ``sigma_p`` quantifies its uncertainty.
    """

    eps_bullet: float
    center: np.ndarray
    sigma_p: float = 1.0

    def __post_init__(self):
        if not self.eps_bullet > 0:
            raise ValueError(f"eps_bullet must be positive, got {self.eps_bullet}")
        if not self.sigma_p > 0:
            raise ValueError(f"sigma_p must be positive, got {self.sigma_p}")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def value(self, theta, n: int = 0):
        theta = np.asarray(theta, dtype=float)
        dist2 = _squared_norms(theta - self.center)
        out = self.eps_bullet * np.sqrt(1.0 + dist2 / self.sigma_p**2)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ObjectiveActiveGain(ExplorationGain):
    """Active gain growing with the objective value above a known floor.

    eps(theta) = eps_bullet * sqrt(1 + objective(theta) - floor); requires
    objective(theta) >= floor everywhere, which is checked per evaluation.
    """

    eps_bullet: float
    objective: "object"  # anything with value / value_batch, see objectives module
    floor: float

    def __post_init__(self):
        if not self.eps_bullet > 0:
            raise ValueError(f"eps_bullet must be positive, got {self.eps_bullet}")

    def value(self, theta, n: int = 0):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim >= 2:
            vals = self.objective.value_batch(theta)
            bad = vals < self.floor
            if np.any(bad):
                raise GainFloorError(
                    f"objective below declared floor {self.floor} at theta={theta[bad][0]}"
                )
            return self.eps_bullet * np.sqrt(1.0 + vals - self.floor)
        val = self.objective.value(theta)
        if val < self.floor:
            raise GainFloorError(
                f"objective below declared floor {self.floor} at theta={theta}"
            )
        return self.eps_bullet * float(np.sqrt(1.0 + val - self.floor))
