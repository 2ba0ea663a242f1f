"""Ensemble execution and long-run variance statistics.

Covers the across-run statistics used to quantify algorithmic variance:
window averages of a target quantity per run, their scaled covariance
across independent runs, power-law fits of that covariance against the
gain scale, the noise decomposition at an equilibrium, and batch-means
estimation of asymptotic covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DivergenceGuard, RunRecord, WindowStatistic, run_batch, sample_theta0
from .exploration import BaseNoise, ProbeGenerator, derive_seed
from .objectives import Objective
from .schedules import ExplorationGain, StepSizeSchedule

__all__ = [
    "target_bias",
    "scaled_covariance",
    "ScalingFit",
    "scaling_fit",
    "DeltaDecomposition",
    "delta_decompose",
    "batch_means_covariance",
    "batch_means_cross_covariance",
    "lag_autocovariance",
    "EnsembleCell",
    "run_ensemble_cell",
]


def target_bias(record: RunRecord, g: Callable[[np.ndarray], np.ndarray], n0: int) -> np.ndarray:
    """Window average of ``g`` along a recorded trajectory.

    Averages g(theta_k) over recorded indices k in [n0, n_steps];
    requires a stride-1, non-diverged record.
    """
    if record.diverged:
        raise ValueError(f"diverged run excluded from target bias (guard fired at {record.diverged_at})")
    if record.stride != 1:
        raise ValueError(f"target bias needs stride-1 records, got stride {record.stride}")
    if n0 >= record.n_steps:
        raise ValueError(f"window start {n0} must be below run length {record.n_steps}")
    sel = record.record_indices >= n0
    vals = np.asarray(g(record.thetas[sel]), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return vals.mean(axis=0)


def scaled_covariance(values: np.ndarray, window: int) -> float:
    """Window length times the trace of the sample covariance across runs.

    ``values`` holds one statistic vector per run, shape (m, p) or (m,);
    the covariance across runs is the unbiased estimator.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    m = values.shape[0]
    if m < 2:
        raise ValueError(f"covariance across runs needs at least 2 runs, got {m}")
    centered = values - values.mean(axis=0)
    trace = float(np.sum(centered**2) / (m - 1))
    return window * trace


@dataclass
class ScalingFit:
    """Least-squares power-law fit of scaled variance against gain scale."""

    eps_values: np.ndarray
    scaled_vars: np.ndarray
    loglog_slope: float
    loglog_intercept: float
    r_squared: float


def scaling_fit(eps_values, scaled_vars) -> ScalingFit:
    """Fit log(scaled variance) on log(gain scale) by least squares."""
    eps_values = np.asarray(list(eps_values), dtype=float)
    scaled_vars = np.asarray(list(scaled_vars), dtype=float)
    if eps_values.size != scaled_vars.size:
        raise ValueError("grid and variance lengths differ")
    if eps_values.size < 3:
        raise ValueError(f"power-law fit needs at least 3 grid points, got {eps_values.size}")
    if np.any(eps_values <= 0) or np.any(scaled_vars <= 0):
        raise ValueError("power-law fit needs positive grid and variances")
    lx, ly = np.log(eps_values), np.log(scaled_vars)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    total = ly - ly.mean()
    r2 = 1.0 - float(resid @ resid) / float(total @ total) if float(total @ total) > 0 else 1.0
    return ScalingFit(eps_values, scaled_vars, float(slope), float(intercept), r2)


@dataclass
class DeltaDecomposition:
    """Update-noise decomposition at a frozen equilibrium.

    delta is the raw noise sequence; nu carries the objective level over
    the gain (the dominant scale for iid probes, telescoping for zigzag
    probes), omega the probe-covariance fluctuation times the gradient,
    and psi the residual (curvature and higher-order terms), so that
    nu + omega + psi reproduces delta exactly.
    """

    nu: np.ndarray
    omega: np.ndarray
    psi: np.ndarray
    delta: np.ndarray


def delta_decompose(
    theta_star,
    probes: np.ndarray,
    objective: Objective,
    eps: float,
    sigma_xi: np.ndarray,
    fbar_star: np.ndarray | None = None,
) -> DeltaDecomposition:
    """Decompose the update noise at a frozen point into nu + omega + psi.

    ``probes`` has shape (k, d); ``eps`` is the gain value at the frozen
    point; ``sigma_xi`` is the closed-form probe covariance.  The mean
    field at the frozen point defaults to zero (exact at an equilibrium);
    pass ``fbar_star`` to center the raw noise elsewhere.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    xi = np.asarray(probes, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    d = theta_star.size
    sigma_xi = np.asarray(sigma_xi, dtype=float).reshape(d, d)
    center = np.zeros(d) if fbar_star is None else np.asarray(fbar_star, dtype=float)

    level = objective.value(theta_star)
    grad = objective.grad(theta_star)
    vals = objective.value_batch(theta_star[None, :] + eps * xi)
    delta = -(xi / eps) * vals[:, None] - center
    nu = -(level / eps) * xi
    outer = np.einsum("ki,kj->kij", xi, xi)
    omega = np.einsum("kij,j->ki", sigma_xi[None, :, :] - outer, grad)
    psi = delta - nu - omega
    return DeltaDecomposition(nu=nu, omega=omega, psi=psi, delta=delta)


def _batch_mean_rows(samples: np.ndarray, batch_size: int):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    n_batches = samples.shape[0] // batch_size
    if n_batches < 20:
        raise ValueError(f"batch-means estimate needs >= 20 batches, got {n_batches}")
    trimmed = samples[: n_batches * batch_size]
    return trimmed.reshape(n_batches, batch_size, samples.shape[1]).mean(axis=1)


def batch_means_covariance(samples: np.ndarray, batch_size: int) -> np.ndarray:
    """Batch-means estimate of the asymptotic covariance of a sequence.

    Splits the sequence into consecutive batches, averages each, and
    scales the across-batch covariance by the batch size.  Consistent as
    the batch size grows for geometrically ergodic inputs.
    """
    means = _batch_mean_rows(samples, batch_size)
    centered = means - means.mean(axis=0)
    cov = centered.T @ centered / (means.shape[0] - 1)
    return batch_size * cov


def batch_means_cross_covariance(x: np.ndarray, y: np.ndarray, batch_size: int) -> np.ndarray:
    """Batch-means estimate of the asymptotic cross-covariance of two sequences."""
    mx = _batch_mean_rows(x, batch_size)
    my = _batch_mean_rows(y, batch_size)
    if mx.shape[0] != my.shape[0]:
        raise ValueError("sequences must have equal batch counts")
    cx = mx - mx.mean(axis=0)
    cy = my - my.mean(axis=0)
    cov = cx.T @ cy / (mx.shape[0] - 1)
    return batch_size * cov


def lag_autocovariance(samples: np.ndarray, lag: int) -> np.ndarray:
    """Empirical lag autocovariance matrix, centered at the sample mean."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    lag = abs(int(lag))
    if lag >= x.shape[0]:
        raise ValueError(f"lag {lag} exceeds sample length {x.shape[0]}")
    c = x - x.mean(axis=0)
    if lag == 0:
        return c.T @ c / x.shape[0]
    return c[:-lag].T @ c[lag:] / (x.shape[0] - lag)


@dataclass
class EnsembleCell:
    """One (probe mode, gain scale) cell of an ensemble experiment."""

    mode: str
    eps_bullet: float
    bias_values: np.ndarray  # (m, p) window averages per run
    diverged: np.ndarray  # (m,) bool
    m_total: int
    window: int
    seeds: list[int] = field(default_factory=list)

    @property
    def m_effective(self) -> int:
        return int(self.m_total - self.diverged.sum())

    @property
    def scaled_var_trace(self) -> float:
        return scaled_covariance(self.bias_values[~self.diverged], self.window)

    @property
    def mean_bias(self) -> np.ndarray:
        return self.bias_values[~self.diverged].mean(axis=0)

    @property
    def mean_bias_norm(self) -> float:
        return float(np.linalg.norm(self.mean_bias))


def run_ensemble_cell(
    objective: Objective,
    schedule: StepSizeSchedule,
    base: BaseNoise,
    mode: str,
    varsigma: float,
    gain: ExplorationGain,
    eps_bullet: float,
    m_runs: int,
    n_steps: int,
    n_burn: int,
    theta0_box,
    statistic_fn: Callable[[np.ndarray], np.ndarray],
    master_seed: int,
    eps_index: int = 0,
    guard: DivergenceGuard | None = None,
    algorithm: str = "1spsa",
) -> EnsembleCell:
    """Run ``m_runs`` independent trajectories and collect window averages.

    Per-run streams are keyed by (master seed, mode, gain index, run
    index), so results are identical however runs are scheduled.  The
    window average of ``statistic_fn`` over iterate indices in
    [n_burn, n_steps] is accumulated on the fly.
    """
    if m_runs < 2:
        raise ValueError(f"ensemble needs at least 2 runs, got {m_runs}")
    if n_burn >= n_steps:
        raise ValueError(f"burn-in {n_burn} must be below horizon {n_steps}")
    seeds = [derive_seed(master_seed, mode, eps_index, i) for i in range(m_runs)]
    theta0 = np.empty((m_runs, objective.dim))
    probes: list[ProbeGenerator] = []
    for i, seed in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(key=seed))
        theta0[i] = sample_theta0(theta0_box, rng, objective.dim)
        probes.append(ProbeGenerator(base, mode=mode, varsigma=varsigma, seed=seed, rng=rng))
    result = run_batch(
        objective,
        schedule,
        gain,
        probes,
        theta0,
        n_steps,
        algorithm=algorithm,
        guard=guard,
        stride=0,
        statistics=[WindowStatistic("bias", n_burn, statistic_fn)],
    )
    return EnsembleCell(
        mode=mode,
        eps_bullet=eps_bullet,
        bias_values=result.statistics["bias"],
        diverged=result.diverged,
        m_total=m_runs,
        window=n_steps - n_burn,
        seeds=seeds,
    )
