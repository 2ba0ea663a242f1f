"""Single-sample and two-sample SPSA recursions and the trajectory engine.

The per-state step functions implement the update rules one iteration at
a time.  The batch engine advances many independent trajectories in lock
step (vectorized across runs), with per-run probe streams, an optional
divergence guard that freezes runs whose iterates escape, strided
trajectory recording, and on-the-fly window statistics so long ensembles
never store full trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exploration import ProbeGenerator
from .objectives import Objective
from .schedules import ExplorationGain, StepSizeSchedule

__all__ = [
    "DivergenceGuard",
    "OptimizerState",
    "RunRecord",
    "BatchRunResult",
    "WindowStatistic",
    "step_1spsa",
    "step_2spsa",
    "run",
    "run_batch",
    "polyak_ruppert",
    "sample_theta0",
]

DEFAULT_GUARD_THRESHOLD = 1e6
ENGINE_CHUNK = 8192


@dataclass(frozen=True)
class DivergenceGuard:
    """Freezes a trajectory once its iterate norm exceeds the threshold.

    The threshold must sit far above the post-transient scale of
    interest; it is an engineering stand-in for the (uncomputable)
    ultimate bound.
    """

    threshold: float = DEFAULT_GUARD_THRESHOLD

    def __post_init__(self):
        if not self.threshold >= 1e3:
            raise ValueError(f"guard threshold must be >= 1e3, got {self.threshold}")


@dataclass
class OptimizerState:
    """Mutable state of one trajectory driven by the per-step API."""

    theta: np.ndarray
    probe: ProbeGenerator
    n: int = 0
    last_probe: np.ndarray | None = None
    last_gain: float | None = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))


def step_1spsa(
    state: OptimizerState,
    objective: Objective,
    schedule: StepSizeSchedule,
    gain: ExplorationGain,
) -> OptimizerState:
    """One single-sample update; exactly one objective evaluation.

    Draws the next probe, evaluates the gain at the pre-update iterate,
    and moves against the probe direction scaled by the perturbed
    objective value.
    """
    xi = state.probe.next_probe()
    eps = float(gain.value(state.theta, state.n))
    alpha = float(schedule(state.n + 1))
    y_plus = objective.value(state.theta + eps * xi)
    state.theta = state.theta + (-(alpha / eps)) * xi * y_plus
    state.n += 1
    state.last_probe = xi
    state.last_gain = eps
    return state


def step_2spsa(
    state: OptimizerState,
    objective: Objective,
    schedule: StepSizeSchedule,
    gain: ExplorationGain,
) -> OptimizerState:
    """One two-sample update; exactly two objective evaluations."""
    xi = state.probe.next_probe()
    eps = float(gain.value(state.theta, state.n))
    alpha = float(schedule(state.n + 1))
    y_plus = objective.value(state.theta + eps * xi)
    y_minus = objective.value(state.theta - eps * xi)
    state.theta = state.theta + (-(alpha / (2.0 * eps))) * xi * (y_plus - y_minus)
    state.n += 1
    state.last_probe = xi
    state.last_gain = eps
    return state


@dataclass(frozen=True)
class WindowStatistic:
    """On-the-fly average of ``fn(theta)`` over iterates with index >= start.

    ``fn`` maps an (m, d) batch of iterates to an (m, p) array; the
    engine accumulates its sum over the window without storing
    trajectories.
    """

    name: str
    start: int
    fn: Callable[[np.ndarray], np.ndarray]


@dataclass
class RunRecord:
    """Recorded trajectory of a single run.

    ``thetas`` holds the iterates at ``record_indices`` (stride-spaced,
    starting at index 0); recording stops at the divergence index when
    the guard fires.  Optional parallel arrays carry the step size, the
    exploration gain, and the objective value at each recorded iterate.
    """

    thetas: np.ndarray
    record_indices: np.ndarray
    stride: int
    n_steps: int
    theta_final: np.ndarray
    diverged_at: int | None = None
    objective_trace: np.ndarray | None = None
    alpha_trace: np.ndarray | None = None
    gain_trace: np.ndarray | None = None
    seed: int | None = None
    config_hash: str | None = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


@dataclass
class BatchRunResult:
    """Lock-step result for a batch of independent runs."""

    theta_final: np.ndarray  # (m, d)
    diverged_at: np.ndarray  # (m,), -1 where the guard never fired
    n_steps: int
    stride: int
    record_indices: np.ndarray | None = None  # (k,)
    thetas: np.ndarray | None = None  # (m, k, d)
    objective_trace: np.ndarray | None = None  # (m, k)
    alpha_trace: np.ndarray | None = None  # (k,)
    gain_trace: np.ndarray | None = None  # (m, k)
    statistics: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (m, p) means

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at >= 0

    def extract_record(self, i: int, seed: int | None = None, config_hash: str | None = None) -> RunRecord:
        """Single-run view of lane ``i``, truncated at its divergence index."""
        div = int(self.diverged_at[i])
        diverged_at = div if div >= 0 else None
        if self.record_indices is None:
            thetas = np.empty((0, self.theta_final.shape[1]))
            indices = np.empty(0, dtype=int)
            obj = alpha = gains = None
        else:
            keep = (
                slice(None)
                if diverged_at is None
                else self.record_indices <= diverged_at
            )
            indices = self.record_indices[keep]
            thetas = self.thetas[i][keep]
            obj = None if self.objective_trace is None else self.objective_trace[i][keep]
            alpha = None if self.alpha_trace is None else self.alpha_trace[keep]
            gains = None if self.gain_trace is None else self.gain_trace[i][keep]
        return RunRecord(
            thetas=thetas,
            record_indices=indices,
            stride=self.stride,
            n_steps=self.n_steps,
            theta_final=self.theta_final[i],
            diverged_at=diverged_at,
            objective_trace=obj,
            alpha_trace=alpha,
            gain_trace=gains,
            seed=seed,
            config_hash=config_hash,
        )


def sample_theta0(box, rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from a per-coordinate box ([lo, hi] broadcast over dims)."""
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError(f"theta0 box must be (dim, 2) with lo < hi, got {box!r}")
    return rng.uniform(box[:, 0], box[:, 1])


def run_batch(
    objective: Objective,
    schedule: StepSizeSchedule,
    gain: ExplorationGain,
    probes: Sequence[ProbeGenerator],
    theta0: np.ndarray,
    n_steps: int,
    algorithm: str = "1spsa",
    guard: DivergenceGuard | None = None,
    stride: int = 0,
    record_objective: bool = False,
    statistics: Sequence[WindowStatistic] = (),
    chunk: int = ENGINE_CHUNK,
) -> BatchRunResult:
    """Advance ``m`` independent trajectories in lock step.

    Each run owns its probe generator; probe draws are chunked per run,
    which reproduces the per-step stream exactly.  When the guard fires
    for a run its iterate freezes and no further updates, records, or
    statistic contributions are made for that lane.  With ``stride`` > 0
    the iterate at every stride-th index (plus index 0 and the final
    index) is stored.
    """
    if algorithm not in ("1spsa", "2spsa"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be nonnegative, got {n_steps}")
    theta = np.atleast_2d(np.asarray(theta0, dtype=float)).copy()
    m, d = theta.shape
    if len(probes) != m:
        raise ValueError(f"need one probe generator per run: {len(probes)} != {m}")
    guard = guard or DivergenceGuard()

    active = np.ones(m, dtype=bool)
    diverged_at = np.full(m, -1, dtype=int)

    stat_sums = {s.name: None for s in statistics}
    stat_counts = {s.name: 0 for s in statistics}

    def accumulate(n_index: int, current: np.ndarray):
        for s in statistics:
            if n_index >= s.start:
                vals = np.asarray(s.fn(current), dtype=float)
                if vals.ndim == 1:
                    vals = vals[:, None]
                if stat_sums[s.name] is None:
                    stat_sums[s.name] = np.zeros_like(vals)
                stat_sums[s.name] += np.where(active[:, None], vals, 0.0)
                stat_counts[s.name] += 1

    rec_rows: list[np.ndarray] = []
    rec_idx: list[int] = []
    rec_obj: list[np.ndarray] = []
    rec_alpha: list[float] = []
    rec_gain: list[np.ndarray] = []
    rec_valid: list[np.ndarray] = []

    def record(n_index: int, current: np.ndarray):
        rec_rows.append(current.copy())
        rec_idx.append(n_index)
        rec_valid.append(active.copy())
        rec_alpha.append(float(schedule(n_index)))
        g = np.asarray(gain.value(current, n_index), dtype=float)
        rec_gain.append(np.broadcast_to(g, (m,)).copy())
        if record_objective:
            rec_obj.append(objective.value_batch(current))

    if stride > 0:
        record(0, theta)
    accumulate(0, theta)

    norm_ax = None if d == 1 else 1
    with np.errstate(over="ignore", invalid="ignore"):
        n = 0
        while n < n_steps and active.any():
            width = min(chunk, n_steps - n)
            xi_chunk = np.stack([g.take(width) for g in probes])  # (m, width, d)
            alphas = schedule(np.arange(n + 1, n + width + 1))
            for j in range(width):
                k = n + j + 1  # index of the iterate produced this step
                xi = xi_chunk[:, j, :]
                eps = np.broadcast_to(
                    np.asarray(gain.value(theta, k - 1), dtype=float), (m,)
                )
                if algorithm == "1spsa":
                    y = objective.value_batch(theta + eps[:, None] * xi)
                    incr = -(alphas[j] / eps)[:, None] * xi * y[:, None]
                else:
                    y_plus = objective.value_batch(theta + eps[:, None] * xi)
                    y_minus = objective.value_batch(theta - eps[:, None] * xi)
                    incr = -(alphas[j] / (2.0 * eps))[:, None] * xi * (y_plus - y_minus)[:, None]
                theta = np.where(active[:, None], theta + incr, theta)
                if d == 1:
                    norms = np.abs(theta[:, 0])
                else:
                    norms = np.linalg.norm(theta, axis=norm_ax)
                newly = active & (~np.isfinite(norms) | (norms > guard.threshold))
                if newly.any():
                    diverged_at[newly] = k
                    active &= ~newly
                accumulate(k, theta)
                if stride > 0 and (k % stride == 0 or k == n_steps):
                    record(k, theta)
            n += width

    result = BatchRunResult(
        theta_final=theta,
        diverged_at=diverged_at,
        n_steps=n_steps,
        stride=stride,
    )
    if stride > 0:
        result.record_indices = np.asarray(rec_idx, dtype=int)
        result.thetas = np.stack(rec_rows, axis=1)  # (m, k, d)
        result.alpha_trace = np.asarray(rec_alpha)
        result.gain_trace = np.stack(rec_gain, axis=1)
        if record_objective:
            result.objective_trace = np.stack(rec_obj, axis=1)
    for s in statistics:
        sums = stat_sums[s.name]
        count = stat_counts[s.name]
        if sums is None:
            result.statistics[s.name] = np.full((m, 1), np.nan)
        else:
            result.statistics[s.name] = sums / max(count, 1)
    return result


def run(
    objective: Objective,
    schedule: StepSizeSchedule,
    gain: ExplorationGain,
    probe: ProbeGenerator,
    theta0,
    n_steps: int,
    guard: DivergenceGuard | None = None,
    stride: int = 1,
    record_objective: bool = True,
    algorithm: str = "1spsa",
    seed: int | None = None,
    config_hash: str | None = None,
) -> RunRecord:
    """Run one trajectory and return its record.

    A guard trip is recorded in ``diverged_at``, not raised.  With the
    default stride of 1 the full trajectory is stored.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    result = run_batch(
        objective,
        schedule,
        gain,
        [probe],
        theta0[None, :],
        n_steps,
        algorithm=algorithm,
        guard=guard,
        stride=max(stride, 1),
        record_objective=record_objective,
    )
    return result.extract_record(0, seed=seed if seed is not None else probe.seed, config_hash=config_hash)


def polyak_ruppert(record: RunRecord, burn_in: int) -> np.ndarray:
    """Average the iterates with index in (burn_in, n_steps].

    Requires a non-diverged record with stride-1 trajectory storage over
    the averaged window.
    """
    if record.diverged:
        raise ValueError(f"cannot average a diverged record (guard fired at {record.diverged_at})")
    if record.stride != 1:
        raise ValueError(f"averaging needs stride-1 records, got stride {record.stride}")
    if burn_in >= record.n_steps:
        raise ValueError(f"burn_in {burn_in} must be below run length {record.n_steps}")
    sel = record.record_indices > burn_in
    return record.thetas[sel].mean(axis=0)
