import numpy as np
import pytest

from spsa_lab import (
    BaseNoise,
    CenterActiveGain,
    ConstantGain,
    ProbeGenerator,
    RunRecord,
    StepSizeSchedule,
    batch_means_covariance,
    batch_means_cross_covariance,
    delta_decompose,
    quadratic_1d,
    run_ensemble_cell,
    scaled_covariance,
    scaling_fit,
    target_bias,
    trig_quadratic_1d,
)
from spsa_lab.ensemble import lag_autocovariance

VS = 1.0 / np.sqrt(2.0)


def _record(thetas):
    thetas = np.asarray(thetas, dtype=float)[:, None]
    return RunRecord(
        thetas=thetas,
        record_indices=np.arange(thetas.shape[0]),
        stride=1,
        n_steps=thetas.shape[0] - 1,
        theta_final=thetas[-1],
    )


def test_target_bias_constant_trajectory_at_root():
    record = _record([0.5] * 9)
    g = lambda ths: 0.5 - ths[:, 0]  # vanishes on the trajectory
    assert target_bias(record, g, 2)[0] == 0.0


def test_target_bias_mean_of_gradient():
    record = _record([1.0, 2.0, 3.0])
    value = target_bias(record, lambda ths: 2.0 * ths[:, :1], 0)
    assert value[0] == pytest.approx(4.0)


def test_target_bias_rejects_bad_records():
    record = _record([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        target_bias(record, lambda t: t, 5)
    diverged = _record([1.0, 2.0, 3.0])
    diverged.diverged_at = 1
    with pytest.raises(ValueError):
        target_bias(diverged, lambda t: t, 0)
    strided = _record([1.0, 2.0, 3.0])
    strided.stride = 7
    with pytest.raises(ValueError):
        target_bias(strided, lambda t: t, 0)


def test_scaled_covariance_identical_values():
    assert scaled_covariance(np.full((6, 1), 2.5), 100) == 0.0


def test_scaled_covariance_two_point_example():
    # unbiased variance of {+a, -a} is 2 a^2
    assert scaled_covariance(np.array([[0.4], [-0.4]]), 10) == pytest.approx(10 * 2 * 0.16)


def test_scaled_covariance_consistency_on_gaussians():
    rng = np.random.default_rng(1234)
    values = rng.normal(size=(10_000, 1))
    assert scaled_covariance(values, 1) == pytest.approx(1.0, abs=0.05)


def test_scaled_covariance_needs_two_runs():
    with pytest.raises(ValueError):
        scaled_covariance(np.ones((1, 1)), 5)


def test_scaling_fit_exact_power_law():
    eps = np.array([0.02, 0.05, 0.1, 0.3])
    fit = scaling_fit(eps, 3.7 / eps**2)
    assert fit.loglog_slope == pytest.approx(-2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    fit2 = scaling_fit(eps, 0.8 * eps**2)
    assert fit2.loglog_slope == pytest.approx(2.0, abs=1e-12)


def test_scaling_fit_validation():
    with pytest.raises(ValueError):
        scaling_fit([0.1, 0.2], [1.0, 2.0])
    with pytest.raises(ValueError):
        scaling_fit([0.1, 0.2, 0.3], [1.0, -2.0, 3.0])
    with pytest.raises(ValueError):
        scaling_fit([0.1, 0.2, 0.3], [1.0, 2.0])


def test_delta_decomposition_identity_and_terms():
    # at the origin of the pure quadratic both the level and gradient
    # terms vanish for sign probes
    obj = quadratic_1d()
    gen = ProbeGenerator(BaseNoise("rademacher", 1), "iid", seed=5)
    xi = gen.take(500)
    dec = delta_decompose(np.array([0.0]), xi, obj, 0.1, gen.probe_covariance())
    assert np.allclose(dec.nu, 0.0)
    assert np.allclose(dec.omega, 0.0)
    assert np.allclose(dec.nu + dec.omega + dec.psi, dec.delta)


def test_delta_decomposition_closed_forms():
    obj = trig_quadratic_1d()
    theta = np.array([0.3])
    eps = 0.08
    gen = ProbeGenerator(BaseNoise("uniform", 1), "zigzag", varsigma=VS, seed=9)
    xi = gen.take(200)
    sigma = gen.probe_covariance()
    dec = delta_decompose(theta, xi, obj, eps, sigma)
    level = obj.value(theta)
    grad = obj.grad(theta)
    assert np.allclose(dec.nu, -(level / eps) * xi)
    assert np.allclose(dec.omega, (sigma[0, 0] - xi**2) * grad[0])
    assert np.max(np.abs(dec.nu + dec.omega + dec.psi - dec.delta)) < 1e-14


def test_delta_nu_telescopes_for_zigzag():
    obj = trig_quadratic_1d()
    gen = ProbeGenerator(BaseNoise("uniform", 1), "zigzag", varsigma=VS, seed=11)
    xi = gen.take(10_000)
    eps = 0.1
    dec = delta_decompose(np.array([0.2]), xi, obj, eps, gen.probe_covariance())
    level = obj.value(np.array([0.2]))
    # partial sums of the level term collapse to the probe-sum boundary,
    # which the telescope bounds by one probe span regardless of length
    assert abs(dec.nu.sum() + (level / eps) * xi.sum()) < 1e-9
    assert abs(dec.nu.sum()) <= (level / eps) * 2 * VS * 2 + 1e-9

    # the residual is curvature-scale, orders below the level term's scale
    assert np.max(np.abs(dec.psi)) < 0.05 * np.max(np.abs(dec.nu))


def test_batch_means_constant_sequence_is_zero():
    assert batch_means_covariance(np.ones(5000), 100)[0, 0] == 0.0


def test_batch_means_iid_matches_variance():
    rng = np.random.default_rng(8)
    x = rng.normal(size=300_000)
    est = batch_means_covariance(x, 1000)[0, 0]
    assert est == pytest.approx(1.0, rel=0.2)


def test_batch_means_needs_twenty_batches():
    with pytest.raises(ValueError):
        batch_means_covariance(np.ones(1000), 100)


def test_batch_means_covariance_sum_rule():
    # the estimator is bilinear, so the decomposition over two summands
    # holds exactly batch by batch
    rng = np.random.default_rng(2)
    x = rng.normal(size=400_000)
    y = 0.5 * x + rng.normal(size=400_000)
    b = 500
    lhs = batch_means_covariance(x + y, b)
    rhs = (
        batch_means_covariance(x, b)
        + batch_means_covariance(y, b)
        + batch_means_cross_covariance(x, y, b)
        + batch_means_cross_covariance(y, x, b)
    )
    assert np.allclose(lhs, rhs, atol=1e-10)
    # and the cross term tracks the true covariance of the summands
    assert batch_means_cross_covariance(x, y, b)[0, 0] == pytest.approx(0.5, abs=0.15)


def test_omega_lag_structure_under_zigzag():
    # the gradient-weighted probe-covariance fluctuation is one-dependent:
    # lags beyond one vanish
    obj = trig_quadratic_1d()
    theta = np.array([1.0])
    gen = ProbeGenerator(BaseNoise("uniform", 1), "zigzag", varsigma=VS, seed=31)
    xi = gen.take(400_000)
    dec = delta_decompose(theta, xi, obj, 0.15, gen.probe_covariance())
    omega = dec.omega[:, 0]
    lag0 = lag_autocovariance(omega, 0)[0, 0]
    for lag in (2, 3, 5):
        assert abs(lag_autocovariance(omega, lag)[0, 0]) < 0.02 * lag0
    assert abs(lag_autocovariance(omega, 1)[0, 0]) > 0.05 * lag0


def test_omega_asymptotic_covariance_bound():
    # one-dependence bounds the asymptotic covariance by three times the
    # instantaneous second moment
    obj = trig_quadratic_1d()
    gen = ProbeGenerator(BaseNoise("uniform", 1), "zigzag", varsigma=VS, seed=33)
    xi = gen.take(400_000)
    dec = delta_decompose(np.array([1.0]), xi, obj, 0.15, gen.probe_covariance())
    omega = dec.omega[:, 0]
    bm = batch_means_covariance(omega, 1000)[0, 0]
    instantaneous = float(np.mean(omega**2))
    assert bm <= 3.0 * instantaneous * 1.2  # 20% statistical headroom


def test_lag_autocovariance_validation():
    with pytest.raises(ValueError):
        lag_autocovariance(np.ones(10), 10)


def test_run_ensemble_cell_accounting_and_determinism():
    obj = quadratic_1d()
    sched = StepSizeSchedule(0.1, 0.6)
    base = BaseNoise("rademacher", 1)
    gain = CenterActiveGain(0.1, np.array([0.0]), 1.0)
    cell_a = run_ensemble_cell(
        obj, sched, base, "iid", VS, gain, 0.1, 8, 3000, 1000, [-5, 5], obj.grad_batch, 99, eps_index=0
    )
    cell_b = run_ensemble_cell(
        obj, sched, base, "iid", VS, gain, 0.1, 8, 3000, 1000, [-5, 5], obj.grad_batch, 99, eps_index=0
    )
    assert cell_a.m_effective == 8
    assert np.array_equal(cell_a.bias_values, cell_b.bias_values)
    assert cell_a.seeds == cell_b.seeds
    assert cell_a.window == 2000
    # different gain index reseeds every run
    cell_c = run_ensemble_cell(
        obj, sched, base, "iid", VS, gain, 0.1, 8, 3000, 1000, [-5, 5], obj.grad_batch, 99, eps_index=1
    )
    assert not np.array_equal(cell_a.bias_values, cell_c.bias_values)


def test_run_ensemble_cell_flags_divergence():
    # unstabilized constant gain from far-out initial points trips the guard
    obj = quadratic_1d()
    sched = StepSizeSchedule(1.0, 0.6)
    base = BaseNoise("rademacher", 1)
    cell = run_ensemble_cell(
        obj, sched, base, "iid", VS, ConstantGain(0.1), 0.1, 6, 2000, 500, [5, 10], obj.grad_batch, 4, eps_index=0
    )
    assert cell.m_effective < cell.m_total
    assert cell.diverged.any()
    finite_rows = cell.bias_values[~cell.diverged]
    assert np.all(np.isfinite(finite_rows))


def test_run_ensemble_cell_validation():
    obj = quadratic_1d()
    sched = StepSizeSchedule(0.1, 0.6)
    base = BaseNoise("rademacher", 1)
    gain = ConstantGain(0.1)
    with pytest.raises(ValueError):
        run_ensemble_cell(obj, sched, base, "iid", VS, gain, 0.1, 1, 100, 50, [-1, 1], obj.grad_batch, 0)
    with pytest.raises(ValueError):
        run_ensemble_cell(obj, sched, base, "iid", VS, gain, 0.1, 4, 100, 100, [-1, 1], obj.grad_batch, 0)


def test_target_bias_matches_engine_window_statistic():
    # the on-the-fly window average equals the record-based computation
    obj = quadratic_1d()
    sched = StepSizeSchedule(0.1, 0.6)
    base = BaseNoise("rademacher", 1)
    gain = CenterActiveGain(0.1, np.array([0.0]), 1.0)
    cell = run_ensemble_cell(
        obj, sched, base, "iid", VS, gain, 0.1, 3, 400, 100, [-2, 2], obj.grad_batch, 123, eps_index=0
    )
    from spsa_lab import run
    from spsa_lab.exploration import derive_seed
    from spsa_lab.core import sample_theta0

    for i in range(3):
        seed = derive_seed(123, "iid", 0, i)
        rng = np.random.Generator(np.random.Philox(key=seed))
        theta0 = sample_theta0([-2, 2], rng, 1)
        probe = ProbeGenerator(base, "iid", varsigma=VS, seed=seed, rng=rng)
        record = run(obj, sched, gain, probe, theta0, 400, stride=1)
        expected = target_bias(record, obj.grad_batch, 100)
        assert np.allclose(cell.bias_values[i], expected, atol=1e-12)
