import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvoce.errors import ConfigError, DimensionError, SingularJacobian
from mvoce.losses import LossSpec
from mvoce.oracle_bench import GaussianExpCase, oracle_allocation
from mvoce.sa_engine import (
    Box,
    StepSchedule,
    companion_risk,
    confidence_intervals,
    covariance_estimator,
    h1_sample,
    jacobian_estimator,
    pr_anchor,
    pr_average,
    rm_solve,
    solve_full,
)
from mvoce.scenarios import AffineModel, GaussianModel, RngStream

DEFAULT_SCHED = StepSchedule(c=1.0, gamma_exp=0.8, t=10.0, n_iter=500_000)
SHORT = StepSchedule(c=1.0, gamma_exp=0.8, t=10.0, n_iter=100_000)
BOX2 = Box.cube(0.0, 3.0, 2)


def _case(lam, alpha, rho):
    c = GaussianExpCase(lam, alpha, rho=rho)
    return c, c.loss(), c.model()


def test_h1_trivial_values():
    np.testing.assert_allclose(h1_sample(LossSpec.exponential([1, 2]), [0, 0], [0, 0]), [0, 0])
    assert h1_sample(LossSpec.exponential([1]), [0.0], [math.log(2)])[0] == pytest.approx(-0.5)


def test_h1_mean_zero_at_optimum():
    case, spec, model = _case((1, 1), 1.0, 0.5)
    m_star, _ = oracle_allocation(case)
    h = h1_sample(spec, model.sample(RngStream(3), 10**6), m_star)
    se = h.std(axis=0) / math.sqrt(h.shape[0])
    assert np.all(np.abs(h.mean(axis=0)) < 3 * se)


def test_schedule_and_box_validation():
    with pytest.raises(ConfigError):
        StepSchedule(gamma_exp=0.5)
    with pytest.raises(ConfigError):
        StepSchedule(c=0.0)
    with pytest.raises(ConfigError):
        Box([0, 1], [1, 1])
    assert StepSchedule(c=2.0, gamma_exp=1.0).step(0) == 2.0


def test_start_outside_box_rejected():
    _, spec, model = _case((1, 2), 0.0, 0.0)
    with pytest.raises(ConfigError):
        rm_solve(spec, model, SHORT, BOX2, [4.0, 0.0], RngStream(0))
    with pytest.raises(DimensionError):
        rm_solve(spec, model, SHORT, Box.cube(0, 3, 3), [0.0, 0.0, 0.0], RngStream(0))


def test_degenerate_scenario_converges_to_cash():
    spec = LossSpec.exponential([1.0, 2.0])
    model = GaussianModel([-0.7, -1.6], np.zeros((2, 2)))
    est = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(0), level=None)
    np.testing.assert_allclose(est.m_bar, [0.7, 1.6], atol=1e-6)


def test_entropic_allocation_and_companion():
    case, spec, model = _case((1, 2), 0.0, 0.0)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(2024))
    np.testing.assert_allclose(est.m_bar, [0.5, 1.0], atol=0.01)
    assert np.all((est.ci[:, 0] <= [0.5, 1.0]) & ([0.5, 1.0] <= est.ci[:, 1]))
    assert abs(est.risk - 1.5) <= 0.02


def test_symmetric_coupled_strong_correlation():
    case, spec, model = _case((1, 1), 1.0, 0.9)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(2024))
    np.testing.assert_allclose(est.m_bar, [1.2636, 1.2636], rtol=0.01)


def test_asymmetric_coupled_rows():
    case, spec, model = _case((1, 2), 1.0, -0.9)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(2024))
    np.testing.assert_allclose(est.m_bar, [0.6194, 1.1275], rtol=0.02)
    case, spec, model = _case((1, 2), 1.0, 0.5)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(2024))
    assert abs(est.risk - 2.3354) <= 0.05


def test_boundary_hits_rare_for_interior_optimum():
    _, spec, model = _case((1, 1), 1.0, 0.0)
    est = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(5))
    assert est.boundary_hits / est.iterations < 0.01


def test_companion_zero_scenario():
    spec = LossSpec.exponential([1.0, 2.0])
    model = GaussianModel([0.0, 0.0], np.zeros((2, 2)))
    est = solve_full(spec, model, SHORT, Box.cube(-1, 1, 2), [0.3, -0.2], RngStream(0), level=None)
    assert abs(est.risk) < 1e-4


# ---------------------------------------------------------------------------
# averaging window

def test_pr_constant_iterates():
    it = np.tile([0.25, -1.5], (1001, 1))
    np.testing.assert_array_equal(pr_average(it, StepSchedule(n_iter=1000)), [0.25, -1.5])


def test_pr_window_of_one_returns_iterate():
    sched = StepSchedule(c=1.0, gamma_exp=0.8, t=1.0, n_iter=10)
    it = np.arange(11.0)[:, None]
    assert sched.window(0) == 1
    assert pr_average(it, sched, n=0)[0] == 0.0


def test_pr_anchor_ends_at_last_iterate():
    for n_iter in (10, 1000, 50_000, 500_000):
        sched = StepSchedule(n_iter=n_iter)
        a = pr_anchor(sched)
        assert a + sched.window(a) - 1 <= n_iter
        assert a + 1 + sched.window(a + 1) - 1 > n_iter


def test_pr_truncated_window_warns():
    sched = StepSchedule(n_iter=100)
    it = np.ones((101, 1))
    with pytest.warns(RuntimeWarning, match="truncated"):
        pr_average(it, sched, n=90)


@pytest.mark.filterwarnings("ignore:averaging window")
@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.floats(0.51, 0.99), st.floats(0.5, 20.0), st.integers(5, 5000))
def test_pr_average_linear_iterates(d, g, t, n_iter):
    sched = StepSchedule(c=1.0, gamma_exp=g, t=t, n_iter=n_iter)
    it = np.outer(np.arange(n_iter + 1.0), np.arange(1.0, d + 1))
    a = pr_anchor(sched)
    L = min(sched.window(a), n_iter - a + 1)
    np.testing.assert_allclose(pr_average(it, sched), (a + (L - 1) / 2) * np.arange(1.0, d + 1))


# ---------------------------------------------------------------------------
# estimators

def test_covariance_lognormal_variance():
    spec = LossSpec.exponential([1.0])
    model = GaussianModel([0.0], [[1.0]])
    est = solve_full(spec, model, DEFAULT_SCHED, Box.cube(-2, 2, 1), [0.0], RngStream(7))
    assert est.sigma_hat[0, 0] == pytest.approx(math.e - 1, rel=0.05)


def test_covariance_vanishes_for_degenerate_scenario():
    spec = LossSpec.exponential([1.0, 2.0])
    model = GaussianModel([-0.5, -0.5], np.zeros((2, 2)))
    est = solve_full(spec, model, SHORT, BOX2, [0.5, 0.5], RngStream(0), level=None)
    assert np.abs(est.sigma_hat).max() < 1e-20


def test_jacobian_entropic_case():
    _, spec, model = _case((1, 2), 0.0, 0.3)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(8))
    np.testing.assert_allclose(est.jac_hat, -np.diag([1.0, 2.0]), atol=0.05)
    eigs = np.linalg.eigvalsh(est.sigma_hat)
    assert eigs.min() >= -1e-10


def test_jacobian_degenerate_one_dimensional():
    spec = LossSpec.exponential([1.0])
    model = GaussianModel([0.0], [[0.0]])
    est = solve_full(spec, model, SHORT, Box.cube(-1, 1, 1), [0.0], RngStream(0), level=None)
    assert est.jac_hat[0, 0] == pytest.approx(-1.0, abs=1e-5)


def test_jacobian_insensitive_to_eps():
    _, spec, model = _case((1, 1), 1.0, 0.0)
    run = rm_solve(spec, model, SHORT, BOX2, [0, 0], RngStream(1))
    a1 = jacobian_estimator(spec, run.iterates, run.samples, eps=1e-6)
    a2 = jacobian_estimator(spec, run.iterates, run.samples, eps=5e-7)
    assert np.abs(a1 - a2).max() < 1e-4


def test_fused_pass_matches_standalone_estimators():
    _, spec, model = _case((1, 2), 1.0, 0.5)
    run = rm_solve(spec, model, SHORT, BOX2, [0, 0], RngStream(9))
    est = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(9), keep_iterates=True)
    np.testing.assert_array_equal(est.iterates, run.iterates)
    assert est.boundary_hits == run.boundary_hits
    assert est.risk == pytest.approx(companion_risk(spec, run.iterates, run.samples, SHORT), rel=1e-10)
    np.testing.assert_allclose(est.sigma_hat, covariance_estimator(spec, run.iterates, run.samples), rtol=1e-9)
    np.testing.assert_allclose(est.jac_hat, jacobian_estimator(spec, run.iterates, run.samples), rtol=1e-6)
    np.testing.assert_array_equal(est.m_bar, pr_average(run.iterates, SHORT))


def test_first_order_residual_on_fresh_samples():
    _, spec, model = _case((1, 2), 1.0, 0.0)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(10))
    n = DEFAULT_SCHED.n_iter
    h = h1_sample(spec, model.sample(RngStream(11), n), est.m_bar)
    # fresh-sample noise plus the averaged allocation's own error, A Cov(m_bar) A' = S g_n / t
    spread = 1.0 / n + float(DEFAULT_SCHED.step(est.pr_anchor)) / DEFAULT_SCHED.t
    assert np.linalg.norm(h.mean(axis=0)) <= 3 * math.sqrt(np.trace(est.sigma_hat) * spread)


# ---------------------------------------------------------------------------
# confidence intervals

def test_ci_halfwidth_formula():
    sched = StepSchedule(c=1.0, gamma_exp=0.8, t=10.0, n_iter=500_000)
    ci = confidence_intervals([0.0], [[1.0]], [[1.0]], sched, n=500_000, level=0.95)
    assert ci[0, 1] == pytest.approx(0.003256, abs=5e-7)
    assert ci[0, 0] == pytest.approx(-ci[0, 1])


def test_ci_level_zero_collapses():
    ci = confidence_intervals([0.3, 0.4], np.eye(2), -np.eye(2), DEFAULT_SCHED, n=1000, level=0.0)
    np.testing.assert_array_equal(ci, [[0.3, 0.3], [0.4, 0.4]])


def test_ci_errors():
    with pytest.raises(SingularJacobian):
        confidence_intervals([0.0, 0.0], np.eye(2), np.zeros((2, 2)), DEFAULT_SCHED, n=10)
    with pytest.raises(ConfigError):
        confidence_intervals([0.0], [[1.0]], [[1.0]], StepSchedule(gamma_exp=1.0), n=10)
    _, spec, model = _case((1, 2), 0.0, 0.0)
    with pytest.raises(ConfigError):
        solve_full(spec, model, StepSchedule(gamma_exp=1.0, n_iter=100), BOX2, [0, 0], 0)


def test_entropic_ci_width_scale():
    _, spec, model = _case((1, 2), 0.0, 0.0)
    est = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(12))
    width = est.ci[0, 1] - est.ci[0, 0]
    assert 0.0085 / 2 <= width <= 0.0085 * 2
    assert np.all(est.ci[:, 0] <= est.m_bar) and np.all(est.m_bar <= est.ci[:, 1])


# ---------------------------------------------------------------------------
# structural properties

@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 0.5), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_iterates_stay_in_box(lo, width, seed):
    _, spec, model = _case((1, 2), 1.0, 0.3)
    box = Box.cube(lo, lo + width, 2)
    run = rm_solve(spec, model, StepSchedule(n_iter=2000), box, box.lower, RngStream(seed))
    assert np.all(run.iterates >= box.lower) and np.all(run.iterates <= box.upper)


def test_determinism():
    _, spec, model = _case((1, 1), 1.0, -0.5)
    a = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(42))
    b = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(42))
    assert a.to_dict() == b.to_dict()


def test_translation_of_allocation():
    _, spec, model = _case((1, 2), 1.0, 0.5)
    r = np.array([0.3, -0.4])
    base = solve_full(spec, model, DEFAULT_SCHED, BOX2, [0, 0], RngStream(13))
    moved = solve_full(spec, AffineModel(model, shift=r), DEFAULT_SCHED, Box(BOX2.lower - r, BOX2.upper - r),
                       -r, RngStream(14))
    width = base.ci[:, 1] - base.ci[:, 0]
    assert np.all(np.abs(moved.m_bar - (base.m_bar - r)) <= 2 * width)


def test_cash_invariance_and_monotonicity_of_risk():
    _, spec, model = _case((1, 1), 1.0, 0.0)
    r = np.array([0.2, 0.5])
    base = solve_full(spec, model, SHORT, BOX2, [0, 0], RngStream(15))
    moved = solve_full(spec, AffineModel(model, shift=r), SHORT, Box(BOX2.lower - r, BOX2.upper - r),
                       -r, RngStream(15))
    assert moved.risk == pytest.approx(base.risk - r.sum(), rel=0.02)
    assert moved.risk <= base.risk


def test_positive_homogeneity_cvar():
    spec = LossSpec.cvar_coupled([0.5, 0.8])
    model = GaussianModel.bivariate(rho=0.4)
    box = Box.cube(-5, 5, 2)
    base = solve_full(spec, model, DEFAULT_SCHED, box, [0, 0], RngStream(16), eps=0.05)
    scaled = solve_full(spec, AffineModel(model, scale=2.0), DEFAULT_SCHED, box, [0, 0], RngStream(17), eps=0.05)
    width = scaled.ci[:, 1] - scaled.ci[:, 0]
    assert np.all(np.abs(scaled.m_bar - 2.0 * base.m_bar) <= 2 * width)
