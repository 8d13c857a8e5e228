import numpy as np
import pytest
from hypothesis import given, strategies as st

from zostab.covariance import (CovarianceError, adam_coordinates, assemble_fo_operator, assemble_operator,
                               blocks_to_state, forward_fd_source, forward_fd_source_mc,
                               forward_fd_stationary_covariance, initial_state, iterate_covariance,
                               mc_second_moment, min_block_eigenvalue, moment_coefficients,
                               random_cone_state, spectral_radius, sphere_operator_check, state_to_blocks)
from zostab.estimators import CENTRAL_SPHERE, FORWARD_GAUSSIAN, EstimatorConfig
from zostab.objectives import QuadraticModel
from zostab.optimizers import make_config
from zostab.rng import RngStream
from zostab.stability import StabilityQuery, solve_ms_critical_stepsize

Q = np.array([[1.0, -1.0], [-1.0, 1.0]])


def recursion_oracle(family, lam, eta, beta, sigma, variant, queries, blocks):
    """One step of the second-moment recursion written with 2x2 matrices."""
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    a, b = moment_coefficients(variant, d, queries)
    h = (1 - beta) * eta if family == "FrozenZOAdam" else eta
    sig = np.ones(d) if sigma is None else np.asarray(sigma, dtype=float)
    out = []
    for i in range(d):
        x = h * lam[i]
        A = np.array([[1 - x, -beta], [x, beta]])
        noise = (a - 1) * x * x * blocks[i][0, 0]
        noise += b * h * h * sum(sig[j] / sig[i] * lam[j] ** 2 * blocks[j][0, 0] for j in range(d))
        out.append(A @ blocks[i] @ A.T + noise * Q)
    return np.array(out)


@pytest.mark.parametrize("family,beta,sigma,variant,n", [
    ("ZOGD", 0.0, None, "gaussian", 1),
    ("ZOGDM", 0.7, None, "gaussian", 1),
    ("FrozenZOAdam", 0.6, [0.5, 2.0, 1.0], "gaussian", 1),
    ("ZOGDM", 0.3, None, "sphere", 1),
    ("ZOGD", 0.0, None, "multi_query", 5),
])
def test_one_step_matches_recursion(family, beta, sigma, variant, n):
    lam = [2.0, 0.7, 0.1]
    op = assemble_operator(family, lam, 0.2, beta, sigma, variant, n)
    s = RngStream(3)
    for _ in range(5):
        st_ = random_cone_state(3, s)
        want = recursion_oracle(family, lam, 0.2, beta, sigma, variant, n, state_to_blocks(st_))
        assert np.max(np.abs(op.apply(st_) - blocks_to_state(want))) <= 1e-12


def test_d1_beta0_local_block():
    x = 0.3
    op = assemble_operator("ZOGD", [1.0], x)
    k = np.array([[1 - 2 * x + 2 * x * x, 0, 0], [x - 2 * x * x, 0, 0], [2 * x * x, 0, 0]])
    # plus the coupling x^2 in the Q pattern of the w11 column
    k[:, 0] += x * x * np.array([1.0, -1.0, 1.0])
    assert np.allclose(op.matrix, k, atol=1e-15)


def test_beta_zero_momentum_columns_vanish():
    op = assemble_operator("ZOGD", [1.0, 0.4], 0.3)
    assert np.all(op.matrix[:, 1::3] == 0) and np.all(op.matrix[:, 2::3] == 0)


def test_multi_query_limit_is_fo():
    lam = [1.0, 0.5, 0.2]
    op = assemble_operator("ZOGDM", lam, 0.4, 0.5, variant="multi_query", queries=10**6)
    assert np.max(np.abs(op.matrix - assemble_fo_operator(lam, 0.4, 0.5))) <= 1e-5


@given(st.integers(0, 2**32 - 1), st.sampled_from(["ZOGD", "ZOGDM", "FrozenZOAdam"]))
def test_cone_preserved(seed, family):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 6))
    lam = r.uniform(0.1, 5, d)
    beta = 0.0 if family == "ZOGD" else float(r.uniform(0, 0.95))
    sigma = r.uniform(0.2, 3, d) if family == "FrozenZOAdam" else None
    op = assemble_operator(family, lam, float(r.uniform(0.01, 1.0)), beta, sigma)
    s = RngStream(seed)
    for _ in range(10):
        out = op.apply(random_cone_state(d, s))
        assert min_block_eigenvalue(out) >= -1e-10 * max(1.0, np.max(np.abs(out)))


def test_rho_examples():
    assert abs(spectral_radius(assemble_operator("ZOGD", [1.0], 2 / 3)) - 1) <= 1e-6
    lam = [1.0, 0.6, 0.2]
    star = solve_ms_critical_stepsize(StabilityQuery(lam, "ZOGD")).eta_ms_star
    assert spectral_radius(assemble_operator("ZOGD", lam, 0.5 * star)) < 1
    assert spectral_radius(assemble_operator("ZOGD", lam, 1.5 * star)) > 1


@given(st.integers(0, 2**32 - 1))
def test_rho_lower_bound(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 6))
    lam = r.uniform(0.1, 5, d)
    eta = float(r.uniform(0.01, 0.5)) / lam.max()
    op = assemble_operator("ZOGD", lam, eta)
    assert spectral_radius(op) >= eta**2 * np.sum(lam**2) * (1 - 1e-9)


def test_iterate_step_one_by_hand():
    op = assemble_operator("ZOGD", [1.0], 0.5)
    tr = iterate_covariance(op, initial_state([1.0]), 1)
    # x1 = (1 - eta u^2) x0, eta m1 = eta u^2 x0 with E u^2 = 1, E u^4 = 3
    assert np.allclose(tr.states[1][0], [0.75, 0.5 - 0.75, 0.75], atol=1e-15)


def test_iterate_rates():
    op = assemble_operator("ZOGD", [1.0], 0.75)
    tr = iterate_covariance(op, initial_state([1.0]), 200)
    slope = np.exp(np.polyfit(np.arange(201), np.log(tr.totals), 1)[0])
    rho = spectral_radius(op)
    assert abs(slope - rho) <= 1e-4 * rho
    op = assemble_operator("ZOGDM", [1.0, 0.3], 0.2, 0.5)
    tr = iterate_covariance(op, initial_state([1.0, 1.0]), 400)
    assert tr.totals[-1] < 1e-6 * tr.totals[0]
    assert abs(tr.rate - spectral_radius(op)) <= 1e-3


def test_iterate_overflow_flag():
    op = assemble_operator("ZOGD", [1.0], 0.99)
    tr = iterate_covariance(op, initial_state([1.0]), 5000)
    assert tr.overflow


def test_mc_eta_zero_limit_and_central_floor():
    q = QuadraticModel.from_spectrum([1.0, 0.5])
    mc = mc_second_moment(make_config("ZOGD", eta=1e-300), EstimatorConfig(), q, [1.0, 2.0], 5, 1000,
                          RngStream(0))
    assert np.allclose(mc.mean_sq, 5.0) and np.all(mc.se_sq < 1e-12)
    mc = mc_second_moment(make_config("ZOGD", eta=0.3), EstimatorConfig(), q, [0.0, 0.0], 5, 1000,
                          RngStream(0))
    assert np.all(mc.mean_sq == 0.0)


def test_mc_matches_operator_small():
    lam = [1.0, 0.5]
    q = QuadraticModel.from_spectrum(lam)
    x0 = np.array([1.0, 1.0])
    op = assemble_operator("ZOGDM", lam, 0.2, 0.5)
    ref = iterate_covariance(op, initial_state(x0), 15).totals
    mc = mc_second_moment(make_config("ZOGDM", eta=0.2, beta=0.5), EstimatorConfig(), q, x0, 15, 20000,
                          RngStream(1))
    assert np.all(np.abs(mc.mean_sq[1:] - ref[1:]) <= 4 * mc.se_sq[1:])


def test_sphere_check():
    rep = sphere_operator_check([1.0], 0.5)
    assert rep.factor == pytest.approx(1 / 3) and rep.max_entry_error <= 1e-12
    star = solve_ms_critical_stepsize(StabilityQuery([1.0, 1.0], "ZOGD")).eta_ms_star
    rep = sphere_operator_check([1.0, 1.0], star)
    assert rep.cone_ok and abs(rep.rho_gauss - 1) <= 1e-6 and rep.rho_sphere < 1


def test_sphere_mc_matches_operator():
    lam = [1.0, 0.5, 0.2]
    q = QuadraticModel.from_spectrum(lam)
    x0 = np.ones(3)
    op = assemble_operator("ZOGD", lam, 0.4, variant="sphere")
    ref = iterate_covariance(op, initial_state(x0), 10).totals
    mc = mc_second_moment(make_config("ZOGD", eta=0.4), EstimatorConfig(CENTRAL_SPHERE), q, x0, 10, 20000,
                          RngStream(2))
    assert np.all(np.abs(mc.mean_sq[1:] - ref[1:]) <= 4 * mc.se_sq[1:])


def test_forward_source_closed_form_vs_mc():
    for lam in ([1.0], [1.0, 0.5], [2.0, 1.0, 0.3]):
        mean, se = forward_fd_source_mc(lam, 2 * 10**6, RngStream(len(lam)))
        assert np.all(np.abs(mean - forward_fd_source(lam)) <= 4 * se)


def test_forward_floor_scaling_and_d1_formula():
    a = forward_fd_stationary_covariance([1.0], 0.1, 1e-2)
    b = forward_fd_stationary_covariance([1.0], 0.1, 2e-2)
    assert np.allclose(b, 4 * a, rtol=1e-10)
    x = 0.1
    assert np.isclose(a[0, 0], (0.1 * 1e-2) ** 2 * 3.75 / (2 * x - 3 * x * x), rtol=1e-10)
    with pytest.raises(CovarianceError):
        forward_fd_stationary_covariance([1.0], 0.9, 1e-2)


def test_forward_floor_mc_small():
    eta, mu = 0.2, 0.1
    q = QuadraticModel.from_spectrum([1.0])
    mc = mc_second_moment(make_config("ZOGD", eta=eta), EstimatorConfig(FORWARD_GAUSSIAN, mu), q, [0.0],
                          300, 20000, RngStream(5), keep_samples=True)
    avg = mc.samples_sq[:, 100:].mean(axis=1)
    se = avg.std(ddof=1) / np.sqrt(avg.size)
    want = forward_fd_stationary_covariance([1.0], eta, mu)[0, 0]
    assert abs(avg.mean() - want) <= 4 * se


def test_adam_coordinates():
    sig, lt = adam_coordinates([4.0, 1.0], [2.0, 1.0])
    assert np.allclose(sig, [2, 1]) and np.allclose(lt, [2, 1])
    with pytest.raises(CovarianceError):
        adam_coordinates(np.array([[2.0, 1.0], [1.0, 2.0]]), [1.0, 4.0])


def test_operator_argument_checks():
    with pytest.raises(CovarianceError):
        assemble_operator("FrozenZOAdam", [1.0], 0.1, 0.5)
    with pytest.raises(CovarianceError):
        assemble_operator("ZOGD", [1.0], 0.1, 0.5)
    with pytest.raises(CovarianceError):
        assemble_operator("ZOGD", [0.0], 0.1)
