"""Tests for the Goh-transformed second variation and its deciders."""

import numpy as np
import pytest

from singcert.chart import dubins_adapted_chart
from singcert.controls import ZeroControl
from singcert.extremal import adjoint_trajectory, dubins_initial_covector
from singcert.secondvar import (
    SecondVariationProblem,
    assemble_lq,
    chart_field_jacobian,
    chart_field_jacobian_fd,
    conjugate_point_test,
    conjugate_point_trace,
    det_trace_to_csv,
    galerkin_assemble,
    galerkin_coercivity,
    goh_transform,
    iota_equivalence_check,
    lq_hamiltonian,
    pullback_fields,
)
from singcert.systems import build_dubins_system


@pytest.fixture(scope="module")
def setup():
    sys_ = build_dubins_system("euclidean", 3)
    chart = dubins_adapted_chart(sys_)
    p0 = dubins_initial_covector(sys_)
    traj = adjoint_trajectory(sys_, p0, ZeroControl(sys_.m),
                              np.linspace(0.0, 1.0, 101))
    return sys_, chart, traj


@pytest.fixture(scope="module")
def lq(setup):
    sys_, chart, traj = setup
    return assemble_lq(sys_, traj, chart)


def synthetic_lq(a1: float, c_val: float = 1.0) -> SecondVariationProblem:
    """Minimal LQ family: one control, two states, flat direction at a1 = 1.

    The initial variation enters along the same direction the control
    integrates, so coercivity on the constrained space fails for a1 > 1
    while the fixed-initial-condition form stays positive.
    """
    n, m, r = 2, 1, 1
    z = np.array([[1.0], [0.0]])
    a = np.array([[a1, 0.0]])
    c = np.array([[c_val]])
    e_mat = np.array([[1.0], [0.0]])
    return SecondVariationProblem(
        horizon=1.0, n=n, m=m, R=r,
        z_fn=lambda t: z, c_fn=lambda t: c, a_fn=lambda t: a,
        e_mat=e_mat, p_hat=np.array([0.0, 1.0]))


def test_chart_jacobian_matches_fd(setup):
    sys_, chart, traj = setup
    rng = np.random.default_rng(31)
    w = sum(rng.standard_normal() * b for b in chart.frame_algebra)
    exact = chart_field_jacobian(chart, w)
    fd = chart_field_jacobian_fd(chart, w)
    assert np.max(np.abs(exact - fd)) <= 1e-9


def test_pullback_gdot_constant_euclidean(setup):
    """Flat Dubins: the pulled-back gdot fields are the constant f_{0i}."""
    sys_, chart, traj = setup
    data = pullback_fields(sys_, traj, chart)
    for k in range(0, traj.grid.size, 20):
        for i in range(sys_.m):
            expect = np.zeros(chart.n)
            expect[chart.R + i] = 1.0
            assert np.max(np.abs(data.gdot_chart[k, :, i] - expect)) <= 1e-12


def test_pullback_gdot_is_time_derivative(setup):
    sys_, chart, traj = setup
    data = pullback_fields(sys_, traj, chart)
    dt = traj.grid[1] - traj.grid[0]
    for k in (10, 50, 90):
        fd = (data.g_alg[k + 1] - data.g_alg[k - 1]) / (2 * dt)
        assert np.max(np.abs(fd - data.gdot_alg[k])) <= 1e-4


def test_goh_transform_linear_control():
    grid = np.linspace(0.0, 1.0, 401)
    du = np.stack([2 * grid, np.cos(grid)], axis=1)
    eps, w = goh_transform(grid, du)
    # w_i(t) = int_t^1 du_i: 1 - t^2 and sin(1) - sin(t)
    assert eps[0] == pytest.approx(1.0, abs=1e-5)
    assert eps[1] == pytest.approx(np.sin(1.0), abs=1e-5)
    k = 100
    assert w[k, 0] == pytest.approx(1.0 - grid[k] ** 2, abs=1e-5)
    assert w[k, 1] == pytest.approx(np.sin(1.0) - np.sin(grid[k]), abs=1e-5)


def test_lq_data_dubins(lq, setup):
    sys_, chart, _ = setup
    for t in (0.0, 0.4, 1.0):
        assert np.max(np.abs(lq.c_fn(t) - np.eye(sys_.m))) <= 1e-12
        z = np.zeros((chart.n, sys_.m))
        for i in range(sys_.m):
            z[chart.R + i, i] = 1.0
        assert np.max(np.abs(lq.z_fn(t) - z)) <= 1e-12
        a = np.zeros((sys_.m, chart.n))
        for i in range(sys_.m):
            a[i, i] = -1.0
        assert np.max(np.abs(lq.a_fn(t) - a)) <= 1e-12


def test_j_equals_half_norm_on_constrained_space(lq):
    """J'' = 0.5 ||w||^2 for epsilon = 0 and mean-zero piecewise w."""
    k_pieces = 32
    asm = galerkin_assemble(lq, k_pieces)
    rng = np.random.default_rng(33)
    h = lq.horizon / k_pieces
    for _ in range(20):
        w = rng.standard_normal((k_pieces, lq.m))
        w -= w.mean(axis=0)
        v = np.concatenate([np.zeros(lq.R), w.ravel()])
        expect = 0.5 * h * np.sum(w ** 2)
        assert asm.value(v) == pytest.approx(expect, abs=1e-10)


def test_galerkin_dubins_margin_half(lq):
    report = galerkin_coercivity(lq, 16)
    assert report.coercive
    for r in report.refinements:
        assert 0.45 <= r["margin"] <= 0.5 + 1e-12
    # the drift row of the endpoint constraint is unreachable, so the
    # constraint matrix is rank deficient; reported, not fatal
    assert report.refinements[0]["constraint_rank"] < lq.n


def test_galerkin_margins_monotone_in_k(lq):
    asm_margins = []
    for k in (8, 16, 32):
        rep = galerkin_coercivity(lq, k)
        asm_margins.append(rep.refinements[0]["margin"])
    assert asm_margins[0] >= asm_margins[1] - 1e-12
    assert asm_margins[1] >= asm_margins[2] - 1e-12


def test_conjugate_dubins_coercive(lq):
    report = conjugate_point_test(lq)
    assert report.coercive
    assert report.margin >= 0.1
    # det trace is (1 + rho t)^m in this chart: monotone increasing
    assert np.all(np.diff(report.det_trace) >= -1e-12)


def test_conjugate_trace_closed_form(lq):
    rho = 0.75
    grid, dets = conjugate_point_trace(lq, rho, n_steps=100)
    expect = (1.0 + rho * grid) ** lq.m
    assert np.max(np.abs(dets - expect)) <= 1e-8


def test_methods_agree_on_dubins(lq):
    gal = galerkin_coercivity(lq, 16)
    conj = conjugate_point_test(lq)
    assert gal.verdict == conj.verdict == "coercive"


def test_dubins_nf_extended_zero_direction(setup, lq):
    """Allowing the endpoint to move along [f_i, f_j] admits a variation
    with J'' = 0, so the extended problem is not coercive."""
    sys_, chart, _ = setup
    final = np.zeros((chart.n, chart.R - sys_.m))
    for idx, j in enumerate(range(sys_.m, chart.R)):
        final[j, idx] = 1.0
    asm = galerkin_assemble(lq, 16, final_subspace=final)
    v = np.zeros(asm.quad.shape[0])
    v[sys_.m] = 1.0    # epsilon along a depth-2 bracket direction, w = 0
    assert np.max(np.abs(asm.constraint @ v)) <= 1e-12
    assert abs(asm.value(v)) <= 1e-10
    report = galerkin_coercivity(lq, 16, final_subspace=final)
    assert not report.coercive


def test_synthetic_coercive_case():
    prob = synthetic_lq(0.5)
    gal = galerkin_coercivity(prob, 16)
    conj = conjugate_point_test(prob)
    assert gal.coercive and conj.coercive
    # analytic margin: min over mixed directions of (1 - a1)/4
    assert gal.margin == pytest.approx((1.0 - 0.5) / 4.0, abs=1e-6)


def test_synthetic_non_coercive_case():
    prob = synthetic_lq(1.05)
    gal = galerkin_coercivity(prob, 16)
    conj = conjugate_point_test(prob)
    assert not gal.coercive
    assert gal.margin < 0.0
    assert not conj.coercive
    # the degeneracy is rho independent: det hits zero for every rho
    for entry in conj.refinements:
        assert entry["min_det_ratio"] <= 0.05


def test_synthetic_marginal_case_det_touches_zero():
    prob = synthetic_lq(1.0)
    _, dets = conjugate_point_trace(prob, rho=0.5, n_steps=200)
    assert dets[-1] == pytest.approx(0.0, abs=1e-10)


def test_sign_flipped_legendre_gives_negative_margin():
    prob = synthetic_lq(0.0, c_val=-1.0)
    report = galerkin_coercivity(prob, 16)
    assert not report.coercive
    assert report.margin < 0.0


def test_lq_hamiltonian_dubins_closed_form(lq):
    rng = np.random.default_rng(35)
    omega = rng.standard_normal(lq.n)
    dx = rng.standard_normal(lq.n)
    b = np.array([omega[lq.R + i] - dx[i] for i in range(lq.m)])
    expect = -0.5 * float(b @ b)
    assert lq_hamiltonian(lq, 0.3, omega, dx) == pytest.approx(expect, abs=1e-12)


def test_iota_equivalence(setup, lq):
    sys_, chart, traj = setup
    report = iota_equivalence_check(lq, sys_, chart, traj, n_samples=5,
                                    h=1e-4, seed=0)
    assert report["max_rel_error"] <= 1e-3
    assert report["min_order"] >= 1.8


def test_det_trace_csv(tmp_path, lq):
    report = conjugate_point_test(lq, n_steps=50)
    path = tmp_path / "det.csv"
    det_trace_to_csv(report, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,det,abs_det_ratio"
    assert len(lines) == 52
