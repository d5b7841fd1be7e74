"""Goh-transformed second variation: assembly and coercivity tests.

Two independent deciders are provided: a Galerkin eigenvalue bound on the
constrained quadratic form, and the Hamiltonian conjugate-point test for
the rho-extended free-initial-condition problem. A finite-difference
equivalence check ties the linear-quadratic Hamiltonian to the second
derivative of the gap function along the reference flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, expm

from .algebra import commutator, pairing
from .chart import GroupChart
from .extremal import ExtremalPoint, ExtremalTrajectory
from .geometry import GroupGeometry
from .systems import MatrixGroupSystem

GAUSS_NODES = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GAUSS_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def chart_field_jacobian(chart: GroupChart, algebra_elem: np.ndarray) -> np.ndarray:
    """Exact Jacobian at the origin of the chart components of g A.

    With W = sum_j c_j(x) v_j(x) and dv_j/dx_k = [v_j, v_k], the partials
    solve 0 = sum_j (dc_j/dx_k) B_j + sum_{j > k} c_j [B_j, B_k].
    """
    c0 = chart.field_components(algebra_elem, np.zeros(chart.n))
    jac = np.zeros((chart.n, chart.n))
    for k in range(chart.n):
        acc = np.zeros_like(algebra_elem)
        for j in range(k + 1, chart.n):
            if c0[j] != 0.0:
                acc = acc + c0[j] * commutator(chart.frame_algebra[j],
                                               chart.frame_algebra[k])
        jac[:, k] = -chart.field_components(acc, np.zeros(chart.n))
    return jac


def chart_field_jacobian_fd(chart: GroupChart, algebra_elem: np.ndarray,
                            h: float = 1e-5) -> np.ndarray:
    """Central-difference oracle for chart_field_jacobian."""
    jac = np.zeros((chart.n, chart.n))
    for k in range(chart.n):
        e = np.zeros(chart.n)
        e[k] = h
        cp = chart.field_components(algebra_elem, e)
        cm = chart.field_components(algebra_elem, -e)
        jac[:, k] = (cp - cm) / (2 * h)
    return jac


@dataclass
class PullbackData:
    """Pull-back fields g_t^i and their time derivatives along the flow."""

    grid: np.ndarray
    g_alg: np.ndarray          # (T, m, d, d) Ad_M A_i
    gdot_alg: np.ndarray       # (T, m, d, d) Ad_M [A_u, A_i]
    g_chart: np.ndarray        # (T, n, m)
    gdot_chart: np.ndarray     # (T, n, m)
    gdot_jac: np.ndarray       # (T, m, n, n) chart Jacobians of gdot fields


def pullback_fields(system: MatrixGroupSystem, trajectory: ExtremalTrajectory,
                    chart: GroupChart) -> PullbackData:
    """Exact pull-back data on the trajectory grid."""
    grid = trajectory.grid
    m, d, n = system.m, system.d, chart.n
    origin = np.zeros(n)
    g_alg = np.zeros((grid.size, m, d, d))
    gdot_alg = np.zeros((grid.size, m, d, d))
    g_chart = np.zeros((grid.size, n, m))
    gdot_chart = np.zeros((grid.size, n, m))
    gdot_jac = np.zeros((grid.size, m, n, n))
    for k, t in enumerate(grid):
        mk = trajectory.flow_cache[k]
        mk_inv = np.linalg.inv(mk)
        u = trajectory.controls[k]
        a_u = system.drift + sum(u[i] * system.controlled[i] for i in range(m))
        for i in range(m):
            ad_ai = mk @ system.controlled[i] @ mk_inv
            ad_br = mk @ commutator(a_u, system.controlled[i]) @ mk_inv
            g_alg[k, i] = ad_ai
            gdot_alg[k, i] = ad_br
            g_chart[k, :, i] = chart.field_components(ad_ai, origin)
            gdot_chart[k, :, i] = chart.field_components(ad_br, origin)
            gdot_jac[k, i] = chart_field_jacobian(chart, ad_br)
    return PullbackData(grid, g_alg, gdot_alg, g_chart, gdot_chart, gdot_jac)


@dataclass
class SecondVariationProblem:
    """LQ data (Z, C, a, E) of the extended second variation."""

    horizon: float
    n: int
    m: int
    R: int
    z_fn: object            # t -> (n, m)
    c_fn: object            # t -> (m, m)
    a_fn: object            # t -> (m, n)
    e_mat: np.ndarray       # (n, R)
    p_hat: np.ndarray
    rho: float = 0.0


def assemble_lq(system: MatrixGroupSystem, extremal: ExtremalTrajectory,
                chart: GroupChart, rho: float = 0.0) -> SecondVariationProblem:
    """Assemble the LQ second-variation data in the adapted chart.

    For the zero reference control all time dependence is evaluated through
    exact exponentials; otherwise grid data is interpolated cubically.
    """
    n, m = chart.n, system.m
    p_hat = chart.p_hat
    e_mat = np.zeros((n, chart.R))
    origin = np.zeros(n)
    for j in range(chart.R):
        e_mat[:, j] = chart.field_components(chart.frame_algebra[j], origin)
    if np.linalg.cond(e_mat[: chart.R, :]) > 1e8:
        raise RuntimeError("controlled-algebra basis degenerate at basepoint")

    p0 = extremal.points[0].p
    words = [[(i + 1, (j + 1, 0)) for j in range(m)] for i in range(m)]
    bracket_mats = [[system.bracket_matrix(w) for w in row] for row in words]

    if getattr(extremal.u_hat, "is_zero", False):
        a0 = system.drift
        cache: dict = {}

        def lq_data(t):
            # the three coefficient blocks share the same transport, and the
            # deciders revisit the same time points; memoize per t
            if t not in cache:
                mk = expm(t * a0)
                mk_inv = expm(-t * a0)
                z = np.zeros((n, m))
                c = np.zeros((m, m))
                a = np.zeros((m, n))
                for i in range(m):
                    ad_br = mk @ commutator(a0, system.controlled[i]) @ mk_inv
                    z[:, i] = chart.field_components(ad_br, origin)
                    a[i] = -(p_hat @ chart_field_jacobian(chart, ad_br))
                    for j in range(m):
                        c[i, j] = -pairing(
                            p0, mk @ bracket_mats[i][j] @ mk_inv)
                cache[t] = (z, c, a)
            return cache[t]

        def z_fn(t):
            return lq_data(t)[0]

        def c_fn(t):
            return lq_data(t)[1]

        def a_fn(t):
            return lq_data(t)[2]
    else:
        from scipy.interpolate import CubicSpline

        data = pullback_fields(system, extremal, chart)
        grid = extremal.grid
        c_grid = np.zeros((grid.size, m, m))
        a_grid = np.zeros((grid.size, m, n))
        for k in range(grid.size):
            pk = extremal.points[k].p
            for i in range(m):
                for j in range(m):
                    c_grid[k, i, j] = -pairing(pk, bracket_mats[i][j])
                a_grid[k, i] = -(p_hat @ data.gdot_jac[k, i])
        z_sp = CubicSpline(grid, data.gdot_chart, axis=0)
        c_sp = CubicSpline(grid, c_grid, axis=0)
        a_sp = CubicSpline(grid, a_grid, axis=0)
        z_fn, c_fn, a_fn = z_sp, c_sp, a_sp

    return SecondVariationProblem(
        horizon=extremal.horizon, n=n, m=m, R=chart.R,
        z_fn=z_fn, c_fn=c_fn, a_fn=a_fn, e_mat=e_mat, p_hat=p_hat,
        rho=float(rho))


def goh_transform(grid, delta_u):
    """Goh variables: w_i(t) = int_t^T delta_u_i, backward trapezoid.

    Returns (epsilon = w(0), w samples on the grid).
    """
    grid = np.asarray(grid, dtype=float)
    delta_u = np.atleast_2d(np.asarray(delta_u, dtype=float))
    if delta_u.shape[0] != grid.size:
        delta_u = delta_u.T
    w = np.zeros_like(delta_u)
    for k in range(grid.size - 2, -1, -1):
        h = grid[k + 1] - grid[k]
        w[k] = w[k + 1] + 0.5 * h * (delta_u[k] + delta_u[k + 1])
    return w[0].copy(), w


@dataclass
class GalerkinAssembly:
    """Dense quadratic form and constraint data for one mesh level."""

    quad: np.ndarray
    gram: np.ndarray
    constraint: np.ndarray
    kernel: np.ndarray
    constraint_rank: int
    n_init: int
    k_pieces: int

    def value(self, vars_vec: np.ndarray) -> float:
        v = np.asarray(vars_vec, dtype=float)
        return float(v @ self.quad @ v)


def _gauss_points(a: float, b: float):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * GAUSS_NODES, half * GAUSS_WEIGHTS


def galerkin_assemble(problem: SecondVariationProblem, k_pieces: int,
                      free_initial: bool = False,
                      final_subspace: np.ndarray | None = None) -> GalerkinAssembly:
    """Assemble the quadratic form on (initial variation, piecewise-const w)."""
    n, m, r = problem.n, problem.m, problem.R
    t_hat = problem.horizon
    n_init = n if free_initial else r
    dim = n_init + m * k_pieces
    edges = np.linspace(0.0, t_hat, k_pieces + 1)
    h = edges[1] - edges[0]

    e_full = np.eye(n) if free_initial else problem.e_mat

    # per-piece integrals of Z
    g_int = np.zeros((k_pieces, n, m))
    for k in range(k_pieces):
        tg, wg = _gauss_points(edges[k], edges[k + 1])
        for t, wgt in zip(tg, wg):
            g_int[k] += wgt * problem.z_fn(t)

    def w_slice(k):
        return slice(n_init + m * k, n_init + m * (k + 1))

    quad_raw = np.zeros((dim, dim))
    zeta_prefix = np.zeros((n, dim))
    zeta_prefix[:, :n_init] = e_full
    for k in range(k_pieces):
        tg, wg = _gauss_points(edges[k], edges[k + 1])
        for t, wgt in zip(tg, wg):
            c_t = problem.c_fn(t)
            a_t = problem.a_fn(t)
            # zeta at the Gauss node: prefix plus the inner integral of Z
            zeta_map = zeta_prefix.copy()
            zin = np.zeros((n, m))
            tg2, wg2 = _gauss_points(edges[k], t)
            for t2, wgt2 in zip(tg2, wg2):
                zin += wgt2 * problem.z_fn(t2)
            zeta_map[:, w_slice(k)] += zin
            block = np.zeros((m, dim))
            block[:, w_slice(k)] = 0.5 * c_t
            block += a_t @ zeta_map
            quad_raw[w_slice(k), :] += wgt * block
        zeta_prefix[:, w_slice(k)] += g_int[k]
    quad = 0.5 * (quad_raw + quad_raw.T)
    if free_initial and problem.rho > 0.0:
        for i in range(r, n):
            quad[i, i] += 0.5 * problem.rho

    gram = np.zeros((dim, dim))
    gram[:n_init, :n_init] = np.eye(n_init)
    for k in range(k_pieces):
        gram[w_slice(k), w_slice(k)] = h * np.eye(m)

    final_map = zeta_prefix  # zeta(T) as a linear map of the variables
    if final_subspace is not None and final_subspace.size:
        u, s, _ = np.linalg.svd(final_subspace)
        rank = int(np.sum(s > 1e-10 * s[0]))
        comp = u[:, rank:]
        constraint = comp.T @ final_map
    else:
        constraint = final_map
    _, s_c, vt_c = np.linalg.svd(constraint)
    c_rank = int(np.sum(s_c > 1e-10 * s_c[0])) if s_c.size else 0
    kernel = vt_c[c_rank:].T
    return GalerkinAssembly(quad, gram, constraint, kernel, c_rank,
                            n_init, k_pieces)


@dataclass
class CoercivityReport:
    method: str
    verdict: str
    margin: float
    rho: float
    refinements: list = field(default_factory=list)
    det_trace: np.ndarray = None
    det_grid: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    @property
    def coercive(self) -> bool:
        return self.verdict == "coercive"

    def as_dict(self) -> dict:
        out = {
            "method": self.method,
            "verdict": self.verdict,
            "margin": float(self.margin),
            "rho": float(self.rho),
            "refinements": [
                {k: (float(v) if isinstance(v, (int, float, np.floating))
                     else v) for k, v in r.items()}
                for r in self.refinements
            ],
        }
        if self.det_trace is not None:
            out["det_trace"] = [float(v) for v in self.det_trace]
        out.update(self.metadata)
        return out


def coercivity_floor(problem: SecondVariationProblem) -> float:
    """Margins below this scale-aware floor never support a verdict."""
    scale = max(np.linalg.norm(problem.c_fn(t))
                for t in np.linspace(0.0, problem.horizon, 17))
    return 1e-4 * scale


def galerkin_coercivity(problem: SecondVariationProblem, k_pieces: int,
                        free_initial: bool = False,
                        final_subspace: np.ndarray | None = None) -> CoercivityReport:
    """Galerkin eigenvalue decision on the constrained quadratic form."""
    if k_pieces < 4:
        raise ValueError("need at least 4 Galerkin pieces")
    floor = coercivity_floor(problem)
    refinements = []
    margins = []
    for level in (k_pieces, 2 * k_pieces, 4 * k_pieces):
        asm = galerkin_assemble(problem, level, free_initial, final_subspace)
        v = asm.kernel
        if v.shape[1] == 0:
            margins.append(np.inf)
            refinements.append({"K": level, "margin": np.inf,
                                "constraint_rank": asm.constraint_rank})
            continue
        q_r = v.T @ asm.quad @ v
        g_r = v.T @ asm.gram @ v
        eigs = eigh(q_r, g_r, eigvals_only=True)
        margins.append(float(eigs[0]))
        refinements.append({"K": level, "margin": float(eigs[0]),
                            "constraint_rank": asm.constraint_rank})
    ok = all(mg >= floor for mg in margins)
    if ok and np.isfinite(margins[0]):
        ok = margins[-1] >= 0.5 * margins[0]
    return CoercivityReport(
        method="galerkin",
        verdict="coercive" if ok else "not coercive",
        margin=float(margins[-1]), rho=problem.rho, refinements=refinements,
        metadata={"floor": float(floor), "free_initial": bool(free_initial)})


def conjugate_point_trace(problem: SecondVariationProblem, rho: float,
                          n_steps: int = 200):
    """Det of the base projection of the transported L'' subspace."""
    n, m, r = problem.n, problem.m, problem.R
    grid = np.linspace(0.0, problem.horizon, n_steps + 1)
    x = np.eye(n)
    omega = np.zeros((n, n))
    for j in range(r, n):
        omega[j, j] = -rho

    def rhs(t, om, xx):
        z_t = problem.z_fn(t)
        a_t = problem.a_fn(t)
        l_inv = np.linalg.inv(-problem.c_fn(t))
        b = l_inv @ (z_t.T @ om + a_t @ xx)
        return -a_t.T @ b, z_t @ b

    dets = np.zeros(grid.size)
    dets[0] = np.linalg.det(x)
    for k in range(n_steps):
        h = grid[k + 1] - grid[k]
        t = grid[k]
        do1, dx1 = rhs(t, omega, x)
        do2, dx2 = rhs(t + 0.5 * h, omega + 0.5 * h * do1, x + 0.5 * h * dx1)
        do3, dx3 = rhs(t + 0.5 * h, omega + 0.5 * h * do2, x + 0.5 * h * dx2)
        do4, dx4 = rhs(t + h, omega + h * do3, x + h * dx3)
        omega = omega + (h / 6.0) * (do1 + 2 * do2 + 2 * do3 + do4)
        x = x + (h / 6.0) * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
        dets[k + 1] = np.linalg.det(x)
    return grid, dets


def conjugate_point_test(problem: SecondVariationProblem,
                         rho_grid=None, n_steps: int = 200,
                         det_floor: float = 0.1) -> CoercivityReport:
    """Conjugate-point decision over a logarithmic rho sweep."""
    if rho_grid is None:
        rho_grid = [2.0 ** k for k in range(-6, 7)]
    sweep = []
    best = None
    for rho in rho_grid:
        grid, dets = conjugate_point_trace(problem, rho, n_steps)
        ratio = float(np.min(np.abs(dets)) / abs(dets[0]))
        sweep.append({"rho": float(rho), "min_det_ratio": ratio})
        if ratio >= det_floor and best is None:
            best = (rho, grid, dets, ratio)
    if best is not None:
        rho, grid, dets, ratio = best
        return CoercivityReport(
            method="conjugate_point", verdict="coercive", margin=ratio,
            rho=float(rho), refinements=sweep, det_trace=dets, det_grid=grid,
            metadata={"det_floor": det_floor})
    ratios = [s["min_det_ratio"] for s in sweep]
    k_best = int(np.argmax(ratios))
    grid, dets = conjugate_point_trace(problem, rho_grid[k_best], n_steps)
    return CoercivityReport(
        method="conjugate_point", verdict="not coercive",
        margin=float(ratios[k_best]), rho=float(rho_grid[k_best]),
        refinements=sweep, det_trace=dets, det_grid=grid,
        metadata={"det_floor": det_floor})


def lq_hamiltonian(problem: SecondVariationProblem, t: float,
                   omega: np.ndarray, delta_x: np.ndarray) -> float:
    """H''_t(omega, delta_x) = 1/2 L^-1 [Z^T omega + a delta_x]^2."""
    b = problem.z_fn(t).T @ omega + problem.a_fn(t) @ delta_x
    l_inv = np.linalg.inv(-problem.c_fn(t))
    return 0.5 * float(b @ l_inv @ b)


def iota_equivalence_check(problem: SecondVariationProblem,
                           system: MatrixGroupSystem, chart: GroupChart,
                           extremal: ExtremalTrajectory, n_samples: int = 5,
                           h: float = 1e-4, seed: int = 0) -> dict:
    """H'' against -1/2 D^2(chi o F_t) composed with iota, by second
    differences through the reference flow."""
    geom = GroupGeometry(system)
    rng = np.random.default_rng(seed)
    grid = extremal.grid
    rows = []
    for _ in range(n_samples):
        idx = int(rng.integers(1, grid.size))
        t = float(grid[idx])
        omega = rng.standard_normal(problem.n)
        delta_x = rng.standard_normal(problem.n)
        h_val = lq_hamiltonian(problem, t, omega, delta_x)
        m_t = extremal.flow_cache[idx]
        m_inv = np.linalg.inv(m_t)

        def g_second(step):
            vals = []
            for s in (step, -step):
                x = s * delta_x
                y = chart.p_hat - s * omega
                p = chart.covector_from_chart(x, y)
                g = chart.forward(x)
                flowed = ExtremalPoint(
                    q=g @ m_t, p=m_t.T @ p @ m_inv.T, t=t)
                vals.append(geom.chi(flowed))
            base = geom.chi(ExtremalPoint(
                q=m_t, p=extremal.points[idx].p, t=t))
            return 0.5 * (vals[0] - 2.0 * base + vals[1]) / step ** 2

        scale = max(abs(h_val), 1.0)
        err_h = abs(-g_second(h) - h_val) / scale
        # order estimated above the roundoff floor of the second differences
        err_8h = abs(-g_second(8.0 * h) - h_val) / scale
        err_4h = abs(-g_second(4.0 * h) - h_val) / scale
        order = float(np.log2(err_8h / err_4h)) if err_4h > 0 else np.inf
        rows.append({"t": t, "h_lq": h_val, "rel_error": err_h,
                     "order": order})
    return {
        "samples": rows,
        "max_rel_error": max(r["rel_error"] for r in rows),
        "min_order": min(r["order"] for r in rows),
    }


def det_trace_to_csv(report: CoercivityReport, path) -> None:
    lines = ["t,det,abs_det_ratio"]
    d0 = abs(report.det_trace[0])
    for t, v in zip(report.det_grid, report.det_trace):
        lines.append(f"{t:.17g},{v:.17g},{abs(v) / d0:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
