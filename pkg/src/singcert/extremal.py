"""Reference flows, adjoint transport, and the necessary-condition battery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .algebra import commutator, numerical_rank, pairing, span_contains
from .controls import ZeroControl
from .systems import MatrixGroupSystem


@dataclass(frozen=True)
class ExtremalPoint:
    """A point (q, p) of an extremal lift at time t.

    q is a group element; p a matrix covector acting by the trace pairing.
    """

    q: np.ndarray
    p: np.ndarray
    t: float
    u: np.ndarray = None


@dataclass
class ExtremalTrajectory:
    system: MatrixGroupSystem
    grid: np.ndarray
    points: list[ExtremalPoint]
    controls: np.ndarray
    flow_cache: list[np.ndarray]
    u_hat: object = None

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


@dataclass(frozen=True)
class LegendreForm:
    entries: np.ndarray
    hogc_residual: float
    includes_control_terms: bool

    @property
    def symmetry_residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.T)))


def _rk4_step(m: np.ndarray, rhs_at, t: float, h: float) -> np.ndarray:
    k1 = m @ rhs_at(t)
    k2 = (m + 0.5 * h * k1) @ rhs_at(t + 0.5 * h)
    k3 = (m + 0.5 * h * k2) @ rhs_at(t + 0.5 * h)
    k4 = (m + h * k3) @ rhs_at(t + h)
    return m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def reference_flow(system: MatrixGroupSystem, u_hat, grid) -> list[np.ndarray]:
    """Solve M' = M (A0 + sum u_i A_i), M(0) = I on the time grid.

    Uses the exact exponential for the zero control, otherwise a 4th-order
    one-step method with per-step re-projection onto the structure group.
    """
    grid = np.asarray(grid, dtype=float)
    a0 = system.drift
    if getattr(u_hat, "is_zero", False):
        return [expm(t * a0) for t in grid]

    def rhs_at(t):
        u = u_hat(t)
        return a0 + sum(u[i] * system.controlled[i] for i in range(system.m))

    out = [np.eye(system.d)]
    m = out[0]
    for k in range(grid.size - 1):
        h = grid[k + 1] - grid[k]
        if h <= 0:
            raise ValueError("grid must be strictly increasing")
        m = _rk4_step(m, rhs_at, grid[k], h)
        m = system.project_to_group(m)
        out.append(m)
    return out


def coadjoint_transport(p0: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Covector p(t) with <p(t), B> = <p0, M B M^-1> for every B."""
    m_inv = np.linalg.inv(m)
    return m.T @ p0 @ m_inv.T


def adjoint_trajectory(system: MatrixGroupSystem, p0: np.ndarray, u_hat, grid,
                       q0: np.ndarray | None = None,
                       flow_cache: list[np.ndarray] | None = None) -> ExtremalTrajectory:
    """Extremal lift along the reference flow by exact coadjoint transport."""
    grid = np.asarray(grid, dtype=float)
    if np.max(np.abs(p0)) == 0.0:
        raise ValueError("covector must be nonzero")
    if flow_cache is None:
        flow_cache = reference_flow(system, u_hat, grid)
    if q0 is None:
        q0 = np.eye(system.d)
    controls = np.array([u_hat(t) for t in grid])
    points = []
    for k, t in enumerate(grid):
        m = flow_cache[k]
        points.append(
            ExtremalPoint(q=q0 @ m, p=coadjoint_transport(p0, m), t=float(t),
                          u=controls[k])
        )
    return ExtremalTrajectory(system, grid, points, controls, flow_cache, u_hat)


def hamiltonian_bracket(system: MatrixGroupSystem, point: ExtremalPoint, word) -> float:
    """Value <p, B_word> of the iterated Poisson bracket at the point."""
    return pairing(point.p, system.bracket_matrix(word))


def hogc_residual(system: MatrixGroupSystem, point: ExtremalPoint) -> float:
    """Max pairing of p with the controlled Lie closure basis."""
    return max(abs(pairing(point.p, b)) for b in system.lie_closure_basis)


def legendre_form(system: MatrixGroupSystem, point: ExtremalPoint,
                  hogc_tol: float = 1e-9) -> LegendreForm:
    """The m x m form with entries F_{ij0}; adds control terms off HOGC.

    When the point violates HOGC the extra terms sum_k u_k F_{ijk} do not
    cancel and are included instead of silently dropped.
    """
    m = system.m
    res = hogc_residual(system, point)
    entries = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            entries[i, j] = hamiltonian_bracket(system, point, (i + 1, (j + 1, 0)))
    include_extra = res > hogc_tol
    if include_extra and point.u is not None:
        for i in range(m):
            for j in range(m):
                entries[i, j] += sum(
                    point.u[k - 1]
                    * hamiltonian_bracket(system, point, (i + 1, (j + 1, k)))
                    for k in range(1, m + 1)
                )
    return LegendreForm(entries, res, include_extra)


def singular_feedback(system: MatrixGroupSystem, point: ExtremalPoint,
                      cond_limit: float = 1e8) -> np.ndarray:
    """Control nu solving L nu = (F_{001}..F_{00m}) at the point."""
    lform = legendre_form(system, point).entries
    if np.linalg.cond(lform) > cond_limit:
        raise np.linalg.LinAlgError(
            "Legendre form is ill-conditioned; strengthened Legendre "
            "condition fails at this point"
        )
    rhs = np.array([
        hamiltonian_bracket(system, point, (0, (0, i + 1)))
        for i in range(system.m)
    ])
    return np.linalg.solve(lform, rhs)


@dataclass(frozen=True)
class Tolerances:
    equality: float = 1e-9
    rank: float = 1e-8
    sglc_min_margin: float = 1e-6


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    residual: float
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConditionReport:
    checks: tuple[ConditionCheck, ...]
    sglc_margin: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "sglc_margin": float(self.sglc_margin),
            "checks": {
                c.name: {
                    "passed": bool(c.passed),
                    "residual": float(c.residual),
                    **{k: v for k, v in c.detail.items()},
                }
                for c in self.checks
            },
        }


def condition_battery(trajectory: ExtremalTrajectory, boundary_data=None,
                      tol: Tolerances = Tolerances()) -> ConditionReport:
    """Scan the full necessary-condition battery along the trajectory.

    boundary_data, when given, is a pair of callables returning the
    left-trivialized tangent bases of the initial and final constraint
    manifolds at the endpoints.
    """
    system = trajectory.system
    pts = trajectory.points
    m = system.m

    f_i_res = 0.0
    normality_res = 0.0
    goh_res = 0.0
    hogc_res = 0.0
    f0i_res = 0.0
    feedback_res = 0.0
    eig_low = np.inf
    eig_high = -np.inf
    sym_res = 0.0
    for pt in pts:
        f_i_res = max(f_i_res, max(
            abs(pairing(pt.p, a)) for a in system.controlled))
        normality_res = max(normality_res, abs(pairing(pt.p, system.drift) - 1.0))
        goh_res = max(goh_res, max(
            abs(hamiltonian_bracket(system, pt, (i + 1, j + 1)))
            for i in range(m) for j in range(i + 1, m)) if m > 1 else 0.0)
        hogc_res = max(hogc_res, hogc_residual(system, pt))
        lform = legendre_form(system, pt)
        sym_res = max(sym_res, lform.symmetry_residual)
        eigs = np.linalg.eigvalsh(0.5 * (lform.entries + lform.entries.T))
        eig_low = min(eig_low, eigs[0])
        eig_high = max(eig_high, eigs[-1])
        f0i_vals = np.array([
            hamiltonian_bracket(system, pt, (0, i + 1)) for i in range(m)])
        f0i_res = max(f0i_res, float(np.max(np.abs(f0i_vals))))
        # residual of d/dt F_i = -(F_0i + sum u_j F_ji) under the feedback
        nu = singular_feedback(system, pt)
        resid = np.array([
            f0i_vals[i] + sum(
                nu[j] * hamiltonian_bracket(system, pt, (j + 1, i + 1))
                for j in range(m))
            for i in range(m)])
        feedback_res = max(feedback_res, float(np.max(np.abs(resid))))
    sglc_margin = -eig_high

    # regularity of the singular surface: [f0, f] stays in
    # Lie(f) + span{f_0i} for every f in Lie(f), and the drift brackets
    # f_0i are independent modulo Lie(f).
    closure = list(system.lie_closure_basis)
    f0i_elems = [commutator(system.drift, a) for a in system.controlled]
    reg_span = closure + f0i_elems
    reg_res = max(
        span_contains(reg_span, commutator(system.drift, b)) for b in closure)
    reg_rank = numerical_rank(np.array([b.ravel() for b in reg_span]), tol.rank)
    reg_ok = reg_res <= tol.equality and reg_rank == system.R + m

    checks = [
        ConditionCheck("pmp_switching", f_i_res <= tol.equality, f_i_res),
        ConditionCheck("normality", normality_res <= tol.equality, normality_res),
        ConditionCheck("goh", goh_res <= tol.equality, goh_res),
        ConditionCheck("hogc", hogc_res <= tol.equality, hogc_res),
        ConditionCheck(
            "sglc", sglc_margin >= tol.sglc_min_margin and sym_res <= 1e-12,
            float(-sglc_margin),
            {"margin": float(sglc_margin), "eig_low": float(eig_low),
             "eig_high": float(eig_high), "symmetry_residual": float(sym_res)}),
        ConditionCheck("regularity_of_S", reg_ok, reg_res,
                       {"rank": int(reg_rank), "expected_rank": system.R + m}),
        ConditionCheck("s_membership", f0i_res <= tol.equality, f0i_res),
        ConditionCheck("feedback_consistency", feedback_res <= tol.equality,
                       feedback_res),
    ]
    if boundary_data is not None:
        init_basis, final_basis = boundary_data
        res0 = max((abs(pairing(pts[0].p, a)) for a in init_basis(pts[0].q)),
                   default=0.0)
        resf = max((abs(pairing(pts[-1].p, a)) for a in final_basis(pts[-1].q)),
                   default=0.0)
        checks.append(ConditionCheck(
            "transversality", max(res0, resf) <= tol.equality,
            max(res0, resf),
            {"initial": float(res0), "final": float(resf)}))
    return ConditionReport(tuple(checks), float(sglc_margin))


def dubins_boundary_tangents(system: MatrixGroupSystem):
    """Left-trivialized tangent bases of the Dubins endpoint manifolds.

    Both manifolds are integral manifolds of the derived sub-algebra, so
    the basis is {[A_i, A_j] : i < j} at either endpoint.
    """
    derived = [
        commutator(system.controlled[i], system.controlled[j])
        for i in range(system.m) for j in range(i + 1, system.m)
    ]

    def basis(_q):
        return derived

    return basis, basis


def dubins_initial_covector(system: MatrixGroupSystem) -> np.ndarray:
    """The unique covector annihilating {A_i, [A_i,A_j], [A0,A_i]} with
    <p0, A0> = 1, represented in the span of the full algebra basis."""
    basis = system.full_algebra_basis()
    n = len(basis)
    annihilated = basis[:-1]  # everything except the drift
    rows = np.array([
        [pairing(a, b) for b in basis] for a in annihilated
    ])
    _, s, vt = np.linalg.svd(rows)
    null_dim = n - int(np.sum(s > 1e-10 * s[0]))
    if null_dim != 1:
        raise RuntimeError(
            f"initial covector space has dimension {null_dim}, expected 1")
    coeff = vt[-1]
    p0 = sum(c * b for c, b in zip(coeff, basis))
    scale = pairing(p0, system.drift)
    if abs(scale) < 1e-12:
        raise RuntimeError("covector candidate is orthogonal to the drift")
    return p0 / scale


def trajectory_to_csv(trajectory: ExtremalTrajectory, path) -> None:
    """Emit t, flattened q and p, controls, and condition residuals."""
    system = trajectory.system
    m = system.m
    d = system.d
    header = ["t"]
    header += [f"q_{i}{j}" for i in range(d) for j in range(d)]
    header += [f"p_{i}{j}" for i in range(d) for j in range(d)]
    header += [f"u_{i + 1}" for i in range(m)]
    header += [f"F_{i + 1}" for i in range(m)] + ["F0_minus_1", "hogc"]
    lines = [",".join(header)]
    for pt in trajectory.points:
        row = [f"{pt.t:.17g}"]
        row += [f"{v:.17g}" for v in pt.q.ravel()]
        row += [f"{v:.17g}" for v in pt.p.ravel()]
        row += [f"{v:.17g}" for v in np.atleast_1d(pt.u)]
        row += [f"{pairing(pt.p, a):.17g}" for a in system.controlled]
        row.append(f"{pairing(pt.p, system.drift) - 1.0:.17g}")
        row.append(f"{hogc_residual(system, pt):.17g}")
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
