"""Singular-surface geometry and the dominating-Hamiltonian certificate.

All Hamiltonians of left-invariant fields depend only on the left-trivialized
covector, so the surfaces, the projection and the gap function are computed
in covector space with exact group formulas; base points are carried along
for flows and chart work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.stats import qmc

from .algebra import commutator, pairing
from .chart import GroupChart, dubins_adapted_chart
from .extremal import ExtremalPoint, ExtremalTrajectory, legendre_form
from .systems import MatrixGroupSystem


class ProjectionError(RuntimeError):
    """Newton projection onto the singular surface failed."""


@dataclass(frozen=True)
class ProjectionResult:
    theta: np.ndarray
    point: ExtremalPoint
    newton_iterations: int
    residual: float


@dataclass
class CertificateReport:
    verdict: str
    rho: float
    min_singular_value: float
    singular_values: np.ndarray
    grid: np.ndarray
    lambda_radius: float
    n_samples: int
    max_sigma_residual: float
    margin: float

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rho": float(self.rho),
            "min_singular_value": float(self.min_singular_value),
            "margin": float(self.margin),
            "lambda_radius": float(self.lambda_radius),
            "n_samples": int(self.n_samples),
            "max_sigma_residual": float(self.max_sigma_residual),
        }


def _dexp(t_mat: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Directional derivative of expm at t_mat, by the block-matrix trick."""
    d = t_mat.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = t_mat
    block[d:, d:] = t_mat
    block[:d, d:] = direction
    return expm(block)[:d, d:]


class GroupGeometry:
    """Geometry operations for a matrix-group system."""

    def __init__(self, system: MatrixGroupSystem):
        self.system = system
        self.a0 = system.drift
        self.ai = list(system.controlled)
        self.m = system.m
        self.a0i = [commutator(self.a0, a) for a in self.ai]
        self.closure = list(system.lie_closure_basis)

    # -- surface residuals -------------------------------------------------

    def sigma_residual(self, p: np.ndarray) -> float:
        return max(abs(pairing(p, b)) for b in self.closure)

    def s_residual(self, p: np.ndarray) -> float:
        return max(abs(pairing(p, b)) for b in self.a0i)

    # -- psi and phi -------------------------------------------------------

    def psi(self, point: ExtremalPoint, t_vec: np.ndarray) -> ExtremalPoint:
        """Time-1 flow of sum t_i F_i: exact exponential transport."""
        t_vec = np.asarray(t_vec, dtype=float)
        t_mat = sum(t_vec[i] * self.ai[i] for i in range(self.m))
        e = expm(t_mat)
        e_inv = expm(-t_mat)
        q = point.q @ e
        p = e.T @ point.p @ e_inv.T
        return ExtremalPoint(q=q, p=p, t=point.t, u=point.u)

    def _phi_system(self, p: np.ndarray, theta: np.ndarray):
        """Residual Phi_i(theta) = <p, Ad_e A_0i> and its exact Jacobian."""
        t_mat = sum(theta[i] * self.ai[i] for i in range(self.m))
        e = expm(t_mat)
        e_inv = expm(-t_mat)
        ad_a0i = [e @ a @ e_inv for a in self.a0i]
        phi = np.array([pairing(p, v) for v in ad_a0i])
        jac = np.zeros((self.m, self.m))
        for j in range(self.m):
            de = _dexp(t_mat, self.ai[j])
            de_inv = -e_inv @ de @ e_inv
            for i in range(self.m):
                w = de @ self.a0i[i] @ e_inv + e @ self.a0i[i] @ de_inv
                jac[i, j] = pairing(p, w)
        return phi, jac, e, e_inv, ad_a0i

    def solve_theta(self, p: np.ndarray, theta0: np.ndarray | None = None,
                    tol: float = 1e-12, max_iter: int = 50):
        """Damped Newton for the multipliers theta with F_0i(psi) = 0."""
        theta = (np.zeros(self.m) if theta0 is None
                 else np.asarray(theta0, dtype=float).copy())
        phi, jac, *_ = self._phi_system(p, theta)
        res = float(np.max(np.abs(phi)))
        iters = 0
        while res > tol:
            if iters >= max_iter:
                raise ProjectionError(
                    f"projection Newton did not converge (residual {res:.3e})")
            try:
                step = np.linalg.solve(jac, -phi)
            except np.linalg.LinAlgError as exc:
                raise ProjectionError("projection Jacobian breakdown") from exc
            damp = 1.0
            for _ in range(25):
                cand = theta + damp * step
                phi_c, jac_c, *_ = self._phi_system(p, cand)
                res_c = float(np.max(np.abs(phi_c)))
                if res_c < res:
                    theta, phi, jac, res = cand, phi_c, jac_c, res_c
                    break
                damp *= 0.5
            else:
                raise ProjectionError("projection Newton stalled")
            iters += 1
        return theta, res, iters

    def phi_projection(self, point: ExtremalPoint,
                       theta0: np.ndarray | None = None) -> ProjectionResult:
        lf = legendre_form(self.system, point).entries
        if np.max(np.linalg.eigvalsh(0.5 * (lf + lf.T))) >= 0.0:
            raise ProjectionError(
                "Legendre form not negative-definite at this point")
        theta, res, iters = self.solve_theta(point.p, theta0)
        return ProjectionResult(theta, self.psi(point, theta), iters, res)

    # -- dominating Hamiltonian and gap ------------------------------------

    def h0(self, point: ExtremalPoint,
           theta0: np.ndarray | None = None) -> float:
        proj = self.phi_projection(point, theta0)
        return pairing(proj.point.p, self.a0)

    def chi(self, point: ExtremalPoint,
            theta0: np.ndarray | None = None) -> float:
        return self.h0(point, theta0) - pairing(point.p, self.a0)

    def grad_h0(self, p: np.ndarray, theta0: np.ndarray | None = None):
        """Exact covector-gradient of H_0, as an algebra element.

        delta H_0 = <delta p, M> with M = Ad_e A_0 - sum_i d_i Ad_e A_0i,
        the multiplier sensitivities coming from the implicit equation
        Phi(p, theta(p)) = 0.
        """
        theta, _, _ = self.solve_theta(p, theta0)
        phi, jac, e, e_inv, ad_a0i = self._phi_system(p, theta)
        t_mat = sum(theta[i] * self.ai[i] for i in range(self.m))
        v0 = e @ self.a0 @ e_inv
        # c_j = <p, d/dtheta_j Ad_e A_0>
        c = np.zeros(self.m)
        for j in range(self.m):
            de = _dexp(t_mat, self.ai[j])
            de_inv = -e_inv @ de @ e_inv
            w = de @ self.a0 @ e_inv + e @ self.a0 @ de_inv
            c[j] = pairing(p, w)
        dcoef = np.linalg.solve(jac.T, c)
        grad = v0 - sum(dcoef[i] * ad_a0i[i] for i in range(self.m))
        return grad, theta

    # -- super-Hamiltonian flow --------------------------------------------

    def _flow_rhs(self, g: np.ndarray, p: np.ndarray, u: np.ndarray,
                  theta0: np.ndarray):
        mh, theta = self.grad_h0(p, theta0)
        if u is not None and np.any(u != 0.0):
            mh = mh + sum(u[i] * self.ai[i] for i in range(self.m))
        return g @ mh, mh.T @ p - p @ mh.T, theta

    def super_hamiltonian_flow(self, point: ExtremalPoint, grid,
                               u_hat=None, sigma_tol: float = 1e-6,
                               monitor_sigma: bool = False):
        """Integrate the canonical flow of H_t = H_0 + sum u_i F_i.

        Returns the list of flowed points on the grid. With monitor_sigma,
        aborts if a Sigma-initialized sample drifts off Sigma.
        """
        grid = np.asarray(grid, dtype=float)
        g, p = point.q.copy(), point.p.copy()
        theta = np.zeros(self.m)
        out = [ExtremalPoint(q=g, p=p, t=float(grid[0]))]
        for k in range(grid.size - 1):
            h = grid[k + 1] - grid[k]
            u = None if u_hat is None else u_hat(grid[k])
            uh = None if u_hat is None else u_hat(grid[k] + 0.5 * h)
            u1 = None if u_hat is None else u_hat(grid[k + 1])
            dg1, dp1, theta = self._flow_rhs(g, p, u, theta)
            dg2, dp2, _ = self._flow_rhs(g + 0.5 * h * dg1, p + 0.5 * h * dp1,
                                         uh, theta)
            dg3, dp3, _ = self._flow_rhs(g + 0.5 * h * dg2, p + 0.5 * h * dp2,
                                         uh, theta)
            dg4, dp4, _ = self._flow_rhs(g + h * dg3, p + h * dp3, u1, theta)
            g = g + (h / 6.0) * (dg1 + 2 * dg2 + 2 * dg3 + dg4)
            p = p + (h / 6.0) * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
            if monitor_sigma and self.sigma_residual(p) > sigma_tol:
                raise ProjectionError(
                    f"Sigma drift {self.sigma_residual(p):.3e} above "
                    f"tolerance at t = {grid[k + 1]:.6f}")
            out.append(ExtremalPoint(q=g, p=p, t=float(grid[k + 1])))
        return out

    # -- chi Hessian cross-check -------------------------------------------

    def chi_hessian_check(self, point: ExtremalPoint, directions,
                          h: float = 1e-3) -> dict:
        """Second differences of chi against the closed-form Hessian.

        Directions are covector-space matrices. Reports per-direction
        values, the max relative discrepancy, and a Richardson order
        estimate from steps h and h/2.
        """
        if self.s_residual(point.p) > 1e-9 or self.sigma_residual(point.p) > 1e-9:
            raise ProjectionError("Hessian check requires a point on S")
        lf = legendre_form(self.system, point).entries
        lf_inv = np.linalg.inv(lf)

        def chi_at(p):
            return self.chi(ExtremalPoint(q=point.q, p=p, t=point.t, u=point.u))

        rows = []
        for dp in directions:
            closed = -sum(
                lf_inv[r, s] * pairing(dp, self.a0i[r]) * pairing(dp, self.a0i[s])
                for r in range(self.m) for s in range(self.m))

            def second_diff(step):
                return (chi_at(point.p + step * dp) - 2.0 * chi_at(point.p)
                        + chi_at(point.p - step * dp)) / step ** 2

            d2_h = second_diff(h)
            d2_h2 = second_diff(0.5 * h)
            scale = max(abs(closed), 1.0)
            err_h = abs(d2_h - closed) / scale
            err_h2 = abs(d2_h2 - closed) / scale
            if err_h2 > 0 and err_h > 0:
                order = float(np.log2(err_h / err_h2))
            else:
                order = np.inf
            rows.append({"closed_form": closed, "fd": d2_h2,
                         "rel_error": err_h2, "order": order})
        max_rel = max(r["rel_error"] for r in rows)
        min_order = min(r["order"] for r in rows)
        return {"directions": rows, "max_rel_error": max_rel,
                "min_order": min_order}


def hamiltonian_direction(p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Covector component of the Hamiltonian field of F_A at p."""
    return a.T @ p - p @ a.T


def certificate_check(system: MatrixGroupSystem, extremal: ExtremalTrajectory,
                      rho: float, lambda_radius: float = 0.1,
                      grid=None, n_samples: int = 128, seed: int = 0,
                      fd_step: float = 1e-5, margin: float = 1e-3,
                      chart: GroupChart | None = None) -> CertificateReport:
    """Field-of-extremals certificate via the dominating Hamiltonian flow.

    Builds the Lagrangian graph of d(alpha_rho) in the adapted chart,
    verifies it sits inside Sigma, transports a tangent basis by finite
    differences of the nonlinear flow, and tracks the smallest singular
    value of the base projection.
    """
    geom = GroupGeometry(system)
    if chart is None:
        chart = dubins_adapted_chart(system)
    n = chart.n
    r_dim = chart.R
    if grid is None:
        grid = extremal.grid
    grid = np.asarray(grid, dtype=float)

    def lambda_lift(x):
        """Covector matrix of the graph point of d(alpha_rho) over x."""
        y = np.zeros(n)
        y[r_dim:] = chart.p_hat[r_dim:] + rho * x[r_dim:]
        return chart.covector_from_chart(x, y)

    # spot-verify Lambda inside Sigma on a Sobol sample
    sampler = qmc.Sobol(d=n, scramble=True, seed=seed)
    raw = sampler.random(n_samples)
    max_sigma = 0.0
    for row in raw:
        x = lambda_radius * (2.0 * row - 1.0)
        max_sigma = max(max_sigma, geom.sigma_residual(lambda_lift(x)))

    # transported tangent basis of the Lagrangian graph, by central FD
    flows = []
    for k in range(n):
        for sign in (1.0, -1.0):
            x = np.zeros(n)
            x[k] = sign * fd_step
            pt = ExtremalPoint(q=chart.forward(x), p=lambda_lift(x), t=0.0)
            flows.append(geom.super_hamiltonian_flow(pt, grid, extremal.u_hat))

    svals = np.zeros(grid.size)
    warm = [np.zeros(n) for _ in range(2 * n)]
    for idx in range(grid.size):
        base = np.zeros((n, n))
        for k in range(n):
            xp = chart.inverse(flows[2 * k][idx].q, x0=warm[2 * k])
            xm = chart.inverse(flows[2 * k + 1][idx].q, x0=warm[2 * k + 1])
            warm[2 * k], warm[2 * k + 1] = xp, xm
            base[:, k] = (xp - xm) / (2.0 * fd_step)
        svals[idx] = np.linalg.svd(base, compute_uv=False)[-1]
    min_sv = float(np.min(svals))
    verdict = "certified" if (min_sv >= margin and max_sigma <= 1e-10) else \
        "not certified"
    return CertificateReport(
        verdict=verdict, rho=float(rho), min_singular_value=min_sv,
        singular_values=svals, grid=grid, lambda_radius=float(lambda_radius),
        n_samples=int(n_samples), max_sigma_residual=float(max_sigma),
        margin=float(margin))


def flow_samples_to_csv(geom: GroupGeometry, samples: list[ExtremalPoint],
                        path) -> None:
    """Emit t, flattened covector, and surface residuals per flowed sample."""
    d = samples[0].p.shape[0]
    header = ["t"] + [f"p_{i}{j}" for i in range(d) for j in range(d)]
    header += ["sigma_residual", "s_residual"]
    lines = [",".join(header)]
    for pt in samples:
        row = [f"{pt.t:.17g}"]
        row += [f"{v:.17g}" for v in pt.p.ravel()]
        row.append(f"{geom.sigma_residual(pt.p):.17g}")
        row.append(f"{geom.s_residual(pt.p):.17g}")
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
