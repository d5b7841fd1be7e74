"""Adapted coordinate charts around a reference point.

The chart composes exponential flows of a frame of fields. The first R
frame fields span the Lie algebra of the controlled fields, so right
multiplication by that subgroup moves only the first R coordinates; the
functions x_{R+1}..x_n annihilate the controlled algebra exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, logm

from .algebra import commutator, pairing
from .systems import ChartSystem, MatrixGroupSystem


class OutOfChartError(RuntimeError):
    """Newton inversion failed to converge inside the chart radius."""


@dataclass
class GroupChart:
    """Adapted chart on a matrix group, centered at basepoint.

    Forward map: x -> basepoint @ exp(x_n B_n) @ ... @ exp(x_1 B_1), so the
    chart is the composition exp(x_1 f_1) o ... o exp(x_n f_n) applied to
    the basepoint, with f_j the left-invariant field of B_j.
    """

    system: MatrixGroupSystem
    frame_algebra: list[np.ndarray]
    R: int
    basepoint: np.ndarray = None
    p_hat: np.ndarray = None

    def __post_init__(self):
        d = self.frame_algebra[0].shape[0]
        if self.basepoint is None:
            self.basepoint = np.eye(d)
        self.n = len(self.frame_algebra)
        # flattened frame at the origin, reused by lstsq solves
        self._b0 = np.array([b.ravel() for b in self.frame_algebra]).T

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.basepoint.copy()
        for j in range(self.n - 1, -1, -1):
            if x[j] != 0.0:
                g = g @ expm(x[j] * self.frame_algebra[j])
        return g

    def frame(self, x: np.ndarray) -> list[np.ndarray]:
        """Moving frame v_j(x) with dUpsilon/dx_j = Upsilon(x) v_j(x).

        v_j = C_j^{-1} B_j C_j where C_j collects the exponential factors
        with indices below j.
        """
        x = np.asarray(x, dtype=float)
        out = []
        c = np.eye(self.frame_algebra[0].shape[0])
        c_inv = c.copy()
        for j in range(self.n):
            out.append(c_inv @ self.frame_algebra[j] @ c)
            if j < self.n - 1 and x[j] != 0.0:
                e = expm(x[j] * self.frame_algebra[j])
                c = e @ c
                c_inv = c_inv @ expm(-x[j] * self.frame_algebra[j])
        return out

    def frame_jacobian(self, x: np.ndarray) -> np.ndarray:
        """Exact partials dv_j/dx_k = [v_j, v_k] for k < j, zero otherwise.

        Returns an (n, n, d, d) array indexed [j, k].
        """
        v = self.frame(x)
        d = v[0].shape[0]
        out = np.zeros((self.n, self.n, d, d))
        for j in range(self.n):
            for k in range(j):
                out[j, k] = commutator(v[j], v[k])
        return out

    def solve_in_frame(self, x: np.ndarray, mat: np.ndarray) -> np.ndarray:
        """Coefficients c with sum_j c_j v_j(x) = mat (least squares, exact
        for mat in the Lie algebra)."""
        v = self.frame(x)
        stack = np.array([b.ravel() for b in v]).T
        c, *_ = np.linalg.lstsq(stack, mat.ravel(), rcond=None)
        return c

    def inverse(self, q: np.ndarray, x0: np.ndarray | None = None,
                tol: float = 1e-13, max_iter: int = 60,
                radius: float = np.inf) -> np.ndarray:
        """Damped Newton solve of forward(x) = q.

        Iterates leaving the ball of the given radius report out-of-chart.
        """
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float).copy()

        def residual(xv):
            rel = np.linalg.solve(self.forward(xv), q)
            e = logm(rel)
            e = np.real(e)
            return e, float(np.max(np.abs(e)))

        e, r = residual(x)
        for _ in range(max_iter):
            if r <= tol:
                return x
            step = self.solve_in_frame(x, e)
            damp = 1.0
            for _ in range(30):
                cand = x + damp * step
                e_new, r_new = residual(cand)
                if r_new < r:
                    x, e, r = cand, e_new, r_new
                    break
                damp *= 0.5
            else:
                raise OutOfChartError("Newton stalled during chart inversion")
            if np.linalg.norm(x) > radius:
                raise OutOfChartError("iterate left the chart validity radius")
        if r <= tol:
            return x
        raise OutOfChartError("chart inversion did not converge")

    def covector_to_chart(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Chart momentum y_j = <p, v_j(x)>."""
        return np.array([pairing(p, v) for v in self.frame(x)])

    def covector_from_chart(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Matrix covector with <p, v_j(x)> = y_j, minimal Frobenius norm."""
        v = self.frame(x)
        stack = np.array([b.ravel() for b in v])
        p, *_ = np.linalg.lstsq(stack, np.asarray(y, dtype=float), rcond=None)
        return p.reshape(v[0].shape)

    def field_components(self, algebra_elem: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Chart components of the left-invariant field g A at the point x."""
        return self.solve_in_frame(x, algebra_elem)


def dubins_adapted_chart(system: MatrixGroupSystem,
                         basepoint: np.ndarray | None = None) -> GroupChart:
    """Adapted chart for a Dubins-family system.

    Frame order: A_1..A_m, [A_i,A_j] (i < j), [A_0,A_i], A_0. The first
    R = m + m(m-1)/2 fields span the controlled algebra and the reference
    trajectory is the x_n coordinate axis.
    """
    m = system.m
    frame = list(system.controlled)
    for i in range(m):
        for j in range(i + 1, m):
            frame.append(commutator(system.controlled[i], system.controlled[j]))
    r = len(frame)
    if r != system.R:
        raise ValueError("controlled algebra is not depth-2 spanned")
    for i in range(m):
        frame.append(commutator(system.drift, system.controlled[i]))
    frame.append(system.drift)
    chart = GroupChart(system, frame, r, basepoint)
    p_hat = np.zeros(chart.n)
    p_hat[-1] = 1.0
    chart.p_hat = p_hat
    return chart


@dataclass
class FlowChart:
    """Adapted chart on the chart backend, built from evaluable fields.

    Forward map composes numerically integrated flows; inverse is a damped
    Newton with a finite-difference Jacobian.
    """

    system: ChartSystem
    frame_fields: list
    R: int
    basepoint: np.ndarray
    p_hat: np.ndarray = None
    steps_per_unit: int = field(default=64)

    def __post_init__(self):
        self.n = len(self.frame_fields)
        self.basepoint = np.asarray(self.basepoint, dtype=float)

    def _flow(self, fn, z: np.ndarray, s: float) -> np.ndarray:
        if s == 0.0:
            return z.copy()
        steps = max(4, int(abs(s) * self.steps_per_unit))
        h = s / steps
        for _ in range(steps):
            k1 = np.asarray(fn(z))
            k2 = np.asarray(fn(z + 0.5 * h * k1))
            k3 = np.asarray(fn(z + 0.5 * h * k2))
            k4 = np.asarray(fn(z + h * k3))
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return z

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = self.basepoint.copy()
        for j in range(self.n - 1, -1, -1):
            z = self._flow(self.frame_fields[j], z, x[j])
        return z

    def jacobian(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        jac = np.zeros((self.system.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            jac[:, j] = (self.forward(x + e) - self.forward(x - e)) / (2 * h)
        return jac

    def inverse(self, q: np.ndarray, x0: np.ndarray | None = None,
                tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float).copy()
        q = np.asarray(q, dtype=float)
        r = float(np.max(np.abs(self.forward(x) - q)))
        for _ in range(max_iter):
            if r <= tol:
                return x
            jac = self.jacobian(x)
            step, *_ = np.linalg.lstsq(jac, q - self.forward(x), rcond=None)
            damp = 1.0
            for _ in range(30):
                cand = x + damp * step
                r_new = float(np.max(np.abs(self.forward(cand) - q)))
                if r_new < r:
                    x, r = cand, r_new
                    break
                damp *= 0.5
            else:
                raise OutOfChartError("Newton stalled during chart inversion")
        if r <= tol:
            return x
        raise OutOfChartError("chart inversion did not converge")
