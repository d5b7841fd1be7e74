"""Control-affine system backends.

Two backends are supported:

* :class:`MatrixGroupSystem` -- left-invariant dynamics on a matrix group,
  with exact commutator brackets. The generalized Dubins family on the three
  space forms is built by :func:`build_dubins_system`.
* :class:`ChartSystem` -- dynamics given by evaluable vector fields in a
  single coordinate chart, with a user-supplied bracket oracle and a
  finite-difference fallback.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import algebra
from .algebra import commutator, lie_closure, numerical_rank, span_contains


class SpaceForm(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SPHERE = "sphere"
    HYPERBOLIC = "hyperbolic"


EPSILON = {SpaceForm.EUCLIDEAN: 0, SpaceForm.SPHERE: 1, SpaceForm.HYPERBOLIC: -1}


class StructureError(ValueError):
    """A system violates one of its construction invariants."""


def resolve_word(word, drift: np.ndarray, controlled: list[np.ndarray]) -> np.ndarray:
    """Evaluate a bracket word to a matrix. 0 is the drift, i >= 1 controlled."""
    if isinstance(word, (int, np.integer)):
        if word == 0:
            return drift
        return controlled[word - 1]
    a, b = word
    return commutator(
        resolve_word(a, drift, controlled), resolve_word(b, drift, controlled)
    )


@dataclass(frozen=True)
class MatrixGroupSystem:
    """Control-affine left-invariant system g' = g(A0 + sum u_i A_i).

    Vector fields are f_i(g) = g A_i; brackets reduce to matrix commutators.
    """

    space_form: SpaceForm
    N: int
    drift: np.ndarray
    controlled: tuple[np.ndarray, ...]
    lie_closure_basis: tuple[np.ndarray, ...]
    closure_words: tuple
    _bracket_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.drift.shape[0]

    @property
    def m(self) -> int:
        return len(self.controlled)

    @property
    def R(self) -> int:
        return len(self.lie_closure_basis)

    @property
    def n(self) -> int:
        return self.N * (self.N + 1) // 2

    @property
    def epsilon(self) -> int:
        return EPSILON[self.space_form]

    @property
    def is_group(self) -> bool:
        return True

    def bracket_matrix(self, word) -> np.ndarray:
        """Matrix of the bracket word, cached."""
        key = word
        cached = self._bracket_cache.get(key)
        if cached is None:
            cached = resolve_word(word, self.drift, list(self.controlled))
            self._bracket_cache[key] = cached
        return cached

    def structure_residual(self, a: np.ndarray) -> float:
        """Membership residual of a matrix in the structure algebra."""
        if self.space_form is SpaceForm.EUCLIDEAN:
            return algebra.euclidean_residual(a)
        if self.space_form is SpaceForm.SPHERE:
            return algebra.so_residual(a)
        return algebra.lorentz_residual(a)

    def group_residual(self, g: np.ndarray) -> float:
        """Deviation of g from the structure group (max norm)."""
        d = g.shape[0]
        if self.space_form is SpaceForm.SPHERE:
            return float(np.max(np.abs(g.T @ g - np.eye(d))))
        if self.space_form is SpaceForm.HYPERBOLIC:
            j = np.eye(d)
            j[0, 0] = -1.0
            return float(np.max(np.abs(g.T @ j @ g - j)))
        r = g[1:, 1:]
        top = np.zeros(d)
        top[0] = 1.0
        return max(
            float(np.max(np.abs(g[0, :] - top))),
            float(np.max(np.abs(r.T @ r - np.eye(d - 1)))),
        )

    def project_to_group(self, g: np.ndarray) -> np.ndarray:
        """Re-project a near-group matrix onto the structure group."""
        if self.space_form is SpaceForm.SPHERE:
            u, _, vt = np.linalg.svd(g)
            return u @ vt
        if self.space_form is SpaceForm.EUCLIDEAN:
            out = g.copy()
            out[0, :] = 0.0
            out[0, 0] = 1.0
            u, _, vt = np.linalg.svd(out[1:, 1:])
            out[1:, 1:] = u @ vt
            return out
        # J-orthogonal (Lorentz) polar-type correction: X <- (X + J X^-T J)/2.
        d = g.shape[0]
        j = np.eye(d)
        j[0, 0] = -1.0
        x = g.copy()
        for _ in range(40):
            y = 0.5 * (x + j @ np.linalg.inv(x).T @ j)
            if np.max(np.abs(y - x)) < 1e-15:
                x = y
                break
            x = y
        return x

    def full_algebra_basis(self) -> list[np.ndarray]:
        """Basis of Lie(G) ordered A_1..A_m, [A_i,A_j] i<j, [A0,A_i], A0."""
        out = list(self.controlled)
        m = self.m
        for i in range(1, m + 1):
            for jj in range(i + 1, m + 1):
                out.append(self.bracket_matrix((i, jj)))
        for i in range(1, m + 1):
            out.append(self.bracket_matrix((0, i)))
        out.append(self.drift)
        return out


def _dubins_generators(space_form: SpaceForm, N: int) -> tuple[np.ndarray, list[np.ndarray]]:
    eps = EPSILON[space_form]
    d = N + 1
    a0 = np.zeros((d, d))
    a0[1, 0] = 1.0
    a0[0, 1] = -float(eps)
    controlled = []
    for j in range(1, N):
        aj = np.zeros((d, d))
        # (A_j)_{1,j+1} = -1, (A_j)_{j+1,1} = 1 in the lower N x N block.
        aj[1, j + 2 - 1] = -1.0
        aj[j + 2 - 1, 1] = 1.0
        controlled.append(aj)
    return a0, controlled


def build_dubins_system(space_form: SpaceForm | str, N: int) -> MatrixGroupSystem:
    """Generalized Dubins system on R^N, S^N or H^N, embedded in GL(N+1).

    Requires N >= 3 so that the problem is genuinely multi-input (m >= 2).
    """
    space_form = SpaceForm(space_form)
    if N < 3:
        raise ValueError(f"N must be >= 3, got {N}")
    drift, controlled = _dubins_generators(space_form, N)
    basis, words, R = lie_closure(controlled)
    expected_r = N * (N - 1) // 2
    if R != expected_r:
        raise StructureError(f"Lie closure dimension {R}, expected {expected_r}")
    system = MatrixGroupSystem(
        space_form=space_form,
        N=N,
        drift=drift,
        controlled=tuple(controlled),
        lie_closure_basis=tuple(basis),
        closure_words=tuple(words),
    )
    stack = np.array([a.ravel() for a in controlled])
    if numerical_rank(stack) != len(controlled):
        raise StructureError("controlled generators are linearly dependent")
    if R + system.m > system.n - 1:
        raise StructureError("R + m exceeds n - 1")
    return system


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    residual: float


@dataclass(frozen=True)
class PropertyReport:
    checks: tuple[PropertyCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            c.name: {"passed": bool(c.passed), "residual": float(c.residual)}
            for c in self.checks
        }


def verify_structure_properties(
    system: MatrixGroupSystem, tol: float = 1e-12
) -> PropertyReport:
    """Exact-arithmetic verification of the six Dubins structure properties."""
    m, N = system.m, system.N
    a0 = system.drift
    ai = list(system.controlled)
    checks = []

    # (i) closure is 2-step bracket generating, dimension N(N-1)/2, so(N)-shaped.
    depth2 = ai + [commutator(ai[i], ai[j]) for i in range(m) for j in range(i + 1, m)]
    res_i = max(span_contains(depth2, b) for b in system.lie_closure_basis)
    res_i = max(res_i, max(algebra.so_residual(b) for b in system.lie_closure_basis))
    res_i = max(
        res_i, max(float(np.max(np.abs(b[:, 0]))) for b in system.lie_closure_basis)
    )
    dim_ok = system.R == N * (N - 1) // 2
    checks.append(PropertyCheck("closure_so_N", dim_ok and res_i <= tol, res_i))

    # (ii) derived sub-algebra spanned by [A_i, A_j] has dimension (N-1)(N-2)/2.
    derived = [commutator(ai[i], ai[j]) for i in range(m) for j in range(i + 1, m)]
    rank = numerical_rank(np.array([b.ravel() for b in derived])) if derived else 0
    checks.append(
        PropertyCheck(
            "derived_dimension",
            rank == (N - 1) * (N - 2) // 2,
            float(abs(rank - (N - 1) * (N - 2) // 2)),
        )
    )

    # (iii) {A0, [A0,A_i], A_i, [A_i,A_j]} is a basis of Lie(G).
    basis = system.full_algebra_basis()
    rank3 = numerical_rank(np.array([b.ravel() for b in basis]))
    checks.append(
        PropertyCheck(
            "frame_basis_rank", rank3 == system.n, float(abs(rank3 - system.n))
        )
    )

    # (iv) [A_i,[A_i,A0]] = -A0 and [A_i,[A_j,A0]] = 0 for i != j.
    res_iv = 0.0
    for i in range(m):
        for j in range(m):
            val = commutator(ai[i], commutator(ai[j], a0))
            target = -a0 if i == j else np.zeros_like(a0)
            res_iv = max(res_iv, float(np.max(np.abs(val - target))))
    checks.append(PropertyCheck("double_bracket_drift", res_iv <= tol, res_iv))

    # (v) {A0, [A0, A_i]} mutually commute modulo the controlled algebra.
    # On the flat form the commutators vanish identically; on the curved
    # forms they equal -epsilon A_i or a depth-2 controlled bracket, so the
    # residual modulo Lie closure is still exactly zero.
    fam = [a0] + [commutator(a0, a) for a in ai]
    closure = list(system.lie_closure_basis)
    res_v = max(
        span_contains(closure, commutator(x, y)) for x in fam for y in fam
    )
    if system.epsilon == 0:
        res_v = max(
            float(np.max(np.abs(commutator(x, y)))) for x in fam for y in fam
        )
    checks.append(PropertyCheck("drift_family_commutes", res_v <= tol, res_v))

    # (vi) A0 commutes with every [A_i, A_j].
    res_vi = 0.0
    for i in range(m):
        for j in range(m):
            res_vi = max(
                res_vi,
                float(np.max(np.abs(commutator(a0, commutator(ai[i], ai[j]))))),
            )
    checks.append(PropertyCheck("drift_commutes_derived", res_vi <= tol, res_vi))

    return PropertyReport(tuple(checks))


# ---------------------------------------------------------------------------
# Chart backend
# ---------------------------------------------------------------------------

Monomial = tuple[float, tuple[int, ...]]


class PolynomialField:
    """Vector field with polynomial components, supporting exact brackets.

    Each component is a list of (coefficient, exponent-tuple) monomials.
    """

    def __init__(self, components: list[list[Monomial]], n: int):
        self.n = n
        self.components = [
            [(float(c), tuple(int(e) for e in ex)) for c, ex in comp]
            for comp in components
        ]
        if len(self.components) != n:
            raise ValueError("component count must equal the state dimension")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.n)
        for i, comp in enumerate(self.components):
            for c, ex in comp:
                out[i] += c * math.prod(x[k] ** e for k, e in enumerate(ex) if e)
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        jac = np.zeros((self.n, self.n))
        for i, comp in enumerate(self.components):
            for c, ex in comp:
                for k, e in enumerate(ex):
                    if e == 0:
                        continue
                    term = c * e * x[k] ** (e - 1)
                    for kk, ee in enumerate(ex):
                        if kk == k or ee == 0:
                            continue
                        term *= x[kk] ** ee
                    jac[i, k] += term
        return jac

    def bracket(self, other: "PolynomialField") -> "PolynomialField":
        """Exact Lie bracket [self, other] = D(other) self - D(self) other."""

        def poly_mul(a: list[Monomial], b: list[Monomial]) -> list[Monomial]:
            acc: dict[tuple[int, ...], float] = {}
            for ca, ea in a:
                for cb, eb in b:
                    ex = tuple(x + y for x, y in zip(ea, eb))
                    acc[ex] = acc.get(ex, 0.0) + ca * cb
            return [(c, e) for e, c in acc.items() if c != 0.0]

        def partial(comp: list[Monomial], k: int) -> list[Monomial]:
            out = []
            for c, ex in comp:
                if ex[k] == 0:
                    continue
                nex = list(ex)
                nex[k] -= 1
                out.append((c * ex[k], tuple(nex)))
            return out

        comps = []
        for i in range(self.n):
            acc: list[Monomial] = []
            for k in range(self.n):
                acc += poly_mul(partial(other.components[i], k), self.components[k])
                acc += [
                    (-c, e)
                    for c, e in poly_mul(partial(self.components[i], k), other.components[k])
                ]
            merged: dict[tuple[int, ...], float] = {}
            for c, e in acc:
                merged[e] = merged.get(e, 0.0) + c
            comps.append([(c, e) for e, c in merged.items() if c != 0.0])
        return PolynomialField(comps, self.n)


class FDBracketField:
    """Finite-difference fallback bracket of two evaluable fields.

    Uses central differences with the declared step; ``error_estimate``
    reports the step-halving discrepancy at a point.
    """

    def __init__(self, f, g, n: int, h: float = 1e-5):
        self.f, self.g, self.n, self.h = f, g, n, h

    def _jac(self, fn, x, h):
        jac = np.zeros((self.n, self.n))
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = h
            jac[:, k] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)
        return jac

    def _value(self, x, h):
        x = np.asarray(x, dtype=float)
        return self._jac(self.g, x, h) @ np.asarray(self.f(x)) - self._jac(
            self.f, x, h
        ) @ np.asarray(self.g(x))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._value(x, self.h)

    def error_estimate(self, x: np.ndarray) -> float:
        return float(
            np.max(np.abs(self._value(x, self.h) - self._value(x, self.h / 2)))
        )


class UnresolvableWordError(KeyError):
    pass


class ChartSystem:
    """Control-affine system given by fields in one coordinate chart.

    Parameters
    ----------
    n : state dimension
    fields : list of m + 1 evaluable fields [f0, f1, ..., fm]
    brackets : optional map from bracket words to evaluable fields; words not
        present are derived exactly for polynomial fields, otherwise by the
        finite-difference fallback.
    fd_step : step for the finite-difference fallback
    """

    def __init__(self, n: int, fields: list, brackets: dict | None = None,
                 fd_step: float = 1e-5):
        if len(fields) < 2:
            raise ValueError("need a drift and at least one controlled field")
        self.n = int(n)
        self.fields = list(fields)
        self.bracket_oracle = dict(brackets or {})
        self.fd_step = fd_step
        self.uses_fd_fallback = False

    @property
    def m(self) -> int:
        return len(self.fields) - 1

    @property
    def is_group(self) -> bool:
        return False

    def field_fn(self, word):
        """Resolve a bracket word to an evaluable field."""
        if isinstance(word, (int, np.integer)):
            return self.fields[word]
        if word in self.bracket_oracle:
            return self.bracket_oracle[word]
        a, b = word
        fa, fb = self.field_fn(a), self.field_fn(b)
        if isinstance(fa, PolynomialField) and isinstance(fb, PolynomialField):
            out = fa.bracket(fb)
        else:
            out = FDBracketField(fa, fb, self.n, self.fd_step)
            self.uses_fd_fallback = True
        self.bracket_oracle[word] = out
        return out

    def controlled_closure(self, basepoint: np.ndarray, rtol: float = 1e-10):
        """Bracket closure of the controlled fields, evaluated at a point.

        Returns (words, R); assumes the distribution has constant rank near
        the basepoint.
        """
        x0 = np.asarray(basepoint, dtype=float)
        words: list = []
        rows: list[np.ndarray] = []

        def try_add(word) -> bool:
            val = np.asarray(self.field_fn(word)(x0))
            cand = rows + [val]
            if numerical_rank(np.array(cand), rtol) > len(rows):
                rows.append(val)
                words.append(word)
                return True
            return False

        for i in range(1, self.m + 1):
            try_add(i)
        frontier = list(words)
        while frontier:
            new = []
            for wj in frontier:
                for wk in list(words):
                    if wk == wj:
                        continue
                    w = (wk, wj)
                    if try_add(w):
                        new.append(w)
            frontier = new
        return words, len(words)


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------

def system_from_json(doc: dict):
    """Build a system from its JSON description.

    ``{"kind": "dubins", "space": ..., "N": ...}`` or
    ``{"kind": "chart", "n": ..., "fields": {...}, "brackets": {...}}`` where
    each field is a list of per-component monomial lists ``[coeff, exponents]``.
    """
    kind = doc.get("kind")
    if kind == "dubins":
        return build_dubins_system(SpaceForm(doc["space"]), int(doc["N"]))
    if kind == "chart":
        n = int(doc["n"])
        raw = doc["fields"]
        names = sorted(raw.keys(), key=lambda s: int(s.lstrip("f")))
        expected = [f"f{i}" for i in range(len(names))]
        if names != expected:
            raise ValueError(f"field names must be f0..f{len(names) - 1}, got {names}")
        fields = [
            PolynomialField([[(c, tuple(e)) for c, e in comp] for comp in raw[name]], n)
            for name in expected
        ]
        brackets = {}
        for key, comps in (doc.get("brackets") or {}).items():
            word = _parse_word(key)
            brackets[word] = PolynomialField(
                [[(c, tuple(e)) for c, e in comp] for comp in comps], n
            )
        return ChartSystem(n, fields, brackets)
    raise ValueError(f"unknown system kind: {kind!r}")


def _parse_word(text: str):
    """Parse '[1,2]' or '[0,[0,1]]' into a nested bracket word."""
    import json as _json

    def conv(obj):
        if isinstance(obj, int):
            return obj
        if isinstance(obj, list) and len(obj) == 2:
            return (conv(obj[0]), conv(obj[1]))
        raise ValueError(f"bad bracket word {text!r}")

    return conv(_json.loads(text))
