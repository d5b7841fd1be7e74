"""Matrix Lie algebra primitives: commutators, bracket words, closures.

Bracket words are nested tuples over generator indices. An ``int`` k refers
to generator k (0 is reserved for the drift wherever a system supplies one),
and a pair ``(a, b)`` means the commutator of the two sub-words. Examples:
``(1, 2)`` is [A1, A2] and ``(1, (2, 0))`` is [A1, [A2, A0]].
"""

from __future__ import annotations

import numpy as np

RANK_RTOL = 1e-10


class DimensionMismatchError(ValueError):
    pass


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix commutator AB - BA."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"incompatible shapes {a.shape} and {b.shape}")
    return a @ b - b @ a


def jacobi_residual(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Max-norm residual of [a,[b,c]] + [b,[c,a]] + [c,[a,b]]."""
    r = (
        commutator(a, commutator(b, c))
        + commutator(b, commutator(c, a))
        + commutator(c, commutator(a, b))
    )
    return float(np.max(np.abs(r)))


def numerical_rank(stack: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank of a (k, dim) stack of flattened matrices by relative SV cutoff."""
    if stack.size == 0:
        return 0
    s = np.linalg.svd(stack, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def lie_closure(
    generators: list[np.ndarray], rtol: float = RANK_RTOL
) -> tuple[list[np.ndarray], list, int]:
    """Breadth-first bracket closure of a set of matrices.

    Returns a linearly independent spanning set, the bracket words that
    produced it (generator i carries the word ``i + 1``), and its size R.
    Ordering is deterministic: generators first, then new brackets in the
    order the words are generated.

    Parameters
    ----------
    generators : list of (d, d) arrays
    rtol : relative singular-value threshold for independence decisions
    """
    if not generators:
        raise ValueError("empty generator list")
    basis: list[np.ndarray] = []
    words: list = []
    stack_rows: list[np.ndarray] = []

    def try_add(mat: np.ndarray, word) -> bool:
        candidate = stack_rows + [mat.ravel()]
        if numerical_rank(np.array(candidate), rtol) > len(basis):
            basis.append(mat)
            words.append(word)
            stack_rows.append(mat.ravel())
            return True
        return False

    for i, g in enumerate(generators):
        try_add(np.asarray(g, dtype=float), i + 1)

    # Bracket every new element against the current basis until no growth.
    frontier = list(range(len(basis)))
    while frontier:
        new_frontier = []
        for j in frontier:
            for k in range(len(basis)):
                if k == j:
                    continue
                word = (words[k], words[j])
                if try_add(commutator(basis[k], basis[j]), word):
                    new_frontier.append(len(basis) - 1)
        frontier = new_frontier
    return basis, words, len(basis)


def span_contains(
    basis: list[np.ndarray], mat: np.ndarray, rtol: float = RANK_RTOL
) -> float:
    """Residual (max norm) of mat after orthogonal projection onto span(basis)."""
    if not basis:
        return float(np.max(np.abs(mat)))
    stack = np.array([b.ravel() for b in basis]).T
    coeff, *_ = np.linalg.lstsq(stack, mat.ravel(), rcond=None)
    resid = mat.ravel() - stack @ coeff
    return float(np.max(np.abs(resid)))


def so_residual(a: np.ndarray) -> float:
    """Membership residual in so(d): max-norm of A + A^T."""
    return float(np.max(np.abs(a + a.T)))


def lorentz_residual(a: np.ndarray) -> float:
    """Membership residual in so(1, d-1): max-norm of A^T J + J A."""
    d = a.shape[0]
    j = np.eye(d)
    j[0, 0] = -1.0
    return float(np.max(np.abs(a.T @ j + j @ a)))


def euclidean_residual(a: np.ndarray) -> float:
    """Membership residual in the Euclidean-group algebra block pattern.

    Elements look like [[0, 0], [v, S]] with S antisymmetric.
    """
    top = float(np.max(np.abs(a[0, :])))
    return max(top, so_residual(a[1:, 1:]))


def pairing(p: np.ndarray, a: np.ndarray) -> float:
    """Trace pairing <p, A> = trace(p^T A) on the ambient matrix space."""
    return float(np.tensordot(p, a, axes=2))
