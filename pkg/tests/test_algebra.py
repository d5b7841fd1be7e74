"""Tests for matrix Lie algebra primitives."""

import numpy as np
import pytest

from singcert import algebra
from singcert.algebra import (
    DimensionMismatchError,
    commutator,
    jacobi_residual,
    lie_closure,
    numerical_rank,
    pairing,
    span_contains,
)


def so3_basis():
    e = []
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        a = np.zeros((3, 3))
        a[i, j] = 1.0
        a[j, i] = -1.0
        e.append(a)
    return e


def test_commutator_self_is_zero():
    """[A, A] = 0."""
    a = np.arange(9.0).reshape(3, 3)
    assert np.max(np.abs(commutator(a, a))) == 0.0


def test_commutator_rejects_mismatch():
    with pytest.raises(DimensionMismatchError):
        commutator(np.eye(2), np.eye(3))


def test_jacobi_identity_so3():
    """Jacobi residual vanishes to roundoff for so(3) triples."""
    e1, e2, e3 = so3_basis()
    assert jacobi_residual(e1, e2, e3) <= 1e-12


def test_numerical_rank_thresholding():
    rows = np.array([[1.0, 0.0], [0.0, 1e-14], [1.0, 1e-14]])
    assert numerical_rank(rows) == 1
    assert numerical_rank(np.zeros((2, 4))) == 0


def test_lie_closure_abelian_single_generator():
    """A single generator closes onto itself, R = 1."""
    a = np.diag([1.0, -1.0])
    basis, words, r = lie_closure([a])
    assert r == 1
    assert words == [1]


def test_lie_closure_so3_from_two_generators():
    e1, e2, _ = so3_basis()
    basis, words, r = lie_closure([e1, e2])
    assert r == 3
    assert words[0] == 1 and words[1] == 2
    # the third word is a depth-2 bracket of the generators
    assert isinstance(words[2], tuple)


def test_lie_closure_idempotent():
    e1, e2, _ = so3_basis()
    basis, _, r = lie_closure([e1, e2])
    _, _, r2 = lie_closure(basis)
    assert r2 == r


def test_span_contains_residual():
    e1, e2, e3 = so3_basis()
    assert span_contains([e1, e2], e1 + 2 * e2) <= 1e-12
    assert span_contains([e1, e2], e3) > 0.5


def test_structure_residuals():
    e1, _, _ = so3_basis()
    assert algebra.so_residual(e1) == 0.0
    j_elem = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert algebra.lorentz_residual(j_elem) <= 1e-15
    eucl = np.zeros((3, 3))
    eucl[1, 0] = 1.0
    assert algebra.euclidean_residual(eucl) == 0.0
    assert algebra.euclidean_residual(eucl.T) == 1.0


def test_trace_pairing():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert pairing(p, a) == pytest.approx(np.trace(p.T @ a))
