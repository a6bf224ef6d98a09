import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdhom.hilbert import (
    AdmissibilityParams,
    ComplexPair,
    DecompositionError,
    DimensionError,
    HilbertSpace,
    LinearOp,
    MatrixCoefficient,
    MultiplicationCoefficient,
    ProbeSet,
    SingularCoefficientError,
    adjoint,
    admissibility_check,
    block_decompose,
    characteristic_maps,
    reduced_operator,
    verify_exactness,
    wot_distance,
)


def toy_pair(weights=None, seed=0):
    """H0 = C^2 -> H1 = C^4 -> H2 = C^2 with integer entries, so A1 A0 = 0 exactly."""
    rng = np.random.default_rng(seed)
    w = np.ones(4) if weights is None else weights
    H0, H1, H2 = HilbertSpace.euclidean(2, "H0"), HilbertSpace(w, "H1"), HilbertSpace.euclidean(2, "H2")
    A0 = np.array([[1.0, 0], [1, 1], [0, 1], [0, 0]]) @ np.array([[1.0, rng.integers(-3, 4)], [0, 1]])
    A1 = np.array([[1.0, -1, 1, 0], [0, 0, 0, 1]])
    perm = rng.permutation(4)
    return ComplexPair(LinearOp(H0, H1, A0[perm]), LinearOp(H1, H2, A1[:, perm]))


def hand_pair():
    H = HilbertSpace.euclidean(2)
    A0 = LinearOp(HilbertSpace.euclidean(1), H, np.array([[1.0], [0.0]]))
    A1 = LinearOp(H, HilbertSpace.euclidean(1), np.array([[0.0, 1.0]]))
    return ComplexPair(A0, A1)


# --- spaces and adjoints --------------------------------------------------


def test_space_rejects_bad_weights():
    with pytest.raises(ValueError):
        HilbertSpace(np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        LinearOp(HilbertSpace.euclidean(2), HilbertSpace.euclidean(3), np.zeros((2, 2)))


def test_adjoint_euclidean_is_transpose():
    M = np.arange(6.0).reshape(2, 3)
    op = LinearOp(HilbertSpace.euclidean(3), HilbertSpace.euclidean(2), M)
    np.testing.assert_array_equal(adjoint(op).matrix, M.T)


def test_adjoint_weighted_hand_case():
    op = LinearOp(HilbertSpace(np.array([1.0, 2.0])), HilbertSpace(np.array([3.0])), np.array([[1.0, 1.0]]))
    A = adjoint(op)
    np.testing.assert_allclose(A.matrix, [[3.0], [1.5]])
    for i in range(2):
        x = np.eye(2)[i]
        y = np.array([1.0])
        assert np.isclose(op.codomain.inner(op(x), y), op.domain.inner(x, A(y)))


def test_adjoint_involution_exact():
    rng = np.random.default_rng(1)
    op = LinearOp(HilbertSpace(rng.uniform(0.5, 2, 4)), HilbertSpace(rng.uniform(0.5, 2, 3)),
                  rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)))
    np.testing.assert_allclose(adjoint(adjoint(op)).matrix, op.matrix, rtol=1e-15, atol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_adjoint_pairing_identity(m, n, seed):
    rng = np.random.default_rng(seed)
    op = LinearOp(HilbertSpace(rng.uniform(0.1, 3, n)), HilbertSpace(rng.uniform(0.1, 3, m)),
                  rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    A = adjoint(op)
    for _ in range(5):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        lhs, rhs = op.codomain.inner(op(x), y), op.domain.inner(x, A(y))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


# --- exactness --------------------------------------------------------------


def test_zero_then_identity_not_exact():
    H = HilbertSpace.euclidean(3)
    r = verify_exactness(LinearOp(HilbertSpace.euclidean(2), H, np.zeros((3, 2))), LinearOp(H, H, np.eye(3)))
    assert r.composition_norm == 0 and r.rank_A0 == 0 and r.nullity_A1 == 0
    assert r.exact  # ker(I) = 0 = range(0)
    H1 = HilbertSpace.euclidean(1)
    r = verify_exactness(LinearOp(H1, H, np.zeros((3, 1))), LinearOp(H, HilbertSpace.euclidean(2), np.zeros((2, 3))))
    assert not r.exact


def test_hand_case_exact():
    r = verify_exactness(hand_pair().A0, hand_pair().A1)
    assert r == (0.0, 1, 1, True)


def test_exactness_dimension_mismatch():
    with pytest.raises(DimensionError):
        verify_exactness(LinearOp(HilbertSpace.euclidean(1), HilbertSpace.euclidean(2), np.ones((2, 1))),
                         LinearOp(HilbertSpace.euclidean(3), HilbertSpace.euclidean(1), np.ones((1, 3))))


# --- reduced operators ------------------------------------------------------


def test_reduced_identity():
    H = HilbertSpace(np.array([1.0, 2.0, 0.5]))
    red = reduced_operator(LinearOp(H, H, np.eye(3)))
    assert red.rank == 3 and red.nullity == 0
    r = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(red.solve(r), r, atol=1e-14)


def test_reduced_diagonal_case():
    H = HilbertSpace.euclidean(2)
    red = reduced_operator(LinearOp(H, H, np.diag([1.0, 0.0])))
    np.testing.assert_allclose(red.solve(np.array([5.0, 0.0])), [5.0, 0.0], atol=1e-14)


def test_reduced_zero_operator_has_empty_bases():
    red = reduced_operator(LinearOp(HilbertSpace.euclidean(2), HilbertSpace.euclidean(3), np.zeros((3, 2))))
    assert red.rank == 0 and red.kernel_basis.shape == (2, 2)


@pytest.mark.parametrize("seed", range(5))
def test_reduced_round_trip_rank3(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 4))
    op = LinearOp(HilbertSpace(rng.uniform(0.5, 2, 4)), HilbertSpace(rng.uniform(0.5, 2, 6)), M)
    red = reduced_operator(op)
    assert red.rank == 3
    r = op(rng.standard_normal(4))
    np.testing.assert_allclose(op(red.solve(r)), r, rtol=0, atol=1e-12 * np.linalg.norm(r))
    x = red.solve(r)
    assert np.abs(op.domain.gram(red.kernel_basis, x[:, None])).max() < 1e-12


def test_dual_inverse_inverts_dual():
    rng = np.random.default_rng(3)
    op = LinearOp(HilbertSpace(rng.uniform(0.5, 2, 4)), HilbertSpace(rng.uniform(0.5, 2, 5)),
                  rng.standard_normal((5, 4)))
    red = reduced_operator(op)
    q = red.project_range(rng.standard_normal(5))
    np.testing.assert_allclose(red.dual_inverse(red.dual(q), "coords"), q, atol=1e-12)
    # flux functional y -> <q, op y> is represented by q itself
    np.testing.assert_allclose(red.dual_inverse(q, "flux"), q, atol=1e-12)


# --- blocks, admissibility, maps -----------------------------------------------


def test_projectors_sum_to_identity():
    pair = toy_pair(np.array([1.0, 2.0, 0.5, 3.0]))
    assert pair.exact and pair.harmonic_dim == 0
    P0, P1 = pair.projector("range0"), pair.projector("range1_adj")
    np.testing.assert_allclose(P0 + P1, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(P0 @ P0, P0, atol=1e-12)


def test_block_identity_and_scalar():
    pair = toy_pair()
    blk = block_decompose(np.eye(4), pair)
    np.testing.assert_allclose(blk.a00, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(blk.a01, 0, atol=1e-12)
    c = 2 + 1j
    blk = block_decompose(MultiplicationCoefficient(pair.space, c), pair)
    np.testing.assert_allclose(blk.a11, c * np.eye(2), atol=1e-12)
    np.testing.assert_allclose(blk.a10, 0, atol=1e-12)


def test_block_projector_onto_range0():
    pair = toy_pair()
    blk = block_decompose(pair.projector("range0"), pair)
    np.testing.assert_allclose(blk.a00, np.eye(2), atol=1e-12)
    for m in (blk.a01, blk.a10, blk.a11):
        np.testing.assert_allclose(m, 0, atol=1e-12)


def test_block_reassemble():
    pair = toy_pair(np.array([1.0, 2.0, 0.5, 3.0]), seed=4)
    m = np.random.default_rng(0).standard_normal((4, 4))
    np.testing.assert_allclose(block_decompose(m, pair).reassemble(), m, atol=1e-12)


def test_block_decompose_needs_spanning_split():
    H = HilbertSpace.euclidean(2)
    pair = ComplexPair(LinearOp(H, H, np.zeros((2, 2))), LinearOp(H, H, np.zeros((2, 2))))
    with pytest.raises(DecompositionError):
        block_decompose(np.eye(2), pair)


def test_admissibility_identity():
    rep = admissibility_check(np.eye(4), AdmissibilityParams(1, 1), toy_pair())
    assert rep.member
    np.testing.assert_allclose(rep.floors, 1.0)


def test_admissibility_imaginary_scalar_fails():
    pair = toy_pair()
    rep = admissibility_check(MultiplicationCoefficient(pair.space, 1j), AdmissibilityParams(0.1, 10), pair)
    assert not rep.member


def test_admissibility_singular():
    with pytest.raises(SingularCoefficientError):
        admissibility_check(np.zeros((2, 2)), AdmissibilityParams(1, 1), hand_pair())


@pytest.mark.parametrize("alpha,beta,member", [(0.5, 2, True), (0.4, 3, True), (0.6, 2, False), (0.5, 1.9, False)])
def test_admissibility_aligned_diagonal(alpha, beta, member):
    # hand pair: range(A0) = e0, range(A1*) = e1
    rep = admissibility_check(np.diag([2.0, 0.5]), AdmissibilityParams(alpha, beta), hand_pair())
    np.testing.assert_allclose(rep.floors, (2.0, 0.5, 2.0, 0.5))
    assert rep.member is member


def test_membership_monotone():
    pair = toy_pair(seed=2)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 4))
    a = X @ X.T + np.eye(4)
    rep = admissibility_check(a, AdmissibilityParams(0.5, 50), pair)
    if rep.member:
        assert admissibility_check(a, AdmissibilityParams(0.25, 100), pair).member


def test_bound_mode_is_sufficient():
    pair = toy_pair(seed=5)
    a = MultiplicationCoefficient(pair.space, np.array([1.0, 2.0, 3.0, 4.0]))
    rb = admissibility_check(a, AdmissibilityParams(1, 4), method="bound")
    rd = admissibility_check(a, AdmissibilityParams(1, 4), pair, method="dense")
    assert rb.member and rd.member
    assert all(b <= d + 1e-12 for b, d in zip(rb.floors, rd.floors))


def test_maps_identity():
    M = characteristic_maps(np.eye(4), toy_pair())
    np.testing.assert_allclose(M.M1.matrix, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(M.M2.matrix, 0, atol=1e-12)
    np.testing.assert_allclose(M.M3.matrix, 0, atol=1e-12)
    np.testing.assert_allclose(M.M4.matrix, np.eye(2), atol=1e-12)


def test_maps_lower_triangular():
    pair = hand_pair()
    a = np.array([[2.0, 0.0], [3.0, 5.0]])
    M = characteristic_maps(a, pair)
    np.testing.assert_allclose(M.M3.matrix, 0, atol=1e-14)
    np.testing.assert_allclose(M.M4.matrix, [[5.0]])


@pytest.mark.parametrize("seed", range(4))
def test_schur_matches_dense_formula(seed):
    pair = toy_pair(np.array([1.0, 2.0, 0.5, 3.0]), seed=seed)
    rng = np.random.default_rng(seed + 10)
    X = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    a = X @ X.conj().T + np.eye(4)
    blk = block_decompose(a, pair)
    M = characteristic_maps(a, pair)
    ref = blk.a11 - blk.a10 @ np.linalg.solve(blk.a00, blk.a01)
    np.testing.assert_allclose(M.M4.matrix, ref, atol=1e-12)
    # (a^-1)_11^-1 equals the Schur complement
    inv_blk = block_decompose(np.linalg.inv(a), pair)
    np.testing.assert_allclose(np.linalg.inv(inv_blk.a11), ref, atol=1e-10)


def test_matrix_coefficient_hermitian_flag():
    H = HilbertSpace(np.array([1.0, 2.0]))
    # W-self-adjoint: W M is Hermitian
    M = np.linalg.solve(np.diag(H.weights), np.array([[2.0, 1.0], [1.0, 3.0]]))
    assert MatrixCoefficient(H, M).hermitian
    assert not MatrixCoefficient(H, np.array([[1.0, 1.0], [0.0, 1.0]])).hermitian


# --- probes -----------------------------------------------------------------


def test_wot_distance_basics():
    rng = np.random.default_rng(0)
    T = rng.standard_normal((3, 3))
    P = ProbeSet.random("x", 4, 3, seed=1)
    assert wot_distance(T, T, P) == 0
    assert np.isclose(wot_distance(2 * T, np.zeros((3, 3)), P), 2 * wot_distance(T, np.zeros((3, 3)), P))


def test_wot_distance_rank_one():
    x0 = np.array([1.0, 0.0, 0.0])
    y0 = np.array([0.0, 1.0, 0.0])
    P = ProbeSet("x", np.array([x0]), np.array([y0]))
    assert np.isclose(wot_distance(np.outer(y0, x0), np.zeros((3, 3)), P), 1.0)


def test_probes_are_unit_and_reproducible():
    w = np.array([1.0, 2.0, 3.0])
    P = ProbeSet.random("x", 5, 3, seed=7, wx=w, wy=w)
    np.testing.assert_allclose(np.sum(w * np.abs(P.x) ** 2, axis=1), 1)
    np.testing.assert_array_equal(P.x, ProbeSet.random("x", 5, 3, seed=7, wx=w, wy=w).x)
    with pytest.raises(ValueError):
        ProbeSet("x", np.zeros((0, 3)), np.zeros((0, 3)))
