import numpy as np
import pytest
import scipy.linalg as sla

from cdhom.coefficients import ConstantProfile, two_phase
from cdhom.curldiv import CoercivityError, solve_lax_milgram
from cdhom.grid import BoxGrid, GeometryError
from cdhom.hilbert import AdmissibilityParams
from cdhom.homogenization import layered_hom_matrix
from cdhom.impedance import (
    DiagBlockCoefficient,
    _stack_probes,
    build_impedance_operator,
    diag_characterization_experiment,
    impedance_admissibility,
    impedance_blocks,
    impedance_characteristic_maps,
    impedance_kernel_range,
    impedance_probes,
    manufactured_impedance_data,
    predicted_diag_limit,
    probe_characteristic_maps,
    run_impedance_series,
    solve_impedance,
    trace_rows,
)

D14 = two_phase(1.0, 4.0)
NORMALS = [s * np.eye(3)[a] for a in range(3) for s in (1, -1)]


@pytest.fixture(scope="module")
def op3():
    return build_impedance_operator(BoxGrid(3))


@pytest.fixture(scope="module")
def op4():
    return build_impedance_operator(BoxGrid(4))


def identity(op):
    return DiagBlockCoefficient(op.stack, 1.0, 1.0, 1.0, 1.0)


def random_diag(op, seed):
    rng = np.random.default_rng(seed)
    nn = op.n_nodes
    X = rng.standard_normal((nn, 3, 3)) + 1j * rng.standard_normal((nn, 3, 3))
    a_e = np.eye(3) + 0.2 * X @ np.conj(np.swapaxes(X, 1, 2))
    a_h = np.eye(3) * rng.uniform(0.5, 2, (nn, 1, 1)) + 0.1j * np.eye(3)
    return DiagBlockCoefficient(op.stack, a_e, rng.uniform(0.5, 2, nn), a_h, rng.uniform(0.5, 2, nn))


def dense_range_basis(op):
    """Weight-orthonormal basis of range(A0) from a plain SVD."""
    s = np.sqrt(op.stack.weights)
    U, sv, _ = np.linalg.svd(s[:, None] * op.A0.matrix.toarray(), full_matrices=False)
    U = U[:, sv > 1e-10 * sv[0]]
    return U / s[:, None]


# --- operator ----------------------------------------------------------------------


def test_grid_too_small():
    with pytest.raises(GeometryError):
        build_impedance_operator(BoxGrid(2))
    with pytest.raises(ValueError):
        build_impedance_operator(BoxGrid(3), edge_policy="corners")


def test_constant_pair_needs_zero():
    # stacking the rows of all six faces on a single (E, H) leaves only zero
    R = np.vstack([trace_rows(nu) for nu in NORMALS])
    assert sla.null_space(R).shape[1] == 0


def test_trace_rows_rank_two():
    for nu in NORMALS:
        R = trace_rows(nu)
        assert R.shape == (2, 6) and np.linalg.matrix_rank(R) == 2


@pytest.mark.parametrize("N", [3, 4, 5])
def test_kernel_trivial(N):
    op = build_impedance_operator(BoxGrid(N))
    kr = impedance_kernel_range(op)
    assert kr.kernel.shape[1] == 0
    assert kr.c > 0


def test_unconstrained_kernel_holds_constants():
    op = build_impedance_operator(BoxGrid(3), constrained=False)
    kr = impedance_kernel_range(op)
    assert kr.kernel.shape[1] >= 6
    # every constant (E, H) is in the kernel
    const = np.kron(np.eye(6), np.ones((op.n_nodes, 1)))
    np.testing.assert_allclose(op.matrix @ const, 0, atol=1e-12)


def test_edge_policy_none_kernel_measured():
    # leaving edges and corners free admits a small kernel at N=3
    op = build_impedance_operator(BoxGrid(3), edge_policy="none")
    assert impedance_kernel_range(op).kernel.shape[1] == 4


def test_basis_orthonormal_and_constrained(op3):
    B = op3.basis.toarray()
    G = B.T @ (op3.ambient.weights[:, None] * B)
    np.testing.assert_allclose(G, np.eye(B.shape[1]), atol=1e-12)
    assert np.abs(op3.constraints @ B).max() <= 1e-14
    assert op3.domain_dim == B.shape[0] - np.linalg.matrix_rank(op3.constraints.toarray())


def test_zero_field(op3):
    x = np.zeros(op3.ambient.dim)
    assert op3.constraint_residual(x) == 0
    assert np.abs(op3.A0(op3.to_coords(x))).max() == 0


def test_range_projector_idempotent(op3):
    kr = impedance_kernel_range(op3)
    v = np.random.default_rng(0).standard_normal(op3.stack.dim)
    p = kr.project(v, op3.stack.weights)
    np.testing.assert_allclose(kr.project(p, op3.stack.weights), p, atol=1e-12)
    np.testing.assert_allclose(op3.sparse_engine.project_range(v), p, atol=1e-10)


# --- coefficients ------------------------------------------------------------------


def test_diag_block_layout(op3):
    nn = op3.n_nodes
    a = DiagBlockCoefficient(op3.stack, np.diag([1.0, 2.0, 3.0]), 4.0, 5.0, 6.0)
    d = np.diag(a.to_dense())
    np.testing.assert_array_equal(d, np.repeat([1, 2, 3, 4, 5, 5, 5, 6], nn))
    np.testing.assert_allclose(a.apply_inverse(a.apply(np.ones(8 * nn))), 1, atol=1e-15)


def test_diag_block_rejects_nonpositive(op3):
    with pytest.raises(ValueError):
        DiagBlockCoefficient(op3.stack, 1.0, -1.0, 1.0, 1.0)


# --- solving -----------------------------------------------------------------------


def test_zero_rhs(op3):
    sol = solve_impedance(op3, random_diag(op3, 0), np.zeros(op3.stack.dim))
    assert np.abs(sol.x).max() == 0


@pytest.mark.parametrize("seed", range(3))
def test_manufactured_recovery(op3, seed):
    a = identity(op3) if seed == 0 else random_diag(op3, seed)
    x0, F = manufactured_impedance_data(op3, a, seed)
    sol = solve_impedance(op3, a, F)
    assert op3.ambient.norm(sol.x - x0) <= 1e-9 * op3.ambient.norm(x0)
    assert sol.residual <= 1e-10
    assert sol.constraint_residual <= 1e-12


@pytest.mark.parametrize("kind", ["flux", "l2"])
def test_agrees_with_lax_milgram(op3, kind):
    a = random_diag(op3, 4)
    rng = np.random.default_rng(5)
    dim = op3.stack.dim if kind == "flux" else op3.ambient.dim
    F = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    sol = solve_impedance(op3, a, F, kind)
    if kind == "flux":
        ref = solve_lax_milgram(op3.A0, a.to_dense(), F, "flux")
    else:
        # the ambient functional in domain coordinates
        ref = solve_lax_milgram(op3.A0, a.to_dense(), op3.to_coords(F), "l2")
    assert np.linalg.norm(sol.coords - ref) <= 1e-10 * np.linalg.norm(ref)


def test_dense_and_sparse_agree(op4):
    a = random_diag(op4, 6)
    _, F = manufactured_impedance_data(op4, a, 1)
    d = solve_impedance(op4, a, F, method="dense")
    s = solve_impedance(op4, a, F, method="sparse")
    assert op4.ambient.norm(d.x - s.x) <= 1e-9 * op4.ambient.norm(d.x)
    assert s.residual <= 1e-10


def test_linearity(op3):
    a = random_diag(op3, 7)
    rng = np.random.default_rng(8)
    F1, F2 = rng.standard_normal((2, op3.stack.dim))
    x = solve_impedance(op3, a, F1 + 2 * F2).x
    np.testing.assert_allclose(x, solve_impedance(op3, a, F1).x + 2 * solve_impedance(op3, a, F2).x, atol=1e-10)


def test_coercivity_failure(op3):
    # a negative-definite block is not accepted by the dense formula
    a = -np.eye(op3.stack.dim)
    with pytest.raises(CoercivityError):
        solve_impedance(op3, a, np.ones(op3.stack.dim), method="dense")


# --- admissibility and maps -----------------------------------------------------------


@pytest.mark.parametrize("alpha,beta,member", [(1, 1, True), (0.5, 2, True), (1.1, 2, False), (0.5, 0.9, False)])
def test_identity_admissibility(op3, alpha, beta, member):
    rep = impedance_admissibility(identity(op3), AdmissibilityParams(alpha, beta), op3)
    np.testing.assert_allclose(rep.floors, 1, atol=1e-12)
    assert rep.member is member


def test_scaled_b_e_leaves_class(op3):
    beta = 2.0
    a = DiagBlockCoefficient(op3.stack, 1.0, 1 / (2 * beta), 1.0, 1.0)
    rep = impedance_admissibility(a, AdmissibilityParams(1 / beta, beta), op3)
    assert not rep.member


def test_constant_floors_match_dense_eigensolve(op3):
    a = DiagBlockCoefficient(op3.stack, np.diag([2.0, 3.0, 2.5]), 1.5, 4.0, 0.8)
    rep = impedance_admissibility(a, AdmissibilityParams(0.5, 2), op3)
    U = dense_range_basis(op3)
    w = op3.stack.weights
    a00 = (w[:, None] * U).T @ a.to_dense() @ U
    # a00 in a non-orthonormal basis: generalized problem with the Gram matrix
    gram = (w[:, None] * U).T @ U
    ref = sla.eigh(0.5 * (a00 + a00.T), gram, eigvals_only=True)[0]
    assert abs(rep.floors[0] - ref) <= 1e-10 * abs(ref)
    # compressed floors sit between the entrywise extremes
    assert 0.8 - 1e-12 <= rep.floors[0] <= 4.0 + 1e-12
    # the large-grid bound never exceeds the dense floors
    bound = impedance_admissibility(a, AdmissibilityParams(0.5, 2), op3, method="sparse")
    assert bound.method == "bound"
    assert all(b <= f + 1e-12 for b, f in zip(bound.floors, rep.floors))


def test_maps_identity(op3):
    M = impedance_characteristic_maps(identity(op3), op3)
    n0, n1 = M.M1.matrix.shape[0], M.M4.matrix.shape[0]
    np.testing.assert_allclose(M.M1.matrix, np.eye(n0), atol=1e-10)
    np.testing.assert_allclose(M.M2.matrix, 0, atol=1e-10)
    np.testing.assert_allclose(M.M3.matrix, 0, atol=1e-10)
    np.testing.assert_allclose(M.M4.matrix, np.eye(n1), atol=1e-10)


def test_maps_lower_triangular(op3):
    B0, B1 = op3.reduced.range_basis, op3.complement_basis
    w = op3.stack.weights
    n0, n1 = B0.shape[1], B1.shape[1]
    rng = np.random.default_rng(0)
    X00 = np.eye(n0) * 2 + 0.1 * rng.standard_normal((n0, n0))
    X11 = np.eye(n1) * 3
    X10 = rng.standard_normal((n1, n0))
    P0, P1 = (w[:, None] * B0).conj().T, (w[:, None] * B1).conj().T
    a = B0 @ X00 @ P0 + B1 @ X11 @ P1 + B1 @ X10 @ P0
    M = impedance_characteristic_maps(a, op3)
    np.testing.assert_allclose(M.M3.matrix, 0, atol=1e-10)
    np.testing.assert_allclose(M.M4.matrix, X11, atol=1e-10)
    np.testing.assert_allclose(M.M1.matrix, np.linalg.inv(X00), atol=1e-10)
    np.testing.assert_allclose(M.M2.matrix, X10 @ np.linalg.inv(X00), atol=1e-10)


def test_schur_matches_dense(op3):
    a = random_diag(op3, 9)
    blk = impedance_blocks(a, op3)
    M = impedance_characteristic_maps(a, op3, blk)
    ref = blk.a11 - blk.a10 @ np.linalg.solve(blk.a00, blk.a01)
    np.testing.assert_allclose(M.M4.matrix, ref, atol=1e-10 * np.abs(ref).max())


def test_probe_maps_match_dense(op3):
    a = random_diag(op3, 10)
    x0, x1 = _stack_probes(op3, op3.sparse_engine, 3, seed=0)
    vals = probe_characteristic_maps(a, op3.sparse_engine, x0, x1)
    M = impedance_characteristic_maps(a, op3)
    w = op3.stack.weights
    c = (w[:, None] * op3.reduced.range_basis).conj().T @ x0.T
    d = (w[:, None] * op3.complement_basis).conj().T @ x1.T
    ref = {
        "M1": np.sum(np.conj(c) * (M.M1.matrix @ c), axis=0),
        "M2": np.sum(np.conj(d) * (M.M2.matrix @ c), axis=0),
        "M3": np.sum(np.conj(c) * (M.M3.matrix @ d), axis=0),
        "M4": np.sum(np.conj(d) * (M.M4.matrix @ d), axis=0),
    }
    for k in ref:
        np.testing.assert_allclose(vals[k], ref[k], atol=1e-9, err_msg=k)


# --- series and the diag experiment --------------------------------------------------


def test_constant_sequence_zero_deviations(op3):
    a = random_diag(op3, 11)
    _, F = manufactured_impedance_data(op3, a, 0)
    rep = run_impedance_series(op3, [(1, a), (2, a)], a, F)
    assert rep.max_deviation() == 0.0
    assert rep.kinds == ["solution"] + [f"flux_{k}" for k in range(8)]


def test_series_probes_required(op3):
    a = identity(op3)
    with pytest.raises(ValueError):
        run_impedance_series(op3, [(1, a)], a, np.zeros(op3.stack.dim), probes={})


def test_probe_families(op3):
    P = impedance_probes(op3, seed=0)
    assert set(P) == {"solution"} | {f"flux_{k}" for k in range(8)}
    assert all(len(p) >= 5 for p in P.values())


def test_predicted_limit_values():
    lim = predicted_diag_limit(1.0, D14, 1.0, 1.0)
    assert abs(lim["b_e"] - 1.6) < 1e-12
    # the a-blocks are inverted H-limits of the reciprocal profile, which is
    # the curl-div e_hom rather than layered_hom_matrix(d I) = diag(1.6, 2.5, 2.5)
    lim = predicted_diag_limit(D14, 1.0, 1.0, 1.0)
    np.testing.assert_allclose(lim["a_e"], np.diag([2.5, 1.6, 1.6]), atol=1e-12)
    np.testing.assert_allclose(layered_hom_matrix(D14), np.diag([1.6, 2.5, 2.5]), atol=1e-12)


def test_diag_experiment_constant_is_zero(op3):
    prof = {"a_e": 2.0, "b_e": ConstantProfile(1.5), "a_h": 1.0, "b_h": 3.0}
    ex = diag_characterization_experiment(op3, prof, [1, 3], n_probes=2, local_grid=BoxGrid(6))
    assert ex.side_i.max_deviation() <= 1e-12
    assert ex.side_ii.max_deviation() <= 1e-12


def test_diag_experiment_b_e_small_grid(op4):
    prof = {"a_e": 1.0, "b_e": D14, "a_h": 1.0, "b_h": 1.0}
    ex = diag_characterization_experiment(op4, prof, [1, 2], n_probes=2)
    assert abs(ex.predicted["b_e"] - 1.6) < 1e-12
    assert ex.side_i.meta["side"] == "i"
    assert {k[0] for k in ex.decay()} == {"i", "ii"}
    with pytest.raises(GeometryError):
        diag_characterization_experiment(op4, prof, [3])
