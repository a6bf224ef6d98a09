import numpy as np
import pytest

from cdhom.coefficients import two_phase
from cdhom.curldiv import (
    AdmissibilityError,
    CoercivityError,
    RightHandSide,
    SeriesReport,
    oracle_monolithic_solve,
    run_convergence_series,
    solve_curldiv,
    solve_lax_milgram,
    verify_continuity_estimate,
)
from cdhom.grid import BoxGrid, build_box_complex, sample_coefficient
from cdhom.hilbert import AdmissibilityParams, HilbertSpace, LinearOp, MultiplicationCoefficient, ProbeSet
from cdhom.homogenization import common_params, curldiv_probes, manufactured_field


@pytest.fixture(scope="module")
def cx3():
    return build_box_complex(BoxGrid(3))


def random_problem(cx, seed):
    rng = np.random.default_rng(seed)
    a = MultiplicationCoefficient(cx.spaces["edge"], rng.uniform(0.5, 2, cx.dims["edge"]) + 0.3j * rng.uniform(-1, 1, cx.dims["edge"]))
    b = MultiplicationCoefficient(cx.spaces["cell"], rng.uniform(0.5, 2, cx.dims["cell"]))
    rhs = RightHandSide(rng.standard_normal(cx.dims["edge"]) + 1j * rng.standard_normal(cx.dims["edge"]),
                        rng.standard_normal(cx.dims["cell"]))
    return a, b, rhs, common_params([a, b])


# --- Lax-Milgram ---------------------------------------------------------------


def test_lax_milgram_manufactured_identity():
    rng = np.random.default_rng(0)
    A = LinearOp(HilbertSpace(rng.uniform(0.5, 2, 4)), HilbertSpace(rng.uniform(0.5, 2, 6)),
                 rng.standard_normal((6, 3)) @ rng.standard_normal((3, 4)))
    from cdhom.hilbert import reduced_operator

    red = reduced_operator(A)
    x0 = red.project_corange(rng.standard_normal(4))
    x = solve_lax_milgram(A, np.eye(6), A(x0), "flux")
    np.testing.assert_allclose(x, x0, atol=1e-12)
    np.testing.assert_array_equal(solve_lax_milgram(A, np.eye(6), np.zeros(6)), 0)


def test_lax_milgram_vs_normal_equations():
    rng = np.random.default_rng(1)
    wd, wc = rng.uniform(0.5, 2, 5), rng.uniform(0.5, 2, 7)
    M = rng.standard_normal((7, 5))
    A = LinearOp(HilbertSpace(wd), HilbertSpace(wc), M)
    X = rng.standard_normal((7, 7)) + 1j * rng.standard_normal((7, 7))
    a = np.linalg.solve(np.diag(wc), X @ X.conj().T) + np.eye(7)  # W-Hermitian positive
    F = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    x = solve_lax_milgram(A, a, F, "l2")
    # <a M x, M y>_W = <F, y>_W for all y:  M^H W a M x = W F
    K = M.conj().T @ np.diag(wc) @ a @ M
    np.testing.assert_allclose(K @ x, wd * F, atol=1e-9)


def test_lax_milgram_coercivity_failure():
    H = HilbertSpace.euclidean(2)
    with pytest.raises(CoercivityError):
        solve_lax_milgram(LinearOp(H, H, np.eye(2)), np.diag([1.0, -1.0]), np.ones(2))


# --- curl-div solves ----------------------------------------------------------------


def test_zero_rhs_gives_zero(cx3):
    a, b, _, params = random_problem(cx3, 0)
    sol = solve_curldiv(cx3, a, b, RightHandSide.zero(cx3), params)
    assert cx3.spaces["face"].norm(sol.u) <= 1e-12
    assert np.abs(oracle_monolithic_solve(cx3, a, b, RightHandSide.zero(cx3)).u).max() <= 1e-12
    est = verify_continuity_estimate(sol, params, cx3)
    assert est.lhs == 0 and est.holds


def test_identity_manufactured(cx3):
    u_ex = manufactured_field(cx3)
    one_e, one_c = np.ones(cx3.dims["edge"]), np.ones(cx3.dims["cell"])
    rhs = RightHandSide.manufactured(cx3, one_e, one_c, u_ex)
    sol = solve_curldiv(cx3, one_e, one_c, rhs, AdmissibilityParams(1, 1))
    fs = cx3.spaces["face"]
    assert fs.norm(sol.u - u_ex) <= 1e-9 * fs.norm(u_ex)
    mono = oracle_monolithic_solve(cx3, one_e, one_c, rhs)
    assert fs.norm(mono.u - u_ex) <= 1e-9 * fs.norm(u_ex)


@pytest.mark.parametrize("seed", range(5))
def test_split_matches_monolithic(cx3, seed):
    a, b, rhs, params = random_problem(cx3, seed)
    s = solve_curldiv(cx3, a, b, rhs, params, "dense")
    m = oracle_monolithic_solve(cx3, a, b, rhs)
    fs = cx3.spaces["face"]
    assert fs.norm(s.u - m.u) <= 1e-8 * fs.norm(m.u)
    assert max(s.residual_curl, s.residual_div) <= 1e-10
    # split structure
    assert np.array_equal(s.u, s.u1 + s.u2)
    assert abs(fs.inner(s.u1, s.u2)) <= 1e-12 * fs.norm(s.u) ** 2
    assert np.abs(cx3.D(s.u1)).max() <= 1e-12 * max(1.0, np.abs(s.u1).max())
    assert s.estimate.holds and s.estimate.slack >= 0


def test_layered_matches_monolithic():
    cx = build_box_complex(BoxGrid(4))
    d = two_phase(1.0, 4.0)
    a, b = sample_coefficient(d, cx.grid, "edge"), sample_coefficient(d, cx.grid, "cell")
    rhs = RightHandSide.manufactured(cx, a, b, manufactured_field(cx))
    s = solve_curldiv(cx, a, b, rhs, AdmissibilityParams(0.25, 4))
    m = oracle_monolithic_solve(cx, a, b, rhs)
    fs = cx.spaces["face"]
    assert fs.norm(s.u - m.u) <= 1e-8 * fs.norm(m.u)


def test_dense_and_sparse_agree():
    cx = build_box_complex(BoxGrid(4))
    d = two_phase(1.0, 4.0)
    a, b = sample_coefficient(d, cx.grid, "edge"), sample_coefficient(d, cx.grid, "cell")
    rhs = RightHandSide.manufactured(cx, a, b, manufactured_field(cx))
    sd = solve_curldiv(cx, a, b, rhs, method="dense")
    ss = solve_curldiv(cx, a, b, rhs, method="sparse")
    fs = cx.spaces["face"]
    assert fs.norm(sd.u - ss.u) <= 1e-9 * fs.norm(sd.u)


def test_linearity(cx3):
    a, b, r1, params = random_problem(cx3, 1)
    _, _, r2, _ = random_problem(cx3, 2)
    u = solve_curldiv(cx3, a, b, r1 + r2, params).u
    u12 = solve_curldiv(cx3, a, b, r1, params).u + solve_curldiv(cx3, a, b, r2, params).u
    np.testing.assert_allclose(u, u12, atol=1e-10 * np.abs(u).max())


def test_inadmissible_coefficient_rejected(cx3):
    a, b, rhs, params = random_problem(cx3, 3)
    with pytest.raises(AdmissibilityError) as exc:
        solve_curldiv(cx3, a, b, rhs, AdmissibilityParams(params.alpha * 4, params.alpha * 4))
    assert len(exc.value.report.floors) == 4


def test_estimate_gated_on_false_params(cx3):
    a, b, rhs, params = random_problem(cx3, 4)
    sol = solve_curldiv(cx3, a, b, rhs, params)
    bad = AdmissibilityParams(2 * params.beta, 2 * params.beta)
    est = verify_continuity_estimate(sol, bad, cx3)
    assert est.holds is None and not est.admissible and np.isnan(est.bound)


# --- series -----------------------------------------------------------------------


def test_constant_sequence_zero_deviations(cx3):
    a, b, rhs, params = random_problem(cx3, 5)
    rep = run_convergence_series(cx3, [(1, (a, b)), (2, (a, b))], (a, b), rhs, curldiv_probes(cx3), params)
    assert rep.max_deviation() == 0.0
    assert rep.kinds == ["solution", "curl_flux", "div_flux"]


def test_empty_probes_rejected(cx3):
    a, b, rhs, _ = random_problem(cx3, 6)
    with pytest.raises(ValueError):
        run_convergence_series(cx3, [(1, (a, b))], (a, b), rhs, {})


def test_failed_solve_recorded(cx3):
    a, b, rhs, params = random_problem(cx3, 7)
    bad = MultiplicationCoefficient(cx3.spaces["cell"], -1.0)
    rep = run_convergence_series(cx3, [(1, (a, bad)), (2, (a, b))], (a, b), rhs, curldiv_probes(cx3), params)
    assert "error" in rep.summaries[1]
    assert {r[0] for r in rep.rows} == {2}


def test_series_report_csv_and_decay():
    rows = [(1, "p", "solution", 1.0), (2, "p", "solution", 0.4), (1, "q", "solution", 0.0), (2, "q", "solution", 1e-20)]
    rep = SeriesReport([1, 2], rows, {}, {"solution": 1.0})
    assert rep.to_csv().splitlines()[0] == "n,probe_id,kind,deviation"
    d = rep.decay("solution")
    assert d["p"][2] and d["q"][2]
    assert not rep.decay("solution", factor=0.3)["p"][2]


def test_probe_labels_documented(cx3):
    P = curldiv_probes(cx3, seed=0)
    assert len(P["solution"]) >= 5 and len(P["curl_flux"]) >= 5 and len(P["div_flux"]) >= 5
    assert isinstance(P["solution"], ProbeSet)
