"""Layered effective tensors and the homogenisation experiments.

Series are manufactured backwards: a smooth field ``u = C psi + D* chi`` is
declared the solution of the limit problem, the data ``(F, Gv)`` is read off
from it, and the oscillating problems are solved with the same data.
"""

from __future__ import annotations

import dataclasses
from numbers import Number

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import (
    ConstantProfile,
    LayeredProfile,
    ResolventCoefficient,
    assemble_convolution,
    limit_convolution,
    mean_value,
)
from .curldiv import (
    RightHandSide,
    SeriesReport,
    _AMG,
    probe_deviations,
    run_convergence_series,
    solve_curldiv,
)
from .grid import BoxGrid, DiscreteComplex, GeometryError, build_box_complex, periodic_rescale, sample_coefficient
from .hilbert import AdmissibilityParams, MultiplicationCoefficient, ProbeSet, bounded_floors

# ---------------------------------------------------------------------------
# closed-form effective coefficients


def _as_layered(profile) -> LayeredProfile:
    if isinstance(profile, LayeredProfile):
        return profile
    if isinstance(profile, ConstantProfile):
        return LayeredProfile([0.0], [profile.value])
    if isinstance(profile, Number) or np.shape(profile) in ((), (3, 3)):
        return LayeredProfile([0.0], [np.asarray(profile, dtype=complex)])
    raise TypeError("expected a layered profile")


def layered_hom_matrix(profile) -> np.ndarray:
    """Effective matrix of a coefficient layered along ``x1``.

    ``1/m(1/a11)`` times the rank-one pattern of the means ``m(a1j/a11)`` and
    ``m(ai1/a11)``, plus the means ``m(aij - ai1 a1j / a11)`` on the lower
    2x2 block.  Means are exact (breakpoint-weighted sums).
    """
    p = _as_layered(profile).as_matrix()
    if p.axis != 0:
        raise ValueError("the formula is stated for layering along x1")
    A = p.values
    a11 = A[:, 0, 0]
    if np.any(a11 == 0):
        raise ValueError("every layer needs a11 != 0")
    f = p.fractions
    m = lambda v: np.tensordot(f, v, axes=(0, 0))  # noqa: E731
    r = m(A[:, 0, :] / a11[:, None])  # m(a1j/a11), r[0] = 1
    c = m(A[:, :, 0] / a11[:, None])  # m(ai1/a11), c[0] = 1
    h = 1.0 / m(1.0 / a11)
    out = h * np.outer(c, r)
    out[1:, 1:] += m(A[:, 1:, 1:] - A[:, 1:, 0:1] * A[:, 0:1, 1:] / a11[:, None, None])
    return out


def effective_curldiv_coefficients(d, check_tol: float = 1e-12):
    """``(e_hom, b_hom)`` for the curl-div problem with ``a_n = d_n I``, ``b_n = d_n``.

    ``e_hom = diag(m(d), 1/m(1/d), 1/m(1/d))`` and ``b_hom = 1/m(1/d)``.
    ``e_hom`` must coincide with the inverse of the effective matrix of
    ``(1/d) I``; a mismatch beyond ``check_tol`` raises.
    """
    p = _as_layered(d)
    if not p.is_scalar:
        raise ValueError("the curl-div limit formula needs a scalar profile")
    if np.any(p.values.real <= 0):
        raise ValueError("scalar profile must have positive real part")
    md = p.mean()
    harm = 1.0 / p.mean(lambda v: 1.0 / v)
    e_hom = np.diag([md, harm, harm]).astype(complex)
    cross = np.linalg.inv(layered_hom_matrix(p.map(lambda v: 1.0 / v)))
    if np.abs(cross - e_hom).max() > check_tol * np.abs(e_hom).max():
        raise ArithmeticError("effective tensor disagrees with the inverted layered formula")
    return e_hom, complex(harm)


def diagonal_on_edges(cx_or_grid, diag) -> MultiplicationCoefficient:
    """Constant diagonal matrix acting componentwise on the edge space."""
    grid = cx_or_grid.grid if isinstance(cx_or_grid, DiscreteComplex) else cx_or_grid
    diag = np.asarray(diag)
    if diag.shape == (3, 3):
        if np.any(diag - np.diag(np.diag(diag))):
            raise ValueError("expected a diagonal matrix")
        diag = np.diag(diag)
    return MultiplicationCoefficient(grid.space("edge"), diag[grid.component_ids("edge")])


def admissibility_range(d) -> AdmissibilityParams:
    """Common ``(alpha, beta)`` for ``a = d I`` (checked through ``a^-1``) and ``b = d``."""
    p = _as_layered(d)
    v = p.values.real
    lo, hi = float(v.min()), float(v.max())
    return AdmissibilityParams(min(lo, 1 / hi), max(hi, 1 / lo))


def common_params(coefficients) -> AdmissibilityParams:
    """Largest certified class containing ``a^-1`` and ``b`` for every given pair.

    ``coefficients`` alternates curl and div coefficients: curl ones enter
    through their inverses.
    """
    floors = []
    for i, c in enumerate(coefficients):
        floors.append(bounded_floors(c.inverse() if i % 2 == 0 else c))
    f = np.array(floors)
    alpha = float(min(f[:, 0].min(), f[:, 3].min()))
    beta = float(1 / min(f[:, 1].min(), f[:, 2].min()))
    return AdmissibilityParams(alpha, max(alpha, beta))


# ---------------------------------------------------------------------------
# smooth fields and probes


def bump(X, center, radius):
    """``(1 - |x - c|^2 / R^2)^3`` inside the ball, 0 outside (C^2)."""
    r2 = np.sum((np.atleast_2d(X) - np.asarray(center)) ** 2, axis=1) / radius**2
    return np.where(r2 < 1, (1 - r2) ** 3, 0.0)


def bump_field(grid: BoxGrid, tag: str, center, radius, direction=None):
    X = grid.positions(tag)
    v = bump(X, center, radius).astype(complex)
    if tag in ("node", "cell"):
        return v
    direction = np.asarray(direction, dtype=complex)
    return v * direction[grid.component_ids(tag)]


def smooth_random_field(grid: BoxGrid, tag: str, rng, kmax: int = 3):
    """Random combination of low sine modes with ``1/|k|^2`` decay."""
    X = grid.positions(tag) / np.asarray(grid.L)
    ncomp = 1 if tag in ("node", "cell") else 3
    comp = grid.component_ids(tag)
    out = np.zeros(X.shape[0], dtype=complex)
    ks = [np.array(k) for k in np.ndindex(kmax, kmax, kmax)]
    for c in range(ncomp):
        sel = comp == c
        coef = rng.standard_normal(len(ks)) + 1j * rng.standard_normal(len(ks))
        for k, a in zip(ks, coef):
            k = k + 1
            out[sel] += a / (k @ k) * np.prod(np.sin(np.pi * k[None, :] * X[sel]), axis=1)
    return out


_CURL_BUMPS = [((0.42, 0.5, 0.55), 0.3, (0.3, 0.5, 1.0)), ((0.6, 0.45, 0.4), 0.25, (1.0, -0.4, 0.2))]
_DIV_BUMPS = [((0.5, 0.4, 0.5), 0.3), ((0.35, 0.6, 0.45), 0.25)]


def curldiv_probes(cx: DiscreteComplex, seed: int = 0, n_random: int = 3) -> dict:
    """Versioned probe family for the three deviation tables.

    faces: curls of edge bumps and ``D*`` of cell bumps; edges: ``C*`` of
    face bumps and gradients of node bumps; cells: bumps.  Each family adds
    ``n_random`` smooth random fields from ``default_rng(seed)``.
    """
    g = cx.grid
    L = np.asarray(g.L)
    rng = np.random.default_rng(seed)
    out = {}
    w = {t: cx.spaces[t].weights for t in ("face", "edge", "cell")}

    def scaled(c):
        return tuple(np.asarray(c) * L)

    vecs, labels = [], []
    for i, (c, r, d) in enumerate(_CURL_BUMPS):
        vecs.append(cx.C(bump_field(g, "edge", scaled(c), r * L.min(), d)))
        labels.append(f"curl{i}")
    for i, (c, r) in enumerate(_DIV_BUMPS):
        vecs.append(cx.Ds(bump_field(g, "cell", scaled(c), r * L.min())))
        labels.append(f"div{i}")
    for i in range(n_random):
        vecs.append(smooth_random_field(g, "face", rng))
        labels.append(f"rand{i}")
    out["solution"] = ProbeSet.from_vectors("face", vecs, w["face"], labels, seed)

    vecs, labels = [], []
    for i, (c, r, d) in enumerate(_CURL_BUMPS):
        vecs.append(cx.Cs(bump_field(g, "face", scaled(c), r * L.min(), d)))
        labels.append(f"curl{i}")
    for i, (c, r) in enumerate(_DIV_BUMPS):
        vecs.append(cx.G(bump_field(g, "node", scaled(c), r * L.min())))
        labels.append(f"grad{i}")
    for i in range(n_random):
        vecs.append(smooth_random_field(g, "edge", rng))
        labels.append(f"rand{i}")
    out["curl_flux"] = ProbeSet.from_vectors("edge", vecs, w["edge"], labels, seed)

    vecs, labels = [], []
    for i, (c, r) in enumerate(_DIV_BUMPS):
        vecs.append(bump_field(g, "cell", scaled(c), r * L.min()))
        labels.append(f"bump{i}")
    for i in range(n_random):
        vecs.append(smooth_random_field(g, "cell", rng))
        labels.append(f"rand{i}")
    out["div_flux"] = ProbeSet.from_vectors("cell", vecs, w["cell"], labels, seed)
    return out


def manufactured_field(cx: DiscreteComplex):
    """Smooth ``u = C psi + D* chi`` with bump potentials (both parts nonzero)."""
    g = cx.grid
    L = np.asarray(g.L)
    psi = bump_field(g, "edge", tuple(0.5 * L), 0.38 * L.min(), (0.6, -0.3, 1.0))
    chi = bump_field(g, "cell", tuple(np.array([0.45, 0.55, 0.5]) * L), 0.33 * L.min())
    return cx.C(psi) + cx.Ds(chi)


# ---------------------------------------------------------------------------
# experiments


@dataclasses.dataclass(eq=False)
class ExperimentSeries:
    ns: list
    report: SeriesReport
    effective: dict
    limit_summary: dict

    def table(self, kind):
        return self.report.table(kind)

    def decay(self, kind, factor=0.5, floor_rel=1e-8):
        return self.report.decay(kind, factor, floor_rel)


def check_divisibility(grid: BoxGrid, ns):
    for n in ns:
        if int(n) != n or n < 1:
            raise GeometryError(f"oscillation index {n} is not a positive integer")
        bad = [N for N in grid.N if N % n]
        if bad:
            raise GeometryError(f"n={n} does not divide the cell counts {grid.N}")


def _complex_of(grid_or_cx):
    if isinstance(grid_or_cx, DiscreteComplex):
        return grid_or_cx
    return build_box_complex(grid_or_cx, certify=False)


def run_homogenization_series(grid, d, ns, rhs: RightHandSide | None = None, probes: dict | None = None,
                              params: AdmissibilityParams | None = None, jobs: int = 1, seed: int = 0,
                              method: str = "auto") -> ExperimentSeries:
    """Curl-div problems with ``a_n = d_n I`` (edges) and ``b_n = d_n`` (cells)."""
    cx = _complex_of(grid)
    ns = list(ns)
    check_divisibility(cx.grid, ns)
    e_hom, b_hom = effective_curldiv_coefficients(d)
    a_lim = diagonal_on_edges(cx, e_hom)
    b_lim = MultiplicationCoefficient(cx.spaces["cell"], b_hom)
    if params is None:
        params = admissibility_range(d)
    u_ref = None
    if rhs is None:
        u_ref = manufactured_field(cx)
        rhs = RightHandSide.manufactured(cx, a_lim, b_lim, u_ref)
    if probes is None:
        probes = curldiv_probes(cx, seed)
    seq = []
    for n in ns:
        dn = periodic_rescale(d, n)
        seq.append((n, (sample_coefficient(dn, cx.grid, "edge"), sample_coefficient(dn, cx.grid, "cell"))))
    lim = solve_curldiv(cx, a_lim, b_lim, rhs, params, method)
    rep = run_convergence_series(cx, seq, (a_lim, b_lim), rhs, probes, params, method, jobs, lim)
    limit_summary = dict(rep.summaries["limit"])
    if u_ref is not None:
        fs = cx.spaces["face"]
        limit_summary["manufactured_error"] = fs.norm(lim.u - u_ref) / fs.norm(u_ref)
    eff = {"e_hom": np.diag(e_hom), "b_hom": b_hom, "alpha": params.alpha, "beta": params.beta}
    rep.meta.update({"experiment": "homogenization", "profile": repr(d), "grid": list(cx.grid.N), "seed": seed})
    return ExperimentSeries(ns, rep, eff, limit_summary)


def run_nonlocal_series(grid, k, ns, rhs: RightHandSide | None = None, probes: dict | None = None,
                        mode: str = "neumann", jobs: int = 1, seed: int = 0, method: str = "auto") -> ExperimentSeries:
    """Curl-div problems with ``a_n = b_n = (1 - k_n*)^-1`` against the mean-kernel limit."""
    cx = _complex_of(grid)
    ns = list(ns)
    g = cx.grid

    def coeffs(K_edge, K_cell):
        return ResolventCoefficient(K_edge, mode), ResolventCoefficient(K_cell, mode)

    a_lim, b_lim = coeffs(limit_convolution(k, g, "edge"), limit_convolution(k, g, "cell"))
    kappa = max(a_lim.kappa, b_lim.kappa)
    seq = []
    for n in ns:
        an, bn = coeffs(assemble_convolution(k, n, g, "edge"), assemble_convolution(k, n, g, "cell"))
        kappa = max(kappa, an.kappa, bn.kappa)
        seq.append((n, (an, bn)))
    params = common_params([c for _, pair in seq for c in pair] + [a_lim, b_lim])
    u_ref = None
    if rhs is None:
        u_ref = manufactured_field(cx)
        rhs = RightHandSide.manufactured(cx, a_lim, b_lim, u_ref)
    if probes is None:
        probes = curldiv_probes(cx, seed)
    lim = solve_curldiv(cx, a_lim, b_lim, rhs, params, method)
    rep = run_convergence_series(cx, seq, (a_lim, b_lim), rhs, probes, params, method, jobs, lim)
    limit_summary = dict(rep.summaries["limit"])
    if u_ref is not None:
        fs = cx.spaces["face"]
        limit_summary["manufactured_error"] = fs.norm(lim.u - u_ref) / fs.norm(u_ref)
    eff = {"mean_kernel": complex(mean_value(k)), "max_norm": kappa}
    rep.meta.update({"experiment": "nonlocal", "kernel": repr(k), "grid": list(g.N), "seed": seed, "mode": mode})
    return ExperimentSeries(ns, rep, eff, limit_summary)


def local_H_probe(grid, c, ns, f=None, probes: dict | None = None, seed: int = 0, limit=None) -> SeriesReport:
    """Scalar Dirichlet problems ``D c_n D* u_n = f`` on cells.

    ``c`` is a unit-periodic profile (scalar or 3x3) for the face coefficient
    and ``c_n = c(n .)``; the limit defaults to ``layered_hom_matrix(c)``.
    Kinds: ``solution`` (cells) and ``flux`` (faces, ``c_n D* u_n``).
    """
    cx = _complex_of(grid)
    g = cx.grid
    ns = list(ns)
    check_divisibility(g, ns)
    if limit is None:
        limit = layered_hom_matrix(c)
    limit = np.asarray(limit)
    if limit.shape == (3, 3) and not np.any(limit - np.diag(np.diag(limit))):
        limit = np.diag(limit)
    c_lim = sample_coefficient(limit, g, "face")
    wc = cx.spaces["cell"].weights
    if f is None:
        f = bump_field(g, "cell", tuple(0.5 * np.asarray(g.L)), 0.4 * min(g.L))
        f = f + 0.5 * smooth_random_field(g, "cell", np.random.default_rng(seed + 101))
    f = np.asarray(f, dtype=complex)
    if probes is None:
        full = curldiv_probes(cx, seed)
        probes = {"solution": full["div_flux"], "flux": full["solution"]}
    Ds = cx.Ds.matrix
    wf = cx.spaces["face"].weights

    def solve(coef):
        m = coef.sparse() if hasattr(coef, "sparse") else None
        if m is None:
            raise TypeError("local coefficients must be sparse")
        K = (Ds.T @ sp.diags(wf) @ m @ Ds).tocsr()
        rhs = wc * f
        herm = isinstance(coef, MultiplicationCoefficient) and np.all(coef.values.imag == 0) and np.all(coef.values.real > 0)
        if herm and K.shape[0] > 20000:
            u = _AMG(K.real).solve(rhs)
        else:
            u = spla.splu(K.tocsc().astype(complex)).solve(rhs)
        return u, coef.apply(Ds @ u)

    u_ref, q_ref = solve(c_lim)
    scales = {"solution": cx.spaces["cell"].norm(u_ref), "flux": cx.spaces["face"].norm(q_ref)}
    rows, summaries = [], {}
    for n in ns:
        u, q = solve(sample_coefficient(periodic_rescale(c, n), g, "face"))
        summaries[n] = {"norm_u": cx.spaces["cell"].norm(u)}
        for kind, diff, w in (("solution", u - u_ref, wc), ("flux", q - q_ref, wf)):
            devs = probe_deviations(probes[kind], w, diff)
            rows.extend((n, pid, kind, float(dv)) for pid, dv in zip(probes[kind].labels, devs))
    return SeriesReport(ns, rows, summaries, scales, {"experiment": "local_H", "limit": np.asarray(limit).tolist()})
