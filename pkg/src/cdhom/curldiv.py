"""Curl-div solver on the staggered box complex.

The unknown ``u`` lives on faces.  With ``C*`` (faces -> edges) and
``D`` (faces -> cells) the problem is

    <a C*u, C*phi>_edges = <F, C*phi>_edges    for phi in range(C),
    <b D u, D psi>_cells  = <Gv, D psi>_cells   for psi in range(D*),

and ``u = u1 + u2`` with ``u1`` in range(C) and ``u2`` in range(D*).  The
right-hand side is stored through its Riesz-type representatives ``F``
(edges) and ``Gv`` (cells).

Two realizations of the split are provided.  The dense one follows the
three-factor formula (dual map, compressed coefficient, reduced operator)
through stored orthonormal bases.  The sparse one never forms a basis: the
curl part reduces to a nodal Neumann problem for the gradient correction
and a vector Laplacian, the div part to a cell Dirichlet Laplacian.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np
import pyamg
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DiscreteComplex, sample_coefficient
from .hilbert import (
    AdmissibilityParams,
    Coefficient,
    LinearOp,
    MatrixCoefficient,
    MultiplicationCoefficient,
    ProbeSet,
    ReducedOp,
    admissibility_check,
    hermitian_floor,
    reduced_operator,
)

#: faces above this count go through the sparse split
DENSE_FACE_LIMIT = 3000
ITER_TOL = 1e-12


class CoercivityError(ValueError):
    pass


class AdmissibilityError(ValueError):
    def __init__(self, which, report):
        super().__init__(f"coefficient {which} is not admissible: floors {report.floors}")
        self.which = which
        self.report = report


# ---------------------------------------------------------------------------
# data types


@dataclasses.dataclass(frozen=True, eq=False)
class RightHandSide:
    """``f(phi) = <F, C*phi>`` and ``g(psi) = <Gv, D psi>``."""

    F: np.ndarray
    Gv: np.ndarray

    @classmethod
    def zero(cls, cx: DiscreteComplex) -> "RightHandSide":
        return cls(np.zeros(cx.dims["edge"], complex), np.zeros(cx.dims["cell"], complex))

    @classmethod
    def manufactured(cls, cx: DiscreteComplex, a, b, u) -> "RightHandSide":
        """Data for which ``u`` solves the problem with coefficients ``a``, ``b``."""
        a = as_coefficient(a, cx, "edge")
        b = as_coefficient(b, cx, "cell")
        return cls(a.apply(cx.Cs(u)), b.apply(cx.D(u)))

    def __add__(self, other):
        return RightHandSide(self.F + other.F, self.Gv + other.Gv)

    def __mul__(self, s):
        return RightHandSide(s * self.F, s * self.Gv)

    __rmul__ = __mul__


class EstimateReport(NamedTuple):
    lhs: float  # ||u|| + ||C*u|| + ||D u||
    bound: float  # (1/alpha + beta) c (||f|| + ||g||); nan if not asserted
    slack: float
    holds: bool | None  # None when the claimed parameters fail admissibility
    c: float
    c1: float
    c2: float
    norm_f: float
    norm_g: float
    admissible: bool


@dataclasses.dataclass(eq=False)
class Solution:
    u: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    curl_flux: np.ndarray  # a C* u on edges
    div_flux: np.ndarray  # b D u on cells
    residual_curl: float
    residual_div: float
    method: str
    a: Coefficient | None = None
    b: Coefficient | None = None
    estimate: EstimateReport | None = None
    info: dict = dataclasses.field(default_factory=dict)


def as_coefficient(a, cx: DiscreteComplex, tag: str) -> Coefficient:
    if isinstance(a, Coefficient):
        if a.space.dim != cx.dims[tag]:
            raise ValueError(f"coefficient does not act on the {tag} space")
        return a
    if isinstance(a, np.ndarray) and a.shape == (cx.dims[tag],):
        return MultiplicationCoefficient(cx.spaces[tag], a)
    if isinstance(a, np.ndarray) and a.ndim == 2 and a.shape == (cx.dims[tag],) * 2:
        return MatrixCoefficient(cx.spaces[tag], a)
    if sp.issparse(a):
        return MatrixCoefficient(cx.spaces[tag], a)
    return sample_coefficient(a, cx.grid, tag)


# ---------------------------------------------------------------------------
# dense engine


def _functional_values(red: ReducedOp, F, kind: str):
    """Values ``F(V_j)`` divided by ``s_j`` on the corange basis."""
    if kind == "flux":
        return red.range_coords(F)
    if kind == "l2":
        return red.corange_coords(F) / red.singular_values
    if kind == "coords":
        return np.asarray(F) / red.singular_values
    raise ValueError(f"unknown functional kind {kind!r}")


def solve_lax_milgram(A, a, F, kind: str = "flux", alpha: float = 0.0):
    """Unique ``x`` orthogonal to ker(A) with ``<a A x, A y> = F(y)`` for all y.

    ``kind`` selects the representation of ``F``: ``"flux"`` means
    ``F(y) = <F, A y>``, ``"l2"`` means ``F(y) = <F, y>``.  The solve runs
    through the dual map, the compressed coefficient on range(A) and the
    reduced operator, in that order.
    """
    red = A if isinstance(A, ReducedOp) else reduced_operator(A)
    if red.rank == 0:
        return np.zeros(red.op.domain.dim, dtype=complex)
    U = red.range_basis
    aU = a.apply(U.astype(complex)) if isinstance(a, Coefficient) else np.asarray(a) @ U
    Ac = red.op.codomain.gram(aU, U)  # U^H W a U
    floor = hermitian_floor(Ac)
    scale = max(np.abs(Ac).max(), 1e-300)
    if floor <= max(alpha, 1e-12 * scale):
        raise CoercivityError(f"compressed coefficient has Hermitian floor {floor:.3g}")
    rhs = _functional_values(red, F, kind)
    c = sla.solve(Ac, rhs)  # coordinates of A x in the range basis
    return red.corange_basis @ (c / _col(red.singular_values, c))


def _col(s, like):
    return s.reshape((-1,) + (1,) * (np.ndim(like) - 1))


class _DenseEngine:
    def __init__(self, cx: DiscreteComplex):
        self.cx = cx
        self.red_cs = reduced_operator(cx.Cs)  # faces -> edges
        self.red_d = reduced_operator(cx.D)  # faces -> cells

    def solve(self, a, b, rhs, alpha=0.0):
        u1 = solve_lax_milgram(self.red_cs, a, rhs.F, "flux", alpha)
        u2 = solve_lax_milgram(self.red_d, b, rhs.Gv, "flux", alpha)
        return u1, u2

    @property
    def c1(self):
        return self.red_cs.min_singular_value

    @property
    def c2(self):
        return self.red_d.min_singular_value

    def dual_norms(self, rhs):
        out = []
        for red, r in ((self.red_cs, rhs.F), (self.red_d, rhs.Gv)):
            c = red.range_coords(r)
            s2 = red.singular_values**2
            out.append(float(np.sqrt(np.sum(np.abs(c) ** 2 * s2 / (1 + s2)))))
        return tuple(out)


# ---------------------------------------------------------------------------
# sparse engine


class _AMG:
    """Real symmetric positive (semi)definite solve with SA-AMG + CG."""

    def __init__(self, A):
        self.A = A.tocsr().astype(float)
        self.ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")

    def solve(self, b, tol=ITER_TOL):
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self.solve(b.real, tol) + 1j * self.solve(b.imag, tol)
        if not np.any(b):
            return np.zeros_like(b)
        x = self.ml.solve(b, tol=tol, accel="cg", maxiter=2000)
        return x

    def preconditioner(self):
        M = self.ml.aspreconditioner(cycle="V")

        def apply(v):
            v = np.asarray(v).ravel()
            if np.iscomplexobj(v):
                return M @ v.real + 1j * (M @ v.imag)
            return M @ v

        n = self.A.shape[0]
        return spla.LinearOperator((n, n), matvec=apply, dtype=complex)


class _SparseEngine:
    def __init__(self, cx: DiscreteComplex):
        self.cx = cx
        G, C, D = cx.G.matrix, cx.C.matrix, cx.D.matrix
        we, wf, wc = (cx.spaces[t].weights for t in ("edge", "face", "cell"))
        self.wn = cx.spaces["node"].weights
        self.we, self.wf, self.wc = we, wf, wc
        self.G, self.C, self.D = G, C, D
        self.Gt_We = (G.T @ sp.diags(we)).tocsr()
        self.sf = np.sqrt(wf)
        M0 = C @ sp.diags(1 / we) @ C.T + sp.diags(1 / wf) @ D.T @ sp.diags(wc) @ D @ sp.diags(1 / wf)
        # orthonormal scaling: S M0 S with S = W_f^{1/2} on both sides of the weighted form
        self.M0 = (sp.diags(self.sf) @ M0 @ sp.diags(self.sf)).tocsr()
        self.Lc = (D @ sp.diags(1 / wf) @ D.T).tocsr()
        self._m0 = self._lc = self._ln = None

    @property
    def m0(self):
        if self._m0 is None:
            self._m0 = _AMG(self.M0)
        return self._m0

    @property
    def lc(self):
        if self._lc is None:
            self._lc = _AMG(self.Lc)
        return self._lc

    @property
    def ln(self):
        if self._ln is None:
            self._ln = _AMG((self.Gt_We @ self.G).tocsr()[1:, 1:])
        return self._ln

    def _nodal(self, ainv: Coefficient, rhs):
        """Solve ``G^T W_e a^-1 G p = rhs`` (Neumann; constants span the kernel).

        The first node is pinned to zero; ``rhs`` sums to zero, so the
        dropped equation holds automatically.
        """
        G = self.G
        rhs = np.asarray(rhs, dtype=complex)
        p = np.zeros(G.shape[1], dtype=complex)
        if isinstance(ainv, MultiplicationCoefficient) or (isinstance(ainv, MatrixCoefficient)
                                                          and sp.issparse(ainv.matrix)):
            L = (self.Gt_We @ ainv.sparse() @ G).tocsr()[1:, 1:]
            if _real_positive(ainv):
                p[1:] = _AMG(L.real).solve(rhs[1:])
            else:
                p[1:] = spla.splu(L.tocsc().astype(complex)).solve(rhs[1:])
            return p
        n = G.shape[1] - 1

        def mv(x):
            p[0], p[1:] = 0, x.ravel()
            return (self.Gt_We @ ainv.apply(G @ p))[1:]

        op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
        M = self.ln.preconditioner()
        if not np.any(rhs):
            return p
        if ainv.hermitian:
            x, info = spla.cg(op, rhs[1:], rtol=ITER_TOL, atol=0.0, M=M, maxiter=2000)
        else:
            x, info = spla.gmres(op, rhs[1:], rtol=ITER_TOL, atol=0.0, M=M, restart=60, maxiter=100)
        if info != 0:
            raise RuntimeError(f"nodal solve did not converge (info={info})")
        out = np.zeros(n + 1, dtype=complex)
        out[1:] = x
        return out

    def solve(self, a, b, rhs, alpha=0.0):
        ainv = a.inverse()
        F = np.asarray(rhs.F, dtype=complex)
        p = self._nodal(ainv, -(self.Gt_We @ ainv.apply(F)))
        q1 = ainv.apply(F + self.G @ p)  # C* u1, divergence-free on nodes
        # M0 u1 = W_f C q1, solved in weight-orthonormal coordinates
        u1 = self.m0.solve(self.sf * (self.C @ q1)) / self.sf
        gz = b.apply_inverse(np.asarray(rhs.Gv, dtype=complex))
        z = self.lc.solve(gz)
        u2 = (self.D.T @ z) / self.wf
        return u1, u2


def _real_positive(c: Coefficient) -> bool:
    if isinstance(c, MultiplicationCoefficient):
        return bool(np.all(c.values.imag == 0) and np.all(c.values.real > 0))
    return False


def _engine(cx: DiscreteComplex, method: str):
    key = "_cdhom_engine_" + method
    eng = cx.__dict__.get(key)
    if eng is None:
        eng = _DenseEngine(cx) if method == "dense" else _SparseEngine(cx)
        cx.__dict__[key] = eng
    return eng


# ---------------------------------------------------------------------------
# residuals and the public solvers


def _rel(num, den):
    return float(num / den) if den > 0 else float(num)


def residuals(cx: DiscreteComplex, a, b, rhs, u):
    """Relative residuals of the two variational identities.

    The curl identity holds iff ``C (a C*u - F) = 0``; the div identity iff
    ``D*(b D u - Gv) = 0``.
    """
    Csu = cx.Cs(u)
    flux = a.apply(Csu)
    Du = cx.D(u)
    dflux = b.apply(Du)
    sf = cx.spaces["face"]
    r1 = sf.norm(cx.C(flux - rhs.F))
    d1 = sf.norm(cx.C(flux)) + sf.norm(cx.C(rhs.F))
    r2 = sf.norm(cx.Ds(dflux - rhs.Gv))
    d2 = sf.norm(cx.Ds(dflux)) + sf.norm(cx.Ds(rhs.Gv))
    return flux, dflux, _rel(r1, d1), _rel(r2, d2)


def _choose(cx, method):
    if method == "auto":
        return "dense" if cx.dims["face"] <= DENSE_FACE_LIMIT else "sparse"
    if method not in ("dense", "sparse"):
        raise ValueError(f"unknown method {method!r}")
    return method


def check_admissible(cx: DiscreteComplex, a: Coefficient, b: Coefficient, params: AdmissibilityParams,
                     method: str = "auto"):
    """Admissibility of ``a^-1`` for (G, C) and of ``b`` for (D, 0).

    Returns the two reports; dense floors on small grids, certified bounds
    otherwise.
    """
    if method == "auto":
        method = "dense" if cx.dims["edge"] <= DENSE_FACE_LIMIT else "bound"
    if method == "dense":
        ra = admissibility_check(a.inverse().to_dense(), params, cx.curl_pair, "dense")
        rb = admissibility_check(b.to_dense(), params, cx.div_pair, "dense")
    else:
        ra = admissibility_check(a.inverse(), params, None, "bound")
        rb = admissibility_check(b, params, None, "bound")
    return ra, rb


def solve_curldiv(cx: DiscreteComplex, a, b, rhs: RightHandSide, params: AdmissibilityParams | None = None,
                  method: str = "auto", check: bool = True, estimate: bool | None = None) -> Solution:
    a = as_coefficient(a, cx, "edge")
    b = as_coefficient(b, cx, "cell")
    info = {"rhs": rhs}
    if params is not None and check:
        ra, rb = check_admissible(cx, a, b, params)
        if not ra.member:
            raise AdmissibilityError("a^-1", ra)
        if not rb.member:
            raise AdmissibilityError("b", rb)
        info["admissibility"] = (ra, rb)
    method = _choose(cx, method)
    u1, u2 = _engine(cx, method).solve(a, b, rhs)
    u = u1 + u2
    flux, dflux, r1, r2 = residuals(cx, a, b, rhs, u)
    sol = Solution(u, u1, u2, flux, dflux, r1, r2, method, a, b, info=info)
    if estimate is None:
        estimate = method == "dense" and params is not None
    if estimate:
        sol.estimate = verify_continuity_estimate(sol, params, cx)
    return sol


def oracle_monolithic_solve(cx: DiscreteComplex, a, b, rhs: RightHandSide) -> Solution:
    """Solve the combined form on all of the face space with one direct solve.

    On the box the face space is range(C) (+) range(D*), so the combined
    sesquilinear form ``<a C*u, C*v> + <b D u, D v>`` is coercive there.
    The split parts are recovered afterwards by a cell Poisson solve.
    """
    a = as_coefficient(a, cx, "edge")
    b = as_coefficient(b, cx, "cell")
    Cs, D = cx.Cs.to_dense(), cx.D.to_dense()
    we, wc = cx.spaces["edge"].weights, cx.spaces["cell"].weights
    K = Cs.conj().T @ (we[:, None] * a.apply(Cs.astype(complex))) + D.conj().T @ (wc[:, None] * b.apply(D.astype(complex)))
    r = Cs.conj().T @ (we * rhs.F) + D.conj().T @ (wc * rhs.Gv)
    u = sla.solve(K, r)
    Ds = cx.Ds.to_dense()
    z = sla.lstsq(D @ Ds, D @ u)[0]
    u2 = Ds @ z
    u1 = u - u2
    flux, dflux, r1, r2 = residuals(cx, a, b, rhs, u)
    return Solution(u, u1, u2, flux, dflux, r1, r2, "monolithic", a, b)


def estimate_constant(c1: float, c2: float) -> float:
    """``c`` with ``||u|| + ||C*u|| + ||Du|| <= (1/alpha + beta) c (||f|| + ||g||)``.

    Per part, coercivity gives ``||A u_i|| <= k ||f_i|| sqrt(1 + 1/c_i^2)`` and
    ``||u_i|| <= ||A u_i|| / c_i``; ``(1 + 1/c)(1 + 1/c^2)^(1/2) <= sqrt(2)(1 + 1/c^2)``.
    """
    cmin = min(c1, c2)
    return math.sqrt(2.0) * (1.0 + 1.0 / cmin**2)


def verify_continuity_estimate(sol: Solution, params: AdmissibilityParams, cx: DiscreteComplex) -> EstimateReport:
    eng = _engine(cx, "dense")
    fs, es, cs = (cx.spaces[t] for t in ("face", "edge", "cell"))
    lhs = fs.norm(sol.u) + es.norm(cx.Cs(sol.u)) + cs.norm(cx.D(sol.u))
    # F and a C*u (Gv and b D u) represent the same functionals once the
    # variational identities hold, so the fluxes serve as data
    data = sol.info.get("rhs") or RightHandSide(sol.curl_flux, sol.div_flux)
    nf, ng = eng.dual_norms(data)
    c1, c2 = eng.c1, eng.c2
    c = estimate_constant(c1, c2)
    admissible = True
    if sol.a is not None and sol.b is not None:
        # a certified-bound membership implies membership, so reuse any report
        # made at the same parameters
        reports = sol.info.get("admissibility")
        if reports is None or reports[0].params != params:
            reports = check_admissible(cx, sol.a, sol.b, params, "dense")
        admissible = reports[0].member and reports[1].member
    if not admissible:
        return EstimateReport(lhs, float("nan"), float("nan"), None, c, c1, c2, nf, ng, False)
    bound = (1 / params.alpha + params.beta) * c * (nf + ng)
    slack = bound - lhs
    return EstimateReport(lhs, bound, slack, bool(slack >= -1e-12 * max(bound, 1.0)), c, c1, c2, nf, ng, True)


# ---------------------------------------------------------------------------
# series


KINDS = ("solution", "curl_flux", "div_flux")


@dataclasses.dataclass(eq=False)
class SeriesReport:
    """Per-probe deviations of a coefficient sequence from its limit."""

    ns: list
    rows: list  # (n, probe_id, kind, deviation)
    summaries: dict  # n -> per-solve summary (or error)
    scales: dict  # kind -> norm of the limit quantity
    meta: dict = dataclasses.field(default_factory=dict)

    def table(self, kind: str) -> dict:
        """probe_id -> deviations ordered like ``ns`` (nan for failed solves)."""
        out = {}
        pos = {n: i for i, n in enumerate(self.ns)}
        for n, pid, k, dev in self.rows:
            if k != kind:
                continue
            out.setdefault(pid, np.full(len(self.ns), np.nan))[pos[n]] = dev
        return out

    @property
    def kinds(self):
        seen = []
        for _, _, k, _ in self.rows:
            if k not in seen:
                seen.append(k)
        return seen

    def decay(self, kind: str, factor: float = 0.5, floor_rel: float = 1e-8) -> dict:
        """probe_id -> (initial, final, passes) for ``final <= factor * initial + floor``.

        The floor (``floor_rel`` times the size of the limit quantity) absorbs
        probes whose deviations vanish identically up to roundoff.
        """
        floor = floor_rel * self.scales.get(kind, 1.0)
        out = {}
        for pid, devs in self.table(kind).items():
            d0, d1 = devs[0], devs[-1]
            out[pid] = (float(d0), float(d1), bool(d1 <= factor * d0 + floor))
        return out

    def max_deviation(self) -> float:
        vals = [r[3] for r in self.rows]
        return float(np.nanmax(vals)) if vals else 0.0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "probe_id", "kind", "deviation"])
        for n, pid, kind, dev in self.rows:
            w.writerow([n, pid, kind, repr(float(dev))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        return {
            "ns": list(self.ns),
            "solves": {str(n): s for n, s in self.summaries.items()},
            "scales": {k: float(v) for k, v in self.scales.items()},
            "meta": self.meta,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)


def probe_deviations(probes: ProbeSet, weights, diff) -> np.ndarray:
    """``|<diff, y_k>|`` for every probe."""
    return np.abs(probes.y.conj() @ (weights * diff))


def summarize(sol: Solution, cx: DiscreteComplex) -> dict:
    d = {
        "method": sol.method,
        "residual_curl": sol.residual_curl,
        "residual_div": sol.residual_div,
        "norm_u": cx.spaces["face"].norm(sol.u),
    }
    if sol.estimate is not None:
        d["estimate_slack"] = sol.estimate.slack
    return d


def run_convergence_series(cx: DiscreteComplex, sequence, limit, rhs: RightHandSide, probes: dict,
                           params: AdmissibilityParams | None = None, method: str = "auto",
                           jobs: int = 1, limit_solution: Solution | None = None) -> SeriesReport:
    """Solve along ``sequence`` (pairs ``(n, (a_n, b_n))``) and against ``limit``.

    ``probes`` maps each kind in ``solution``/``curl_flux``/``div_flux`` to a
    :class:`ProbeSet` on faces/edges/cells.  Failed solves are recorded and
    skipped.
    """
    if not probes or any(len(p) == 0 for p in probes.values()):
        raise ValueError("a convergence series needs nonempty probe sets")
    unknown = set(probes) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown probe kinds {sorted(unknown)}")
    sequence = list(sequence)
    if limit_solution is None:
        limit_solution = solve_curldiv(cx, limit[0], limit[1], rhs, params, method)
    ref = {"solution": limit_solution.u, "curl_flux": limit_solution.curl_flux, "div_flux": limit_solution.div_flux}
    space = {"solution": "face", "curl_flux": "edge", "div_flux": "cell"}
    scales = {k: cx.spaces[space[k]].norm(ref[k]) for k in KINDS}

    def work(item):
        n, (an, bn) = item
        try:
            return n, solve_curldiv(cx, an, bn, rhs, params, method), None
        except Exception as exc:  # recorded, series continues
            return n, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, sequence))
    else:
        results = [work(item) for item in sequence]

    rows, summaries = [], {"limit": summarize(limit_solution, cx)}
    for n, sol, err in results:
        if sol is None:
            summaries[n] = {"error": err}
            continue
        summaries[n] = summarize(sol, cx)
        got = {"solution": sol.u, "curl_flux": sol.curl_flux, "div_flux": sol.div_flux}
        for kind in KINDS:
            if kind not in probes:
                continue
            devs = probe_deviations(probes[kind], cx.spaces[space[kind]].weights, got[kind] - ref[kind])
            rows.extend((n, pid, kind, float(d)) for pid, d in zip(probes[kind].labels, devs))
    return SeriesReport([n for n, _, _ in results], rows, summaries, scales)

