"""Coupled (E, H) operator with an impedance trace condition.

Both fields live on the collocated nodes of a box.  The ambient operator
maps ``(E, H)`` to the 8-stack ``(curl E, div E, curl H, div H)`` with
second-order differences (centred inside, one-sided at the boundary).  At a
boundary node with outward normal ``nu`` the tangential trace condition

    E_t - (H x nu)_t = 0        (t ranges over the two tangent axes)

contributes two rows.  Every constraint row only touches the six unknowns of
one node and all six share the node's quadrature weight, so the constrained
domain has a block-diagonal, weight-orthonormal basis built node by node.

Vector layouts are component-major: the ambient vector is
``[E_1, E_2, E_3, H_1, H_2, H_3]`` and the stack is
``[curlE_1..3, divE, curlH_1..3, divH]``, each block holding one value per node.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import ConstantProfile, LayeredProfile, mean_value
from .curldiv import AdmissibilityError, CoercivityError, SeriesReport, probe_deviations
from .grid import BoxGrid, GeometryError, periodic_rescale
from .hilbert import (
    AdmissibilityParams,
    AdmissibilityReport,
    BlockCoefficient,
    CharacteristicMaps,
    Coefficient,
    HilbertSpace,
    LinearOp,
    ProbeSet,
    SpectralBounds,
    _member,
    as_dense,
    block_floors,
    bounded_floors,
    hermitian_floor,
    maps_from_blocks,
    reduced_operator,
)

EDGE_POLICIES = ("closure", "none")
DENSE_IMPEDANCE_LIMIT = 1500  # domain dimension up to which dense factorisations are used
STACK_LABELS = ("curlE1", "curlE2", "curlE3", "divE", "curlH1", "curlH2", "curlH3", "divH")

_EPS = np.zeros((3, 3, 3))
for _p in itertools.permutations(range(3)):
    _EPS[_p] = np.linalg.det(np.eye(3)[list(_p)])


def _diff1(n: int, h: float) -> sp.csr_matrix:
    """Second-order first derivative on ``n + 1`` equispaced points."""
    D = sp.lil_matrix((n + 1, n + 1))
    for i in range(1, n):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n, n - 2:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _partials(grid: BoxGrid):
    eyes = [sp.identity(m + 1, format="csr") for m in grid.N]
    out = []
    for k in range(3):
        f = [eyes[0], eyes[1], eyes[2]]
        f[k] = _diff1(grid.N[k], grid.h[k])
        out.append(sp.kron(sp.kron(f[0], f[1]), f[2], format="csr"))
    return out


def ambient_operator(grid: BoxGrid) -> sp.csr_matrix:
    """Sparse ``(E, H) -> (curl E, div E, curl H, div H)`` on collocated nodes."""
    P = _partials(grid)
    nn = P[0].shape[0]
    Z = sp.csr_matrix((nn, nn))
    curl = sp.bmat([[Z, -P[2], P[1]], [P[2], Z, -P[0]], [-P[1], P[0], Z]])
    div = sp.hstack(P)
    Zc, Zd = sp.csr_matrix((3 * nn, 3 * nn)), sp.csr_matrix((nn, 3 * nn))
    return sp.bmat([[curl, Zc], [div, Zd], [Zc, curl], [Zd, div]], format="csr")


def _boundary_faces(grid: BoxGrid, policy: str):
    """Per node, the list of ``(axis, sign)`` faces whose trace rows it carries."""
    idx = np.indices(tuple(m + 1 for m in grid.N)).reshape(3, -1).T
    faces = []
    for ijk in idx:
        on = [(a, -1 if ijk[a] == 0 else 1) for a in range(3) if ijk[a] in (0, grid.N[a])]
        if policy == "none" and len(on) > 1:
            on = []
        faces.append(on)
    return faces


def trace_rows(normal) -> np.ndarray:
    """The two rows ``E_t - (H x nu)_t`` on the local unknowns ``(E, H)``.

    Tangent axes are taken in increasing order.
    """
    nu = np.asarray(normal, dtype=float)
    a = int(np.flatnonzero(nu)[0])
    rows = []
    for t in range(3):
        if t == a:
            continue
        r = np.zeros(6)
        r[t] = 1.0
        r[3:] = -_EPS[t] @ nu  # (H x nu)_t = eps_{t l m} H_l nu_m
        rows.append(r)
    return np.array(rows)


@dataclasses.dataclass(eq=False)
class ImpedanceOperator:
    """Constrained coupled operator ``A0`` on a collocated box grid.

    ``basis`` (ambient x domain, sparse) is orthonormal in the ambient
    weighted inner product and spans the null space of ``constraints``;
    ``A0`` acts on basis coordinates.
    """

    grid: BoxGrid
    edge_policy: str
    node_space: HilbertSpace
    ambient: HilbertSpace
    stack: HilbertSpace
    matrix: sp.csr_matrix
    constraints: sp.csr_matrix
    basis: sp.csr_matrix
    A0: LinearOp

    @property
    def n_nodes(self) -> int:
        return self.node_space.dim

    @property
    def domain_dim(self) -> int:
        return self.basis.shape[1]

    @functools.cached_property
    def reduced(self):
        return reduced_operator(self.A0)

    @functools.cached_property
    def sparse_engine(self) -> "SparseImpedance":
        return SparseImpedance(self)

    @functools.cached_property
    def complement_basis(self) -> np.ndarray:
        """Orthonormal basis of range(A0)^perp in the stack."""
        return self.reduced.cokernel_basis

    def to_ambient(self, coords):
        return self.basis @ coords

    def to_coords(self, x):
        """Coordinates of the orthogonal projection of ``x`` onto the domain."""
        x = np.asarray(x)
        w = self.ambient.weights
        wx = w[:, None] * x if x.ndim == 2 else w * x
        return self.basis.T @ wx

    def fields(self, x):
        """Split an ambient vector into ``(E, H)`` arrays of shape ``(nodes, 3)``."""
        nn = self.n_nodes
        x = np.asarray(x)
        return x[: 3 * nn].reshape(3, nn).T, x[3 * nn:].reshape(3, nn).T

    def constraint_residual(self, x) -> float:
        return float(np.abs(self.constraints @ np.asarray(x)).max(initial=0.0))


def build_impedance_operator(grid: BoxGrid, edge_policy: str = "closure", constrained: bool = True) -> ImpedanceOperator:
    """Assemble the impedance operator on the nodes of ``grid``.

    ``edge_policy="closure"`` lets edge and corner nodes carry the rows of
    every face they belong to; ``"none"`` leaves them unconstrained.
    ``constrained=False`` drops the trace condition (negative control).
    """
    if min(grid.N) < 3:
        raise GeometryError(f"the impedance operator needs at least 3 cells per axis, got {grid.N}")
    if edge_policy not in EDGE_POLICIES:
        raise ValueError(f"edge_policy must be one of {EDGE_POLICIES}")
    node_space = grid.space("node")
    nn = node_space.dim
    wn = node_space.weights
    ambient = HilbertSpace(np.tile(wn, 6), "impedance-domain")
    stack = HilbertSpace(np.tile(wn, 8), "impedance-stack")
    A = ambient_operator(grid)
    faces = _boundary_faces(grid, edge_policy) if constrained else [[] for _ in range(nn)]

    crow, ccol, cval = [], [], []
    brow, bcol, bval = [], [], []
    nrows = ncols = 0
    local = np.arange(6) * nn
    for p, on in enumerate(faces):
        s = 1.0 / np.sqrt(wn[p])
        if not on:
            brow.extend(local + p)
            bcol.extend(range(ncols, ncols + 6))
            bval.extend([s] * 6)
            ncols += 6
            continue
        R = np.vstack([trace_rows(np.eye(3)[a] * sg) for a, sg in on])
        rr, cc = np.nonzero(R)
        crow.extend(rr + nrows)
        ccol.extend(local[cc] + p)
        cval.extend(R[rr, cc])
        nrows += R.shape[0]
        Q = sla.null_space(R)
        Q[np.abs(Q) < 1e-15] = 0.0
        rr, cc = np.nonzero(Q)
        brow.extend(local[rr] + p)
        bcol.extend(cc + ncols)
        bval.extend(Q[rr, cc] * s)
        ncols += Q.shape[1]
    constraints = sp.csr_matrix((cval, (crow, ccol)), shape=(nrows, 6 * nn))
    basis = sp.csr_matrix((bval, (brow, bcol)), shape=(6 * nn, ncols))
    domain = HilbertSpace.euclidean(ncols, "impedance-coords")
    A0 = LinearOp(domain, stack, (A @ basis).tocsr())
    return ImpedanceOperator(grid, edge_policy, node_space, ambient, stack, A, constraints, basis, A0)


class KernelRange(NamedTuple):
    kernel: np.ndarray  # ambient vectors, columns
    range_basis: np.ndarray  # stack vectors, weight-orthonormal columns
    c: float  # smallest nonzero singular value

    def project(self, v, weights):
        """Orthogonal projection of stack vectors onto range(A0)."""
        v = np.asarray(v)
        wv = weights[:, None] * v if v.ndim == 2 else weights * v
        return self.range_basis @ (self.range_basis.conj().T @ wv)


def impedance_kernel_range(op: ImpedanceOperator) -> KernelRange:
    red = op.reduced
    return KernelRange(op.to_ambient(red.kernel_basis), red.range_basis, red.min_singular_value)


# ---------------------------------------------------------------------------
# coefficients on the 8-stack


def _as_node_values(v, nn: int, matrix: bool) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if matrix:
        if v.ndim == 0:
            v = v * np.eye(3)
        if v.shape == (3, 3):
            v = np.broadcast_to(v, (nn, 3, 3))
        elif v.shape == (nn,):
            v = v[:, None, None] * np.eye(3)
        if v.shape != (nn, 3, 3):
            raise ValueError(f"expected a 3x3 field on {nn} nodes, got shape {v.shape}")
    else:
        if v.ndim == 0:
            v = np.broadcast_to(v, (nn,))
        if v.shape != (nn,):
            raise ValueError(f"expected a scalar field on {nn} nodes, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("coefficient values must be finite")
    return np.array(v)


def _local_floor(m) -> float:
    """Smallest Hermitian-part eigenvalue over a stack of 3x3 (or scalar) values."""
    if m.ndim == 1:
        return float(m.real.min())
    return float(np.linalg.eigvalsh(0.5 * (m + np.conj(np.swapaxes(m, 1, 2))))[:, 0].min())


def _local_norm(m) -> float:
    if m.ndim == 1:
        return float(np.abs(m).max())
    return float(np.linalg.norm(m, ord=2, axis=(1, 2)).max())


def _inverse_values(m):
    return 1.0 / m if m.ndim == 1 else np.linalg.inv(m)


class DiagBlockCoefficient(Coefficient):
    """``diag(a_e, b_e, a_h, b_h)`` acting pointwise on the 8-stack.

    ``a_e``, ``a_h`` are 3x3 fields (scalars are promoted to multiples of the
    identity) and ``b_e``, ``b_h`` scalar fields, all sampled on the nodes.
    """

    def __init__(self, space: HilbertSpace, a_e, b_e, a_h, b_h):
        nn = space.dim // 8
        if space.dim != 8 * nn:
            raise ValueError("the 8-stack space must have 8 blocks of equal size")
        self.space = space
        self.n_nodes = nn
        self.a_e = _as_node_values(a_e, nn, True)
        self.b_e = _as_node_values(b_e, nn, False)
        self.a_h = _as_node_values(a_h, nn, True)
        self.b_h = _as_node_values(b_h, nn, False)
        for name in ("a_e", "b_e", "a_h", "b_h"):
            if _local_floor(getattr(self, name)) <= 0:
                raise ValueError(f"{name} has a non-positive Hermitian-part floor")
        self.hermitian = all(
            np.allclose(m, np.conj(np.swapaxes(m, 1, 2)), rtol=0, atol=0) for m in (self.a_e, self.a_h)
        ) and not np.any(self.b_e.imag) and not np.any(self.b_h.imag)
        self._matrix = None

    @classmethod
    def from_profiles(cls, op: ImpedanceOperator, a_e, b_e, a_h, b_h, n: int = 1):
        """Sample unit-periodic profiles (or constants) at ``x -> profile(n x)``."""
        X = op.grid.positions("node")
        vals = []
        for prof in (a_e, b_e, a_h, b_h):
            prof = periodic_rescale(prof, n) if callable(prof) else prof
            vals.append(np.asarray(prof(X)) if callable(prof) else prof)
        return cls(op.stack, *vals)

    def blocks(self):
        return (self.a_e, self.b_e, self.a_h, self.b_h)

    def sparse(self) -> sp.csr_matrix:
        if self._matrix is None:
            nn = self.n_nodes
            rows, cols, vals = [], [], []
            for off, m in ((0, self.a_e), (3, self.b_e), (4, self.a_h), (7, self.b_h)):
                if m.ndim == 1:
                    rows.append(off * nn + np.arange(nn))
                    cols.append(off * nn + np.arange(nn))
                    vals.append(m)
                    continue
                for i in range(3):
                    for j in range(3):
                        if np.any(m[:, i, j]):
                            rows.append((off + i) * nn + np.arange(nn))
                            cols.append((off + j) * nn + np.arange(nn))
                            vals.append(m[:, i, j])
            M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(8 * nn, 8 * nn))
            if not np.any(M.data.imag):
                M = M.real.tocsr()
            self._matrix = M
        return self._matrix

    def apply(self, x):
        return self.sparse() @ np.asarray(x)

    def inverse(self) -> "DiagBlockCoefficient":
        return DiagBlockCoefficient(self.space, *(_inverse_values(m) for m in self.blocks()))

    def apply_inverse(self, x):
        return self.inverse().apply(x)

    def to_dense(self):
        return self.sparse().toarray()

    def spectral_bounds(self):
        ms = self.blocks()
        inv = [_inverse_values(m) for m in ms]
        return SpectralBounds(
            min(_local_floor(m) for m in ms),
            max(_local_norm(m) for m in ms),
            min(_local_floor(m) for m in inv),
            max(_local_norm(m) for m in inv),
            self.hermitian,
        )


# ---------------------------------------------------------------------------
# block algebra relative to range(A0) (+) range(A0)^perp


def impedance_blocks(a, op: ImpedanceOperator) -> BlockCoefficient:
    """Blocks ``a_ij = B_i^H W a B_j`` with ``B_0``, ``B_1`` bases of range(A0) and its complement."""
    B0, B1 = op.reduced.range_basis, op.complement_basis
    w = op.stack.weights
    if isinstance(a, Coefficient):
        M = a.sparse() if hasattr(a, "sparse") else a.to_dense()
    else:
        M = a
    aB0, aB1 = M @ B0, M @ B1
    WB0, WB1 = (w[:, None] * B0).conj().T, (w[:, None] * B1).conj().T
    return BlockCoefficient(WB0 @ aB0, WB0 @ aB1, WB1 @ aB0, WB1 @ aB1, B0, B1, op.stack)


def impedance_admissibility(a, params: AdmissibilityParams, op: ImpedanceOperator,
                            blocks: BlockCoefficient | None = None, method: str = "auto") -> AdmissibilityReport:
    """Floors of ``a00``, ``a00^-1``, the inverse Schur complement and the Schur complement.

    Large operators fall back to certified spectral bounds of ``a``.
    """
    if blocks is None and _choose(op, method) == "sparse":
        floors = tuple(float(f) for f in bounded_floors(a))
        return AdmissibilityReport(floors, _member(floors, params), "bound", params)
    blocks = impedance_blocks(a, op) if blocks is None else blocks
    floors = tuple(float(f) for f in block_floors(blocks))
    return AdmissibilityReport(floors, _member(floors, params), "dense", params)


def impedance_characteristic_maps(a, op: ImpedanceOperator, blocks: BlockCoefficient | None = None) -> CharacteristicMaps:
    """``(a00^-1, a10 a00^-1, a00^-1 a01, a11 - a10 a00^-1 a01)`` in basis coordinates."""
    return maps_from_blocks(impedance_blocks(a, op) if blocks is None else blocks)


# ---------------------------------------------------------------------------
# solving


class ImpedanceSolution(NamedTuple):
    x: np.ndarray  # ambient (E, H)
    coords: np.ndarray  # domain coordinates
    flux: np.ndarray  # a A0 x on the stack
    residual: float  # relative variational residual
    constraint_residual: float


def _rhs_values(op: ImpedanceOperator, F, kind: str):
    """Conjugated values ``F(b_j)`` on the domain basis."""
    if kind == "flux":
        return op.A0.matrix.T @ (op.stack.weights * np.asarray(F))
    if kind == "l2":
        return op.basis.T @ (op.ambient.weights * np.asarray(F))
    raise ValueError(f"unknown functional kind {kind!r}")


def _choose(op: ImpedanceOperator, method: str) -> str:
    if method == "auto":
        return "dense" if op.domain_dim <= DENSE_IMPEDANCE_LIMIT else "sparse"
    if method not in ("dense", "sparse"):
        raise ValueError(f"unknown method {method!r}")
    return method


def solve_impedance(op: ImpedanceOperator, a, F, kind: str = "flux", alpha: float = 0.0,
                    blocks: BlockCoefficient | None = None, method: str = "auto") -> ImpedanceSolution:
    """Unique domain element ``x`` orthogonal to ker(A0) with
    ``<a A0 x, A0 y> = F(y)`` for every ``y`` in the constrained domain.

    ``kind="flux"``: ``F(y) = <F, A0 y>`` (stack vector); ``kind="l2"``:
    ``F(y) = <F, y>`` (ambient vector).  The dense method composes the
    inverse dual map, the inverse compressed coefficient and the inverse
    reduced operator; the sparse one factorises ``A0^T W a A0`` and needs a
    trivial kernel.
    """
    M = a.sparse() if hasattr(a, "sparse") else a
    vals = _rhs_values(op, F, kind)
    if blocks is not None or _choose(op, method) == "dense":
        red = op.reduced
        if blocks is None:
            U = red.range_basis
            a00 = (op.stack.weights[:, None] * U).conj().T @ (M @ U)
        else:
            a00 = blocks.a00
        floor = hermitian_floor(a00)
        if floor <= max(alpha, 1e-12 * max(np.abs(a00).max(initial=0.0), 1e-300)):
            raise CoercivityError(f"compressed coefficient has Hermitian floor {floor:.3g}")
        if kind == "flux":
            q = red.range_coords(np.asarray(F))
        else:
            q = red.corange_basis.conj().T @ vals / red.singular_values
        z = sla.solve(a00, q)
        coords = red.corange_basis @ (z / red.singular_values)
    else:
        b = a.spectral_bounds() if isinstance(a, Coefficient) else None
        if b is not None and b.re_floor <= alpha:
            raise CoercivityError(f"coefficient has Hermitian floor {b.re_floor:.3g}")
        coords = op.sparse_engine.solve_coords(M, vals)
    x = op.to_ambient(coords)
    Ax = op.A0.matrix @ coords
    flux = M @ Ax
    lhs = op.A0.matrix.T @ (op.stack.weights * flux)
    scale = max(np.linalg.norm(vals), 1e-300)
    residual = float(np.linalg.norm(lhs - vals) / scale) if np.any(vals) else float(np.linalg.norm(lhs))
    return ImpedanceSolution(x, coords, flux, residual, op.constraint_residual(x))


# ---------------------------------------------------------------------------
# probes and series


def _node_bump(grid: BoxGrid, center, radius):
    X = grid.positions("node")
    r2 = np.sum((X - np.asarray(center)) ** 2, axis=1) / radius**2
    return np.where(r2 < 1, (1 - r2) ** 3, 0.0).astype(complex)


def _smooth_node(grid: BoxGrid, rng, kmax: int = 3):
    from .homogenization import smooth_random_field

    return smooth_random_field(grid, "node", rng, kmax)


_IMP_BUMPS = [((0.5, 0.45, 0.55), 0.35), ((0.4, 0.6, 0.5), 0.3)]


def impedance_probes(op: ImpedanceOperator, seed: int = 0, n_random: int = 3) -> dict:
    """Probe sets for ``solution`` (ambient) and ``flux_k`` (stack component ``k``).

    Each family holds bump fields plus ``n_random`` smooth random fields drawn
    from ``default_rng(seed)``.
    """
    g = op.grid
    L = np.asarray(g.L)
    rng = np.random.default_rng(seed)
    wn = op.node_space.weights
    out = {}
    vecs, labels = [], []
    for i, (c, r) in enumerate(_IMP_BUMPS):
        b = _node_bump(g, np.asarray(c) * L, r * L.min())
        direction = np.roll(np.array([1.0, 0.5, -0.3, 0.2, -0.6, 0.4]), i)
        vecs.append(np.concatenate([d * b for d in direction]))
        labels.append(f"bump{i}")
    for i in range(n_random):
        vecs.append(np.concatenate([_smooth_node(g, rng) for _ in range(6)]))
        labels.append(f"rand{i}")
    out["solution"] = ProbeSet.from_vectors("impedance-domain", vecs, op.ambient.weights, labels, seed)
    for k in range(8):
        vecs, labels = [], []
        for i, (c, r) in enumerate(_IMP_BUMPS):
            vecs.append(_node_bump(g, np.asarray(c) * L, r * L.min()))
            labels.append(f"bump{i}")
        for i in range(n_random):
            vecs.append(_smooth_node(g, rng))
            labels.append(f"rand{i}")
        out[f"flux_{k}"] = ProbeSet.from_vectors("node", vecs, wn, labels, seed)
    return out


def manufactured_impedance_data(op: ImpedanceOperator, a, seed: int = 0):
    """A smooth domain element ``x0`` and the flux functional ``F = a A0 x0`` it solves.

    ``x0`` is the orthogonal projection of a smooth random ``(E, H)`` onto the
    constrained domain, so the trace condition holds exactly.
    """
    rng = np.random.default_rng(seed)
    v = np.concatenate([_smooth_node(op.grid, rng) for _ in range(6)])
    coords = op.to_coords(v)
    M = a.sparse() if hasattr(a, "sparse") else a
    return op.to_ambient(coords), M @ (op.A0.matrix @ coords)


def _common_params(reports) -> AdmissibilityParams:
    f = np.array([r.floors for r in reports])
    alpha = float(min(f[:, 0].min(), f[:, 3].min()))
    beta = float(1 / min(f[:, 1].min(), f[:, 2].min()))
    return AdmissibilityParams(alpha, max(alpha, beta))


def run_impedance_series(op: ImpedanceOperator, sequence, limit, F, probes: dict | None = None,
                         kind: str = "flux", params: AdmissibilityParams | None = None,
                         jobs: int = 1, seed: int = 0, method: str = "auto") -> SeriesReport:
    """Solve for every ``(n, a_n)`` in ``sequence`` and for ``limit``; report
    probe deviations of solutions and of the eight flux components.

    With ``params=None`` the common class is the tightest one containing all
    coefficients; otherwise every coefficient must belong to ``params``.
    Failed solves are recorded in the summaries.
    """
    if probes is None:
        probes = impedance_probes(op, seed)
    if not probes or any(len(p) == 0 for p in probes.values()):
        raise ValueError("an impedance series needs nonempty probe sets")
    sequence = list(sequence)
    ns = [n for n, _ in sequence]
    dense = _choose(op, method) == "dense"
    probe_params = params or AdmissibilityParams(1.0, 1.0)
    blocks = {"limit": impedance_blocks(limit, op) if dense else None}
    reports = {"limit": impedance_admissibility(limit, probe_params, op, blocks["limit"], method)}
    for n, a in sequence:
        blocks[n] = impedance_blocks(a, op) if dense else None
        reports[n] = impedance_admissibility(a, probe_params, op, blocks[n], method)
    if params is None:
        params = _common_params(list(reports.values()))
    bad = [k for k, r in reports.items() if not _member(r.floors, params)]
    if bad:
        raise AdmissibilityError(f"coefficients {bad}", reports[bad[0]])
    ref = solve_impedance(op, limit, F, kind, blocks=blocks["limit"], method=method)
    nn = op.n_nodes
    wa, wn = op.ambient.weights, op.node_space.weights
    scales = {"solution": op.ambient.norm(ref.x)}
    for k in range(8):
        scales[f"flux_{k}"] = op.node_space.norm(ref.flux[k * nn:(k + 1) * nn])

    def work(item):
        n, a = item
        try:
            sol = solve_impedance(op, a, F, kind, blocks=blocks[n], method=method)
        except Exception as exc:  # recorded, the series continues
            return n, None, {"error": f"{type(exc).__name__}: {exc}"}
        rows = []
        for kd, ps in probes.items():
            if kd == "solution":
                diff, w = sol.x - ref.x, wa
            else:
                k = int(kd.split("_")[1])
                diff, w = sol.flux[k * nn:(k + 1) * nn] - ref.flux[k * nn:(k + 1) * nn], wn
            devs = probe_deviations(ps, w, diff)
            rows.extend((n, pid, kd, float(d)) for pid, d in zip(ps.labels, devs))
        return n, rows, {"residual": sol.residual, "constraint_residual": sol.constraint_residual,
                         "norm_x": op.ambient.norm(sol.x)}

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(work, sequence))
    else:
        results = [work(item) for item in sequence]
    rows, summaries = [], {"limit": {"residual": ref.residual, "norm_x": scales["solution"]}}
    for n, r, summ in results:  # index order regardless of schedule
        summaries[n] = summ
        if r:
            rows.extend(r)
    meta = {"experiment": "impedance", "grid": list(op.grid.N), "edge_policy": op.edge_policy,
            "alpha": params.alpha, "beta": params.beta, "seed": seed, "method": "dense" if dense else "sparse"}
    return SeriesReport(ns, rows, summaries, scales, meta)


# ---------------------------------------------------------------------------
# block-diagonal characterization


def _inverse_profile(p):
    if isinstance(p, LayeredProfile):
        return p.map(lambda v: 1.0 / v if v.ndim == 0 else np.linalg.inv(v))
    if isinstance(p, ConstantProfile):
        v = p.value
        return ConstantProfile(1.0 / v if v.ndim == 0 else np.linalg.inv(v))
    v = np.asarray(p, dtype=complex)
    return 1.0 / v if v.ndim == 0 else np.linalg.inv(v)


def predicted_diag_limit(a_e, b_e, a_h, b_h) -> dict:
    """Limit ``diag(a_e, b_e, a_h, b_h)`` predicted from layered profiles.

    ``a^-1`` converges locally in the H-sense, so ``a = (hom(a^-1))^-1`` with
    the layered effective matrix; ``b^-1`` converges weakly-*, so
    ``b = 1 / m(1/b)``.
    """
    from .homogenization import layered_hom_matrix

    def a_lim(p):
        return np.linalg.inv(layered_hom_matrix(_inverse_profile(p)))

    def b_lim(p):
        return complex(1.0 / mean_value(p, fn=lambda v: 1.0 / v))

    return {"a_e": a_lim(a_e), "b_e": b_lim(b_e), "a_h": a_lim(a_h), "b_h": b_lim(b_h)}


class SparseImpedance:
    """Factorisation-based access to range(A0) without a dense basis.

    ``A0`` is injective on the constrained domain when the kernel is trivial,
    so the range projector is ``A0 (A0^T W A0)^-1 A0^T W`` and compressed
    problems reduce to sparse normal-type systems.
    """

    def __init__(self, op: ImpedanceOperator):
        self.op = op
        self.A = op.A0.matrix.tocsc()
        self.w = op.stack.weights
        self._gram = spla.splu((self.A.T @ sp.diags(self.w) @ self.A).tocsc())

    @staticmethod
    def _lu_solve(lu, rhs):
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs) and lu.U.dtype.kind != "c":
            return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
        return lu.solve(rhs)

    def _dot(self, v):
        return self.A.T @ (self.w[:, None] * v if np.ndim(v) == 2 else self.w * v)

    def project_range(self, v):
        return self.A @ self._lu_solve(self._gram, self._dot(v))

    def solve_coords(self, M, vals):
        """Coordinates ``u`` with ``A0^T W M A0 u = vals``."""
        K = (self.A.T @ sp.diags(self.w) @ M @ self.A).tocsc()
        try:
            lu = spla.splu(K if np.any(K.data.imag) else K.real.tocsc())
        except RuntimeError as exc:
            raise CoercivityError(f"compressed system is singular: {exc}") from None
        return self._lu_solve(lu, vals)

    def compressed_solver(self, a):
        """``r -> z`` in range(A0) with ``P0 a z = P0 r``."""
        M = a.sparse() if hasattr(a, "sparse") else sp.csr_matrix(as_dense(a))
        K = (self.A.T @ sp.diags(self.w) @ M @ self.A).tocsc()
        lu = spla.splu(K if np.any(K.data.imag) else K.real.tocsc())
        return lambda r: self.A @ self._lu_solve(lu, self._dot(r))


def probe_characteristic_maps(a, engine: SparseImpedance, x0, x1) -> dict:
    """``<M_j x, y>`` for probe rows ``x0`` (in range(A0)) and ``x1`` (in its
    complement), paired as in :func:`diag_characterization_experiment`."""
    M = a.sparse() if hasattr(a, "sparse") else sp.csr_matrix(as_dense(a))
    solve = engine.compressed_solver(a)
    w = engine.w

    def pair(u, v):
        return np.sum(w[:, None] * u * np.conj(v), axis=0)

    X0, X1 = x0.T, x1.T
    z0 = solve(X0)  # M1 x
    z1 = solve(M @ X1)  # M3 x
    return {
        "M1": pair(z0, X0),
        "M2": pair(M @ z0, X1),
        "M3": pair(z1, X0),
        "M4": pair(M @ (X1 - z1), X1),
    }


def _stack_probes(op: ImpedanceOperator, engine: SparseImpedance, count: int, seed: int):
    """Smooth stack fields split into unit parts in range(A0) and its complement."""
    rng = np.random.default_rng(seed)
    g = op.grid
    V = np.stack([np.concatenate([_smooth_node(g, rng) for _ in range(8)]) for _ in range(count)], axis=1)
    P0 = engine.project_range(V)
    P1 = V - P0
    w = op.stack.weights

    def unit(c):
        return (c / np.sqrt(np.sum(w[:, None] * np.abs(c) ** 2, axis=0))).T

    return unit(P0), unit(P1)


@dataclasses.dataclass(eq=False)
class DiagExperiment:
    ns: list
    side_i: SeriesReport
    side_ii: SeriesReport
    predicted: dict

    def decay(self, factor=0.5, floor_rel=1e-8) -> dict:
        """``(side, kind, probe) -> (initial, final, passes)``."""
        out = {}
        for side, rep in (("i", self.side_i), ("ii", self.side_ii)):
            for kind in rep.kinds:
                for pid, v in rep.decay(kind, factor, floor_rel).items():
                    out[(side, kind, pid)] = v
        return out


def diag_characterization_experiment(op: ImpedanceOperator, profiles: dict, ns, limits: dict | None = None,
                                     n_probes: int = 4, seed: int = 0, local_grid: BoxGrid | None = None) -> DiagExperiment:
    """Both sides of the block-diagonal characterization for layered profiles.

    ``profiles`` maps ``a_e``, ``b_e``, ``a_h``, ``b_h`` to unit-periodic
    profiles or constants; the sequence is ``profile(n x)``.  Side (i): the
    weak-operator distance of each characteristic map of ``a_n`` to that of
    the predicted limit.  Side (ii): weak-* probe deviations of ``b^-1`` and
    local H-probe deviations of ``a^-1``.
    """
    from .homogenization import check_divisibility, local_H_probe

    missing = {"a_e", "b_e", "a_h", "b_h"} - set(profiles)
    if missing:
        raise ValueError(f"missing profiles {sorted(missing)}")
    for key, p in profiles.items():
        if callable(p) and not isinstance(p, (LayeredProfile, ConstantProfile)):
            raise ValueError(f"{key}: the predicted limit needs a layered or constant profile")
    ns = list(ns)
    check_divisibility(op.grid, ns)
    order = ("a_e", "b_e", "a_h", "b_h")
    predicted = predicted_diag_limit(*(profiles[k] for k in order)) if limits is None else dict(limits)
    a_lim = DiagBlockCoefficient(op.stack, *(predicted[k] for k in order))
    engine = op.sparse_engine
    x0, x1 = _stack_probes(op, engine, n_probes, seed)
    ref = probe_characteristic_maps(a_lim, engine, x0, x1)

    rows_i, summ_i = [], {}
    for n in ns:
        a_n = DiagBlockCoefficient.from_profiles(op, *(profiles[k] for k in order), n=n)
        vals = probe_characteristic_maps(a_n, engine, x0, x1)
        summ_i[n] = {}
        for name in CharacteristicMaps._fields:
            # the weak-operator distance over the probe pairs
            d = float(np.abs(vals[name] - ref[name]).max())
            rows_i.append((n, "wot", name, d))
            summ_i[n]["wot_" + name] = d
    scales_i = {name: float(np.abs(v).max()) for name, v in ref.items()}
    side_i = SeriesReport(ns, rows_i, summ_i, scales_i, {"side": "i", "predicted": predicted})

    rows_ii, scales_ii = [], {}
    X = op.grid.positions("node")
    wn = op.node_space.weights
    rng = np.random.default_rng(seed + 1)
    phis = [_node_bump(op.grid, 0.5 * np.asarray(op.grid.L), 0.4 * min(op.grid.L))]
    phis += [_smooth_node(op.grid, rng) for _ in range(n_probes - 1)]
    phi = ProbeSet.from_vectors("node", phis, wn, [f"phi{i}" for i in range(len(phis))], seed)
    for key in ("b_e", "b_h"):
        ref = np.full(X.shape[0], 1.0 / predicted[key])
        scales_ii[f"{key}_inv"] = float(np.abs(ref).max())
        for n in ns:
            p = profiles[key]
            vals = np.asarray(periodic_rescale(p, n)(X)) if callable(p) else np.full(X.shape[0], complex(p))
            devs = probe_deviations(phi, wn, 1.0 / vals - ref)
            rows_ii.extend((n, pid, f"{key}_inv", float(d)) for pid, d in zip(phi.labels, devs))
    lg = op.grid if local_grid is None else local_grid
    for key in ("a_e", "a_h"):
        p = profiles[key]
        inv = _inverse_profile(p)
        if not callable(inv):
            inv = ConstantProfile(inv)
        rep = local_H_probe(lg, inv, ns, seed=seed, limit=np.linalg.inv(predicted[key]))
        for n, pid, kd, d in rep.rows:
            rows_ii.append((n, pid, f"{key}_inv_H_{kd}", d))
        for kd, sc in rep.scales.items():
            scales_ii[f"{key}_inv_H_{kd}"] = sc
    side_ii = SeriesReport(ns, rows_ii, {}, scales_ii, {"side": "ii"})
    return DiagExperiment(ns, side_i, side_ii, predicted)
