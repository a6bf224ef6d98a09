"""Staggered grad/curl/div complex on an axis-aligned box.

Layout (index units, one entry per axis): nodes sit at integer points, cells
at half-integers, the ``c``-th edge component is half-integer along axis
``c`` only, and the ``c``-th face component is integer along axis ``c`` only.
Every array is flattened in C order and component arrays are concatenated.

The difference operators carry no boundary conditions.  Their weighted
adjoints do: ``G*`` is minus the divergence with no-flux boundary, ``C*`` the
curl with vanishing tangential trace and ``D*`` minus the gradient with zero
Dirichlet data half a cell outside the box.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from numbers import Number

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    ComplexPair,
    ExactnessReport,
    HilbertSpace,
    LinearOp,
    MatrixCoefficient,
    MultiplicationCoefficient,
    adjoint,
    verify_exactness,
)

TAGS = ("node", "edge", "face", "cell")

#: spaces up to this size get a dense rank certificate at build time
DENSE_CERTIFY_LIMIT = 4000


class GeometryError(ValueError):
    pass


def _offsets(tag: str):
    """Per-component staggering offsets (0 or 1/2 per axis)."""
    if tag == "node":
        return [(0, 0, 0)]
    if tag == "cell":
        return [(1, 1, 1)]
    if tag == "edge":
        return [tuple(int(k == c) for k in range(3)) for c in range(3)]
    if tag == "face":
        return [tuple(int(k != c) for k in range(3)) for c in range(3)]
    raise ValueError(f"unknown space tag {tag!r}")


@dataclasses.dataclass(frozen=True)
class BoxGrid:
    N: tuple
    L: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        N = tuple(int(n) for n in np.broadcast_to(self.N, 3))
        L = tuple(float(x) for x in np.broadcast_to(self.L, 3))
        if any(n < 2 for n in N):
            raise GeometryError(f"need at least 2 cells per axis, got {N}")
        if any(not np.isfinite(x) or x <= 0 for x in L):
            raise GeometryError(f"edge lengths must be positive, got {L}")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "L", L)

    @property
    def h(self):
        return tuple(l / n for l, n in zip(self.L, self.N))

    @property
    def volume(self) -> float:
        return self.L[0] * self.L[1] * self.L[2]

    def component_shapes(self, tag: str):
        return [tuple(n if o else n + 1 for n, o in zip(self.N, off)) for off in _offsets(tag)]

    def component_sizes(self, tag: str):
        return [int(np.prod(s)) for s in self.component_shapes(tag)]

    def dim(self, tag: str) -> int:
        return sum(self.component_sizes(tag))

    def component_slices(self, tag: str):
        sizes = np.cumsum([0] + self.component_sizes(tag))
        return [slice(int(a), int(b)) for a, b in zip(sizes[:-1], sizes[1:])]

    def _axis_coords(self, axis: int, half: int):
        n, l = self.N[axis], self.L[axis]
        if half:
            return (2 * np.arange(n) + 1) * l / (2 * n)
        # i*L/N rounds once, keeping dyadic breakpoints exact
        return np.arange(n + 1) * l / n

    def _axis_weights(self, axis: int, half: int):
        h = self.h[axis]
        if half:
            return np.full(self.N[axis], h)
        w = np.full(self.N[axis] + 1, h)
        w[[0, -1]] = h / 2
        return w

    def positions(self, tag: str) -> np.ndarray:
        """Coordinates of every degree of freedom, shape (dim, 3)."""
        out = []
        for off in _offsets(tag):
            axes = [self._axis_coords(k, off[k]) for k in range(3)]
            X = np.meshgrid(*axes, indexing="ij")
            out.append(np.stack([x.ravel() for x in X], axis=1))
        return np.concatenate(out)

    def component_ids(self, tag: str) -> np.ndarray:
        return np.concatenate([np.full(s, c) for c, s in enumerate(self.component_sizes(tag))])

    def weights(self, tag: str) -> np.ndarray:
        """Dual-volume quadrature weights; each component sums to the box volume."""
        out = []
        for off in _offsets(tag):
            w = [self._axis_weights(k, off[k]) for k in range(3)]
            out.append(np.einsum("i,j,k->ijk", *w).ravel())
        return np.concatenate(out)

    def boundary_mask(self, tag: str) -> np.ndarray:
        """True for degrees of freedom lying on the boundary of the box."""
        X = self.positions(tag)
        tol = 1e-12 * max(self.L)
        return np.any((X <= tol) | (X >= np.asarray(self.L) - tol), axis=1)

    def space(self, tag: str) -> HilbertSpace:
        return HilbertSpace(self.weights(tag), tag)


@dataclasses.dataclass(frozen=True, eq=False)
class StaggeredField:
    grid: BoxGrid
    tag: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.dim(self.tag),):
            raise ValueError(f"{self.tag} field needs {self.grid.dim(self.tag)} values, got {v.shape}")

    @classmethod
    def from_components(cls, grid: BoxGrid, tag: str, comps):
        return cls(grid, tag, np.concatenate([np.asarray(c).ravel() for c in comps]))

    def components(self):
        shapes = self.grid.component_shapes(self.tag)
        return [self.values[s].reshape(sh) for s, sh in zip(self.grid.component_slices(self.tag), shapes)]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.weights(self.tag) * np.abs(self.values) ** 2)))


def _diff(n: int, h: float):
    """Forward difference quotient, (n) x (n+1)."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1)) / h


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b, format="csr"), c, format="csr")


def _assemble(grid: BoxGrid):
    N, h = grid.N, grid.h
    I = [sp.identity(n + 1, format="csr") for n in N]  # node-aligned axes
    J = [sp.identity(n, format="csr") for n in N]  # cell-aligned axes
    d = [_diff(n, hh) for n, hh in zip(N, h)]

    G = sp.vstack([
        _kron3(d[0], I[1], I[2]),
        _kron3(I[0], d[1], I[2]),
        _kron3(I[0], I[1], d[2]),
    ], format="csr")

    # curl rows by face component; columns by edge component (x, y, z)
    Z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
    ex, ey, ez = grid.component_sizes("edge")
    fx, fy, fz = grid.component_sizes("face")
    C = sp.bmat([
        [Z(fx, ex), -_kron3(I[0], J[1], d[2]), _kron3(I[0], d[1], J[2])],
        [_kron3(J[0], I[1], d[2]), Z(fy, ey), -_kron3(d[0], I[1], J[2])],
        [-_kron3(J[0], d[1], I[2]), _kron3(d[0], J[1], I[2]), Z(fz, ez)],
    ], format="csr")

    D = sp.hstack([
        _kron3(d[0], J[1], J[2]),
        _kron3(J[0], d[1], J[2]),
        _kron3(J[0], J[1], d[2]),
    ], format="csr")
    for m in (G, C, D):
        m.eliminate_zeros()
        m.sort_indices()
    return G, C, D


class DiscreteComplex:
    """nodes --G--> edges --C--> faces --D--> cells on a :class:`BoxGrid`."""

    def __init__(self, grid: BoxGrid, certify: bool | None = None):
        self.grid = grid
        self.spaces = {t: grid.space(t) for t in TAGS}
        G, C, D = _assemble(grid)
        s = self.spaces
        self.G = LinearOp(s["node"], s["edge"], G)
        self.C = LinearOp(s["edge"], s["face"], C)
        self.D = LinearOp(s["face"], s["cell"], D)
        if certify is None:
            certify = max(self.dims.values()) <= DENSE_CERTIFY_LIMIT
        self.reports: dict[str, ExactnessReport] = {}
        if certify:
            self.reports["GC"] = verify_exactness(self.G, self.C)
            self.reports["CD"] = verify_exactness(self.C, self.D)
        else:
            self.reports["GC"] = _structural_report(self.G, self.C)
            self.reports["CD"] = _structural_report(self.C, self.D)

    @property
    def dims(self):
        return {t: sp_.dim for t, sp_ in self.spaces.items()}

    @property
    def exact(self) -> bool:
        return all(r.exact for r in self.reports.values())

    @cached_property
    def Gs(self) -> LinearOp:
        return adjoint(self.G)

    @cached_property
    def Cs(self) -> LinearOp:
        return adjoint(self.C)

    @cached_property
    def Ds(self) -> LinearOp:
        return adjoint(self.D)

    @cached_property
    def curl_pair(self) -> ComplexPair:
        """(G, C): the pair whose middle space carries the curl coefficient."""
        return ComplexPair(self.G, self.C)

    @cached_property
    def div_pair(self) -> ComplexPair:
        """(D, 0): the div coefficient's pair; the last space is trivial."""
        zero = HilbertSpace(np.ones(0), "trivial")
        return ComplexPair(self.D, LinearOp(self.spaces["cell"], zero, np.zeros((0, self.dims["cell"]))))

    def field(self, tag: str, values) -> StaggeredField:
        return StaggeredField(self.grid, tag, values)


def _structural_report(A0: LinearOp, A1: LinearOp) -> ExactnessReport:
    """Exactness report for grids too large for a dense rank computation.

    The zero composition is still checked entrywise.  The rank counts come
    from the topology of the box (a contractible cell complex): rank(G) is
    #nodes - 1, rank(D) is #cells and the Euler characteristic fixes
    rank(C).  These counts are not an independent certificate.
    """
    comp = A1.matrix @ A0.matrix
    comp_norm = float(abs(comp).max()) if comp.nnz else 0.0
    if A0.domain.name == "node":  # (G, C)
        n_node, n_edge = A0.domain.dim, A0.codomain.dim
        rank0 = n_node - 1
        nullity1 = n_edge - (n_edge - n_node + 1)
    else:  # (C, D): rank(C) = #faces - #cells by the Euler characteristic
        rank0 = A1.domain.dim - A1.codomain.dim
        nullity1 = A1.domain.dim - A1.codomain.dim
    return ExactnessReport(comp_norm, rank0, nullity1, comp_norm == 0.0)


def build_box_complex(grid: BoxGrid, certify: bool | None = None) -> DiscreteComplex:
    return DiscreteComplex(grid, certify)


# ---------------------------------------------------------------------------
# coefficient sampling


def _wrap_unit(t):
    """``t mod 1`` with values within 1e-12 of an integer snapped to 0."""
    f = t - np.floor(t)
    return np.where(f > 1 - 1e-12, 0.0, f)


class RescaledProfile:
    """``x -> d(n x mod 1)`` for a unit-periodic ``d``."""

    def __init__(self, base, n: int):
        if int(n) != n or n < 1:
            raise ValueError(f"oscillation index must be a positive integer, got {n}")
        self.base = base
        self.n = int(n)

    def __call__(self, X):
        return self.base(_wrap_unit(self.n * np.asarray(X, dtype=float)))

    def __repr__(self):
        return f"RescaledProfile({self.base!r}, n={self.n})"


def periodic_rescale(d, n: int):
    if int(n) != n or n < 1:
        raise ValueError(f"oscillation index must be a positive integer, got {n}")
    if isinstance(d, (Number, np.ndarray)):
        return d
    if isinstance(d, RescaledProfile):
        return RescaledProfile(d.base, d.n * int(n))
    if n == 1:
        return d
    return RescaledProfile(d, n)


def _evaluate(d, X):
    """Samples of ``d`` at points ``X`` as (m,), (m,3) or (m,3,3)."""
    m = X.shape[0]
    if callable(d):
        v = np.asarray(d(X))
    else:
        v = np.asarray(d)
        if v.ndim == 0:
            v = np.broadcast_to(v, (m,))
        elif v.shape == (3,):
            v = np.broadcast_to(v, (m, 3))
        elif v.shape == (3, 3):
            v = np.broadcast_to(v, (m, 3, 3))
        else:
            raise ValueError(f"cannot interpret coefficient of shape {v.shape}")
    if v.shape not in ((m,), (m, 3), (m, 3, 3)):
        raise ValueError(f"coefficient returned shape {v.shape} for {m} points")
    if not np.all(np.isfinite(v)):
        raise ValueError("coefficient samples contain NaN or infinite values")
    return v.astype(complex)


def sample_coefficient(d, grid: BoxGrid, tag: str):
    """Multiplication operator of ``d`` on a staggered space.

    Scalar and diagonal ``d`` are sampled at each component's own location.
    For a full matrix, the off-diagonal entry ``d_{cc'}`` at a ``c``-location
    multiplies the mean of the (up to 4) nearest ``c'``-values.
    """
    space = grid.space(tag)
    X = grid.positions(tag)
    v = _evaluate(d, X)
    comp = grid.component_ids(tag)
    if v.ndim == 1:
        return MultiplicationCoefficient(space, v)
    if tag in ("node", "cell"):
        raise ValueError(f"matrix-valued coefficients need a vector space, not {tag!r}")
    rows = np.arange(space.dim)
    if v.ndim == 2:
        return MultiplicationCoefficient(space, v[rows, comp])
    diag_vals = v[rows, comp, comp]
    off = v.copy()
    off[:, [0, 1, 2], [0, 1, 2]] = 0
    if not np.any(off):
        return MultiplicationCoefficient(space, diag_vals)
    return MatrixCoefficient(space, _full_matrix_sparse(grid, tag, v), hermitian=None)


def _full_matrix_sparse(grid: BoxGrid, tag: str, v):
    offs = _offsets(tag)
    shapes = grid.component_shapes(tag)
    starts = [s.start for s in grid.component_slices(tag)]
    R, Cc, V = [], [], []
    for c in range(3):
        idx = np.indices(shapes[c]).reshape(3, -1)
        rows = starts[c] + np.arange(idx.shape[1])
        vals_c = v[rows]
        R.append(rows)
        Cc.append(rows)
        V.append(vals_c[:, c, c])
        for cp in range(3):
            if cp == c:
                continue
            choices = []
            for k in range(3):
                if offs[c][k] == offs[cp][k]:
                    choices.append([idx[k]])
                elif offs[c][k] == 0:  # source is half-shifted: neighbours at idx-1, idx
                    choices.append([idx[k] - 1, idx[k]])
                else:
                    choices.append([idx[k], idx[k] + 1])
            nb_cols, nb_rows, counts = [], [], np.zeros(idx.shape[1])
            for a in choices[0]:
                for b in choices[1]:
                    for e in choices[2]:
                        ok = ((a >= 0) & (a < shapes[cp][0]) & (b >= 0) & (b < shapes[cp][1])
                              & (e >= 0) & (e < shapes[cp][2]))
                        flat = np.ravel_multi_index(
                            (np.clip(a, 0, shapes[cp][0] - 1), np.clip(b, 0, shapes[cp][1] - 1),
                             np.clip(e, 0, shapes[cp][2] - 1)), shapes[cp])
                        nb_rows.append(np.nonzero(ok)[0])
                        nb_cols.append(starts[cp] + flat[ok])
                        counts += ok
            for r_local, cols in zip(nb_rows, nb_cols):
                R.append(rows[r_local])
                Cc.append(cols)
                V.append(vals_c[r_local, c, cp] / counts[r_local])
    n = grid.dim(tag)
    return sp.csr_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(Cc))), shape=(n, n))
