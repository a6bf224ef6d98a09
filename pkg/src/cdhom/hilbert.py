"""Finite-dimensional Hilbert-complex algebra.

Every space carries a diagonal quadrature weight, so the inner product is
``<x, y> = sum(w * x * conj(y))`` (linear in the first slot).  Operators are
plain matrices between such spaces; adjoints, orthonormal bases and block
splittings are all taken with respect to the weights.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

#: relative singular-value threshold for every rank decision
RANK_RTOL = 1e-10


class DimensionError(ValueError):
    pass


class DecompositionError(ValueError):
    """range(A0) + range(A1*) does not fill the middle space."""


class SingularCoefficientError(np.linalg.LinAlgError):
    pass


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class HilbertSpace:
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise DimensionError("weights must be one-dimensional")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError(f"space {self.name!r}: weights must be finite and > 0")
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def euclidean(cls, dim: int, name: str = "") -> "HilbertSpace":
        return cls(np.ones(dim), name)

    @property
    def dim(self) -> int:
        return self.weights.size

    @cached_property
    def sqrt_weights(self):
        return np.sqrt(self.weights)

    def inner(self, x, y) -> complex:
        return np.vdot(y, self.weights * x)

    def norm(self, x) -> float:
        x = np.asarray(x)
        return float(np.sqrt(np.sum(self.weights * np.abs(x) ** 2)))

    def gram(self, X, Y=None):
        """Matrix of pairings ``Y^H W X`` between column families."""
        Y = X if Y is None else Y
        return Y.conj().T @ (self.weights[:, None] * X)

    def __repr__(self):
        return f"HilbertSpace({self.name!r}, dim={self.dim})"


def _shape(m):
    return m.shape


@dataclasses.dataclass(frozen=True, eq=False)
class LinearOp:
    """A matrix mapping coordinates of ``domain`` to coordinates of ``codomain``."""

    domain: HilbertSpace
    codomain: HilbertSpace
    matrix: object

    def __post_init__(self):
        if _shape(self.matrix) != (self.codomain.dim, self.domain.dim):
            raise DimensionError(
                f"matrix shape {_shape(self.matrix)} does not match "
                f"({self.codomain.dim}, {self.domain.dim})"
            )

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def __call__(self, x):
        return self.matrix @ x

    def __matmul__(self, other: "LinearOp") -> "LinearOp":
        if other.codomain is not self.domain and other.codomain.dim != self.domain.dim:
            raise DimensionError("cannot compose operators with mismatched spaces")
        return LinearOp(other.domain, self.codomain, self.matrix @ other.matrix)

    def to_dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def adjoint(self) -> "LinearOp":
        return adjoint(self)

    def norm(self) -> float:
        """Induced weighted 2-norm (dense SVD; small operators only)."""
        m = _orthonormal_matrix(self)
        if min(m.shape) == 0:
            return 0.0
        return float(sla.svdvals(m)[0])


def adjoint(op: LinearOp) -> LinearOp:
    """Weighted adjoint ``W_dom^-1 M^H W_cod``."""
    wd, wc = op.domain.weights, op.codomain.weights
    m = op.matrix
    if sp.issparse(m):
        adj = sp.diags(1.0 / wd) @ m.conj().T @ sp.diags(wc)
        adj = adj.tocsr()
    else:
        m = np.asarray(m)
        adj = (m.conj().T * wc[None, :]) / wd[:, None]
    return LinearOp(op.codomain, op.domain, adj)


def _orthonormal_matrix(op: LinearOp) -> np.ndarray:
    """The operator expressed in weight-orthonormal coordinates (dense)."""
    m = op.to_dense()
    return op.codomain.sqrt_weights[:, None] * m / op.domain.sqrt_weights[None, :]


def numerical_rank(s, rtol: float = RANK_RTOL) -> int:
    s = np.asarray(s)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


# ---------------------------------------------------------------------------
# reduced operators


@dataclasses.dataclass(frozen=True, eq=False)
class ReducedOp:
    """The bijection ``ker(op)^perp -> range(op)`` of a finite-rank operator.

    ``range_basis`` and ``corange_basis`` (a basis of ker(op)^perp) are
    orthonormal in the weighted inner products, and
    ``op @ corange_basis = range_basis * singular_values``.
    """

    op: LinearOp
    range_basis: np.ndarray
    corange_basis: np.ndarray
    singular_values: np.ndarray
    kernel_basis: np.ndarray
    cokernel_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.size

    @property
    def nullity(self) -> int:
        return self.kernel_basis.shape[1]

    @property
    def min_singular_value(self) -> float:
        """Largest c with c*||x|| <= ||op x|| on ker(op)^perp."""
        return float(self.singular_values[-1]) if self.rank else np.inf

    def range_coords(self, r):
        return self.op.codomain.gram(np.asarray(r).reshape(len(r), -1), self.range_basis).reshape(
            (self.rank,) + np.shape(r)[1:]
        )

    def corange_coords(self, x):
        return self.op.domain.gram(np.asarray(x).reshape(len(x), -1), self.corange_basis).reshape(
            (self.rank,) + np.shape(x)[1:]
        )

    def project_range(self, r):
        return self.range_basis @ self.range_coords(r)

    def project_corange(self, x):
        return self.corange_basis @ self.corange_coords(x)

    def solve(self, r):
        """The unique ``x`` orthogonal to ker(op) with ``op x = P_range r``."""
        c = self.range_coords(r)
        return self.corange_basis @ (c / _col(self.singular_values, c))

    def dual(self, r):
        """Dual map: ``r`` in range(op) becomes the coefficient vector of
        ``y -> <r, op y>`` on the corange basis (conjugated convention)."""
        c = self.range_coords(r)
        return _col(self.singular_values, c) * c

    def dual_inverse(self, ell, kind: str = "l2"):
        """Inverse of the dual map.

        ``kind="l2"``: the functional is ``y -> <ell, y>`` on the domain.
        ``kind="flux"``: the functional is ``y -> <ell, op y>`` on the codomain.
        ``kind="coords"``: ``ell`` already holds the values of the functional on
        the corange basis (conjugated).
        Returns the unique ``q`` in range(op) with ``<q, op y> = F(y)``.
        """
        if kind == "flux":
            return self.project_range(ell)
        if kind == "l2":
            v = self.corange_coords(ell)
        elif kind == "coords":
            v = np.asarray(ell)
        else:
            raise ValueError(f"unknown functional kind {kind!r}")
        return self.range_basis @ (v / _col(self.singular_values, v))


def _col(s, like):
    like = np.asarray(like)
    return s.reshape((-1,) + (1,) * (like.ndim - 1))


def reduced_operator(op: LinearOp, rtol: float = RANK_RTOL) -> ReducedOp:
    m = _orthonormal_matrix(op)
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        empty_r = np.zeros((rows, 0), dtype=m.dtype)
        return ReducedOp(
            op,
            empty_r,
            np.zeros((cols, 0), dtype=m.dtype),
            np.zeros(0),
            np.eye(cols, dtype=m.dtype) / op.domain.sqrt_weights[:, None],
            np.eye(rows, dtype=m.dtype) / op.codomain.sqrt_weights[:, None],
        )
    U, s, Vh = sla.svd(m, full_matrices=True, lapack_driver="gesdd")
    r = numerical_rank(s, rtol)
    sc = op.codomain.sqrt_weights[:, None]
    sd = op.domain.sqrt_weights[:, None]
    V = Vh.conj().T
    return ReducedOp(
        op=op,
        range_basis=U[:, :r] / sc,
        corange_basis=V[:, :r] / sd,
        singular_values=s[:r].copy(),
        kernel_basis=V[:, r:] / sd,
        cokernel_basis=U[:, r:] / sc,
    )


# ---------------------------------------------------------------------------
# complexes


class ExactnessReport(NamedTuple):
    composition_norm: float
    rank_A0: int
    nullity_A1: int
    exact: bool


def verify_exactness(A0: LinearOp, A1: LinearOp, rtol: float = RANK_RTOL) -> ExactnessReport:
    if A0.codomain.dim != A1.domain.dim:
        raise DimensionError("codomain(A0) must equal domain(A1)")
    comp = A1.matrix @ A0.matrix
    if sp.issparse(comp):
        comp_norm = float(np.abs(comp.data).max()) if comp.nnz else 0.0
    else:
        comp_norm = float(np.abs(comp).max()) if comp.size else 0.0
    s0 = sla.svdvals(_orthonormal_matrix(A0)) if min(A0.shape) else np.zeros(0)
    s1 = sla.svdvals(_orthonormal_matrix(A1)) if min(A1.shape) else np.zeros(0)
    rank0 = numerical_rank(s0, rtol)
    nullity1 = A1.domain.dim - numerical_rank(s1, rtol)
    return ExactnessReport(comp_norm, rank0, nullity1, rank0 == nullity1 and comp_norm == 0.0)


class ComplexPair:
    """Two consecutive operators ``A0: H0 -> H1``, ``A1: H1 -> H2`` with A1 A0 = 0.

    Caches the orthonormal bases of range(A0), range(A1*) and ker(A1) in H1.
    """

    def __init__(self, A0: LinearOp, A1: LinearOp, rtol: float = RANK_RTOL):
        if A0.codomain.dim != A1.domain.dim:
            raise DimensionError("codomain(A0) must equal domain(A1)")
        self.A0, self.A1 = A0, A1
        self.space = A1.domain
        self.red0 = reduced_operator(A0, rtol)
        self.red1 = reduced_operator(A1, rtol)
        comp = A1.matrix @ A0.matrix
        comp = comp.toarray() if sp.issparse(comp) else np.asarray(comp)
        self.composition_norm = float(np.abs(comp).max()) if comp.size else 0.0

    @property
    def range0(self):
        """Orthonormal basis of range(A0)."""
        return self.red0.range_basis

    @property
    def range1_adj(self):
        """Orthonormal basis of range(A1*) = ker(A1)^perp."""
        return self.red1.corange_basis

    @property
    def kernel1(self):
        return self.red1.kernel_basis

    @property
    def exact(self) -> bool:
        return self.red0.rank == self.red1.nullity and self.composition_norm == 0.0

    @property
    def harmonic_dim(self) -> int:
        return self.space.dim - self.red0.rank - self.red1.rank

    def projector(self, which: str) -> np.ndarray:
        B = {"range0": self.range0, "range1_adj": self.range1_adj, "kernel1": self.kernel1}[which]
        return B @ self.space.gram(np.eye(self.space.dim), B)


# ---------------------------------------------------------------------------
# coefficients


class Coefficient:
    """A bounded operator on a single space of the complex.

    Subclasses provide ``apply``; the rest has generic fallbacks.
    """

    space: HilbertSpace
    hermitian: bool = False

    @property
    def dim(self) -> int:
        return self.space.dim

    def apply(self, x):
        raise NotImplementedError

    def apply_inverse(self, x):
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.dim, dtype=complex))

    def to_op(self) -> LinearOp:
        return LinearOp(self.space, self.space, self.to_dense())

    def spectral_bounds(self) -> "SpectralBounds":
        """Certified bounds used when the dense block algebra is out of reach."""
        return _dense_spectral_bounds(self.to_dense(), self.space, self.hermitian)

    def inverse(self) -> "Coefficient":
        return InverseCoefficient(self)

    def __matmul__(self, x):
        return self.apply(x)


class InverseCoefficient(Coefficient):
    """``a^-1`` as a coefficient, sharing the factorisation of ``a``."""

    def __init__(self, a: Coefficient):
        self.base = a
        self.space = a.space
        self.hermitian = a.hermitian

    def apply(self, x):
        return self.base.apply_inverse(x)

    def apply_inverse(self, x):
        return self.base.apply(x)

    def inverse(self):
        return self.base

    def spectral_bounds(self):
        b = self.base.spectral_bounds()
        if b.hermitian:
            # eigenvalues of a^-1 lie in [1/lmax, 1/lmin]
            return SpectralBounds(1 / b.norm, 1 / b.re_floor, b.re_floor, b.norm, True)
        return SpectralBounds(b.inv_re_floor, b.inv_norm, b.re_floor, b.norm, False)


class SpectralBounds(NamedTuple):
    """Bounds in the weighted norm: ``Re a >= re_floor``, ``||a|| <= norm`` and the
    same pair for ``a^-1``.  For Hermitian ``a``, ``re_floor``/``norm`` are the
    extreme eigenvalues."""

    re_floor: float
    norm: float
    inv_re_floor: float
    inv_norm: float
    hermitian: bool


def _dense_spectral_bounds(m, space, hermitian):
    s = space.sqrt_weights
    mt = s[:, None] * m / s[None, :]
    sv = sla.svdvals(mt)
    herm = 0.5 * (mt + mt.conj().T)
    ev = sla.eigvalsh(herm)
    inv = sla.inv(mt)
    ev_inv = sla.eigvalsh(0.5 * (inv + inv.conj().T))
    return SpectralBounds(float(ev[0]), float(sv[0]), float(ev_inv[0]), float(1.0 / sv[-1]), hermitian)


class MultiplicationCoefficient(Coefficient):
    """Pointwise multiplication by a (complex) value per coordinate."""

    def __init__(self, space: HilbertSpace, values):
        values = np.broadcast_to(np.asarray(values), (space.dim,)).astype(complex)
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficient values must be finite")
        self.space = space
        self.values = _readonly(values)
        self.hermitian = bool(np.all(values.imag == 0))

    def apply(self, x):
        x = np.asarray(x)
        return self.values.reshape((-1,) + (1,) * (x.ndim - 1)) * x

    def apply_inverse(self, x):
        x = np.asarray(x)
        if np.any(self.values == 0):
            raise SingularCoefficientError("multiplication by zero is not invertible")
        return x / self.values.reshape((-1,) + (1,) * (x.ndim - 1))

    def inverse(self) -> "MultiplicationCoefficient":
        return MultiplicationCoefficient(self.space, 1.0 / self.values)

    def to_dense(self):
        return np.diag(self.values)

    def sparse(self):
        return sp.diags(self.values).tocsr()

    def spectral_bounds(self):
        v = self.values
        if np.any(v == 0):
            raise SingularCoefficientError("multiplication by zero is not invertible")
        if self.hermitian:
            lo, hi = float(v.real.min()), float(v.real.max())
            return SpectralBounds(lo, float(np.abs(v).max()), 1.0 / hi if hi > 0 else -np.inf,
                                  float((1 / np.abs(v)).max()), True)
        return SpectralBounds(float(v.real.min()), float(np.abs(v).max()),
                              float((1 / v).real.min()), float((1 / np.abs(v)).max()), False)


class MatrixCoefficient(Coefficient):
    """A coefficient given by an explicit (dense or sparse) matrix."""

    def __init__(self, space: HilbertSpace, matrix, hermitian: bool | None = None):
        if matrix.shape != (space.dim, space.dim):
            raise DimensionError("coefficient matrix must be square on its space")
        self.space = space
        self.matrix = matrix.tocsr() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
        if hermitian is None:
            # W-self-adjointness of the matrix
            adj = adjoint(LinearOp(space, space, self.matrix)).matrix
            diff = self.matrix - adj
            diff = abs(diff).max() if sp.issparse(diff) else np.abs(diff).max()
            scale = abs(self.matrix).max() if sp.issparse(self.matrix) else np.abs(self.matrix).max()
            hermitian = bool(diff <= 1e-14 * max(scale, 1e-300))
        self.hermitian = hermitian
        self._lu = None

    def apply(self, x):
        return self.matrix @ x

    def _factor(self):
        if self._lu is None:
            if sp.issparse(self.matrix):
                self._lu = spla.splu(self.matrix.tocsc().astype(complex))
            else:
                self._lu = sla.lu_factor(self.matrix)
        return self._lu

    def apply_inverse(self, x):
        lu = self._factor()
        if sp.issparse(self.matrix):
            return lu.solve(np.asarray(x, dtype=complex))
        return sla.lu_solve(lu, x)

    def to_dense(self):
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix.copy()

    def sparse(self):
        return self.matrix if sp.issparse(self.matrix) else None


def as_dense(a, space: HilbertSpace | None = None) -> np.ndarray:
    if isinstance(a, Coefficient):
        return a.to_dense()
    if isinstance(a, LinearOp):
        return a.to_dense()
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a)


# ---------------------------------------------------------------------------
# block decomposition & admissibility


@dataclasses.dataclass(frozen=True, eq=False)
class BlockCoefficient:
    """``a`` split along ``B0 (+) B1`` with ``a_ij = B_i^H W a B_j``."""

    a00: np.ndarray
    a01: np.ndarray
    a10: np.ndarray
    a11: np.ndarray
    basis0: np.ndarray
    basis1: np.ndarray
    space: HilbertSpace

    def block_matrix(self) -> np.ndarray:
        return np.block([[self.a00, self.a01], [self.a10, self.a11]])

    def reassemble(self) -> np.ndarray:
        """The compression ``P a P`` back in ambient coordinates."""
        B = np.hstack([self.basis0, self.basis1])
        return B @ self.block_matrix() @ B.conj().T * self.space.weights[None, :]


def split_blocks(a, space: HilbertSpace, B0, B1) -> BlockCoefficient:
    m = as_dense(a)
    if m.shape != (space.dim, space.dim):
        raise DimensionError("coefficient does not act on the split space")
    WB0 = space.weights[:, None] * B0
    WB1 = space.weights[:, None] * B1
    mB0, mB1 = m @ B0, m @ B1
    return BlockCoefficient(
        WB0.conj().T @ mB0, WB0.conj().T @ mB1, WB1.conj().T @ mB0, WB1.conj().T @ mB1, B0, B1, space
    )


def block_decompose(a, pair: ComplexPair) -> BlockCoefficient:
    """Blocks of ``a`` relative to range(A0) (+) range(A1*)."""
    if pair.harmonic_dim != 0:
        raise DecompositionError(
            f"range(A0) + range(A1*) misses {pair.harmonic_dim} dimensions of {pair.space.name!r}"
        )
    return split_blocks(a, pair.space, pair.range0, pair.range1_adj)


@dataclasses.dataclass(frozen=True)
class AdmissibilityParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0 < self.alpha <= self.beta):
            raise ValueError(f"need 0 < alpha <= beta, got ({self.alpha}, {self.beta})")


class AdmissibilityReport(NamedTuple):
    #: Hermitian-part floors of a00, a00^-1, (a^-1)_11 and (a^-1)_11^-1
    floors: tuple
    member: bool
    method: str
    params: AdmissibilityParams


def hermitian_floor(m) -> float:
    """Smallest eigenvalue of the Hermitian part (``inf`` for an empty block)."""
    m = np.asarray(m)
    if m.size == 0:
        return np.inf
    return float(sla.eigvalsh(0.5 * (m + m.conj().T))[0])


def _inv(m, what):
    """Inverse with a 1-norm condition check (cheaper than an SVD)."""
    if m.size == 0:
        return m
    try:
        inv = sla.inv(m)
    except (np.linalg.LinAlgError, ValueError):
        raise SingularCoefficientError(f"{what} is singular") from None
    cond = np.abs(m).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularCoefficientError(f"{what} is singular (cond={cond:.3g})")
    return inv


def _member(floors, params, tol=1e-12):
    a, b = params.alpha, params.beta
    need = (a, 1 / b, 1 / b, a)
    return all(f >= n - tol * max(1.0, abs(n)) for f, n in zip(floors, need))


def block_floors(blocks: BlockCoefficient) -> tuple:
    """Floors of a00, a00^-1, Schur = ((a^-1)_11)^-1 inverted, and Schur itself.

    Returned in the order (a00, a00^-1, (a^-1)_11, (a^-1)_11^-1).
    """
    a00_inv = _inv(blocks.a00, "a00")
    schur = blocks.a11 - blocks.a10 @ a00_inv @ blocks.a01
    schur_inv = _inv(schur, "Schur complement")
    return (
        hermitian_floor(blocks.a00),
        hermitian_floor(a00_inv),
        hermitian_floor(schur_inv),
        hermitian_floor(schur),
    )


def bounded_floors(a: Coefficient) -> tuple:
    """Certified lower bounds for the four floors from global spectral data.

    Compressions of an accretive operator stay accretive; for Hermitian ``a``
    the spectra of all compressions (and their inverses) stay inside the
    spectral interval of ``a`` (and of ``a^-1``).
    """
    b = a.spectral_bounds()
    if b.hermitian:
        lo, hi = b.re_floor, b.norm
        if lo <= 0:
            return (lo, -np.inf, -np.inf, lo)
        return (lo, 1.0 / hi, 1.0 / hi, lo)
    f0 = b.re_floor
    f1 = f0 / b.norm**2 if f0 > 0 else -np.inf
    f2 = b.inv_re_floor
    f3 = f2 / b.inv_norm**2 if f2 > 0 else -np.inf
    return (f0, f1, f2, f3)


def admissibility_check(
    a, params: AdmissibilityParams, pair: ComplexPair | None = None, method: str = "auto"
) -> AdmissibilityReport:
    """Membership of ``a`` in the admissible class relative to ``pair``.

    ``method="dense"`` computes the exact floors from the block decomposition;
    ``method="bound"`` uses certified spectral bounds (sufficient, not
    necessary) and needs no factorisation of the complex.
    """
    if method == "auto":
        method = "dense" if pair is not None else "bound"
    if method == "dense":
        if pair is None:
            raise ValueError("dense admissibility check needs a ComplexPair")
        m = as_dense(a)
        _inv(m, "coefficient")
        floors = block_floors(block_decompose(m, pair))
    elif method == "bound":
        if not isinstance(a, Coefficient):
            raise TypeError("bound mode needs a Coefficient")
        floors = bounded_floors(a)
    else:
        raise ValueError(f"unknown method {method!r}")
    return AdmissibilityReport(tuple(float(f) for f in floors), _member(floors, params), method, params)


class CharacteristicMaps(NamedTuple):
    M1: LinearOp  # a00^-1
    M2: LinearOp  # a10 a00^-1
    M3: LinearOp  # a00^-1 a01
    M4: LinearOp  # a11 - a10 a00^-1 a01


def maps_from_blocks(blocks: BlockCoefficient) -> CharacteristicMaps:
    n0, n1 = blocks.a00.shape[0], blocks.a11.shape[0]
    S0, S1 = HilbertSpace.euclidean(n0, "block0"), HilbertSpace.euclidean(n1, "block1")
    inv00 = _inv(blocks.a00, "a00")
    return CharacteristicMaps(
        LinearOp(S0, S0, inv00),
        LinearOp(S0, S1, blocks.a10 @ inv00),
        LinearOp(S1, S0, inv00 @ blocks.a01),
        LinearOp(S1, S1, blocks.a11 - blocks.a10 @ inv00 @ blocks.a01),
    )


def characteristic_maps(a, pair: ComplexPair) -> CharacteristicMaps:
    return maps_from_blocks(block_decompose(a, pair))


# ---------------------------------------------------------------------------
# weak-operator probes


@dataclasses.dataclass(frozen=True, eq=False)
class ProbeSet:
    """Pairs ``(x_k, y_k)`` of unit vectors; rows of ``x`` and ``y``."""

    space: str
    x: np.ndarray
    y: np.ndarray
    seed: int | None = None
    labels: tuple = ()

    def __post_init__(self):
        x, y = np.atleast_2d(self.x), np.atleast_2d(self.y)
        if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
            raise ValueError("a probe set needs the same positive number of x and y vectors")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"{self.space}{k}" for k in range(len(x))))

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_vectors(cls, space: str, vectors, weights=None, labels: Sequence[str] = (), seed=None):
        """Probe pairs ``(v, v)`` after normalising each ``v`` in the weighted norm."""
        v = np.atleast_2d(np.asarray(vectors, dtype=complex))
        w = np.ones(v.shape[1]) if weights is None else np.asarray(weights)
        norms = np.sqrt(np.sum(w[None, :] * np.abs(v) ** 2, axis=1))
        if np.any(norms == 0):
            raise ValueError("probe vectors must be nonzero")
        v = v / norms[:, None]
        return cls(space, v, v, seed, tuple(labels))

    @classmethod
    def random(cls, space: str, count: int, dim_x: int, dim_y: int | None = None,
               seed: int = 0, wx=None, wy=None):
        """Gaussian complex probes from ``numpy.random.default_rng(seed)``."""
        dim_y = dim_x if dim_y is None else dim_y
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((count, dim_x)) + 1j * rng.standard_normal((count, dim_x))
        y = rng.standard_normal((count, dim_y)) + 1j * rng.standard_normal((count, dim_y))
        wx = np.ones(dim_x) if wx is None else np.asarray(wx)
        wy = np.ones(dim_y) if wy is None else np.asarray(wy)
        x /= np.sqrt(np.sum(wx * np.abs(x) ** 2, axis=1))[:, None]
        y /= np.sqrt(np.sum(wy * np.abs(y) ** 2, axis=1))[:, None]
        return cls(space, x, y, seed)


def wot_distance(T, Tref, probes: ProbeSet) -> float:
    """``max_k |<(T - Tref) x_k, y_k>|`` in the codomain inner product."""
    if len(probes) == 0:
        raise ValueError("empty probe set")
    if isinstance(T, LinearOp):
        weights = T.codomain.weights
    else:
        weights = np.ones(np.shape(T)[0])
    diff = as_dense(T) - as_dense(Tref)
    if diff.shape[1] != probes.x.shape[1] or diff.shape[0] != probes.y.shape[1]:
        raise DimensionError("probe vectors do not match the operator spaces")
    img = diff @ probes.x.T  # columns (T - Tref) x_k
    vals = np.sum(np.conj(probes.y.T) * weights[:, None] * img, axis=0)
    return float(np.max(np.abs(vals)))
