"""Coefficient algebra: periodic profiles and their means, convolution
kernels with their resolvents, localized test fields and coefficient
identification from flux data.
"""

from __future__ import annotations

import dataclasses
from numbers import Number

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .grid import BoxGrid, RescaledProfile, StaggeredField, _wrap_unit
from .hilbert import Coefficient, HilbertSpace, SpectralBounds

# ---------------------------------------------------------------------------
# periodic profiles


class Profile:
    """A unit-periodic function on R^3 (scalar or 3x3-matrix valued)."""

    def __call__(self, X):
        raise NotImplementedError

    def mean(self, fn=None):
        """Exact mean of ``fn(profile)``; ``None`` if no closed form."""
        return None


class ConstantProfile(Profile):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=complex)

    def __call__(self, X):
        m = np.shape(X)[0]
        return np.broadcast_to(self.value, (m,) + self.value.shape).copy()

    def mean(self, fn=None):
        return (fn or _ident)(self.value)

    def __repr__(self):
        return f"ConstantProfile({self.value})"


def _ident(v):
    return v


class LayeredProfile(Profile):
    """Piecewise constant in one coordinate (``axis``), periodic with period 1.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])`` with the last
    interval closing at 1.  Values are scalars or 3x3 matrices.
    """

    def __init__(self, breakpoints, values, axis: int = 0):
        bp = np.asarray(breakpoints, dtype=float)
        vals = [np.asarray(v, dtype=complex) for v in values]
        if bp.ndim != 1 or bp.size == 0 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0) or bp[-1] >= 1:
            raise ValueError("breakpoints must be strictly increasing in [0, 1)")
        if len(vals) != bp.size:
            raise ValueError("need one value per interval")
        shapes = {v.shape for v in vals}
        if len(shapes) != 1 or shapes.pop() not in ((), (3, 3)):
            raise ValueError("layer values must all be scalars or all 3x3 matrices")
        for v in vals:
            if not np.all(np.isfinite(v)):
                raise ValueError("layer values must be finite")
        self.breakpoints = bp
        self.values = np.stack(vals)
        self.axis = int(axis)

    @property
    def fractions(self) -> np.ndarray:
        return np.diff(np.append(self.breakpoints, 1.0))

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 1

    def phase(self, t):
        """Layer index of the coordinate ``t`` (periodic)."""
        f = _wrap_unit(np.asarray(t, dtype=float))
        # points within 1e-12 below a breakpoint belong to the next layer
        return np.searchsorted(self.breakpoints, f + 1e-12, side="right") - 1

    def __call__(self, X):
        X = np.atleast_2d(X)
        return self.values[self.phase(X[:, self.axis])]

    def mean(self, fn=None):
        fn = fn or _ident
        return sum(f * fn(v) for f, v in zip(self.fractions, self.values))

    def map(self, fn) -> "LayeredProfile":
        return LayeredProfile(self.breakpoints, [fn(v) for v in self.values], self.axis)

    def as_matrix(self) -> "LayeredProfile":
        """Scalar layers ``d`` become ``d * I``."""
        if not self.is_scalar:
            return self
        return self.map(lambda v: v * np.eye(3))

    def __repr__(self):
        return f"LayeredProfile({self.breakpoints.tolist()}, {self.values.tolist()}, axis={self.axis})"


def two_phase(v1, v2, fraction: float = 0.5, axis: int = 0) -> LayeredProfile:
    if not 0 < fraction < 1:
        raise ValueError("phase fraction must lie in (0, 1)")
    return LayeredProfile([0.0, fraction], [v1, v2], axis)


class TrigProfile(Profile):
    """``offset + amplitude * cos(2 pi <wavevector, x>)`` with an integer wavevector."""

    def __init__(self, amplitude, wavevector=(1, 0, 0), offset=0.0):
        wv = np.asarray(wavevector)
        if wv.shape != (3,) or np.any(wv != np.round(wv)):
            raise ValueError("wavevector must hold three integers")
        self.amplitude = complex(amplitude)
        self.offset = complex(offset)
        self.wavevector = wv.astype(float)

    def __call__(self, X):
        X = np.atleast_2d(X)
        return self.offset + self.amplitude * np.cos(2 * np.pi * (X @ self.wavevector))

    def mean(self, fn=None):
        if fn is None:
            return self.offset if np.any(self.wavevector) else self.offset + self.amplitude
        return None

    def __repr__(self):
        return f"TrigProfile({self.amplitude}, {self.wavevector.tolist()}, offset={self.offset})"


class TabulatedProfile(Profile):
    """Piecewise constant on a regular ``M1 x M2 x M3`` partition of the unit cube."""

    def __init__(self, samples):
        s = np.asarray(samples, dtype=complex)
        if s.ndim == 1:
            s = s[:, None, None]
        if s.ndim != 3 or s.size == 0 or not np.all(np.isfinite(s)):
            raise ValueError("tabulated samples must be a finite 1-D or 3-D array")
        self.samples = s

    def __call__(self, X):
        X = np.atleast_2d(X)
        idx = []
        for k in range(3):
            m = self.samples.shape[k]
            t = _wrap_unit(np.asarray(X[:, k], dtype=float)) * m
            idx.append(np.minimum(np.floor(t + 1e-9).astype(int), m - 1))
        return self.samples[tuple(idx)]

    def mean(self, fn=None):
        return np.mean((fn or _ident)(self.samples))


def mean_value(k, M: int = 256, fn=None, chunk: int = 1 << 16):
    """Mean of ``fn(k)`` over the unit cube.

    Exact for constants, layered and tabulated profiles (and their periodic
    rescalings); midpoint rule with ``M**3`` points otherwise.
    """
    if M < 1:
        raise ValueError("quadrature resolution must be >= 1")
    fn = fn or _ident
    while isinstance(k, RescaledProfile):
        # the mean over a period is invariant under x -> n x
        k = k.base
    if isinstance(k, Number) or (isinstance(k, np.ndarray) and k.ndim <= 2 and not callable(k)):
        return fn(np.asarray(k, dtype=complex))
    if isinstance(k, Profile):
        exact = k.mean(fn) if fn is not _ident else k.mean()
        if exact is not None:
            return exact
    t = (np.arange(M) + 0.5) / M
    total = None
    n_total = M**3
    flat = np.arange(n_total)
    for start in range(0, n_total, chunk):
        ids = flat[start:start + chunk]
        i, j, l = np.unravel_index(ids, (M, M, M))
        X = np.stack([t[i], t[j], t[l]], axis=1)
        v = fn(np.asarray(k(X), dtype=complex))
        s = v.sum(axis=0)
        total = s if total is None else total + s
    return total / n_total


# ---------------------------------------------------------------------------
# convolution operators


class SmallnessError(ValueError):
    """A convolution operator whose norm is not certified below 1."""

    def __init__(self, norm):
        super().__init__(f"convolution operator norm {norm:.6g} is not below 1")
        self.norm = norm


def _constant_value(k):
    if isinstance(k, Number):
        return complex(k)
    if isinstance(k, ConstantProfile) and k.value.ndim == 0:
        return complex(k.value)
    if isinstance(k, RescaledProfile):
        return _constant_value(k.base)
    return None


class ConvolutionOperator:
    """``K f(x_i) = sum_j w_j k(n (x_i - x_j)) f(x_j)`` on one staggered space.

    Vector spaces are convolved componentwise.  Kernel values depend only on
    index differences, so every component is applied as a Toeplitz product
    via zero-padded FFTs.  Constant kernels use the exact rank-one formula.
    """

    def __init__(self, k, n: int, grid: BoxGrid, tag: str, check_norm: bool = True):
        if int(n) != n or n < 1:
            raise ValueError("oscillation index must be a positive integer")
        self.kernel, self.n, self.grid, self.tag = k, int(n), grid, tag
        self.space = grid.space(tag)
        self.shapes = grid.component_shapes(tag)
        self.slices = grid.component_slices(tag)
        self.const = _constant_value(k)
        self._w = [self.space.weights[s].reshape(sh) for s, sh in zip(self.slices, self.shapes)]
        if self.const is None:
            self._setup_fft()
        self.norm_bound = self._schur_bound()
        self.norm_estimate = None
        if check_norm and self.certified_norm() >= 1:
            raise SmallnessError(self.certified_norm())

    # -- assembly
    def _kernel_table(self, shape):
        h = self.grid.h
        axes = [np.arange(-(m - 1), m) * h[k] for k, m in enumerate(shape)]
        D = np.meshgrid(*axes, indexing="ij")
        X = np.stack([d.ravel() for d in D], axis=1) * self.n
        vals = np.asarray(self.kernel(X), dtype=complex)
        if vals.shape != (X.shape[0],):
            raise ValueError("convolution kernels must be scalar valued")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel values must be finite")
        return vals.reshape([2 * m - 1 for m in shape])

    def _setup_fft(self):
        self._tables, self._fft_shapes, self._hats = [], [], []
        cache = {}
        for shape in self.shapes:
            if shape not in cache:
                T = self._kernel_table(shape)
                fs = tuple(sfft.next_fast_len(3 * m - 2) for m in shape)
                cache[shape] = (T, fs, sfft.fftn(T, fs))
            T, fs, hat = cache[shape]
            self._tables.append(T)
            self._fft_shapes.append(fs)
            self._hats.append(hat)

    def _conv(self, c, g, hat=None):
        shape = self.shapes[c]
        fs = self._fft_shapes[c]
        hat = self._hats[c] if hat is None else hat
        full = sfft.ifftn(sfft.fftn(g, fs) * hat, fs)
        sl = tuple(slice(m - 1, 2 * m - 1) for m in shape)
        return full[sl]

    def apply(self, f):
        f = np.asarray(f)
        if f.ndim == 2:
            return np.stack([self.apply(f[:, j]) for j in range(f.shape[1])], axis=1)
        out = np.empty(f.shape, dtype=complex)
        for c, (s, shape) in enumerate(zip(self.slices, self.shapes)):
            g = self._w[c] * f[s].reshape(shape)
            if self.const is not None:
                out[s] = self.const * g.sum()
            else:
                out[s] = self._conv(c, g).ravel()
        return out

    __call__ = apply

    def apply_adjoint(self, f):
        """Weighted adjoint: the kernel ``conj(k(-x))``."""
        f = np.asarray(f)
        out = np.empty(f.shape, dtype=complex)
        for c, (s, shape) in enumerate(zip(self.slices, self.shapes)):
            g = self._w[c] * f[s].reshape(shape)
            if self.const is not None:
                out[s] = np.conj(self.const) * g.sum()
            else:
                Tadj = np.conj(self._tables[c][::-1, ::-1, ::-1])
                out[s] = self._conv(c, g, sfft.fftn(Tadj, self._fft_shapes[c])).ravel()
        return out

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.space.dim, dtype=complex))

    @property
    def self_adjoint(self) -> bool:
        if self.const is not None:
            return self.const.imag == 0
        return all(np.allclose(T, np.conj(T[::-1, ::-1, ::-1]), rtol=0, atol=1e-14 * max(np.abs(T).max(), 1e-300))
                   for T in self._tables)

    # -- norms
    def _schur_bound(self) -> float:
        """Schur-test upper bound of the weighted operator norm."""
        best = 0.0
        for c in range(len(self.shapes)):
            w = self._w[c]
            if self.const is not None:
                best = max(best, abs(self.const) * w.sum())
                continue
            T = np.abs(self._tables[c])
            rows = self._conv(c, w.astype(complex), sfft.fftn(T, self._fft_shapes[c])).real
            cols = self._conv(c, w.astype(complex), sfft.fftn(T[::-1, ::-1, ::-1], self._fft_shapes[c])).real
            best = max(best, float(np.sqrt(rows.max() * cols.max())))
        return best

    def estimate_norm(self) -> float:
        """Largest singular value in weighted coordinates (iterative)."""
        if self.norm_estimate is None:
            if self.const is not None:
                self.norm_estimate = self.norm_bound
            else:
                s = self.space.sqrt_weights
                dim = self.space.dim
                op = spla.LinearOperator(
                    (dim, dim), dtype=complex,
                    matvec=lambda x: s * self.apply(x.ravel() / s),
                    rmatvec=lambda x: s * self.apply_adjoint(x.ravel() / s),
                )
                self.norm_estimate = float(spla.svds(op, k=1, return_singular_vectors=False, tol=1e-10)[0])
        return self.norm_estimate

    def certified_norm(self) -> float:
        """The Schur bound, or the iterative estimate if the bound is not below 1."""
        if self.norm_bound < 1:
            return self.norm_bound
        return min(self.norm_bound, self.estimate_norm() * (1 + 1e-8))


def assemble_convolution(k, n: int, grid: BoxGrid, tag: str) -> ConvolutionOperator:
    return ConvolutionOperator(k, n, grid, tag)


def limit_convolution(k, grid: BoxGrid, tag: str, M: int = 256) -> ConvolutionOperator:
    """The weak limit ``f -> m(k) * integral(f)`` (rank one per component)."""
    return ConvolutionOperator(ConstantProfile(complex(mean_value(k, M))), 1, grid, tag)


class ResolventCoefficient(Coefficient):
    """``(1 - K)^-1`` for a convolution operator with certified ``||K|| < 1``."""

    def __init__(self, K: ConvolutionOperator, mode: str = "neumann", tol: float = 1e-12, maxiter: int = 10000):
        if mode not in ("neumann", "direct"):
            raise ValueError(f"unknown resolvent mode {mode!r}")
        kappa = K.certified_norm()
        if kappa >= 1:
            raise SmallnessError(kappa)
        self.K, self.mode, self.tol, self.maxiter = K, mode, tol, maxiter
        self.kappa = kappa
        self.space = K.space
        self.hermitian = K.self_adjoint
        self._lu = None

    def apply_inverse(self, x):
        x = np.asarray(x)
        return x - self.K.apply(x)

    def apply(self, f):
        f = np.asarray(f, dtype=complex)
        if f.ndim == 2:
            return np.stack([self.apply(f[:, j]) for j in range(f.shape[1])], axis=1)
        if self.K.const is not None:
            return self._rank_one(f)
        if self.mode == "neumann":
            return self._neumann(f)
        return self._direct(f)

    def _rank_one(self, f):
        # (1 - c w^T)^-1 = 1 + c / (1 - c sum(w)) w^T on every component
        c = self.K.const
        out = f.copy()
        for s, w in zip(self.K.slices, self.K._w):
            w = w.ravel()
            out[s] += c * np.dot(w, f[s]) / (1 - c * w.sum())
        return out

    def _neumann(self, f):
        x = f.copy()
        term = f
        scale = max(self.space.norm(f), 1e-300)
        for _ in range(self.maxiter):
            term = self.K.apply(term)
            x += term
            if self.space.norm(term) < self.tol * scale:
                return x
        raise RuntimeError("Neumann series failed to converge although ||K|| < 1")

    def _direct(self, f):
        dim = self.space.dim
        if dim <= 3000:
            if self._lu is None:
                self._lu = sla.lu_factor(np.eye(dim) - self.K.to_dense())
            return sla.lu_solve(self._lu, f)
        op = spla.LinearOperator((dim, dim), dtype=complex, matvec=lambda v: v - self.K.apply(v.ravel()))
        x, info = spla.gmres(op, f, rtol=1e-14, atol=0.0, restart=50, maxiter=200)
        if info != 0:
            raise RuntimeError(f"GMRES did not converge (info={info})")
        return x

    def spectral_bounds(self):
        kap = self.kappa
        if self.hermitian:
            return SpectralBounds(1 / (1 + kap), 1 / (1 - kap), 1 - kap, 1 + kap, True)
        return SpectralBounds((1 - kap) / (1 + kap) ** 2, 1 / (1 - kap), 1 - kap, 1 + kap, False)


def resolvent_coefficient(K: ConvolutionOperator, mode: str = "neumann") -> ResolventCoefficient:
    return ResolventCoefficient(K, mode)


# ---------------------------------------------------------------------------
# localized test fields


@dataclasses.dataclass(frozen=True)
class BumpCutoff:
    """Radial cutoff: 1 on ``B(x0, eps)``, 0 outside ``B(x0, 2 eps)``,
    quintic smoothstep between (C^2 at both ends)."""

    x0: tuple
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("cutoff radius must be positive")

    def _s(self, X):
        r = np.linalg.norm(np.atleast_2d(X) - np.asarray(self.x0), axis=1)
        return r, np.clip((r - self.eps) / self.eps, 0.0, 1.0)

    def __call__(self, X):
        _, s = self._s(X)
        return 1 - s**3 * (10 - 15 * s + 6 * s**2)

    def gradient(self, X):
        X = np.atleast_2d(X)
        r, s = self._s(X)
        ds = np.where((r > self.eps) & (r < 2 * self.eps), 1 / self.eps, 0.0)
        dtau = -30 * s**2 * (1 - s) ** 2 * ds
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, (X - np.asarray(self.x0)) / r[:, None], 0.0)
        return dtau[:, None] * unit


def _check_ball(grid: BoxGrid, cut: BumpCutoff, min_cells: float = 3.0):
    x0 = np.asarray(cut.x0, dtype=float)
    L = np.asarray(grid.L)
    if np.any(x0 - 2 * cut.eps < -1e-12) or np.any(x0 + 2 * cut.eps > L + 1e-12):
        raise ValueError("the cutoff support B(x0, 2 eps) must lie inside the box")
    if 2 * cut.eps < min_cells * max(grid.h) - 1e-12:
        raise ValueError("the grid must resolve the cutoff radius (>= 3 cells across)")


def _vector_sample(grid: BoxGrid, tag: str, field):
    """Sample a vector field ``X -> (m,3)`` at staggered component locations."""
    if tag not in ("edge", "face"):
        raise ValueError("vector fields live on edges or faces")
    X = grid.positions(tag)
    comp = grid.component_ids(tag)
    vals = np.asarray(field(X))
    return vals[np.arange(X.shape[0]), comp]


def rigid_test_field(grid: BoxGrid, x0, eps: float, b, tag: str = "face") -> StaggeredField:
    """``tau0(x) b x (x - x0)``; its curl is ``2 b`` wherever ``tau0 = 1``.

    The shift by ``x0`` only adds the constant field ``-b x x0``, whose curl
    vanishes, and keeps the values of order ``eps``.
    """
    cut = BumpCutoff(tuple(np.asarray(x0, dtype=float)), float(eps))
    _check_ball(grid, cut)
    b = np.asarray(b, dtype=complex)
    x0 = np.asarray(x0, dtype=float)

    def field(X):
        return cut(X)[:, None] * np.cross(b, X - x0)

    return StaggeredField(grid, tag, _vector_sample(grid, tag, field).astype(complex))


def oscillatory_test_field(grid: BoxGrid, tau: BumpCutoff, b, xi, lam: float,
                           tag: str = "face") -> StaggeredField:
    """``tau(x) exp(i lam xi.x) b`` sampled at the component locations."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    xi = np.asarray(xi, dtype=float)
    if lam * np.linalg.norm(xi) * max(grid.h) > 0.25 + 1e-12:
        raise ValueError("grid does not resolve the wavelength (need lam*|xi|*h <= 1/4)")
    b = np.asarray(b, dtype=complex)
    if tau is None:
        tau = lambda X: np.ones(np.shape(X)[0])  # noqa: E731

    def field(X):
        return (tau(X) * np.exp(1j * lam * (X @ xi)))[:, None] * b[None, :]

    return StaggeredField(grid, tag, _vector_sample(grid, tag, field))


def oscillatory_curl(grid: BoxGrid, tau: BumpCutoff, b, xi, lam: float, tag: str = "edge") -> StaggeredField:
    """Analytic curl of :func:`oscillatory_test_field`, sampled on ``tag``."""
    xi = np.asarray(xi, dtype=float)
    b = np.asarray(b, dtype=complex)

    def field(X):
        ph = np.exp(1j * lam * (X @ xi))[:, None]
        return 1j * lam * tau(X)[:, None] * ph * np.cross(xi, b)[None, :] + ph * np.cross(tau.gradient(X), b)

    return StaggeredField(grid, tag, _vector_sample(grid, tag, field))


# ---------------------------------------------------------------------------
# identification


@dataclasses.dataclass(frozen=True, eq=False)
class LocalMatrixField:
    """Per-location 3x3 matrices (e.g. one per probe cell)."""

    locations: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    residual: np.ndarray | None = None
    flagged: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[1:] != (3, 3) or v.shape[0] != np.shape(self.locations)[0]:
            raise ValueError("values must be one 3x3 matrix per location")
        if self.symmetric and not np.allclose(v, np.swapaxes(v, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("symmetric flag set but matrices are not symmetric")


def probe_cells(grid: BoxGrid, block: int):
    """Centers of the interior probe cells of side ``block * h``.

    A probe cell is interior when the support of its rigid probes (radius
    ``2 * eps`` with ``eps = block * h / 2``) stays inside the box.
    """
    if block < 4 or block % 2:
        raise ValueError("probe cells need an even block size >= 4")
    if any(n % block for n in grid.N):
        raise ValueError("block size must divide the cell counts")
    counts = [n // block for n in grid.N]
    centers = []
    for idx in np.ndindex(*counts):
        if all(0 < i < c - 1 for i, c in zip(idx, counts)):
            centers.append([(i + 0.5) * block * h for i, h in zip(idx, grid.h)])
    if not centers:
        raise ValueError("grid too coarse for interior probe cells at this block size")
    return np.asarray(centers), block * min(grid.h) / 2


def _probe_edges(grid: BoxGrid, x0, eps):
    """Edges whose curl stencil only sees faces where the cutoff equals 1."""
    X = grid.positions("edge")
    reach = np.sqrt(2) / 2 * max(grid.h)
    inside = np.linalg.norm(X - x0, axis=1) <= eps - reach - 1e-12
    return np.nonzero(inside)[0]


def rigid_fluxes(flux_oracle, grid: BoxGrid, x0, eps):
    """Oracle responses to the three rigid probes, restricted to exact edges.

    Returns ``(edges, fluxes)`` with ``fluxes[j]`` the response to ``b = e_j``.
    """
    edges = _probe_edges(grid, x0, eps)
    out = []
    for j in range(3):
        u = rigid_test_field(grid, x0, eps, np.eye(3)[j], "face")
        out.append(np.asarray(flux_oracle(u.values))[edges])
    return edges, out


def identify_local_coefficient(flux_oracle, grid: BoxGrid, block: int = 4, tag: str = "edge",
                               cond_limit: float = 1e12) -> LocalMatrixField:
    """Recover a coefficient on the curl space from the flux map ``u -> a C* u``.

    Each probe cell is tested with the three rigid fields ``b = e_j``; near
    the cell center their discrete curl is exactly ``2 e_j``, so averaging the
    ``i``-component fluxes there gives ``2 a_ij``.  The residual is the
    spread of the fluxes around that average (0 for a coefficient that is
    constant on the probe cell).
    """
    if tag != "edge":
        raise ValueError("identification acts on the curl space (edges)")
    centers, eps = probe_cells(grid, block)
    comp = grid.component_ids("edge")
    vals = np.zeros((len(centers), 3, 3), dtype=complex)
    res = np.zeros(len(centers))
    flagged = np.zeros(len(centers), dtype=bool)
    known = 2 * np.eye(3)  # curls of the probes
    for c, x0 in enumerate(centers):
        edges, fl = rigid_fluxes(flux_oracle, grid, x0, eps)
        F = np.zeros((3, 3), dtype=complex)
        spread = 0.0
        for j in range(3):
            for i in range(3):
                sel = fl[j][comp[edges] == i]
                if sel.size == 0:
                    flagged[c] = True
                    continue
                F[i, j] = sel.mean()
                spread = max(spread, float(np.abs(sel - F[i, j]).max()))
        if np.linalg.cond(known) > cond_limit or not np.all(np.isfinite(F)):
            flagged[c] = True
            continue
        vals[c] = np.linalg.solve(known.T, F.T).T  # a @ known = F
        res[c] = spread
    return LocalMatrixField(centers, vals, False, res, flagged)


def identification_witness(oracle1, oracle2, grid: BoxGrid, block: int = 4):
    """Largest rigid-probe flux separation between two oracles.

    Returns ``(separation, center, j)``: two coefficients are told apart
    when some probe ``b = e_j`` at some cell gives different fluxes.
    """
    centers, eps = probe_cells(grid, block)
    best = (0.0, None, None)
    for x0 in centers:
        _, f1 = rigid_fluxes(oracle1, grid, x0, eps)
        _, f2 = rigid_fluxes(oracle2, grid, x0, eps)
        for j in range(3):
            sep = float(np.abs(f1[j] - f2[j]).max()) if f1[j].size else 0.0
            if sep > best[0]:
                best = (sep, x0, j)
    return best

