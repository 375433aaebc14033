"""Radial grids, discrete Hankel transforms, Littlewood-Paley projectors, norms.

Everything downstream runs on a Bessel-zero collocation grid for radial
functions on the ball of radius ``rmax`` in ``dim`` dimensions.  The forward
transform maps node samples to samples of the Fourier transform
f_hat(xi) = int e^{-i x.xi} f(x) dx at the dual radial frequencies; it is
realized as the weighted-unitary matrix nearest the collocation transform,
so Plancherel, round trips, and spectral multipliers are exact to roundoff.
"""

from __future__ import annotations

import math
import struct
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    GridMismatchError,
    InsufficientResolutionError,
    InvalidDimensionError,
    RadiusOutOfRangeError,
    UnsupportedExponentError,
)

DYADIC_MIN = 2.0**-20
DYADIC_MAX = 2.0**20

_MOMENT_DEGREE = 8          # weights exact for polynomials of degree < 8
_BOUNDARY_SCALE = 16.0      # moment correction decays on rmax/16 from the wall
_TAIL_STENCIL = 10          # local interpolation width for partial-ball integrals


def bessel_zeros(nu: float, count: int) -> np.ndarray:
    """First ``count`` positive zeros of J_nu, via McMahon expansion + Newton."""
    idx = np.arange(1, count + 1)
    beta = (idx + 0.5 * nu - 0.25) * np.pi
    mu = 4.0 * nu**2
    z = beta - (mu - 1) / (8 * beta) - 4 * (mu - 1) * (7 * mu - 31) / (3 * (8 * beta) ** 3)
    for _ in range(60):
        step = special.jv(nu, z) / special.jvp(nu, z)
        z = z - step
        if np.max(np.abs(step)) < 1e-14:
            break
    if not np.all(np.diff(z) > 0):
        raise RuntimeError(f"Bessel zero search failed for nu={nu}")
    return z


def _sphere_area(dim: int) -> float:
    return 2 * np.pi ** (dim / 2) / special.gamma(dim / 2)


def ball_volume(dim: int, radius: float) -> float:
    return np.pi ** (dim / 2) / special.gamma(dim / 2 + 1) * radius**dim


class RadialGrid:
    """Bessel-zero collocation grid for radial functions on a d-ball.

    Attributes
    ----------
    dim, rmax, n : grid signature.
    nodes, weights : radii r_j in (0, rmax) and quadrature weights for
        int f(|x|) dx over the ball (surface measure included).
    knodes, kweights : dual frequencies k_j in (0, kmax) and weights for
        (2 pi)^{-d} int F(|xi|) dxi, so physical and spectral L^2 agree.
    """

    def __init__(self, dim, rmax, n, unitary=True):
        if dim < 3:
            raise InvalidDimensionError(f"dim must be >= 3, got {dim}")
        if n < 16:
            raise InsufficientResolutionError(f"n must be >= 16, got {n}")
        if rmax <= 0:
            raise ValueError(f"rmax must be positive, got {rmax}")
        self.dim = int(dim)
        self.rmax = float(rmax)
        self.n = int(n)
        self.nu = dim / 2.0 - 1.0
        self.unitary = bool(unitary)

        jz = bessel_zeros(self.nu, n + 1)
        self._jzeros = jz
        self._jlast = jz[-1]
        self.nodes = jz[:n] * rmax / self._jlast
        self.knodes = jz[:n] / rmax
        self.kmax = self._jlast / rmax
        self._jnu1 = special.jv(self.nu + 1, jz[:n])

        area = _sphere_area(dim)
        self._area = area
        fb = 2 * rmax**2 / (self._jlast**2 * self._jnu1**2)
        w0 = area * fb * self.nodes ** (dim - 2)
        self.weights = w0 + self._moment_correction(w0)
        fbk = 2 * self.kmax**2 / (self._jlast**2 * self._jnu1**2)
        self.kweights = (2 * np.pi) ** (-dim) * area * fbk * self.knodes ** (dim - 2)

        self._build_transform()
        self._lock = threading.Lock()
        self._deriv = None
        self._ld_pair = None
        self._propagators = {}

        self.volume_defect = abs(self.weights.sum() - ball_volume(dim, rmax)) / ball_volume(dim, rmax)

    def _moment_correction(self, w0):
        # Fourier-Bessel weights miss polynomials that do not vanish at rmax
        # (Gibbs at the wall); repair moments of degree < _MOMENT_DEGREE with a
        # boundary-localized least-norm update.
        d, R, r = self.dim, self.rmax, self.nodes
        powers = np.arange(_MOMENT_DEGREE)
        P = np.vander(r / R, _MOMENT_DEGREE, increasing=True).T
        exact = np.array([self._area * R**d / (j + d) for j in powers])
        err = exact - P @ w0
        sigma2 = (w0 * np.exp(-(R - r) / (R / _BOUNDARY_SCALE))) ** 2
        M = (P * sigma2[None, :]) @ P.T
        lam = np.linalg.solve(M, err)
        return sigma2 * (P.T @ lam)

    def _build_transform(self):
        d, R, nu = self.dim, self.rmax, self.nu
        kernel = special.jv(nu, np.outer(self._jzeros[: self.n], self._jzeros[: self.n]) / self._jlast)
        scale = 2 * (2 * np.pi) ** (-d / 2) * self.knodes**nu / (R**2 * self._jnu1**2)
        self._fb_scale = scale
        synth = (self.nodes[:, None] ** -nu) * kernel.T * scale[None, :]
        forward = np.linalg.inv(synth)
        if self.unitary:
            sq_kw = np.sqrt(self.kweights)
            sq_w = np.sqrt(self.weights)
            s0 = sq_kw[:, None] * forward * (1.0 / sq_w)[None, :]
            u, _, vh = np.linalg.svd(s0)
            s = u @ vh
            self._forward = (1.0 / sq_kw)[:, None] * s * sq_w[None, :]
            self._inverse = (1.0 / sq_w)[:, None] * s.T * sq_kw[None, :]
        else:
            self._forward = forward
            self._inverse = synth

    # -- lazily built companions -------------------------------------------

    @property
    def deriv_matrix(self):
        """Synthesis of the radial derivative: d/dr [r^-nu J_nu(k r)] = -k r^-nu J_{nu+1}."""
        with self._lock:
            if self._deriv is None:
                nu = self.nu
                kern = special.jv(nu + 1, np.outer(self.nodes, self.knodes))
                self._deriv = -(self.nodes[:, None] ** -nu) * kern * (self.knodes * self._fb_scale)[None, :]
            return self._deriv

    def longdouble_pair(self):
        """Transform pair refined in extended precision (one polar-Newton step).

        Used by the ground-state certificate, where the H-residual amplifies
        the float64 pair's roundoff by kmax^2 <kmax>.
        """
        with self._lock:
            if self._ld_pair is None:
                sq_kw = np.sqrt(self.kweights.astype(np.longdouble))
                sq_w = np.sqrt(self.weights.astype(np.longdouble))
                s = sq_kw[:, None] * self._forward.astype(np.longdouble) * (1.0 / sq_w)[None, :]
                eye = np.eye(self.n, dtype=np.longdouble)
                s = s @ (eye - 0.5 * (s.T @ s - eye))
                fwd = (1.0 / sq_kw)[:, None] * s * sq_w[None, :]
                inv = (1.0 / sq_w)[:, None] * s.T * sq_kw[None, :]
                self._ld_pair = (fwd, inv)
            return self._ld_pair

    def propagator(self, dt: float) -> np.ndarray:
        """Dense one-step free propagator inverse @ diag(e^{-i dt k^2}) @ forward."""
        with self._lock:
            mat = self._propagators.get(dt)
            if mat is None:
                phase = np.exp(-1j * dt * self.knodes**2)
                mat = self._inverse @ (phase[:, None] * self._forward)
                self._propagators[dt] = mat
            return mat

    def evaluate(self, coeffs: np.ndarray, radii: np.ndarray) -> np.ndarray:
        """Evaluate the Fourier-Bessel series with spectral samples ``coeffs`` at arbitrary radii."""
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        nu = self.nu
        c = self._fb_scale * coeffs
        out = np.zeros(len(radii), dtype=complex)
        limit0 = (self.knodes / 2.0) ** nu / special.gamma(nu + 1)
        for i0 in range(0, len(radii), 1024):
            rr = radii[i0:i0 + 1024]
            kern = special.jv(nu, np.outer(rr, self.knodes))
            vals = kern @ c
            pos = rr > 0
            vals[pos] = vals[pos] * rr[pos] ** -nu
            if np.any(~pos):
                vals[~pos] = limit0 @ c
            out[i0:i0 + 1024] = vals
        return out

    def __repr__(self):
        return f"RadialGrid(dim={self.dim}, rmax={self.rmax}, n={self.n})"


_GRID_CACHE: dict = {}
_GRID_CACHE_LOCK = threading.Lock()


def build_grid(dim: int, rmax: float, n: int, unitary: bool = True) -> RadialGrid:
    """Build (or fetch from the process cache) a radial grid.

    Raises
    ------
    InvalidDimensionError, InsufficientResolutionError
    """
    key = (int(dim), float(rmax), int(n), bool(unitary))
    with _GRID_CACHE_LOCK:
        grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = RadialGrid(dim, rmax, n, unitary=unitary)
        with _GRID_CACHE_LOCK:
            _GRID_CACHE.setdefault(key, grid)
            grid = _GRID_CACHE[key]
    return grid


# ---------------------------------------------------------------------------
# fields

@dataclass
class RadialField:
    """Complex radial profile sampled at the grid nodes."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,):
            raise GridMismatchError(f"values shape {self.values.shape} vs grid n={self.grid.n}")

    def copy(self):
        return RadialField(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other):
        _same_grid(self, other)
        return RadialField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return RadialField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return RadialField(self.grid, self.values * scalar)

    __rmul__ = __mul__


@dataclass
class SpectralField:
    """Samples of f_hat at the dual frequencies of a grid."""

    grid: RadialGrid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.grid.n,):
            raise GridMismatchError(f"coeffs shape {self.coeffs.shape} vs grid n={self.grid.n}")

    def copy(self):
        return SpectralField(self.grid, self.coeffs.copy())


def _same_grid(a, b):
    if a.grid is not b.grid:
        ga, gb = a.grid, b.grid
        if (ga.dim, ga.rmax, ga.n) != (gb.dim, gb.rmax, gb.n):
            raise GridMismatchError(f"{ga} vs {gb}")


def hankel_forward(f: RadialField) -> SpectralField:
    """Radial Fourier transform: node samples -> f_hat at the dual frequencies."""
    return SpectralField(f.grid, f.grid._forward @ f.values)


def hankel_inverse(F: SpectralField) -> RadialField:
    """Inverse radial Fourier transform."""
    return RadialField(F.grid, F.grid._inverse @ F.coeffs)


# ---------------------------------------------------------------------------
# Littlewood-Paley

@dataclass(frozen=True)
class DyadicBand:
    """A dyadic frequency band: P_{<=N}, P_N, P_{>N} or P_{M < . <= N}."""

    n: float
    kind: str  # below | at | above | range
    m: float = 0.0

    def __post_init__(self):
        if self.kind not in ("below", "at", "above", "range"):
            raise ValueError(f"unknown band kind {self.kind!r}")
        _check_dyadic(self.n)
        if self.kind == "range":
            _check_dyadic(self.m)
            if not self.m < self.n:
                raise ValueError("range(M, N) requires M < N")

    @classmethod
    def below(cls, n):
        return cls(float(n), "below")

    @classmethod
    def at(cls, n):
        return cls(float(n), "at")

    @classmethod
    def above(cls, n):
        return cls(float(n), "above")

    @classmethod
    def between(cls, m, n):
        return cls(float(n), "range", float(m))


def _check_dyadic(x):
    if x <= 0:
        raise ValueError(f"dyadic number must be positive, got {x}")
    mant, _ = math.frexp(x)
    if mant != 0.5:
        raise ValueError(f"{x} is not an exact power of two")


def lp_bump(x):
    """The fixed smooth cutoff: 1 on [0,1], exp(1 - 1/(1-(x-1)^2)) on (1,2), 0 beyond."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    out[x <= 1.0] = 1.0
    mid = (x > 1.0) & (x < 2.0)
    s = x[mid] - 1.0
    out[mid] = np.exp(1.0 - 1.0 / (1.0 - s**2))
    return out


def _clamped(n):
    if n < DYADIC_MIN:
        warnings.warn(f"dyadic band {n} below 2^-20; clamped", stacklevel=3)
        return DYADIC_MIN
    if n > DYADIC_MAX:
        warnings.warn(f"dyadic band {n} above 2^20; clamped", stacklevel=3)
        return DYADIC_MAX
    return n


def lp_multiplier(grid: RadialGrid, band: DyadicBand) -> np.ndarray:
    """The scalar symbol of the band's projector on the grid's dual frequencies."""
    k = grid.knodes
    n = _clamped(band.n)
    if band.kind == "below":
        return lp_bump(k / n)
    if band.kind == "above":
        return 1.0 - lp_bump(k / n)
    if band.kind == "at":
        return lp_bump(k / n) - lp_bump(2.0 * k / n)
    m = _clamped(band.m)
    return lp_bump(k / n) - lp_bump(k / m)


def lp_project(f: RadialField, band: DyadicBand) -> RadialField:
    """Apply the Littlewood-Paley projector for ``band`` (multiplier in spectral space)."""
    mult = lp_multiplier(f.grid, band)
    return RadialField(f.grid, f.grid._inverse @ (mult * (f.grid._forward @ f.values)))


# ---------------------------------------------------------------------------
# norms and tails

def radial_derivative(f: RadialField) -> RadialField:
    """Spectral radial derivative f'(r); |grad f| = |f'| for radial f."""
    return RadialField(f.grid, f.grid.deriv_matrix @ (f.grid._forward @ f.values))


def norm(f: RadialField, space: str, exponent: float | None = None) -> float:
    """Quadrature norm of a radial field.

    ``space`` is one of ``L2``, ``Lq`` (needs ``exponent``), ``H``,
    ``Hdot`` (needs ``exponent`` = derivative order), ``W1q`` (needs
    ``exponent``).  L^infinity is the max over nodes, a lower bound on the
    continuum sup.  Gradients enter spectrally.
    """
    g = f.grid
    if space == "L2":
        return float(np.sqrt(np.sum(g.weights * np.abs(f.values) ** 2)))
    if space == "Lq":
        return _lq(g, f.values, _check_q(exponent))
    if space == "H":
        fh = g._forward @ f.values
        return float(np.sqrt(np.sum(g.kweights * (1.0 + g.knodes**2) * np.abs(fh) ** 2)))
    if space == "Hdot":
        if exponent is None:
            raise UnsupportedExponentError("Hdot needs a derivative order")
        fh = g._forward @ f.values
        return float(np.sqrt(np.sum(g.kweights * g.knodes ** (2.0 * exponent) * np.abs(fh) ** 2)))
    if space == "W1q":
        q = _check_q(exponent)
        fp = radial_derivative(f)
        return _lq(g, f.values, q) + _lq(g, fp.values, q)
    raise UnsupportedExponentError(f"unknown space {space!r}")


def _check_q(q):
    if q is None or not (1.0 <= q):
        raise UnsupportedExponentError(f"Lebesgue exponent must satisfy 1 <= q <= inf, got {q}")
    return float(q)


def _lq(grid, values, q):
    if np.isinf(q):
        return float(np.max(np.abs(values)))
    return float(np.sum(grid.weights * np.abs(values) ** q) ** (1.0 / q))


def h_inner(f: RadialField, g: RadialField) -> complex:
    """H inner product <f, g>_H = int f conj(g) + grad f . conj(grad g)."""
    _same_grid(f, g)
    gr = f.grid
    fh = gr._forward @ f.values
    gh = gr._forward @ g.values
    return complex(np.sum(gr.kweights * (1.0 + gr.knodes**2) * fh * np.conj(gh)))


def _partial_ball_integral(grid: RadialGrid, samples: np.ndarray, r0: float) -> float:
    """int_{r0}^{rmax} s(r) * area * r^{d-1} dr by local polynomial interpolation of s."""
    r, R, d = grid.nodes, grid.rmax, grid.dim
    rho_const = grid._area
    idx_hi = int(np.searchsorted(r, r0))
    edges = np.concatenate([[r0], r[idx_hi:], [R]])
    total = 0.0
    st = _TAIL_STENCIL
    for i in range(len(edges) - 1):
        a, b = edges[i], edges[i + 1]
        if b <= a:
            continue
        c = 0.5 * (a + b)
        ids = np.argsort(np.abs(r - c))[:st]
        ids.sort()
        pts = r[ids]
        center = 0.5 * (pts[0] + pts[-1])
        scale = 0.5 * (pts[-1] - pts[0])
        vand = np.vander((pts - center) / scale, increasing=True)
        coef = np.linalg.solve(vand, samples[ids])
        mom = np.zeros(len(ids))
        for j in range(len(ids)):
            acc = 0.0
            for i2 in range(j + 1):
                cf = math.comb(j, i2) * ((-center) ** (j - i2)) / scale**j
                p = i2 + d - 1
                acc += cf * (b ** (p + 1) - a ** (p + 1)) / (p + 1)
            mom[j] = rho_const * acc
        total += float(coef @ mom)
    return total


def tail(f: RadialField, radius: float, with_gradient: bool = False) -> float:
    """Mass (optionally plus gradient mass) outside the ball of ``radius``.

    Returns int_{|x|>radius} |f|^2 dx, adding |grad f|^2 when flagged.
    """
    g = f.grid
    if not (0.0 <= radius < g.rmax):
        raise RadiusOutOfRangeError(f"radius {radius} outside [0, {g.rmax})")
    s = np.abs(f.values) ** 2
    if with_gradient:
        s = s + np.abs(radial_derivative(f).values) ** 2
    if radius == 0.0:
        return float(np.sum(g.weights * s))
    return max(_partial_ball_integral(g, s, radius), 0.0)


# ---------------------------------------------------------------------------
# test-field helpers

def gaussian_field(grid: RadialGrid, a: float = 1.0, amplitude: complex = 1.0) -> RadialField:
    return RadialField(grid, amplitude * np.exp(-a * grid.nodes**2))


def random_band_limited(grid: RadialGrid, seed: int, kfrac: float = 0.125) -> RadialField:
    """Random smooth field: random spectral data on k <= kfrac*kmax with a smooth roll-off."""
    rng = np.random.default_rng(seed)
    kcut = kfrac * grid.kmax
    coeffs = np.zeros(grid.n, dtype=complex)
    mask = grid.knodes <= kcut
    nm = int(mask.sum())
    coeffs[mask] = (rng.standard_normal(nm) + 1j * rng.standard_normal(nm)) * np.exp(
        -((grid.knodes[mask] / (0.5 * kcut)) ** 2)
    )
    return RadialField(grid, grid._inverse @ coeffs)


# ---------------------------------------------------------------------------
# serialization: binary (little-endian) and CSV

_MAGIC = b"NLSF"
_HEADER = struct.Struct("<4sIIQd")  # magic, version, dim, n, rmax


def save_field(f: RadialField, path) -> None:
    """Write a field: header (dim, rmax, n) then interleaved (re, im) float64, little-endian."""
    data = np.empty(2 * f.grid.n, dtype="<f8")
    data[0::2] = f.values.real
    data[1::2] = f.values.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, f.grid.dim, f.grid.n, f.grid.rmax))
        fh.write(data.tobytes())


def load_field(path, grid: RadialGrid | None = None) -> RadialField:
    with open(path, "rb") as fh:
        magic, version, dim, n, rmax = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError(f"{path}: not a field file")
        raw = np.frombuffer(fh.read(16 * n), dtype="<f8")
    if grid is None:
        grid = build_grid(dim, rmax, n)
    elif (grid.dim, grid.rmax, grid.n) != (dim, rmax, n):
        raise GridMismatchError(f"file ({dim},{rmax},{n}) vs {grid}")
    return RadialField(grid, raw[0::2] + 1j * raw[1::2])


def save_field_csv(f: RadialField, path) -> None:
    g = f.grid
    with open(path, "w") as fh:
        fh.write(f"# dim={g.dim} rmax={g.rmax!r} n={g.n}\n")
        fh.write("r,re,im\n")
        for r, v in zip(g.nodes, f.values):
            fh.write(f"{r!r},{v.real!r},{v.imag!r}\n")
