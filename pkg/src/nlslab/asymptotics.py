"""Radiation extraction, the weakly bound component, and localization
diagnostics: the decomposition u(t) = e^{it Lap} u_+ + v(t) measured on
finite windows, with frequency/spatial profiles, mass concentration, and
the petite-equivalence indicators.

Limits at t -> +infinity are reported as extrapolations/maxima over a
recorded late window; no rates are asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import UnsupportedExponentError
from .dynamics import Trajectory, simpson_weights
from .propagator import free_evolve_batch, _BOUNDARY_FRACTION, _BOUNDARY_RADIUS
from .spectral_core import (
    DyadicBand,
    RadialField,
    RadialGrid,
    lp_multiplier,
    norm,
    radial_derivative,
    tail,
)

DEFAULT_PROBE_COUNT = 32
DEFAULT_LATE_FRACTION = 0.25
DEFAULT_MU1 = 2.0**-4


def probe_family(grid: RadialGrid, count: int = DEFAULT_PROBE_COUNT) -> np.ndarray:
    """H-orthonormal probe dictionary: Gaussian times even polynomials.

    Seeds are the radial oscillator functions e^{-r^2/2} L_j^{(d/2-1)}(r^2),
    then modified Gram-Schmidt (twice) in the discrete H inner product.
    Returns the (count, n) array of node values.
    """
    r = grid.nodes
    alpha = grid.dim / 2.0 - 1.0
    seeds = np.empty((count, grid.n))
    base = np.exp(-(r**2) / 2.0)
    for j in range(count):
        seeds[j] = base * special.eval_genlaguerre(j, alpha, r**2)
    kw_h = grid.kweights * (1.0 + grid.knodes**2)
    spec = seeds @ grid._forward.T

    def h_dot(a, b):
        return np.sum(kw_h * a * np.conj(b))

    for _ in range(2):  # MGS twice for orthonormality at roundoff
        for j in range(count):
            for i in range(j):
                spec[j] -= h_dot(spec[j], spec[i]) * spec[i]
            spec[j] /= np.sqrt(np.real(h_dot(spec[j], spec[j])))
    return spec @ grid._inverse.T


@dataclass
class RadiationEstimate:
    """Least-squares radiation state from back-propagated probe pairings."""

    u_plus: RadialField
    times: np.ndarray
    probe_pairings: np.ndarray      # (n_window, n_probes) complex
    cauchy_defect: float
    converged: bool
    strong_defects: np.ndarray      # ||e^{-i t D} u(t) - u_+||_H over the window
    window: tuple

    @property
    def u_plus_hnorm(self) -> float:
        return norm(self.u_plus, "H")


def _late_window(n_samples: int, late_fraction: float):
    i0 = int(math.floor((1.0 - late_fraction) * (n_samples - 1)))
    return max(0, min(i0, n_samples - 2)), n_samples - 1


def extract_radiation(
    traj: Trajectory,
    probes: np.ndarray | None = None,
    window: tuple | None = None,
    probe_count: int = DEFAULT_PROBE_COUNT,
    cauchy_tol: float = 1e-3,
) -> RadiationEstimate:
    """Estimate u_+ = weak-lim e^{-it Lap} u(t) inside a finite probe span.

    Pairings <e^{-i t_n Lap} u(t_n), phi_k>_H are extrapolated by averaging
    over the last quarter of the window; the Cauchy defect (max pairing
    spread over the last half) is the honesty metric.  Non-convergence is
    reported through ``converged``, never fatal.
    """
    g = traj.grid
    if probes is None:
        probes = probe_family(g, probe_count)
    if window is None:
        window = _late_window(len(traj.times), DEFAULT_LATE_FRACTION)
    i0, i1 = window
    times = traj.times[i0:i1 + 1]
    k2 = g.knodes**2
    kw_h = g.kweights * (1.0 + k2)
    back = np.exp(1j * np.outer(times, k2)) * traj.spectral()[i0:i1 + 1]
    probe_spec = probes @ g._forward.T
    pairings = back @ (kw_h[None, :] * probe_spec).conj().T

    nwin = len(times)
    tail_start = max(0, nwin - max(1, nwin // 4))
    coeff = pairings[tail_start:].mean(axis=0)

    half = pairings[max(0, nwin // 2):]
    spread = 0.0
    for kp in range(pairings.shape[1]):
        vals = half[:, kp]
        spread = max(spread, float(np.abs(vals[:, None] - vals[None, :]).max()))

    u_plus_vals = coeff @ probes
    u_plus_spec = coeff @ probe_spec
    defects = np.sqrt(np.sum(kw_h[None, :] * np.abs(back - u_plus_spec[None, :]) ** 2, axis=1))

    return RadiationEstimate(
        u_plus=RadialField(g, u_plus_vals),
        times=times,
        probe_pairings=pairings,
        cauchy_defect=spread,
        converged=spread <= cauchy_tol,
        strong_defects=defects,
        window=(int(i0), int(i1)),
    )


@dataclass
class DecompositionSeries:
    """v(t_i) = u(t_i) - e^{i t_i Lap} u_+ with bounds and Duhamel residuals."""

    traj: Trajectory
    u_plus: RadialField
    times: np.ndarray
    v_fields: np.ndarray            # (nsamples, n)
    v_h_norms: np.ndarray
    duhamel_times: np.ndarray
    duhamel_residuals: np.ndarray
    energy: float                   # E = sup_t ||u||_H^2

    def v_at(self, i: int) -> RadialField:
        return RadialField(self.traj.grid, self.v_fields[i].copy())

    @property
    def u_plus_hnorm(self) -> float:
        return norm(self.u_plus, "H")

    @property
    def vbound_defect(self) -> float:
        """max_t ||v||_H - 2 sqrt(E); nonpositive when the bound holds."""
        return float(np.max(self.v_h_norms) - 2.0 * math.sqrt(self.energy))


def weakly_bound(traj: Trajectory, est: RadiationEstimate,
                 residual_points: int = 8) -> DecompositionSeries:
    """Build the weakly bound component and its forward-Duhamel residuals.

    The residual at t is the H-norm defect of
    v(t) = e^{it Lap}[u(0) - u_+] - i int_0^t e^{i(t-s) Lap} F(u(s)) ds,
    identical to the plain Duhamel defect of u (the radiation cancels).
    """
    g = traj.grid
    k2 = g.knodes**2
    kw_h = g.kweights * (1.0 + k2)
    uhat = traj.spectral()
    up_hat = g._forward @ est.u_plus.values
    rad = np.exp(-1j * np.outer(traj.times, k2)) * up_hat[None, :]
    v_hat = uhat - rad
    v_fields = v_hat @ g._inverse.T
    v_h = np.sqrt(np.sum(kw_h[None, :] * np.abs(v_hat) ** 2, axis=1))

    n = len(traj.times)
    idx = sorted(set(np.linspace(1, n - 1, min(residual_points, n - 1)).astype(int)))
    fh = traj.nonlinearity_spectral()
    res_t, res_v = [], []
    for i1 in idx:
        t1 = traj.times[i1]
        wts = simpson_weights(traj.times[: i1 + 1])
        phases = np.exp(-1j * np.outer(t1 - traj.times[: i1 + 1], k2))
        integral = (wts[:, None] * phases * fh[: i1 + 1]).sum(axis=0)
        predicted = np.exp(-1j * t1 * k2) * (uhat[0] - up_hat) - 1j * integral
        defect = v_hat[i1] - predicted
        res_t.append(t1)
        res_v.append(float(np.sqrt(np.sum(kw_h * np.abs(defect) ** 2))))

    return DecompositionSeries(
        traj=traj, u_plus=est.u_plus, times=traj.times,
        v_fields=v_fields, v_h_norms=v_h,
        duhamel_times=np.array(res_t), duhamel_residuals=np.array(res_v),
        energy=traj.energy,
    )


# ---------------------------------------------------------------------------
# localization profiles

@dataclass
class LocalizationProfile:
    """Dyadic-frequency and spatial-tail tables over the late window."""

    dyadic_rows: list = field(default_factory=list)   # (t, N, which, value)
    spatial_rows: list = field(default_factory=list)  # (t, R, tail, grad_tail)
    low_exponent: float = math.nan
    high_exponent: float = math.nan
    knobs: dict = field(default_factory=dict)
    window: tuple = (0, 0)

    def csv_rows(self):
        rows = ["t,key,value"]
        for t, nb, which, val in self.dyadic_rows:
            rows.append(f"{t!r},{which}[N={nb}],{val!r}")
        for t, rr, tl, gtl in self.spatial_rows:
            rows.append(f"{t!r},tail[R={rr}],{tl!r}")
            if not math.isnan(gtl):
                rows.append(f"{t!r},grad_tail[R={rr}],{gtl!r}")
        return rows


_FIT_FLOOR = 1e-13


def frequency_profile(series: DecompositionSeries, bands=None,
                      late_fraction: float = DEFAULT_LATE_FRACTION) -> LocalizationProfile:
    """||P_{<=N} v||_H for N <= 1 and ||P_{>=N} v||_H for N >= 1 at late times,
    with fitted power-law exponents (positive = decay toward the ends)."""
    g = series.traj.grid
    if bands is None:
        bands = [2.0**j for j in range(-4, 5)]
    i0, i1 = _late_window(len(series.times), late_fraction)
    kw_h = g.kweights * (1.0 + g.knodes**2)
    prof = LocalizationProfile(window=(int(i0), int(i1)))
    prof.knobs["late_fraction"] = late_fraction
    low_pts, high_pts = {}, {}
    for i in range(i0, i1 + 1):
        vh = g._forward @ series.v_fields[i]
        t = float(series.times[i])
        for nb in bands:
            if nb <= 1.0:
                mult = lp_multiplier(g, DyadicBand.below(nb))
                which = "low"
            else:
                mult = lp_multiplier(g, DyadicBand.above(nb / 2.0))  # P_{>=N}
                which = "high"
            val = float(np.sqrt(np.sum(kw_h * np.abs(mult * vh) ** 2)))
            prof.dyadic_rows.append((t, nb, which, val))
            store = low_pts if which == "low" else high_pts
            store[nb] = max(store.get(nb, 0.0), val)
    vmax = max(np.max(series.v_h_norms), 1e-300)

    def fit(points, sign):
        ks, vs = [], []
        for nb, val in sorted(points.items()):
            if val > _FIT_FLOOR * vmax:
                ks.append(nb)
                vs.append(val)
        if len(ks) < 2:
            return math.nan
        slope = np.polyfit(np.log(ks), np.log(vs), 1)[0]
        return float(sign * slope)

    prof.low_exponent = fit(low_pts, +1.0)    # ||P_{<=N} v|| ~ N^{+e} as N -> 0
    prof.high_exponent = fit(high_pts, -1.0)  # ||P_{>=N} v|| ~ N^{-e} as N -> inf
    prof.knobs["eta3_slot"] = min(x for x in (prof.low_exponent, prof.high_exponent)
                                  if not math.isnan(x)) if (low_pts or high_pts) else math.nan
    return prof


def spatial_profile(series: DecompositionSeries, radii,
                    late_fraction: float = DEFAULT_LATE_FRACTION,
                    with_gradient: bool = True) -> LocalizationProfile:
    """tail(v(t), R) (and the gradient-augmented tail) over the late window."""
    g = series.traj.grid
    i0, i1 = _late_window(len(series.times), late_fraction)
    prof = LocalizationProfile(window=(int(i0), int(i1)))
    prof.knobs["late_fraction"] = late_fraction
    for i in range(i0, i1 + 1):
        v = series.v_at(i)
        t = float(series.times[i])
        for rr in radii:
            tl = tail(v, float(rr))
            gtl = tail(v, float(rr), with_gradient=True) if with_gradient else math.nan
            prof.spatial_rows.append((t, float(rr), tl, gtl))
    return prof


@dataclass
class ConcentrationReport:
    rows: list                      # (t, R, Rp, ball_mass, enlarged_mass, fraction, fired)
    mu1: float
    any_fired: bool
    min_fraction_when_fired: float


def mass_concentration_track(traj: Trajectory, radii_pairs,
                             mu1: float = DEFAULT_MU1,
                             late_fraction: float = DEFAULT_LATE_FRACTION) -> ConcentrationReport:
    """The mass-concentration dichotomy at the origin for radial runs.

    Whenever the ball mass at radius R clears mu1^2 at a late sample, report
    the enlarged-ball mass at R' and its fraction of the total mass.
    """
    i0, i1 = _late_window(len(traj.times), late_fraction)
    rows = []
    fired_any = False
    min_frac = math.inf
    for i in range(i0, i1 + 1):
        u = traj.field_at(i)
        total = float(np.sum(traj.grid.weights * np.abs(u.values) ** 2))
        t = float(traj.times[i])
        for (rr, rp) in radii_pairs:
            ball = total - tail(u, float(rr))
            fired = ball >= mu1**2
            enlarged = total - tail(u, float(rp))
            frac = enlarged / total if total > 0 else 0.0
            rows.append((t, float(rr), float(rp), ball, enlarged, frac, fired))
            if fired:
                fired_any = True
                min_frac = min(min_frac, frac)
    return ConcentrationReport(rows, mu1, fired_any,
                               min_frac if fired_any else math.nan)


@dataclass
class PetiteReport:
    """The petite-conjecture equivalence indicators on a finite window."""

    radiation_hnorm: float          # (ii): ||u_+||_H
    tail_score: float               # (iii): max late tail(u, R*) at the largest trusted R
    grad_tail_score: float          # (iv): gradient-augmented
    radiation_normalized: float     # ||u_+||_H / sqrt(E)
    tail_score_normalized: float
    grad_tail_score_normalized: float
    precompactness_score: float     # ||P_{>= 1/mu1} u||_H + tail(u, 1/mu1)
    mu1: float
    radius: float
    window: tuple
    knobs: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "radiation_hnorm": self.radiation_hnorm,
            "tail_score": self.tail_score,
            "grad_tail_score": self.grad_tail_score,
            "radiation_normalized": self.radiation_normalized,
            "tail_score_normalized": self.tail_score_normalized,
            "grad_tail_score_normalized": self.grad_tail_score_normalized,
            "precompactness_score": self.precompactness_score,
            "mu1": self.mu1,
            "radius": self.radius,
            "window": list(self.window),
            "knobs": self.knobs,
        }


def petite_report(traj: Trajectory, est: RadiationEstimate | None = None,
                  mu1: float = DEFAULT_MU1,
                  late_fraction: float = DEFAULT_LATE_FRACTION,
                  radius: float | None = None) -> PetiteReport:
    """Scalar indicators whose co-variation mirrors the petite equivalences.

    All "lim sup" quantities are maxima over the recorded late window;
    normalized scores divide by total mass / energy so scenarios compare.
    """
    g = traj.grid
    if est is None:
        est = extract_radiation(traj)
    if radius is None:
        radius = 0.875 * g.rmax
    i0, i1 = _late_window(len(traj.times), late_fraction)
    kw_h = g.kweights * (1.0 + g.knodes**2)
    n_over = lp_multiplier(g, DyadicBand.above(_dyadic_at_or_above(1.0 / mu1) / 2.0))
    tail_s = grad_s = pre_s = 0.0
    for i in range(i0, i1 + 1):
        u = traj.field_at(i)
        tail_s = max(tail_s, tail(u, radius))
        grad_s = max(grad_s, tail(u, radius, with_gradient=True))
        uh = g._forward @ u.values
        hi = float(np.sqrt(np.sum(kw_h * np.abs(n_over * uh) ** 2)))
        inner_r = min(1.0 / mu1, 0.95 * g.rmax)
        pre_s = max(pre_s, hi + tail(u, inner_r))
    mass0 = float(traj.mass[0]) if len(traj.mass) else 0.0
    energy = traj.energy
    return PetiteReport(
        radiation_hnorm=est.u_plus_hnorm,
        tail_score=tail_s,
        grad_tail_score=grad_s,
        radiation_normalized=est.u_plus_hnorm / math.sqrt(energy) if energy > 0 else 0.0,
        tail_score_normalized=tail_s / mass0 if mass0 > 0 else 0.0,
        grad_tail_score_normalized=grad_s / energy if energy > 0 else 0.0,
        precompactness_score=pre_s,
        mu1=mu1,
        radius=radius,
        window=(int(i0), int(i1)),
        knobs={"late_fraction": late_fraction},
    )


def _dyadic_at_or_above(x: float) -> float:
    return 2.0 ** math.ceil(math.log2(x))


def riemann_lebesgue_check(f: RadialField, q: float, times):
    """||e^{it Lap} f||_{L^q} over times for 2 < q <= 2d/(d-2).

    Returns (rows, monotone) where rows are (t, value, trusted) and
    ``monotone`` asserts strict decrease within the trusted window.
    """
    g = f.grid
    endpoint = 2.0 * g.dim / (g.dim - 2.0)
    if not (2.0 < q <= endpoint + 1e-12):
        raise UnsupportedExponentError(f"q={q} outside (2, {endpoint}]")
    times = np.asarray(sorted(times), dtype=float)
    snaps = free_evolve_batch(f, times)
    guard = _BOUNDARY_RADIUS * g.rmax
    rows = []
    for i, t in enumerate(times):
        ut = RadialField(g, snaps[i])
        val = norm(ut, "Lq", q)
        mass = float(np.sum(g.weights * np.abs(snaps[i]) ** 2))
        trusted = tail(ut, guard) <= _BOUNDARY_FRACTION * mass
        rows.append((float(t), val, trusted))
    trusted_vals = [v for (_, v, ok) in rows if ok]
    monotone = all(b < a for a, b in zip(trusted_vals, trusted_vals[1:]))
    return rows, monotone


def radiation_uniqueness_probe(traj: Trajectory, window1: tuple, window2: tuple,
                               probes: np.ndarray | None = None):
    """Two disjoint late windows must agree on u_+ within their Cauchy defects.

    Returns (hnorm of the difference, sum of the two cauchy defects).
    """
    if probes is None:
        probes = probe_family(traj.grid)
    e1 = extract_radiation(traj, probes=probes, window=window1)
    e2 = extract_radiation(traj, probes=probes, window=window2)
    diff = norm(e1.u_plus - e2.u_plus, "H")
    return diff, e1.cauchy_defect + e2.cauchy_defect
