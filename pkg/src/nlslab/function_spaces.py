"""Exact exponent arithmetic and spacetime-norm estimators.

The exponent identities are verified in rational arithmetic; the norm
estimators report measured values against the expected growth shapes with
no asserted constants (ratios are recorded instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import NoSolutionError, UndersampledIntervalError, UnsupportedExponentError
from .dynamics import Trajectory, simpson_weights
from .spectral_core import DyadicBand, RadialField, lp_multiplier, norm, radial_derivative


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if math.isinf(x):
            raise ValueError("use math.inf only through admissible_check")
        return Fraction(x).limit_denominator(10**9)
    raise TypeError(f"cannot coerce {x!r} to a rational")


def _inv(x) -> Fraction:
    """1/x with 1/inf = 0, exact."""
    if x == math.inf:
        return Fraction(0)
    return 1 / _frac(x)


def admissible_check(q, r, d: int) -> bool:
    """Exact check of 2/q + d/r = d/2 with 2 <= q, r <= inf."""
    if not (q == math.inf or _frac(q) >= 2) or not (r == math.inf or _frac(r) >= 2):
        return False
    return 2 * _inv(q) + d * _inv(r) == Fraction(d, 2)


@dataclass
class ExponentTable:
    """The (q0, r0, Q0, Q, R) exponents with their exact-arithmetic checks."""

    q0: Fraction
    r0: Fraction
    Q0: Fraction
    Q: Fraction
    R: Fraction
    d: int
    p: Fraction
    derivations: dict = field(default_factory=dict)

    def validate(self) -> dict:
        d, p = self.d, self.p
        dual_r0 = 1 / (1 - _inv(self.r0))
        checks = {
            "admissible_q0_r0": admissible_check(self.q0, self.r0, d),
            "holder_split": _inv(self.r0) + (p - 1) / self.Q0 == 1 / dual_r0,
            "derivative_split": Fraction(1, 2) + (p - 1) / self.Q == _inv(self.R),
            "Q0_range": 2 < self.Q0 < Fraction(2 * d, d - 2),
            "Q_range": 2 < self.Q < Fraction(2 * d, d - 2),
            "R_range": 1 <= self.R < Fraction(2 * d, d + 4),
        }
        self.derivations = checks
        return checks

    def all_valid(self) -> bool:
        return all(self.validate().values())


def _simplest_between(lo: Fraction, hi: Fraction) -> Fraction:
    """Smallest-denominator fraction strictly inside (lo, hi) (Stern-Brocot)."""
    if not lo < hi:
        raise ValueError("empty interval")
    lo_n, lo_d = lo.numerator, lo.denominator
    hi_n, hi_d = hi.numerator, hi.denominator
    # walk the Stern-Brocot tree
    a, b, c, d_ = 0, 1, 1, 0
    while True:
        m = (a + c, b + d_)
        val = Fraction(m[0], m[1])
        if val <= lo:
            a, b = m
        elif val >= hi:
            c, d_ = m
        else:
            return val


def default_exponents(d: int, p) -> ExponentTable:
    """The exponent tuple for (d, p); exact rational arithmetic throughout.

    (5, 2) returns the canonical table (12/5, 3, 3, 20/9, 20/19).  Other
    admissible (d, p) are solved by a deterministic search: r0 is the
    simplest rational in its admissible window, Q the simplest rational in
    (max(2, 2(p-1)), min(2d/(d-2), d(p-1)/2)), and q0, Q0, R follow from the
    exact identities.

    Raises NoSolutionError outside d >= 5, 1 + 4/d < p < 1 + 4/(d-2).
    """
    p = _frac(p)
    if d < 5:
        raise NoSolutionError(f"d={d} < 5")
    if not (1 + Fraction(4, d) < p < 1 + Fraction(4, d - 2)):
        raise NoSolutionError(f"p={p} outside (1+4/{d}, 1+4/{d-2})")
    if d == 5 and p == 2:
        table = ExponentTable(Fraction(12, 5), Fraction(3), Fraction(3),
                              Fraction(20, 9), Fraction(20, 19), d, p)
        table.validate()
        return table

    endpoint = Fraction(2 * d, d - 2)
    # Q0 = (p-1) r0 / (r0 - 2) must land in (2, endpoint):
    #   Q0 > 2  <=> r0 (p-3) > -4 ; Q0 < endpoint gives a lower bound on r0.
    lo = Fraction(2)
    hi = endpoint
    r0 = None
    # search simplest r0 whose induced Q0 is in range
    for _ in range(64):
        cand = _simplest_between(lo, hi)
        Q0 = (p - 1) * cand / (cand - 2)
        if 2 < Q0 < endpoint:
            r0 = cand
            break
        # Q0 decreases as r0 grows; too-large Q0 means r0 too close to 2
        if Q0 >= endpoint:
            lo = cand
        else:
            hi = cand
    if r0 is None:
        raise NoSolutionError("no admissible r0 found")
    Q0 = (p - 1) * r0 / (r0 - 2)
    q0 = 2 / (Fraction(d, 2) - Fraction(d, 1) / r0)
    qlo = max(Fraction(2), 2 * (p - 1))
    qhi = min(endpoint, Fraction(d, 2) * (p - 1))
    if not qlo < qhi:
        raise NoSolutionError("empty window for Q")
    Q = _simplest_between(qlo, qhi)
    R = 1 / (Fraction(1, 2) + (p - 1) / Q)
    table = ExponentTable(q0, r0, Q0, Q, R, d, p)
    if not table.all_valid():
        raise NoSolutionError(f"search produced an invalid table: {table.derivations}")
    return table


# ---------------------------------------------------------------------------
# norm reports

def _jbracket(x: float) -> float:
    return math.sqrt(1.0 + x * x)


@dataclass
class NormReport:
    name: str
    interval: tuple
    value: float
    bound_shape_value: float
    ratio: float
    extras: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        return f"{self.name},{self.interval[0]!r},{self.interval[1]!r},{self.value!r},{self.bound_shape_value!r},{self.ratio!r}"


CSV_HEADER = "norm,interval_start,interval_end,value,bound_shape_value,ratio"

_MIN_SAMPLES_PER_UNIT = 8.0


def _window(traj: Trajectory, interval):
    if interval is None:
        i0, i1 = 0, len(traj.times) - 1
    else:
        t0, t1 = interval
        i0 = int(np.searchsorted(traj.times, t0 - 1e-12))
        i1 = int(np.searchsorted(traj.times, t1 + 1e-12)) - 1
    if i1 <= i0:
        raise UndersampledIntervalError("interval holds fewer than two samples")
    length = traj.times[i1] - traj.times[i0]
    if length > 0 and (i1 - i0) / length < _MIN_SAMPLES_PER_UNIT:
        raise UndersampledIntervalError(
            f"{i1 - i0} intervals over {length:.3g} time units (< 8 per unit)"
        )
    return i0, i1


def strichartz_norm(traj: Trajectory, q, r, derivative: bool = False,
                    interval=None) -> NormReport:
    """Time-quadrature of ||u(t)||_{L^r} (or W^{1,r}) against <|I|>^{1/q}."""
    if not admissible_check(_frac_or_inf(q), _frac_or_inf(r), traj.grid.dim):
        raise UnsupportedExponentError(f"({q},{r}) not admissible in d={traj.grid.dim}")
    i0, i1 = _window(traj, interval)
    times = traj.times[i0:i1 + 1]
    space = "W1q" if derivative else "Lq"
    vals = np.array([
        norm(traj.field_at(i), space, float(r)) for i in range(i0, i1 + 1)
    ])
    if q == math.inf:
        value = float(np.max(vals))
        shape = 1.0
    else:
        qf = float(q)
        wts = simpson_weights(times)
        value = float(np.sum(wts * vals**qf) ** (1.0 / qf))
        shape = _jbracket(times[-1] - times[0]) ** (1.0 / qf)
    return NormReport(
        name=f"strichartz[q={q},r={r},deriv={int(derivative)}]",
        interval=(float(times[0]), float(times[-1])),
        value=value, bound_shape_value=shape,
        ratio=value / shape if shape > 0 else math.inf,
    )


def _frac_or_inf(x):
    return x if x == math.inf else _frac(x)


def bilinear_norm(traj: Trajectory, n_band: float, m_band: float,
                  interval=None) -> NormReport:
    """|| |u_N| |u_M| ||_{L^2_{t,x}} against <|I|>^{1/2} M^{(d-2)/2}/(<N><M>).

    Most informative for N >= M (enforced as a precondition).
    """
    if m_band > n_band:
        raise ValueError("requires M <= N")
    g = traj.grid
    i0, i1 = _window(traj, interval)
    times = traj.times[i0:i1 + 1]
    mult_n = lp_multiplier(g, DyadicBand.at(n_band))
    mult_m = lp_multiplier(g, DyadicBand.at(m_band))
    spec = traj.spectral()[i0:i1 + 1]
    un = (mult_n[None, :] * spec) @ g._inverse.T
    um = (mult_m[None, :] * spec) @ g._inverse.T
    space_l2sq = np.sum(g.weights[None, :] * np.abs(un) ** 2 * np.abs(um) ** 2, axis=1)
    wts = simpson_weights(times)
    value = float(np.sqrt(np.sum(wts * space_l2sq)))
    d = g.dim
    shape = (_jbracket(times[-1] - times[0]) ** 0.5
             * m_band ** ((d - 2) / 2.0) / (_jbracket(n_band) * _jbracket(m_band)))
    return NormReport(
        name=f"bilinear[N={n_band},M={m_band}]",
        interval=(float(times[0]), float(times[-1])),
        value=value, bound_shape_value=shape, ratio=value / shape,
    )


def smoothing_profile(traj: Trajectory, bands, interval, table: ExponentTable):
    """||P_N F(u)||_{L^{q0'}_t L^{r0'}_x} per dyadic band, with the fitted
    decay exponent in N; returns (reports, fitted_slope)."""
    g = traj.grid
    i0, i1 = _window(traj, interval)
    times = traj.times[i0:i1 + 1]
    q0p = float(1 / (1 - 1 / table.q0))
    r0p = float(1 / (1 - 1 / table.r0))
    fh = traj.nonlinearity_spectral()[i0:i1 + 1]
    wts = simpson_weights(times)
    reports = []
    for nb in bands:
        if nb < 1:
            raise ValueError("smoothing bands require N >= 1")
        mult = lp_multiplier(g, DyadicBand.at(float(nb)))
        pn = (mult[None, :] * fh) @ g._inverse.T
        spatial = np.array([
            np.sum(g.weights * np.abs(pn[j]) ** r0p) ** (1.0 / r0p)
            for j in range(pn.shape[0])
        ])
        value = float(np.sum(wts * spatial**q0p) ** (1.0 / q0p))
        shape = _jbracket(nb) ** (-1.0) * _jbracket(times[-1] - times[0]) ** (1.0 / q0p)
        reports.append(NormReport(
            name=f"smoothing[N={nb}]",
            interval=(float(times[0]), float(times[-1])),
            value=value, bound_shape_value=shape,
            ratio=value / shape if shape > 0 else math.inf,
        ))
    vals = np.array([rep.value for rep in reports])
    bandsf = np.array([float(b) for b in bands])
    keep = vals > 1e-300
    slope = float("nan")
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(bandsf[keep]), np.log(vals[keep]), 1)[0])
    return reports, slope


def ffix_ratio(f: RadialField, params, table: ExponentTable) -> float:
    """||F(f)||_{W^{1,R}} / ||f||_H^p; 0 for the zero field by convention.

    Exactly scale-invariant under f -> lambda f for the pure power.
    """
    hn = norm(f, "H")
    if hn == 0.0:
        return 0.0
    from .dynamics import nonlinearity  # local import avoids a cycle at load

    fu = nonlinearity(f, params)
    R = float(table.R)
    w1r = norm(fu, "Lq", R) + norm(radial_derivative(fu), "Lq", R)
    return w1r / hn**params.p
