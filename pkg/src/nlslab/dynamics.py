"""The nonlinear flow: Strang split-step integrator, conserved quantities,
blow-up detection, and an independent Crank-Nicolson oracle on the half-line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    FixedPointNotConvergedError,
    NanDetectedError,
    StepTooLargeError,
)
from .spectral_core import RadialField, RadialGrid, lp_multiplier, DyadicBand, norm

SPLIT_STEP_CAP = 1e-2       # dt <= CAP / (1 + |u0|_inf^{p-1})
ORACLE_CAP_FACTOR = 0.5     # oracle dt <= 0.5 / kmax^2
BLOWUP_HNORM_FACTOR = 1e3
BLOWUP_BAND_FRACTION = 0.5


@dataclass(frozen=True)
class NlsParams:
    """Equation parameters for i u_t + Lap u = mu |u|^{p-1} u.

    sign: +1 defocusing, -1 focusing, 0 disables the nonlinearity (linear runs).
    Conformance flags mirror the standing hypotheses; non-conformant runs are
    permitted but marked.
    """

    dim: int = 5
    p: float = 2.0
    sign: int = -1
    c0: float | None = None

    def __post_init__(self):
        if self.sign not in (-1, 0, +1):
            raise ValueError("sign must be -1, 0 or +1")
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.c0 is None:
            object.__setattr__(self, "c0", self.p + 2.0)

    @property
    def theta(self) -> float:
        return min(self.p - 1.0, 1.0)

    @property
    def mass_supercritical(self) -> bool:
        return self.p > 1.0 + 4.0 / self.dim

    @property
    def energy_subcritical(self) -> bool:
        return self.p < 1.0 + 4.0 / (self.dim - 2.0)

    @property
    def high_dimension(self) -> bool:
        return self.dim >= 5

    @property
    def conformant(self) -> bool:
        return (self.mass_supercritical and self.energy_subcritical
                and self.high_dimension and self.sign in (-1, +1))

    def power_bound_ratios(self, seed: int = 0, samples: int = 2000):
        """Sampled witnesses for |F| <= C0|z|^p, |F'| <= C0|z|^{p-1} and the
        Holder bound on F' with theta = min(p-1, 1); returns the three max ratios."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(samples) + 1j * rng.standard_normal(samples)
        wz = rng.standard_normal(samples) + 1j * rng.standard_normal(samples)
        p = self.p
        r1 = np.max(np.abs(np.abs(z) ** (p - 1) * z) / np.abs(z) ** p)
        # |F'(z)| as a real-linear map has operator norm p |z|^{p-1}
        r2 = p
        fz = _fprime_matrix(z, p)
        fw = _fprime_matrix(wz, p)
        num = np.linalg.norm(fz - fw, axis=(1, 2))
        den = np.abs(z - wz) ** self.theta * (np.abs(z) + np.abs(wz)) ** (p - 1 - self.theta)
        r3 = float(np.max(num / den))
        return float(r1), float(r2), r3


def _fprime_matrix(z, p):
    """Real-linear differential of F(z) = |z|^{p-1} z as 2x2 real matrices."""
    x, y = z.real, z.imag
    rho = np.abs(z)
    rho = np.where(rho == 0, 1.0, rho)
    out = np.empty((len(z), 2, 2))
    common = rho ** (p - 1)
    extra = (p - 1) * rho ** (p - 3)
    out[:, 0, 0] = common + extra * x * x
    out[:, 0, 1] = extra * x * y
    out[:, 1, 0] = extra * x * y
    out[:, 1, 1] = common + extra * y * y
    return out


def nonlinearity(f: RadialField, params: NlsParams) -> RadialField:
    """Pointwise F(u) = mu |u|^{p-1} u (zero for linear runs)."""
    if params.sign == 0:
        return RadialField(f.grid, np.zeros_like(f.values))
    return RadialField(f.grid, params.sign * np.abs(f.values) ** (params.p - 1) * f.values)


def conserved(f: RadialField, params: NlsParams):
    """(mass, hamiltonian) with G(s) = mu (2/(p+1)) s^{(p+1)/2}."""
    g = f.grid
    mass = float(np.sum(g.weights * np.abs(f.values) ** 2))
    grad2 = float(np.sum(g.kweights * g.knodes**2 * np.abs(g._forward @ f.values) ** 2))
    pot = 0.0
    if params.sign != 0:
        pot = params.sign / (params.p + 1.0) * float(
            np.sum(g.weights * np.abs(f.values) ** (params.p + 1.0))
        )
    return mass, 0.5 * grad2 + pot


def split_step_cap(u0: RadialField, params: NlsParams) -> float:
    if params.sign == 0:
        return math.inf
    amp = float(np.max(np.abs(u0.values)))
    return SPLIT_STEP_CAP / (1.0 + amp ** (params.p - 1.0))


@dataclass
class SolverState:
    t: float
    field: RadialField
    dt: float
    baselines: tuple  # (mass0, hamiltonian0, hnorm0)


def step(state: SolverState, params: NlsParams) -> SolverState:
    """One Strang split step: half nonlinear phase, full free flow, half phase."""
    g = state.field.grid
    dt = state.dt
    u = state.field.values
    if params.sign != 0:
        u = u * np.exp(-1j * params.sign * np.abs(u) ** (params.p - 1.0) * (dt / 2.0))
    u = g.propagator(dt) @ u
    if params.sign != 0:
        u = u * np.exp(-1j * params.sign * np.abs(u) ** (params.p - 1.0) * (dt / 2.0))
    if not np.all(np.isfinite(u)):
        raise NanDetectedError(f"NaN at t={state.t + dt}")
    return SolverState(state.t + dt, RadialField(g, u), dt, state.baselines)


@dataclass
class Termination:
    kind: str          # completed | blowup | unstable
    time: float | None = None

    def label(self):
        if self.kind == "completed":
            return "completed"
        return f"{self.kind}({self.time:.6g})"


@dataclass
class Trajectory:
    """Sampled run of the split-step flow with per-sample diagnostics."""

    params: NlsParams
    grid: RadialGrid
    times: np.ndarray
    fields: np.ndarray            # (nsamples, n) node values
    mass: np.ndarray
    hamiltonian: np.ndarray
    h_norm: np.ndarray
    termination: Termination
    dt: float
    sample_every: int
    step_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    step_hnorms: np.ndarray = field(default_factory=lambda: np.empty(0))
    _spectral: np.ndarray | None = None

    def field_at(self, i: int) -> RadialField:
        return RadialField(self.grid, self.fields[i].copy())

    @property
    def energy(self) -> float:
        """E(u) = sup_i ||u(t_i)||_H^2."""
        return float(np.max(self.h_norm) ** 2)

    def spectral(self) -> np.ndarray:
        """(nsamples, n) batch of f_hat rows; computed once."""
        if self._spectral is None:
            self._spectral = self.fields @ self.grid._forward.T
        return self._spectral

    def nonlinearity_spectral(self) -> np.ndarray:
        if self.params.sign == 0:
            return np.zeros_like(self.fields)
        fu = self.params.sign * np.abs(self.fields) ** (self.params.p - 1.0) * self.fields
        return fu @ self.grid._forward.T


def _finest_bands(grid):
    # two finest dyadic bands whose P_N multiplier meets the represented
    # frequencies: largest N = 2^j with N/2 < kmax, and N/2
    top = 2.0 ** math.floor(math.log2(grid.kmax)) * 2.0
    return DyadicBand.at(top), DyadicBand.at(top / 2.0)


def evolve(
    u0: RadialField,
    params: NlsParams,
    t_end: float,
    dt: float,
    sample_every: int = 20,
    check_every: int = 10,
    blowup_factor: float = BLOWUP_HNORM_FACTOR,
) -> Trajectory:
    """Integrate to t_end, sampling every ``sample_every`` steps.

    Termination mirrors the local theory: blow-up declared when the H norm
    exceeds ``blowup_factor`` times its initial value or gradient mass piles
    into the two finest dyadic bands; NaN terminates as unstable.
    Raises StepTooLargeError when dt exceeds the splitting stability cap.
    """
    g = u0.grid
    cap = split_step_cap(u0, params)
    if dt > cap * (1 + 1e-12):
        raise StepTooLargeError(f"dt={dt} above cap {cap:.3e}")
    nsteps = int(round(t_end / dt))
    mult_top, mult_next = (lp_multiplier(g, b) for b in _finest_bands(g))
    band_mask2 = mult_top**2 + mult_next**2

    u = u0.values.astype(complex).copy()
    kw_h = g.kweights * (1.0 + g.knodes**2)
    kw_grad = g.kweights * g.knodes**2

    def h_norm_of(uhat):
        return float(np.sqrt(np.sum(kw_h * np.abs(uhat) ** 2)))

    uhat0 = g._forward @ u
    h0 = h_norm_of(uhat0)
    m0, ham0 = conserved(u0, params)

    samples = [u.copy()]
    s_times = [0.0]
    s_mass = [m0]
    s_ham = [ham0]
    s_h = [h0]
    step_ts = [0.0]
    step_hs = [h0]
    termination = Termination("completed")

    prop = g.propagator(dt)
    mu, p = params.sign, params.p
    t = 0.0
    for i in range(1, nsteps + 1):
        if mu != 0:
            u = u * np.exp(-1j * mu * np.abs(u) ** (p - 1.0) * (dt / 2.0))
        u = prop @ u
        if mu != 0:
            u = u * np.exp(-1j * mu * np.abs(u) ** (p - 1.0) * (dt / 2.0))
        t = i * dt
        if not np.all(np.isfinite(u)):
            termination = Termination("unstable", t)
            break
        at_sample = (i % sample_every == 0) or (i == nsteps)
        at_check = (i % check_every == 0) or at_sample
        if at_check:
            uhat = g._forward @ u
            h = h_norm_of(uhat)
            step_ts.append(t)
            step_hs.append(h)
            blow = h > blowup_factor * h0
            if not blow and mu != 0:
                grad2 = np.sum(kw_grad * np.abs(uhat) ** 2)
                if grad2 > 0:
                    fine = np.sum(kw_grad * band_mask2 * np.abs(uhat) ** 2)
                    blow = fine / grad2 > BLOWUP_BAND_FRACTION
            if blow:
                termination = Termination("blowup", t)
                samples.append(u.copy())
                s_times.append(t)
                fld = RadialField(g, u)
                mm, hh = conserved(fld, params)
                s_mass.append(mm)
                s_ham.append(hh)
                s_h.append(h)
                break
            if at_sample:
                samples.append(u.copy())
                s_times.append(t)
                fld = RadialField(g, u)
                mm, hh = conserved(fld, params)
                s_mass.append(mm)
                s_ham.append(hh)
                s_h.append(h)

    return Trajectory(
        params=params, grid=g,
        times=np.array(s_times), fields=np.array(samples),
        mass=np.array(s_mass), hamiltonian=np.array(s_ham), h_norm=np.array(s_h),
        termination=termination, dt=dt, sample_every=sample_every,
        step_times=np.array(step_ts), step_hnorms=np.array(step_hs),
    )


# ---------------------------------------------------------------------------
# Duhamel consistency

def simpson_weights(times: np.ndarray) -> np.ndarray:
    """Composite-Simpson weights on (near-)uniform samples; trapezoid patch
    on the last interval when the interval count is odd."""
    m = len(times) - 1
    if m < 1:
        return np.zeros(len(times))
    h = (times[-1] - times[0]) / m
    spacing = np.diff(times)
    if np.max(np.abs(spacing - h)) > 1e-9 * max(abs(h), 1.0):
        raise ValueError("samples are not uniformly spaced")
    w = np.zeros(len(times))
    msim = m if m % 2 == 0 else m - 1
    if msim >= 2:
        w[0] += h / 3.0
        w[msim] += h / 3.0
        w[1:msim:2] += 4.0 * h / 3.0
        w[2:msim:2] += 2.0 * h / 3.0
    if msim != m:
        w[-2] += h / 2.0
        w[-1] += h / 2.0
    return w


def duhamel_residual(traj: Trajectory, i0: int, i1: int) -> float:
    """H-norm defect of u(t1) = e^{i(t1-t0)D} u(t0) - i int e^{i(t1-s)D} F(u(s)) ds,
    quadrature over the stored samples between i0 and i1."""
    g = traj.grid
    t0, t1 = traj.times[i0], traj.times[i1]
    k2 = g.knodes**2
    uh = traj.spectral()
    fh = traj.nonlinearity_spectral()
    wts = simpson_weights(traj.times[i0:i1 + 1])
    # e^{i(t1-s)D} F(u(s)) has spectral rows e^{-i(t1-s)k^2} fh[s]
    phases = np.exp(-1j * np.outer(t1 - traj.times[i0:i1 + 1], k2))
    integral = (wts[:, None] * phases * fh[i0:i1 + 1]).sum(axis=0)
    predicted = np.exp(-1j * (t1 - t0) * k2) * uh[i0] - 1j * integral
    defect = uh[i1] - predicted
    kw_h = g.kweights * (1.0 + k2)
    return float(np.sqrt(np.sum(kw_h * np.abs(defect) ** 2)))


# ---------------------------------------------------------------------------
# Crank-Nicolson oracle on the half line

@dataclass
class OracleResult:
    rnodes: np.ndarray
    weights: np.ndarray          # uniform-grid quadrature incl. surface measure
    times: list
    fields: list                 # node values of u at `times`
    fixed_point_iters: int

    def final(self):
        return self.fields[-1]

    def l2_distance(self, other_values) -> float:
        num = np.sum(self.weights * np.abs(self.final() - other_values) ** 2)
        den = np.sum(self.weights * np.abs(other_values) ** 2)
        return float(np.sqrt(num / den))

    def values_at(self, radii, which: int = -1) -> np.ndarray:
        """8-point Lagrange interpolation of a stored field at arbitrary radii."""
        rf = self.rnodes
        dr = rf[1] - rf[0]
        vals = self.fields[which]
        radii = np.asarray(radii, dtype=float)
        out = np.empty(len(radii), dtype=complex)
        m = len(rf)
        for i, rr in enumerate(radii):
            j = int(min(max(int(round(rr / dr - 1)) - 3, 0), m - 8))
            xs = rf[j:j + 8]
            ws = np.ones(8)
            for a in range(8):
                for b in range(8):
                    if a != b:
                        ws[a] *= (rr - xs[b]) / (xs[a] - xs[b])
            out[i] = ws @ vals[j:j + 8]
        return out

    def l2_distance_on_grid(self, grid, field_values) -> float:
        """Relative L^2 distance to a spectral-grid field, on that grid."""
        interp = self.values_at(grid.nodes)
        num = np.sum(grid.weights * np.abs(interp - field_values) ** 2)
        den = np.sum(grid.weights * np.abs(field_values) ** 2)
        return float(np.sqrt(num / den))


def oracle_evolve(
    u0: RadialField,
    params: NlsParams,
    t_end: float,
    dt: float | None = None,
    nfd: int = 6144,
    sample_times=(),
    fp_tol: float = 1e-12,
    fp_max: int = 16,
) -> OracleResult:
    """Crank-Nicolson integrator on w = r^{(d-1)/2} u over (0, rmax).

    The radial Laplacian becomes d_rr - (d-1)(d-3)/(4 r^2) with Dirichlet ends;
    the interior stencil is 4th order (5-point), the rows beside each wall fall
    back to 3-point.  The linear half is factorized once; the midpoint
    nonlinearity is iterated through the right-hand side.
    Used only for cross-validation of the spectral path.
    """
    from scipy.sparse.linalg import splu

    g = u0.grid
    d = g.dim
    cap = ORACLE_CAP_FACTOR / g.kmax**2
    if dt is None:
        dt = cap
    if dt > cap * (1 + 1e-12):
        raise StepTooLargeError(f"oracle dt={dt} above cap {cap:.3e}")
    c_inv = (d - 1) * (d - 3) / 4.0
    rf = np.linspace(0.0, g.rmax, nfd + 1)[1:-1]
    dr = rf[1] - rf[0]
    m = len(rf)
    rpow = rf ** ((d - 1) / 2.0)

    coeffs = g._forward @ u0.values
    uvals = g.evaluate(coeffs, rf)
    wv = rpow * uvals

    # L = d_rr - c/r^2: 5-point 4th-order interior, 3-point beside the walls
    from scipy.sparse import lil_matrix, identity

    L_li = lil_matrix((m, m))
    inv_dr2 = 1.0 / dr**2
    for row in range(m):
        if 2 <= row <= m - 3:
            sten = ((-2, -inv_dr2 / 12), (-1, 16 * inv_dr2 / 12), (0, -30 * inv_dr2 / 12),
                    (1, 16 * inv_dr2 / 12), (2, -inv_dr2 / 12))
        else:
            sten = ((-1, inv_dr2), (0, -2 * inv_dr2), (1, inv_dr2))
        for off, coef in sten:
            col = row + off
            if 0 <= col < m:
                L_li[row, col] = coef
        L_li[row, row] -= c_inv / rf[row] ** 2
    L_op = L_li.tocsr()
    solver = splu(((1j / dt) * identity(m, format="csr") + 0.5 * L_op).tocsc())

    nsteps = int(round(t_end / dt))
    sample_steps = {int(round(ts / dt)) for ts in sample_times}
    mu, p = params.sign, params.p
    times, fields = [0.0], [uvals.copy()]
    total_fp = 0
    for s in range(1, nsteps + 1):
        base = (1j / dt) * wv - 0.5 * (L_op @ wv)
        if mu == 0:
            wv = solver.solve(base)
            total_fp += 1
        else:
            wnew = wv
            converged = False
            for _ in range(fp_max):
                umid = 0.5 * (wv + wnew) / rpow
                nl = mu * np.abs(umid) ** (p - 1.0)
                wcand = solver.solve(base + 0.5 * nl * (wv + wnew))
                change = float(np.max(np.abs(wcand - wnew))) / max(float(np.max(np.abs(wcand))), 1e-300)
                wnew = wcand
                total_fp += 1
                if change < fp_tol:
                    converged = True
                    break
            if not converged:
                raise FixedPointNotConvergedError(f"CN fixed point stalled at step {s}")
            wv = wnew
        if s in sample_steps or s == nsteps:
            times.append(s * dt)
            fields.append(wv / rpow)

    area = 2 * np.pi ** (d / 2) / math.gamma(d / 2)
    weights = dr * area * rf ** (d - 1)
    return OracleResult(rf, weights, times, fields, total_fp)


def oracle_inverse_square_coefficient(dim: int) -> float:
    """(d-1)(d-3)/4, the half-line substitution potential; equals 2 for d=5."""
    return (dim - 1) * (dim - 3) / 4.0


# ---------------------------------------------------------------------------
# flow stability probe

@dataclass
class GrowthReport:
    times: np.ndarray
    ratios: np.ndarray
    truncated: bool
    perturbation_hnorm: float


def flow_stability_probe(
    u0: RadialField,
    perturbation: RadialField,
    params: NlsParams,
    t_end: float,
    dt: float,
    sample_every: int = 20,
) -> GrowthReport:
    """Measured Lipschitz-in-data ratio ||S(t)(u0+delta) - S(t)u0||_H / ||delta||_H."""
    delta_h = norm(perturbation, "H")
    base = evolve(u0, params, t_end, dt, sample_every)
    pert = evolve(u0 + perturbation, params, t_end, dt, sample_every)
    ncommon = min(len(base.times), len(pert.times))
    truncated = (base.termination.kind != "completed" or pert.termination.kind != "completed")
    if delta_h == 0.0:
        ratios = np.zeros(ncommon)
    else:
        g = u0.grid
        kw_h = g.kweights * (1.0 + g.knodes**2)
        diff = pert.spectral()[:ncommon] - base.spectral()[:ncommon]
        ratios = np.sqrt(np.sum(kw_h[None, :] * np.abs(diff) ** 2, axis=1)) / delta_h
    return GrowthReport(base.times[:ncommon], ratios, truncated, delta_h)
