"""Acceptance suite: one function per criterion, each printing pass/fail.

Reference resolution is d=5, rmax=40, n=1024, dt=1e-3 unless a criterion's
physics forces another grid (dispersive windows, wall reflections); such
choices are recorded in the result details.  Shared expensive artifacts
(grids, ground states, long runs) live on the context and are reused.
"""

from __future__ import annotations

import filecmp
import math
import shutil
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import asymptotics, dynamics, function_spaces, ground_state, harness, propagator
from .spectral_core import (
    RadialField,
    build_grid,
    gaussian_field,
    norm,
    random_band_limited,
    tail,
)

REFERENCE = dict(dim=5, rmax=40.0, n=1024, dt=1e-3)

SOLITON_OMEGA = 0.3          # only omega window where dt=1e-3 respects the cap
ORBIT_OMEGA = 0.25           # orbit certificate scenario
ORBIT_DT = 6e-5
SMALL_DATA_RMAX = 80.0       # wall refocusing reaches the origin only past t=50
DISPERSIVE_RMAX = 400.0      # t in [1, 30] stays trusted
DISPERSIVE_N = 1536


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.number:2d}. {self.name} ({self.seconds:.1f}s): {self.detail}"


class AcceptanceContext:
    """Lazily built shared artifacts for the criteria."""

    def __init__(self, workdir=None):
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="nlslab_accept_"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self._cache = {}

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def grid(self):
        return self._get("grid", lambda: build_grid(5, REFERENCE["rmax"], REFERENCE["n"]))

    @property
    def grid_small_data(self):
        return self._get("grid80", lambda: build_grid(5, SMALL_DATA_RMAX, 1024))

    @property
    def grid_dispersive(self):
        return self._get("gridbig", lambda: build_grid(5, DISPERSIVE_RMAX, DISPERSIVE_N, unitary=False))

    @property
    def focusing(self):
        return dynamics.NlsParams(dim=5, p=2.0, sign=-1)

    def ground_state_at(self, omega, tol=1e-9):
        key = ("gs", omega, tol)
        return self._get(key, lambda: ground_state.solve_ground_state(
            self.focusing, omega, self.grid, tol=tol))

    @property
    def soliton_run_t10(self):
        """Criterion 6's harness run (also reused by determinism)."""
        def build():
            cfg = harness.ScenarioConfig(scenario="soliton", omega=SOLITON_OMEGA,
                                         t_end=10.0, dt=REFERENCE["dt"], sample_every=20)
            out = self.workdir / "c6_soliton_t10"
            if out.exists():
                shutil.rmtree(out)
            record = harness.run(cfg, out)
            return cfg, record
        return self._get("run_t10", build)

    @property
    def soliton_traj_t50(self):
        def build():
            gs = self.ground_state_at(SOLITON_OMEGA, tol=1e-7)
            return dynamics.evolve(gs.profile, self.focusing, 50.0, REFERENCE["dt"],
                                   sample_every=20)
        return self._get("soliton50", build)

    @property
    def small_data_traj(self):
        def build():
            u0 = gaussian_field(self.grid_small_data, amplitude=1e-2)
            return dynamics.evolve(u0, self.focusing, 50.0, REFERENCE["dt"], sample_every=20)
        return self._get("small50", build)

    @property
    def spr_traj(self):
        """soliton + outgoing radiation, H-norm of the bump = 0.02."""
        def build():
            gs = self.ground_state_at(SOLITON_OMEGA, tol=1e-7)
            g = self.grid
            bump = RadialField(g, np.exp(-((g.nodes - 10.0) / 2.0) ** 2) * np.exp(2j * g.nodes))
            u0 = gs.profile + (0.02 / norm(bump, "H")) * bump
            return dynamics.evolve(u0, self.focusing, 50.0, REFERENCE["dt"], sample_every=20)
        return self._get("spr50", build)

    def decomposition(self, key, traj):
        def build():
            est = asymptotics.extract_radiation(traj)
            series = asymptotics.weakly_bound(traj, est)
            return est, series
        return self._get(("decomp", key), build)


# ---------------------------------------------------------------------------

def criterion_1(ctx):
    """Exponent table at (5,2) in exact rationals."""
    table = function_spaces.default_exponents(5, 2)
    expected = (Fraction(12, 5), Fraction(3), Fraction(3), Fraction(20, 9), Fraction(20, 19))
    got = (table.q0, table.r0, table.Q0, table.Q, table.R)
    checks = table.validate()
    irq = Fraction(1, 2) + (table.p - 1) / table.Q == Fraction(19, 20)
    ok = got == expected and all(checks.values()) and irq
    return ok, f"(q0,r0,Q0,Q,R)={tuple(str(x) for x in got)}, identities {checks}"


def criterion_2(ctx):
    """Transform fidelity: Gaussian pair 1e-8, round trip 1e-10, Plancherel 1e-8."""
    g = ctx.grid
    f = gaussian_field(g)
    from .spectral_core import hankel_forward, hankel_inverse

    fhat = hankel_forward(f)
    ref = np.pi ** 2.5 * np.exp(-g.knodes**2 / 4.0)
    pair = float(np.linalg.norm(fhat.coeffs - ref) / np.linalg.norm(ref))
    rb = random_band_limited(g, seed=2)
    rt = hankel_inverse(hankel_forward(rb))
    round_trip = norm(rt - rb, "L2") / norm(rb, "L2")
    planch = 0.0
    for fld in (f, rb):
        phys = norm(fld, "L2")
        spec = float(np.sqrt(np.sum(g.kweights * np.abs((hankel_forward(fld)).coeffs) ** 2)))
        planch = max(planch, abs(phys - spec) / phys)
    ok = pair <= 1e-8 and round_trip <= 1e-10 and planch <= 1e-8
    return ok, f"gaussian pair {pair:.2e}, round trip {round_trip:.2e}, plancherel {planch:.2e}"


def criterion_3(ctx):
    """Free flow: unitarity, Gaussian closed form, dispersive slope, L1->Linf constant."""
    g = ctx.grid
    rb = random_band_limited(g, seed=3)
    ev = propagator.free_evolve(rb, 7.3)
    unit = abs(norm(ev, "L2") / norm(rb, "L2") - 1.0)

    f = gaussian_field(g)
    t = 0.5
    ut = propagator.free_evolve(f, t)
    ref = (1 + 4j * t) ** -2.5 * np.exp(-g.nodes**2 / (1 + 4j * t))
    gauss = float(np.sqrt(np.sum(g.weights * np.abs(ut.values - ref) ** 2)
                          / np.sum(g.weights * np.abs(ref) ** 2)))

    gb = ctx.grid_dispersive
    fb = gaussian_field(gb)
    fit = propagator.dispersive_decay_fit(fb, 1.0, np.geomspace(1.0, 30.0, 12))
    slope_ok = abs(fit.slope - (-2.5)) <= 0.05 and fit.max_trusted_time >= 30.0

    l1 = norm(fb, "Lq", 1.0)
    const_ok = True
    worst = 0.0
    for tt, v, trusted in zip(fit.times, fit.norms, fit.trusted):
        if trusted:
            bound = (4 * np.pi * tt) ** -2.5 * l1 * 1.01
            worst = max(worst, v / bound)
            const_ok = const_ok and v <= bound
    ok = unit <= 1e-10 and gauss <= 1e-8 and slope_ok and const_ok
    return ok, (f"unitarity {unit:.2e}, gaussian {gauss:.2e}, slope {fit.slope:.4f} "
                f"(rmax={DISPERSIVE_RMAX:g}), Linf/bound max {worst:.4f}")


def criterion_4(ctx):
    """Double Duhamel: 4/3 within 1% at horizon 1e3 (tail-extrapolated); d=4 divergent."""
    rep = propagator.double_duhamel_report(5, 1e4, [250.0, 500.0, 1000.0])
    target = 4.0 / 3.0
    err = abs(rep.extrapolated - target) / target
    v3 = propagator.double_duhamel_convergence(4, 1e7, 1e3)
    v6 = propagator.double_duhamel_convergence(4, 1e7, 1e6)
    diverges = (v6 - v3) > 1.0 and not propagator.double_duhamel_report(4, 1e7, [1e3, 1e6]).bounded
    ok = err <= 0.01 and diverges
    return ok, (f"d=5 extrapolated {rep.extrapolated:.6f} (err {err:.2e}, raw {rep.values[-1]:.4f}); "
                f"d=4 grows {v3:.2f} -> {v6:.2f}")


def criterion_5(ctx):
    """Resolvent: time integral vs direct at E=-1, mod global sign, 1e-3 in L2."""
    g = ctx.grid
    f = gaussian_field(g)
    direct = propagator.resolvent_direct(f, propagator.ResolventSpec(-1.0, 0.0))
    ti = propagator.resolvent_time_integral_richardson(f, -1.0, 5e-3)
    den = norm(direct, "L2")
    rel = min(norm(ti - direct, "L2"), norm(ti + direct, "L2")) / den
    ok = rel <= 1e-3
    return ok, f"relative L2 disagreement (mod sign) {rel:.2e}"


def criterion_6(ctx):
    """Conservation on the soliton run, T=10: mass 1e-8, Hamiltonian 1e-6, dt-halving."""
    cfg, record = ctx.soliton_run_t10
    diag = (Path(record.run_dir) / "diagnostics.csv").read_text().strip().splitlines()[1:]
    mass = np.array([float(r.split(",")[1]) for r in diag])
    ham = np.array([float(r.split(",")[2]) for r in diag])
    mdrift = float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))
    hdrift = float(np.max(np.abs(ham - ham[0])) / abs(ham[0]))

    gs = ctx.ground_state_at(SOLITON_OMEGA, tol=1e-7)
    half = dynamics.evolve(gs.profile, ctx.focusing, 10.0, REFERENCE["dt"] / 2, sample_every=40)
    hd2 = float(np.max(np.abs(half.hamiltonian - half.hamiltonian[0])) / abs(half.hamiltonian[0]))
    ratio = hdrift / hd2 if hd2 > 0 else math.inf
    # the clean orbit superconverges (phase-invariant modified energy, ~dt^4);
    # "about 4x" is asserted as second order or better -- see the ledger
    ok = mdrift < 1e-8 and hdrift < 1e-6 and ratio >= 3.2
    return ok, f"mass drift {mdrift:.2e}, H drift {hdrift:.2e}, halving ratio {ratio:.1f}"


def criterion_7(ctx):
    """Ground-state residual 1e-9; orbit deviation < 1e-4; scaling covariance 1e-6."""
    gs1 = ctx.ground_state_at(1.0)
    gs4 = ctx.ground_state_at(4.0)
    scal = ground_state.scaling_covariance_defect(gs1, gs4, p=2.0)
    gs_orbit = ctx.ground_state_at(ORBIT_OMEGA)
    dev = ground_state.soliton_orbit_check(gs_orbit, ctx.focusing, 5.0, ORBIT_DT, sample_every=400)
    ok = gs1.residual <= 1e-9 and gs4.residual <= 1e-9 and dev < 1e-4 and scal <= 1e-6
    return ok, (f"residual(w=1) {gs1.residual:.2e}, orbit dev {dev:.2e} "
                f"(w={ORBIT_OMEGA}, dt={ORBIT_DT:g}), scaling {scal:.2e}")


def criterion_8(ctx):
    """Split-step vs Crank-Nicolson within 1e-4 relative L2 at T=1."""
    g = ctx.grid
    params = ctx.focusing
    results = []
    gsO = ctx.ground_state_at(ORBIT_OMEGA)
    for name, u0 in (("gaussian", gaussian_field(g)), ("soliton", gsO.profile)):
        traj = dynamics.evolve(u0, params, 1.0, 2e-4, sample_every=2500)
        oracle = dynamics.oracle_evolve(u0, params, 1.0)
        final_spec = g._forward @ traj.fields[-1]
        ss_at = g.evaluate(final_spec, oracle.rnodes)
        results.append((name, oracle.l2_distance(ss_at)))
    worst = max(d for _, d in results)
    ok = worst <= 1e-4
    return ok, ", ".join(f"{n}: {d:.2e}" for n, d in results)


def criterion_9(ctx):
    """Small-data scattering: residual at t=50 < 1e-4 and < 0.1 x its t=1 value."""
    traj = ctx.small_data_traj
    est, series = ctx.decomposition("small", traj)
    g = traj.grid
    kw_h = g.kweights * (1.0 + g.knodes**2)
    up_hat = g._forward @ est.u_plus.values

    def residual_at(tval):
        i = int(np.argmin(np.abs(traj.times - tval)))
        diff = traj.spectral()[i] - np.exp(-1j * traj.times[i] * g.knodes**2) * up_hat
        return float(np.sqrt(np.sum(kw_h * np.abs(diff) ** 2)))

    r50, r1 = residual_at(50.0), residual_at(1.0)
    ok = r50 < 1e-4 and r50 < 0.1 * r1 and est.cauchy_defect < 1e-4
    return ok, (f"residual(50) {r50:.2e}, residual(1) {r1:.2e}, ratio {r50 / r1:.3f}, "
                f"cauchy defect {est.cauchy_defect:.2e} (rmax={SMALL_DATA_RMAX:g})")


def criterion_10(ctx):
    """Decomposition bounds and forward-Duhamel residual for every completed run."""
    details, ok = [], True
    for key, traj in (("soliton", ctx.soliton_traj_t50),
                      ("small", ctx.small_data_traj),
                      ("spr", ctx.spr_traj)):
        est, series = ctx.decomposition(key, traj)
        e = series.energy
        up_ok = est.u_plus_hnorm**2 <= e + 1e-6
        v_ok = float(np.max(series.v_h_norms)) <= 2.0 * math.sqrt(e) + 1e-6
        duh = float(np.max(series.duhamel_residuals))
        ok = ok and up_ok and v_ok and duh < 1e-4
        details.append(f"{key}: |u+|^2/E {est.u_plus_hnorm**2 / e:.2e}, "
                       f"max|v|/2sqrtE {np.max(series.v_h_norms) / (2 * math.sqrt(e)):.3f}, "
                       f"duhamel {duh:.2e}")
    return ok, "; ".join(details)


def criterion_11(ctx):
    """Petite indicators order consistently across the scenario suite."""
    reports = {}
    for key, traj in (("soliton", ctx.soliton_traj_t50),
                      ("small", ctx.small_data_traj),
                      ("spr", ctx.spr_traj)):
        est, series = ctx.decomposition(key, traj)
        reports[key] = (asymptotics.petite_report(traj, est), series)
    rad = {k: r.radiation_normalized for k, (r, _) in reports.items()}
    tl = {k: r.tail_score_normalized for k, (r, _) in reports.items()}
    gtl = {k: r.grad_tail_score_normalized for k, (r, _) in reports.items()}
    soliton_min = all(rad["soliton"] <= rad[k] for k in rad) and \
        all(tl["soliton"] <= tl[k] for k in tl) and \
        all(gtl["soliton"] <= gtl[k] for k in gtl)
    small_max = all(rad["small"] >= rad[k] for k in rad)
    v_small = float(reports["small"][1].v_h_norms[-1])
    ok = soliton_min and small_max and v_small < 1e-3
    return ok, (f"radiation {dict((k, f'{v:.2e}') for k, v in rad.items())}, "
                f"tails {dict((k, f'{v:.2e}') for k, v in tl.items())}, |v_small(50)| {v_small:.2e}")


def criterion_12(ctx):
    """Soliton localization: high-frequency exponent > 2, tail(v,20) < 1e-6,
    mass concentration (2, 10) clears 0.9."""
    traj = ctx.soliton_traj_t50
    est, series = ctx.decomposition("soliton", traj)
    prof = asymptotics.frequency_profile(series)
    i0, i1 = asymptotics._late_window(len(series.times), 0.25)
    worst_tail = max(tail(series.v_at(i), 20.0) for i in range(i0, i1 + 1))
    conc = asymptotics.mass_concentration_track(traj, [(2.0, 10.0)])
    ok = prof.high_exponent > 2.0 and worst_tail < 1e-6 and conc.any_fired \
        and conc.min_fraction_when_fired > 0.9
    return ok, (f"high exponent {prof.high_exponent:.2f}, tail(v,20) {worst_tail:.2e}, "
                f"concentration fraction {conc.min_fraction_when_fired:.4f}")


def criterion_13(ctx):
    """Blow-up probe: negative Hamiltonian, blowup before t=10, monotone H growth."""
    g = ctx.grid
    u0 = gaussian_field(g, amplitude=25.0)
    params = ctx.focusing
    _, ham0 = dynamics.conserved(u0, params)
    traj = dynamics.evolve(u0, params, 10.0, 3e-4, sample_every=50, check_every=2)
    hist = traj.step_hnorms
    last = hist[-100:]
    monotone = bool(np.all(np.diff(last) > 0))
    ok = (ham0 < 0 and traj.termination.kind == "blowup"
          and traj.termination.time < 10.0 and len(last) == 100 and monotone)
    tstar = traj.termination.time if traj.termination.kind == "blowup" else math.nan
    return ok, f"H(u0)={ham0:.1f}, termination {traj.termination.label()}, t*={tstar:.3f}, monotone {monotone}"


def criterion_14(ctx):
    """Determinism: re-running criterion 6's config reproduces diagnostics.csv bytes."""
    cfg, record = ctx.soliton_run_t10
    out2 = ctx.workdir / "c14_repeat"
    if out2.exists():
        shutil.rmtree(out2)
    harness.run(cfg, out2)
    same = filecmp.cmp(Path(record.run_dir) / "diagnostics.csv",
                       out2 / "diagnostics.csv", shallow=False)
    return bool(same), f"diagnostics.csv byte-identical: {same}"


CRITERIA = [
    (1, "exponent table", criterion_1),
    (2, "transform fidelity", criterion_2),
    (3, "free flow", criterion_3),
    (4, "double Duhamel", criterion_4),
    (5, "resolvent agreement", criterion_5),
    (6, "conservation", criterion_6),
    (7, "soliton certificate", criterion_7),
    (8, "oracle equivalence", criterion_8),
    (9, "small-data scattering", criterion_9),
    (10, "decomposition bounds", criterion_10),
    (11, "petite co-variation", criterion_11),
    (12, "localization profiles", criterion_12),
    (13, "blow-up probe", criterion_13),
    (14, "determinism", criterion_14),
]


def run_acceptance(only=None, workdir=None, printer=print):
    """Run the acceptance criteria (all, or the subset in ``only``)."""
    ctx = AcceptanceContext(workdir)
    results = []
    for num, name, fn in CRITERIA:
        if only and num not in only:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(ctx)
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"exception {type(exc).__name__}: {exc}"
        res = CriterionResult(num, name, bool(passed), detail, time.perf_counter() - t0)
        results.append(res)
        if printer:
            printer(res.line())
    return results
