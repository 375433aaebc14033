"""Scenario catalog, config parsing, run persistence, reports, sweeps.

The config grammar is a single key=value file: one `key = value` pair per
line, `#` comments, nested blocks through dotted keys, values parsed as
int/float/bool/string or comma-separated number lists.  Unknown keys are
rejected.  Identical config + seed reproduces byte-identical diagnostics.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import time as _time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingRunError, NlsLabError
from .spectral_core import (
    RadialField,
    build_grid,
    gaussian_field,
    norm,
    save_field,
    load_field,
)
from .dynamics import NlsParams, evolve, split_step_cap
from .ground_state import solve_ground_state
from .asymptotics import (
    extract_radiation,
    frequency_profile,
    mass_concentration_track,
    petite_report,
    spatial_profile,
    weakly_bound,
)
from .function_spaces import (
    CSV_HEADER,
    bilinear_norm,
    default_exponents,
    ffix_ratio,
    smoothing_profile,
    strichartz_norm,
)

SCENARIOS = (
    "linear", "small_data", "defocusing", "soliton",
    "soliton_plus_radiation", "perturbed_ground_state", "blowup_probe", "custom",
)

_DEFAULT_SIGN = {
    "linear": 0, "small_data": -1, "defocusing": +1, "soliton": -1,
    "soliton_plus_radiation": -1, "perturbed_ground_state": -1,
    "blowup_probe": -1, "custom": -1,
}

_KNOWN_KEYS = {
    "scenario", "seed",
    "equation.dim", "equation.p", "equation.sign",
    "grid.rmax", "grid.n",
    "time.dt", "time.t_end", "time.sample_every",
    "diagnostics.radii", "diagnostics.bands", "diagnostics.probe_count",
    "diagnostics.late_fraction", "diagnostics.mu1", "diagnostics.check_every",
    "diagnostics.eta3",
    "scenario.omega", "scenario.epsilon", "scenario.amplitude",
    "scenario.radiation_hnorm", "scenario.chirp", "scenario.bump_center",
    "scenario.bump_width", "scenario.data_path", "scenario.gs_tol",
}


@dataclass
class ScenarioConfig:
    scenario: str = "soliton"
    dim: int = 5
    p: float = 2.0
    sign: int | None = None
    rmax: float = 40.0
    n: int = 1024
    dt: float = 1e-3
    t_end: float = 10.0
    sample_every: int = 20
    radii: tuple = (2.0, 5.0, 10.0, 20.0, 30.0)
    bands: tuple = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
    probe_count: int = 32
    late_fraction: float = 0.25
    mu1: float = 2.0**-4
    check_every: int = 10
    eta3: str = "fitted"
    omega: float = 0.3
    epsilon: float = 1e-2
    amplitude: float = 1.0
    radiation_hnorm: float = 0.5
    chirp: float = 2.0
    bump_center: float = 10.0
    bump_width: float = 2.0
    data_path: str = ""
    gs_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}")
        if self.sign is None:
            self.sign = _DEFAULT_SIGN[self.scenario]
        if self.dim < 3:
            raise ConfigError("equation.dim", "must be >= 3")
        if self.n < 16:
            raise ConfigError("grid.n", "must be >= 16")
        if self.rmax <= 0:
            raise ConfigError("grid.rmax", "must be positive")
        if self.dt <= 0:
            raise ConfigError("time.dt", "must be positive")
        if self.t_end <= 0:
            raise ConfigError("time.t_end", "must be positive")
        if self.sample_every < 1:
            raise ConfigError("time.sample_every", "must be >= 1")
        if not (0 < self.late_fraction <= 1):
            raise ConfigError("diagnostics.late_fraction", "must be in (0, 1]")
        if any(r >= self.rmax or r < 0 for r in self.radii):
            raise ConfigError("diagnostics.radii", "radii must lie in [0, rmax)")
        if self.scenario == "custom" and not self.data_path:
            raise ConfigError("scenario.data_path", "required for custom scenario")

    def manifest_lines(self):
        vals = {
            "scenario": self.scenario, "seed": self.seed,
            "equation.dim": self.dim, "equation.p": self.p, "equation.sign": self.sign,
            "grid.rmax": self.rmax, "grid.n": self.n,
            "time.dt": self.dt, "time.t_end": self.t_end,
            "time.sample_every": self.sample_every,
            "diagnostics.radii": ",".join(repr(r) for r in self.radii),
            "diagnostics.bands": ",".join(repr(b) for b in self.bands),
            "diagnostics.probe_count": self.probe_count,
            "diagnostics.late_fraction": self.late_fraction,
            "diagnostics.mu1": self.mu1,
            "diagnostics.check_every": self.check_every,
            "diagnostics.eta3": self.eta3,
            "scenario.omega": self.omega, "scenario.epsilon": self.epsilon,
            "scenario.amplitude": self.amplitude,
            "scenario.radiation_hnorm": self.radiation_hnorm,
            "scenario.chirp": self.chirp, "scenario.bump_center": self.bump_center,
            "scenario.bump_width": self.bump_width,
            "scenario.data_path": self.data_path, "scenario.gs_tol": self.gs_tol,
        }
        return [f"{k} = {v}" for k, v in sorted(vals.items())]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.manifest_lines()).encode()).hexdigest()[:16]


_FIELD_MAP = {
    "scenario": ("scenario", str), "seed": ("seed", int),
    "equation.dim": ("dim", int), "equation.p": ("p", float),
    "equation.sign": ("sign", int),
    "grid.rmax": ("rmax", float), "grid.n": ("n", int),
    "time.dt": ("dt", float), "time.t_end": ("t_end", float),
    "time.sample_every": ("sample_every", int),
    "diagnostics.radii": ("radii", "floats"),
    "diagnostics.bands": ("bands", "floats"),
    "diagnostics.probe_count": ("probe_count", int),
    "diagnostics.late_fraction": ("late_fraction", float),
    "diagnostics.mu1": ("mu1", float),
    "diagnostics.check_every": ("check_every", int),
    "diagnostics.eta3": ("eta3", str),
    "scenario.omega": ("omega", float), "scenario.epsilon": ("epsilon", float),
    "scenario.amplitude": ("amplitude", float),
    "scenario.radiation_hnorm": ("radiation_hnorm", float),
    "scenario.chirp": ("chirp", float),
    "scenario.bump_center": ("bump_center", float),
    "scenario.bump_width": ("bump_width", float),
    "scenario.data_path": ("data_path", str),
    "scenario.gs_tol": ("gs_tol", float),
}


def parse_config_text(text: str) -> ScenarioConfig:
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        attr, kind = _FIELD_MAP[key]
        try:
            if kind == "floats":
                kwargs[attr] = tuple(float(x) for x in val.split(",") if x.strip())
            elif kind is int:
                kwargs[attr] = int(val)
            elif kind is float:
                kwargs[attr] = float(val)
            else:
                kwargs[attr] = val
        except ValueError as exc:
            raise ConfigError(key, f"bad value {val!r}: {exc}") from None
    return ScenarioConfig(**kwargs)


def load_config(path) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# scenario initial data

def build_initial_data(cfg: ScenarioConfig, grid, params: NlsParams):
    """Initial field per scenario; returns (field, extras-for-manifest)."""
    extras = {}
    sc = cfg.scenario
    if sc == "linear" or sc == "defocusing":
        u0 = gaussian_field(grid, amplitude=cfg.amplitude)
    elif sc == "small_data":
        u0 = gaussian_field(grid, amplitude=cfg.epsilon)
    elif sc == "blowup_probe":
        u0 = gaussian_field(grid, amplitude=cfg.amplitude)
    elif sc in ("soliton", "soliton_plus_radiation", "perturbed_ground_state"):
        gs = solve_ground_state(params, cfg.omega, grid, tol=cfg.gs_tol)
        extras["ground_state.residual"] = gs.residual
        extras["ground_state.iterations"] = gs.iterations
        u0 = gs.profile
        if sc == "soliton_plus_radiation":
            r = grid.nodes
            bump = np.exp(-((r - cfg.bump_center) / cfg.bump_width) ** 2) * np.exp(1j * cfg.chirp * r)
            bf = RadialField(grid, bump)
            scale = cfg.radiation_hnorm / norm(bf, "H")
            extras["radiation.amplitude"] = scale
            u0 = u0 + scale * bf
        elif sc == "perturbed_ground_state":
            u0 = u0 + cfg.epsilon * gaussian_field(grid)
    elif sc == "custom":
        u0 = load_field(cfg.data_path, grid)
    else:  # pragma: no cover
        raise ConfigError("scenario", sc)
    return u0, extras


# ---------------------------------------------------------------------------
# run records

@dataclass
class RunRecord:
    config_hash: str
    run_dir: str
    termination: str
    wall_time: float
    conformance: dict
    files: dict = field(default_factory=dict)

    def save(self):
        path = Path(self.run_dir) / "record.json"
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, run_dir):
        path = Path(run_dir) / "record.json"
        if not path.exists():
            raise MissingRunError(str(run_dir))
        return cls(**json.loads(path.read_text()))


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def run(cfg: ScenarioConfig, out_dir) -> RunRecord:
    """Build the scenario data, evolve, run the diagnostics suite, persist."""
    t_start = _time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    grid = build_grid(cfg.dim, cfg.rmax, cfg.n)
    params = NlsParams(dim=cfg.dim, p=cfg.p, sign=cfg.sign)
    u0, extras = build_initial_data(cfg, grid, params)
    cap = split_step_cap(u0, params)
    if cfg.dt > cap * (1 + 1e-12):
        raise ConfigError("time.dt", f"{cfg.dt} above the stability cap {cap:.3e}")

    traj = evolve(u0, params, cfg.t_end, cfg.dt,
                  sample_every=cfg.sample_every, check_every=cfg.check_every)

    # persistence: manifest, per-sample fields, diagnostics CSV
    manifest = cfg.manifest_lines()
    manifest.append(f"derived.stability_cap = {cap!r}")
    manifest.append(f"derived.conformant = {params.conformant}")
    for k, v in sorted(extras.items()):
        manifest.append(f"derived.{k} = {v!r}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")

    fields_dir = out / "fields"
    fields_dir.mkdir(exist_ok=True)
    for i in range(len(traj.times)):
        save_field(traj.field_at(i), fields_dir / f"sample_{i:05d}.fld")

    term = traj.termination.label()
    diag_rows = []
    for i in range(len(traj.times)):
        tag = term if i == len(traj.times) - 1 else ""
        diag_rows.append(f"{traj.times[i]!r},{traj.mass[i]!r},{traj.hamiltonian[i]!r},{traj.h_norm[i]!r},{tag}")
    _write_csv(out / "diagnostics.csv", "t,mass,hamiltonian,h_norm,termination", diag_rows)
    _write_csv(out / "steps.csv", "t,h_norm",
               [f"{t!r},{h!r}" for t, h in zip(traj.step_times, traj.step_hnorms)])

    files = {
        "manifest": "manifest.txt", "diagnostics": "diagnostics.csv",
        "steps": "steps.csv", "fields": "fields",
    }

    completed = traj.termination.kind == "completed"
    if completed and len(traj.times) >= 8:
        est = extract_radiation(traj, probe_count=cfg.probe_count)
        series = weakly_bound(traj, est)
        save_field(est.u_plus, out / "u_plus.fld")
        with open(out / "extraction.json", "w") as fh:
            json.dump({
                "u_plus_hnorm": est.u_plus_hnorm,
                "cauchy_defect": est.cauchy_defect,
                "converged": bool(est.converged),
                "window": [int(est.window[0]), int(est.window[1])],
                "energy": series.energy,
                "max_v_hnorm": float(np.max(series.v_h_norms)),
            }, fh, indent=2, sort_keys=True)
        _write_csv(out / "duhamel.csv", "t,h_residual",
                   [f"{t!r},{v!r}" for t, v in zip(series.duhamel_times, series.duhamel_residuals)])

        fprof = frequency_profile(series, bands=cfg.bands, late_fraction=cfg.late_fraction)
        sprof = spatial_profile(series, radii=cfg.radii, late_fraction=cfg.late_fraction)
        loc_rows = fprof.csv_rows()[1:] + sprof.csv_rows()[1:]
        _write_csv(out / "localization.csv", "t,key,value", loc_rows)
        with open(out / "localization.json", "w") as fh:
            json.dump({
                "low_exponent": fprof.low_exponent,
                "high_exponent": fprof.high_exponent,
                "eta3_slot": fprof.knobs.get("eta3_slot"),
                "window": list(fprof.window),
            }, fh, indent=2, sort_keys=True)

        pairs = [(rr, rp) for rr in cfg.radii for rp in cfg.radii if rp > rr]
        conc = mass_concentration_track(traj, pairs[:8], mu1=cfg.mu1,
                                        late_fraction=cfg.late_fraction)
        _write_csv(out / "concentration.csv",
                   "t,R,Rp,ball_mass,enlarged_mass,fraction,fired",
                   [f"{t!r},{rr!r},{rp!r},{bm!r},{em!r},{fr!r},{int(fd)}"
                    for (t, rr, rp, bm, em, fr, fd) in conc.rows])

        pet = petite_report(traj, est, mu1=cfg.mu1, late_fraction=cfg.late_fraction,
                            radius=max(r for r in cfg.radii))
        with open(out / "petite.json", "w") as fh:
            json.dump(pet.to_dict(), fh, indent=2, sort_keys=True)

        norm_rows = []
        try:
            table = default_exponents(cfg.dim, cfg.p)
            rep = strichartz_norm(traj, float(table.q0), float(table.r0), derivative=True)
            norm_rows.append(rep.csv_row())
            rep = strichartz_norm(traj, math.inf, 2.0)
            norm_rows.append(rep.csv_row())
            rep = bilinear_norm(traj, 4.0, 0.25)
            norm_rows.append(rep.csv_row())
            reps, slope = smoothing_profile(traj, [1.0, 2.0, 4.0, 8.0], None, table)
            norm_rows += [rp.csv_row() for rp in reps]
            norm_rows.append(f"smoothing_slope,,,{slope!r},,")
            norm_rows.append(f"ffix_ratio,,,{ffix_ratio(u0, params, table)!r},,")
        except NlsLabError as exc:
            norm_rows.append(f"skipped,,,{type(exc).__name__},,")
        _write_csv(out / "norms.csv", CSV_HEADER, norm_rows)

        files.update({
            "extraction": "extraction.json", "duhamel": "duhamel.csv",
            "localization": "localization.csv", "localization_summary": "localization.json",
            "concentration": "concentration.csv", "petite": "petite.json",
            "norms": "norms.csv", "u_plus": "u_plus.fld",
        })

    record = RunRecord(
        config_hash=cfg.digest(),
        run_dir=str(out),
        termination=term,
        wall_time=_time.perf_counter() - t_start,
        conformance={
            "mass_supercritical": params.mass_supercritical,
            "energy_subcritical": params.energy_subcritical,
            "high_dimension": params.high_dimension,
            "conformant": params.conformant,
        },
        files=files,
    )
    record.save()
    return record


# ---------------------------------------------------------------------------
# reports (derived strictly from the stored CSV/JSON artifacts)

def _read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def report(run_dir, kind: str):
    """Emit summary JSON / localization plots / norm plots from stored files."""
    run_dir = Path(run_dir)
    record = RunRecord.load(run_dir)
    outputs = []
    if kind == "summary":
        _, rows = _read_csv(run_dir / "diagnostics.csv")
        mass = np.array([float(r[1]) for r in rows])
        ham = np.array([float(r[2]) for r in rows])
        hn = np.array([float(r[3]) for r in rows])
        summary = {
            "termination": record.termination,
            "conformance": record.conformance,
            "mass_drift": float(np.max(np.abs(mass - mass[0])) / abs(mass[0])) if mass[0] else 0.0,
            "hamiltonian_drift": float(np.max(np.abs(ham - ham[0])) / abs(ham[0])) if ham[0] else 0.0,
            "max_h_norm": float(np.max(hn)),
        }
        pet = run_dir / "petite.json"
        if pet.exists():
            summary["petite"] = json.loads(pet.read_text())
        path = run_dir / "summary.json"
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        outputs.append(path)
    elif kind == "localization":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        loc = run_dir / "localization.csv"
        if not loc.exists():
            raise MissingRunError(f"{run_dir} has no localization diagnostics")
        _, rows = _read_csv(loc)
        tails, dyad = {}, {}
        for t, key, val in rows:
            if key.startswith("tail[R="):
                rr = float(key[len("tail[R="):-1])
                tails.setdefault(rr, []).append(float(val))
            elif key.startswith(("low[N=", "high[N=")):
                nb = float(key.split("N=")[1][:-1])
                dyad.setdefault((key.split("[")[0], nb), []).append(float(val))
        fig, ax = plt.subplots()
        rr = sorted(tails)
        ax.semilogy(rr, [max(max(tails[r]), 1e-300) for r in rr], "o-")
        ax.set_xlabel("R")
        ax.set_ylabel("max late tail(v, R)")
        p1 = run_dir / "tails.svg"
        fig.savefig(p1)
        plt.close(fig)
        fig, ax = plt.subplots()
        for which in ("low", "high"):
            pts = sorted((nb, max(v)) for (w, nb), v in dyad.items() if w == which)
            if pts:
                ax.loglog([p[0] for p in pts], [max(p[1], 1e-300) for p in pts], "o-", label=which)
        ax.set_xlabel("N")
        ax.set_ylabel("band H-norm of v")
        ax.legend()
        p2 = run_dir / "dyadic.svg"
        fig.savefig(p2)
        plt.close(fig)
        outputs += [p1, p2]
    elif kind == "norms":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        _, rows = _read_csv(run_dir / "diagnostics.csv")
        ts = [float(r[0]) for r in rows]
        fig, ax = plt.subplots()
        for idx, label in ((1, "mass"), (2, "hamiltonian"), (3, "H norm")):
            ax.plot(ts, [float(r[idx]) for r in rows], label=label)
        ax.set_xlabel("t")
        ax.legend()
        path = run_dir / "norms.svg"
        fig.savefig(path)
        plt.close(fig)
        outputs.append(path)
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    return outputs


# ---------------------------------------------------------------------------
# sweeps

def _sweep_one(args):
    cfg_path, out_root = args
    try:
        cfg = load_config(cfg_path)
        out = Path(out_root) / (Path(cfg_path).stem + "_" + cfg.digest()[:8])
        record = run(cfg, out)
        return {"config": str(cfg_path), "ok": True, "run_dir": record.run_dir,
                "termination": record.termination}
    except Exception as exc:  # isolation: a failing run never kills the sweep
        return {"config": str(cfg_path), "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def sweep(config_paths, jobs: int, out_root) -> list:
    """Share-nothing parallel runs; failures are isolated and recorded."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [(str(p), str(out_root)) for p in config_paths]
    if jobs <= 1 or len(tasks) <= 1:
        results = [_sweep_one(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    rows = []
    for res in results:
        if res["ok"]:
            pet_path = Path(res["run_dir"]) / "petite.json"
            if pet_path.exists():
                pet = json.loads(pet_path.read_text())
                rows.append(
                    f"{res['config']},{res['termination']},{pet['radiation_hnorm']!r},"
                    f"{pet['tail_score_normalized']!r},{pet['grad_tail_score_normalized']!r}"
                )
            else:
                rows.append(f"{res['config']},{res['termination']},,,")
        else:
            rows.append(f"{res['config']},failed:{res['error']},,,")
    _write_csv(out_root / "sweep_petite.csv",
               "config,termination,radiation_hnorm,tail_score_normalized,grad_tail_score_normalized",
               rows)
    with open(out_root / "sweep_results.json", "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    return results
