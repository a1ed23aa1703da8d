"""Config-driven scenario runner: reproducible experiments over all modules.

Scenario configs are flat ``section.key = value`` text files (one assignment
per line, ``#`` comments).  A run builds exact initial data, integrates,
executes the diagnostic battery, and writes deterministic artifacts: CSV
series, a JSON summary (sorted keys) and snapshot files.  Re-running the
same config reproduces every artifact byte for byte.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as diag
from .evolution import EvolveConfig, NoiseSetup, Trajectory, backward_solve, integrate
from .exact import (
    BlowupParams,
    Bubble,
    Soliton,
    SolitonParams,
    pseudo_conformal_blowup,
    pseudo_conformal_map,
    solitary_wave,
)
from .grid import ComplexField, GridSpec, l2_norm_sq, make_grid, write_snapshot
from .ground_state import critical_exponent, ground_profile
from .noise import ProfileSpec

SCENARIO_KINDS = (
    "critical_blowup",
    "multi_bubble",
    "bourgain_wang",
    "multi_soliton",
    "nonpure_soliton",
    "snls_gauge_check",
    "loglog_supercritical",
    "custom",
)

OUTPUT_ROOT_ENV = "NLSLAB_OUT"


class ConfigError(ValueError):
    """Schema violation in a scenario config (exit code 2)."""


class RunFailure(RuntimeError):
    """Numerical failure during a run (exit code 3); partial artifacts kept."""


# ---------------------------------------------------------------------------
# config parsing


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get(cfg: dict, key: str, cast, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = cfg.pop(key)
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} ({exc})") from exc


def _parse_point(raw: str, d: int):
    parts = [float(p) for p in raw.split(",")]
    if len(parts) != d:
        raise ValueError(f"point needs {d} components, got {raw!r}")
    return tuple(parts)


def _parse_bubbles(raw: str, d: int):
    bubbles = []
    for chunk in raw.split(";"):
        fields = chunk.strip().split(":")
        if len(fields) != 3:
            raise ValueError(f"bubble needs position:width:phase, got {chunk!r}")
        bubbles.append(
            Bubble(
                position=_parse_point(fields[0], d),
                width=float(fields[1]),
                phase=float(fields[2]),
            )
        )
    return tuple(bubbles)


def _parse_solitons(raw: str, d: int):
    waves = []
    for chunk in raw.split(";"):
        fields = chunk.strip().split(":")
        if len(fields) != 4:
            raise ValueError(
                f"soliton needs velocity:width:phase:position, got {chunk!r}"
            )
        waves.append(
            Soliton(
                velocity=_parse_point(fields[0], d),
                width=float(fields[1]),
                phase=float(fields[2]),
                position0=_parse_point(fields[3], d),
            )
        )
    return tuple(waves)


@dataclass
class ScenarioConfig:
    kind: str
    d: int
    extent: float
    points: int
    p: float
    blowup_time: float
    bubbles: tuple
    solitons: tuple
    zstar_amplitude_rel: float
    zstar_center: tuple
    zstar_width: float
    noise_kind: str
    noise_amplitude: float
    noise_modes: int
    noise_seed: int
    noise_flat_points: tuple
    noise_sigma: Optional[float]
    noise_drive: str
    init_mass_sq_ratio: float
    init_width: float
    t0: float
    t1: float
    dt0: float
    g_max: float
    width_factor: float
    cadence: int
    out_dir: str
    snapshots: str
    ensemble_size: int
    ensemble_workers: Optional[int]

    @property
    def grid(self) -> GridSpec:
        return make_grid(self.d, self.extent, self.points)

    def noise_spec(self) -> Optional[ProfileSpec]:
        if self.noise_kind == "none":
            return None
        return ProfileSpec(
            kind=self.noise_kind,
            amplitude=self.noise_amplitude,
            n_modes=self.noise_modes,
            flat_points=self.noise_flat_points,
            sigma=self.noise_sigma,
        )


def build_scenario(cfg: dict) -> ScenarioConfig:
    cfg = dict(cfg)
    kind = _get(cfg, "scenario.kind", str, required=True)
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"scenario.kind must be one of {SCENARIO_KINDS}, got {kind!r}")
    d = _get(cfg, "grid.d", int, default=1)
    if d not in (1, 2):
        raise ConfigError("grid.d must be 1 or 2")
    extent = _get(cfg, "grid.L", float, default=40.0)
    points = _get(cfg, "grid.N", int, default=1024)
    p = _get(cfg, "physics.p", float, default=critical_exponent(d))

    bubbles = _get(cfg, "blowup.bubbles", lambda s: _parse_bubbles(s, d), default=())
    blowup_time = _get(cfg, "blowup.T", float, default=1.0)
    solitons = _get(cfg, "soliton.waves", lambda s: _parse_solitons(s, d), default=())

    sc = ScenarioConfig(
        kind=kind,
        d=d,
        extent=extent,
        points=points,
        p=p,
        blowup_time=blowup_time,
        bubbles=bubbles,
        solitons=solitons,
        zstar_amplitude_rel=_get(cfg, "zstar.amplitude_rel", float, default=0.05),
        zstar_center=_get(
            cfg, "zstar.center", lambda s: _parse_point(s, d), default=(10.0,) * d
        ),
        zstar_width=_get(cfg, "zstar.width", float, default=1.0),
        noise_kind=_get(cfg, "noise.kind", str, default="none"),
        noise_amplitude=_get(cfg, "noise.amplitude", float, default=0.0),
        noise_modes=_get(cfg, "noise.modes", int, default=1),
        noise_seed=_get(cfg, "noise.seed", int, default=0),
        noise_flat_points=_get(
            cfg,
            "noise.flat_points",
            lambda s: tuple(_parse_point(c, d) for c in s.split(";")),
            default=(),
        ),
        noise_sigma=_get(cfg, "noise.sigma", float, default=None),
        noise_drive=_get(cfg, "noise.drive", str, default="brownian"),
        init_mass_sq_ratio=_get(cfg, "init.mass_sq_ratio", float, default=1.2),
        init_width=_get(cfg, "init.width", float, default=1.0),
        t0=_get(cfg, "evolve.t0", float, default=0.0),
        t1=_get(cfg, "evolve.t1", float, required=True),
        dt0=_get(cfg, "evolve.dt0", float, default=1e-3),
        g_max=_get(cfg, "evolve.gmax", float, default=1e5),
        width_factor=_get(cfg, "evolve.width_factor", float, default=4.0),
        cadence=_get(cfg, "evolve.cadence", int, default=100),
        out_dir=_get(cfg, "output.dir", str, default=f"runs/{kind}"),
        snapshots=_get(cfg, "output.snapshots", str, default="final"),
        ensemble_size=_get(cfg, "ensemble.size", int, default=1),
        ensemble_workers=_get(cfg, "ensemble.workers", int, default=None),
    )
    if cfg:
        raise ConfigError(f"unknown config keys: {sorted(cfg)}")
    _validate_scenario(sc)
    return sc


def _validate_scenario(sc: ScenarioConfig) -> None:
    problems = []
    if sc.noise_kind not in ("none", "constant", "schwartz", "flat"):
        problems.append(f"noise.kind {sc.noise_kind!r} unknown")
    if sc.noise_drive not in ("brownian", "sin"):
        problems.append(f"noise.drive {sc.noise_drive!r} unknown")
    if sc.snapshots not in ("none", "final", "all"):
        problems.append(f"output.snapshots {sc.snapshots!r} unknown")
    if sc.ensemble_size < 1:
        problems.append("ensemble.size must be >= 1")
    if sc.kind in ("critical_blowup", "multi_bubble", "bourgain_wang") and not sc.bubbles:
        problems.append(f"{sc.kind} requires blowup.bubbles")
    if sc.kind == "multi_bubble" and len(sc.bubbles) < 2:
        problems.append("multi_bubble requires at least two bubbles")
    if sc.kind in ("multi_soliton", "nonpure_soliton", "snls_gauge_check") and not sc.solitons:
        problems.append(f"{sc.kind} requires soliton.waves")
    if sc.kind == "bourgain_wang":
        if sc.noise_kind != "none":
            problems.append("bourgain_wang supports deterministic runs only")
        if sc.zstar_amplitude_rel > 0.1:
            problems.append("zstar.amplitude_rel must be <= 0.1 (smallness)")
    if sc.kind == "nonpure_soliton" and sc.t0 <= 0:
        problems.append("nonpure_soliton requires evolve.t0 > 0")
    if abs(sc.p - critical_exponent(sc.d)) > 1e-12:
        if sc.d != 1 or not (1.0 < sc.p < critical_exponent(1)):
            problems.append("subcritical exponents are supported for d=1 only")
        if sc.kind in ("critical_blowup", "multi_bubble", "bourgain_wang", "loglog_supercritical"):
            problems.append(f"{sc.kind} requires the critical exponent")
    if problems:
        raise ConfigError("; ".join(problems))


def load_scenario(path) -> ScenarioConfig:
    return build_scenario(parse_config_text(Path(path).read_text()))


# ---------------------------------------------------------------------------
# initial data per scenario kind


@dataclass
class PreparedRun:
    initial: ComplexField
    blowup: Optional[BlowupParams]
    solitons: Optional[SolitonParams]
    z0: Optional[ComplexField]  # regular-profile value at t0 (bourgain_wang)
    ztilde_ref: Optional[dict]  # nonpure_soliton bookkeeping


def _gaussian_with_mass(grid: GridSpec, width: float, mass_sq: float) -> ComplexField:
    r2 = grid.radius_squared()
    vals = np.exp(-r2 / width**2).astype(np.complex128)
    f = ComplexField(grid, vals)
    return ComplexField(grid, vals * math.sqrt(mass_sq / l2_norm_sq(f)))


def _zstar_field(sc: ScenarioConfig, grid: GridSpec, profile) -> ComplexField:
    from .grid import norm_suite

    r2 = grid.radius_squared(sc.zstar_center)
    vals = np.exp(-r2 / sc.zstar_width**2).astype(np.complex128)
    f = ComplexField(grid, vals)
    q = profile.sample(grid)
    q_h1 = norm_suite(q).h1
    scale = sc.zstar_amplitude_rel * q_h1 / norm_suite(f).h1
    return ComplexField(grid, vals * scale)


def prepare_run(sc: ScenarioConfig) -> PreparedRun:
    grid = sc.grid
    profile = ground_profile(sc.d, sc.p if sc.d == 1 else None)
    blowup = None
    solitons = None
    z0 = None
    ztilde = None
    if sc.kind in ("critical_blowup", "multi_bubble"):
        blowup = BlowupParams(blowup_time=sc.blowup_time, bubbles=sc.bubbles)
        initial = pseudo_conformal_blowup(blowup, sc.t0, grid, profile)
    elif sc.kind == "bourgain_wang":
        blowup = BlowupParams(blowup_time=sc.blowup_time, bubbles=sc.bubbles)
        bubble_part = pseudo_conformal_blowup(blowup, sc.t0, grid, profile)
        zstar = _zstar_field(sc, grid, profile)
        z0 = backward_solve(zstar, sc.blowup_time, sc.t0, sc.p, dt0=sc.dt0)
        initial = ComplexField(grid, bubble_part.values + z0.values)
    elif sc.kind in ("multi_soliton", "snls_gauge_check"):
        solitons = SolitonParams(solitons=sc.solitons, p=sc.p)
        initial = solitary_wave(solitons, sc.t0, grid, profile)
    elif sc.kind == "nonpure_soliton":
        solitons = SolitonParams(solitons=sc.solitons, p=sc.p)
        wave_part = solitary_wave(solitons, sc.t0, grid, profile)
        zstar = _zstar_field(sc, grid, profile)
        # regular profile in the blow-up frame lives on s in [0, 1); T = 1
        s0 = 1.0 - 1.0 / sc.t0
        z_at_s0 = backward_solve(zstar, 1.0, s0, sc.p, dt0=sc.dt0)
        ztilde0, _ = pseudo_conformal_map(z_at_s0, sc.t0, 1.0, direction="inverse")
        initial = ComplexField(grid, wave_part.values + ztilde0.values)
        ztilde = dict(z_state=z_at_s0, z_time=s0)
    elif sc.kind == "loglog_supercritical":
        profile_mass = profile.mass_sq
        initial = _gaussian_with_mass(
            grid, sc.init_width, sc.init_mass_sq_ratio * profile_mass
        )
    elif sc.kind == "custom":
        initial = _gaussian_with_mass(
            grid, sc.init_width, sc.init_mass_sq_ratio * profile.mass_sq
        )
    else:  # pragma: no cover
        raise ConfigError(f"unhandled scenario kind {sc.kind}")
    return PreparedRun(
        initial=initial, blowup=blowup, solitons=solitons, z0=z0, ztilde_ref=ztilde
    )


def evolve_config_for(sc: ScenarioConfig, initial: ComplexField, seed: int, force_dyadic=False) -> EvolveConfig:
    profile = ground_profile(sc.d, sc.p if sc.d == 1 else None)
    spec = sc.noise_spec()
    noise = None
    if spec is not None:
        noise = NoiseSetup(profiles=spec, seed=seed, drive=sc.noise_drive)
    return EvolveConfig(
        grid=sc.grid,
        p=sc.p,
        v0=initial,
        t0=sc.t0,
        t1=sc.t1,
        dt0=sc.dt0,
        g_max=sc.g_max,
        width_factor=sc.width_factor,
        grad_ref=math.sqrt(profile.grad_sq),
        cadence=sc.cadence,
        noise=noise,
        force_dyadic=force_dyadic,
    )


# ---------------------------------------------------------------------------
# artifact writing


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_diagnostics_csv(path, traj: Trajectory) -> None:
    d = traj.config.grid.d
    center_cols = ["center_x"] if d == 1 else ["center_x", "center_y"]
    header = ["t", "mass", "hamiltonian", "grad_norm", "lambda"] + center_cols + [
        "loc_mass",
        "residual",
    ]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(traj.times.size):
            row = [
                traj.times[i],
                traj.mass[i],
                traj.hamiltonian[i],
                traj.grad_norm[i],
                traj.lam[i],
                *traj.center[i],
                traj.loc_mass[i],
                traj.residual[i],
            ]
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_path_csv(path, traj: Trajectory) -> None:
    n_modes = traj.noise_values.shape[1]
    header = ["t"] + [f"B_{l + 1}" for l in range(n_modes)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(traj.times.size):
            fh.write(
                ",".join(_fmt(x) for x in (traj.times[i], *traj.noise_values[i])) + "\n"
            )


def write_hevo_csv(path, traj: Trajectory) -> None:
    n = traj.marty.shape[1]
    header = (
        ["t", "hamiltonian"]
        + [f"smear_{l + 1}" for l in range(n)]
        + [f"marty_{l + 1}" for l in range(n)]
        + [f"B_{l + 1}" for l in range(n)]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(traj.times.size):
            row = (
                traj.times[i],
                traj.hamiltonian[i],
                *traj.smear[i],
                *traj.marty[i],
                *traj.noise_values[i],
            )
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_residual_csv(path, times, rows: dict) -> None:
    keys = list(rows)
    with open(path, "w") as fh:
        fh.write(",".join(["t"] + keys) + "\n")
        for i, t in enumerate(times):
            fh.write(",".join(_fmt(x) for x in [t] + [rows[k][i] for k in keys]) + "\n")


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# the diagnostic battery


def _json_safe(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def run_battery(sc: ScenarioConfig, prep: PreparedRun, traj: Trajectory, outdir: Path) -> dict:
    profile = ground_profile(sc.d, sc.p if sc.d == 1 else None)
    q_mass = math.sqrt(profile.mass_sq)
    summary: dict = {
        "kind": sc.kind,
        "stop_reason": traj.stop_reason,
        "n_steps": traj.n_steps,
        "t_final": traj.final_time,
        "mass_drift": float(traj.residual.max()),
        "T_est": None,
        "alpha": None,
        "loglog_score": None,
        "banica_ok": True,
        "banica_applicable": False,
        "h_evo_max_residual": None,
        "concentration": None,
    }

    # Banica sweep whenever the mass precondition holds
    if traj.mass.max() <= q_mass + 1e-8:
        sweep = diag.banica_sweep(traj, q_mass)
        summary["banica_ok"] = bool(sweep.satisfied)
        summary["banica_applicable"] = True
        summary["banica_max_violation"] = sweep.max_violation

    # Hamiltonian evolution residual
    t_r, r = diag.hamiltonian_evolution_residual(traj)
    summary["h_evo_max_residual"] = float(np.abs(r).max())
    if traj.marty is not None:
        write_residual_csv(outdir / "hevo_residual.csv", t_r, {"residual": r})

    # blow-up rate fits when the run actually blew up
    grew = traj.grad_norm.max() >= 10.0 * traj.grad_norm.min()
    if grew:
        mask = traj.grad_norm >= 1.2 * traj.grad_norm[0]
        try:
            fit = diag.blowup_rate_fit(traj.times[mask], traj.grad_norm[mask])
            summary["T_est"] = fit.t_est
            summary["alpha"] = fit.alpha
            summary["loglog_score"] = fit.loglog_score
            summary["rate_class"] = diag.classify_rate(fit)
        except diag.DiagnosticsError as exc:
            summary["rate_fit_error"] = str(exc)
        try:
            summary["T_extrapolated"] = diag.extrapolate_blowup_time(
                traj.times, traj.grad_norm
            )
        except diag.DiagnosticsError as exc:
            summary["T_extrapolated_error"] = str(exc)

    # modulation + concentration at the final state
    try:
        mf = diag.modulation_fit(traj.final_state, profile)
        summary["modulation"] = {
            "scale": mf.scale,
            "center": [float(c) for c in mf.center],
            "phase": mf.phase,
            "resid_l2": mf.resid_l2,
            "resid_h1": mf.resid_h1,
            "ambiguous_center": bool(mf.ambiguous_center),
        }
        conc = diag.localized_mass(traj.final_state, mf.center, 1.0)
        summary["concentration"] = {
            "R": 1.0,
            "fraction": conc / profile.mass_sq,
            "mass_sq": conc,
        }
        if grew and summary.get("T_est"):
            times = np.array([t for t, _ in traj.snapshots])
            vir = np.array(
                [diag.virial(s, mf.center, None) for _, s in traj.snapshots]
            )
            write_residual_csv(outdir / "virial.csv", times, {"virial": vir})
            try:
                summary["virial_beta"] = diag.fit_time_power(
                    times[:-1], vir[:-1], summary["T_est"]
                )
            except diag.DiagnosticsError as exc:
                summary["virial_beta_error"] = str(exc)
            bound = traj.grad_norm**2 * (summary["T_est"] - traj.times) ** 2
            summary["rate_bound_min"] = float(bound.min())
    except diag.DiagnosticsError as exc:
        summary["modulation_error"] = str(exc)

    # profile residual series against the exact families
    if sc.kind in ("multi_bubble", "critical_blowup", "bourgain_wang") and prep.blowup:
        _blowup_residual_series(sc, prep, traj, outdir, summary, profile)
    if sc.kind in ("multi_soliton", "nonpure_soliton") and prep.solitons:
        _soliton_residual_series(sc, prep, traj, outdir, summary, profile)

    for key, val in list(summary.items()):
        if isinstance(val, dict):
            summary[key] = {k: _json_safe(v) for k, v in val.items()}
        else:
            summary[key] = _json_safe(val)
    return summary


def _blowup_residual_series(sc, prep, traj, outdir, summary, profile):
    grid = sc.grid
    centers = [b.position for b in prep.blowup.bubbles]
    times, l2s, h1s = [], [], []
    per_bubble_h1 = []
    z_state = prep.z0
    z_time = sc.t0
    for t, snap in traj.snapshots:
        try:
            ref = pseudo_conformal_blowup(prep.blowup, t, grid, profile)
        except Exception:
            break
        z_field = None
        if z_state is not None:
            z_field, z_time = _advance(z_state, z_time, t, sc)
            z_state = z_field
        res = diag.profile_residuals(snap, ref, centers, z=z_field)
        times.append(t)
        l2s.append(res.l2)
        h1s.append(res.h1)
        per_bubble_h1.append([b[1] for b in res.per_bubble])
    if times:
        rows = {"l2": l2s, "h1": h1s}
        for kk in range(len(centers)):
            rows[f"h1_bubble_{kk}"] = [pb[kk] for pb in per_bubble_h1]
        write_residual_csv(outdir / "profile_residuals.csv", times, rows)
        summary["profile_residual_max_l2"] = float(np.max(l2s))
        summary["profile_residual_max_h1"] = float(np.max(h1s))
        summary["profile_residual_max_h1_per_bubble"] = float(np.max(per_bubble_h1))


def _advance(state: ComplexField, t_from: float, t_to: float, sc) -> tuple:
    """March the regular profile forward to the comparison time."""
    from .evolution import _step_strang_values

    values = state.values
    t = t_from
    while t < t_to - 1e-12:
        dt = min(sc.dt0, t_to - t)
        values = _step_strang_values(state.grid, values, dt, sc.p)
        t += dt
    return ComplexField(state.grid, values), t


def _soliton_residual_series(sc, prep, traj, outdir, summary, profile):
    grid = sc.grid
    times, l2s, h1s = [], [], []
    z_state = prep.ztilde_ref["z_state"] if prep.ztilde_ref else None
    z_time = prep.ztilde_ref["z_time"] if prep.ztilde_ref else None
    for t, snap in traj.snapshots:
        try:
            ref = solitary_wave(prep.solitons, t, grid, profile)
        except Exception:
            break
        z_field = None
        if z_state is not None:
            s_target = 1.0 - 1.0 / t
            z_state, z_time = _advance(z_state, z_time, s_target, sc)
            z_field, _ = pseudo_conformal_map(z_state, t, 1.0, direction="inverse")
        centers = [
            np.asarray(s.position0, dtype=float) + np.asarray(s.velocity, dtype=float) * t
            for s in prep.solitons.solitons
        ]
        res = diag.profile_residuals(snap, ref, centers, z=z_field)
        times.append(t)
        l2s.append(res.l2)
        h1s.append(res.h1)
    if times:
        write_residual_csv(outdir / "profile_residuals.csv", times, {"l2": l2s, "h1": h1s})
        summary["profile_residual_max_l2"] = float(np.max(l2s))
        summary["profile_residual_max_h1"] = float(np.max(h1s))


# ---------------------------------------------------------------------------
# runner


def _determinism_check(cfg: EvolveConfig) -> bool:
    probe = replace(cfg, max_steps=20, keep_snapshots=False)
    a = integrate(probe)
    b = integrate(probe)
    return (
        np.array_equal(a.times, b.times)
        and np.array_equal(a.mass, b.mass)
        and np.array_equal(a.grad_norm, b.grad_norm)
        and np.array_equal(a.hamiltonian, b.hamiltonian)
    )


def resolve_outdir(sc: ScenarioConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    out = Path(sc.out_dir)
    return out if out.is_absolute() else Path(root) / out


def run_trajectory(sc: ScenarioConfig, prep: PreparedRun, seed: int) -> Trajectory:
    cfg = evolve_config_for(sc, prep.initial, seed)
    return integrate(cfg)


def write_trajectory_artifacts(sc: ScenarioConfig, traj: Trajectory, tdir: Path) -> None:
    tdir.mkdir(parents=True, exist_ok=True)
    write_diagnostics_csv(tdir / "diagnostics.csv", traj)
    if traj.noise_values is not None:
        write_path_csv(tdir / "path.csv", traj)
        write_hevo_csv(tdir / "hevo.csv", traj)
    if sc.snapshots != "none" and traj.snapshots:
        t_fin, snap = traj.snapshots[-1]
        write_snapshot(tdir / "snapshot_final.txt", snap, t_fin)
        if sc.snapshots == "all":
            for i, (t, s) in enumerate(traj.snapshots):
                write_snapshot(tdir / f"snapshot_{i:06d}.txt", s, t)


def run_scenario(sc: ScenarioConfig, outdir: Optional[Path] = None) -> tuple:
    """Execute one scenario; returns (summary, exit_code)."""
    outdir = Path(outdir) if outdir is not None else resolve_outdir(sc)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(render_config(sc))

    prep = prepare_run(sc)
    traj = run_trajectory(sc, prep, sc.noise_seed)
    tdir = outdir / "traj_000"
    write_trajectory_artifacts(sc, traj, tdir)

    # box adequacy: initial mass within radius L/2 - 2 of the box center
    total = l2_norm_sq(prep.initial)
    inner = diag.localized_mass(prep.initial, (0.0,) * sc.d, 0.5 * sc.extent - 2.0)
    boundary_fraction = max(0.0, (total - inner) / total)

    summary = run_battery(sc, prep, traj, outdir)
    summary["boundary_mass_fraction"] = boundary_fraction

    if sc.kind == "snls_gauge_check":
        _gauge_check(sc, prep, traj, summary)

    summary["determinism_ok"] = _determinism_check(
        evolve_config_for(sc, prep.initial, sc.noise_seed)
    )

    failed = traj.stop_reason == "nonfinite"
    mass_tol = 1e-10 if sc.noise_spec() is not None else 1e-12
    hard_ok = (
        summary["mass_drift"] < mass_tol
        and summary["banica_ok"]
        and summary["determinism_ok"]
        and not failed
    )
    summary["mass_tolerance"] = mass_tol
    summary["hard_checks_ok"] = bool(hard_ok)
    exit_code = 0 if hard_ok else 3
    summary["exit_code"] = exit_code
    write_summary_json(outdir / "summary.json", summary)
    return summary, exit_code


def _gauge_check(sc: ScenarioConfig, prep: PreparedRun, noisy: Trajectory, summary: dict) -> None:
    """Constant-profile runs must match the deterministic twin pointwise."""
    det_cfg = evolve_config_for(sc, prep.initial, sc.noise_seed, force_dyadic=True)
    det_cfg = replace(det_cfg, noise=None)
    det = integrate(det_cfg)
    n = min(len(noisy.snapshots), len(det.snapshots))
    worst = 0.0
    for (t1, s1), (t2, s2) in zip(noisy.snapshots[:n], det.snapshots[:n]):
        worst = max(worst, float(np.abs(np.abs(s1.values) - np.abs(s2.values)).max()))
    summary["gauge_max_modulus_diff"] = worst
    summary["gauge_same_stop_step"] = bool(
        noisy.n_steps == det.n_steps and noisy.stop_reason == det.stop_reason
    )


def render_config(sc: ScenarioConfig) -> str:
    lines = [
        f"scenario.kind = {sc.kind}",
        f"grid.d = {sc.d}",
        f"grid.L = {_fmt(sc.extent)}",
        f"grid.N = {sc.points}",
        f"physics.p = {_fmt(sc.p)}",
        f"evolve.t0 = {_fmt(sc.t0)}",
        f"evolve.t1 = {_fmt(sc.t1)}",
        f"evolve.dt0 = {_fmt(sc.dt0)}",
        f"evolve.gmax = {_fmt(sc.g_max)}",
        f"evolve.width_factor = {_fmt(sc.width_factor)}",
        f"evolve.cadence = {sc.cadence}",
        f"noise.kind = {sc.noise_kind}",
        f"output.snapshots = {sc.snapshots}",
        f"ensemble.size = {sc.ensemble_size}",
    ]
    if sc.bubbles:
        chunk = ";".join(
            ":".join([",".join(_fmt(c) for c in b.position), _fmt(b.width), _fmt(b.phase)])
            for b in sc.bubbles
        )
        lines.append(f"blowup.T = {_fmt(sc.blowup_time)}")
        lines.append(f"blowup.bubbles = {chunk}")
    if sc.solitons:
        chunk = ";".join(
            ":".join(
                [
                    ",".join(_fmt(c) for c in s.velocity),
                    _fmt(s.width),
                    _fmt(s.phase),
                    ",".join(_fmt(c) for c in s.position0),
                ]
            )
            for s in sc.solitons
        )
        lines.append(f"soliton.waves = {chunk}")
    if sc.noise_kind != "none":
        lines.append(f"noise.amplitude = {_fmt(sc.noise_amplitude)}")
        lines.append(f"noise.modes = {sc.noise_modes}")
        lines.append(f"noise.seed = {sc.noise_seed}")
        lines.append(f"noise.drive = {sc.noise_drive}")
        if sc.noise_sigma is not None:
            lines.append(f"noise.sigma = {_fmt(sc.noise_sigma)}")
        if sc.noise_flat_points:
            chunk = ";".join(",".join(_fmt(c) for c in pt) for pt in sc.noise_flat_points)
            lines.append(f"noise.flat_points = {chunk}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ensembles


def _ensemble_worker(args):
    sc, index = args
    prep = prepare_run(sc)
    traj = run_trajectory(sc, prep, sc.noise_seed + index)
    try:
        t_est = diag.extrapolate_blowup_time(traj.times, traj.grad_norm)
    except diag.DiagnosticsError:
        t_est = float("nan")
    return {
        "index": index,
        "seed": sc.noise_seed + index,
        "stop_time": float(traj.final_time),
        "stop_reason": traj.stop_reason,
        "n_steps": traj.n_steps,
        "t_est": float(t_est),
        "mass_drift": float(traj.residual.max()),
    }


def ensemble_summary(results: list) -> dict:
    """Per-seed stop times plus quartiles of the estimated blow-up time."""
    if len(results) < 2:
        raise ConfigError("ensemble summary needs at least two trajectories")
    ordered = sorted(results, key=lambda r: r["index"])
    t_est = np.array([r["t_est"] for r in ordered])
    finite = t_est[np.isfinite(t_est)]
    quartiles = (
        [float(q) for q in np.percentile(finite, [25, 50, 75])] if finite.size else None
    )
    return {
        "size": len(ordered),
        "stop_times": [r["stop_time"] for r in ordered],
        "seeds": [r["seed"] for r in ordered],
        "t_est": [r["t_est"] for r in ordered],
        "t_est_quartiles": quartiles,
        "max_mass_drift": max(r["mass_drift"] for r in ordered),
    }


def run_ensemble(sc: ScenarioConfig, outdir: Optional[Path] = None) -> tuple:
    outdir = Path(outdir) if outdir is not None else resolve_outdir(sc)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(render_config(sc))
    jobs = [(sc, i) for i in range(sc.ensemble_size)]
    workers = sc.ensemble_workers or os.cpu_count() or 1
    if workers > 1 and sc.ensemble_size > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ensemble_worker, jobs))
    else:
        results = [_ensemble_worker(j) for j in jobs]
    summary = ensemble_summary(results)
    with open(outdir / "ensemble.csv", "w") as fh:
        fh.write("index,seed,stop_time,stop_reason,n_steps,t_est,mass_drift\n")
        for r in sorted(results, key=lambda x: x["index"]):
            fh.write(
                f"{r['index']},{r['seed']},{_fmt(r['stop_time'])},{r['stop_reason']},"
                f"{r['n_steps']},{_fmt(r['t_est'])},{_fmt(r['mass_drift'])}\n"
            )
    write_summary_json(outdir / "ensemble_summary.json", summary)
    return summary, 0
