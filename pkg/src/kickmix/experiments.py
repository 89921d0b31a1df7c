"""Experiment runners behind the command line: build objects from a config, run, persist.

Every runner writes its numeric outputs into ``out_dir`` and returns a dict
of per-criterion pass flags. The manifest adds the config hash, code version,
timestamps and byte lengths of all files. Numeric files never contain
timestamps or thread counts, so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from kickmix import __version__
from kickmix.config import (
    AlmostZonalForce,
    ExperimentConfig,
    TableForce,
    ZeroForce,
    ZonalForce,
    g_functions,
)
from kickmix.coupling import (
    CouplingStrategy,
    KickedProcess,
    advance_ensemble,
    coupling_contraction,
    random_ball,
    verify_condition_1,
    verify_condition_2,
    verify_squeezing,
)
from kickmix.dynamics import Solver, SolverConfig, absorbing_radius, record_trajectory
from kickmix.errors import ConfigurationError
from kickmix.estimates import verify_energy_estimates, verify_exponential_stability
from kickmix.forcing import (
    ForcingModel,
    make_almost_zonal_force,
    make_zonal_force,
    periodic_table_force,
    zero_force,
)
from kickmix.harmonics import Truncation, random_coeffs
from kickmix.kicks import BigKickParams, KickLaw, build_big_kick_law, law_with_amplitude
from kickmix.metrics import mixing_experiment
from kickmix.rng import substream
from kickmix.snapshot import Snapshot, save
from kickmix.sphere_ops import fit_trilinear_constant, identity_suite, norm_h, norm_v

OUTPUT_ENV = "KICKMIX_OUTPUT_DIR"
POINCARE_STATES = 10_000
SQUEEZE_FACTOR = 3.0


def _num(x) -> str:
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _num(v) if isinstance(v, float) else v for v in row])
    return path


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n")
    return path


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else repr(f)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------- builders


def trilinear_constant(trunc: Truncation, seed: int) -> float:
    return fit_trilinear_constant(trunc, substream(seed, 5))


def build_solver_config(cfg: ExperimentConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(s.nu, s.omega, cfg.truncation.n_max, s.dt, s.integrator)


def build_force(cfg: ExperimentConfig, k_trilinear: Optional[float] = None) -> ForcingModel:
    trunc = Truncation(cfg.truncation.n_max)
    spec = cfg.force
    nu = cfg.solver.nu
    lam1 = float(trunc.basis_eigenvalues[0])
    if isinstance(spec, ZeroForce):
        return zero_force(trunc)
    if isinstance(spec, (ZonalForce, AlmostZonalForce)):
        g, gp = g_functions(spec.g)
        base = make_zonal_force(g, gp, nu, trunc)
        if isinstance(spec, ZonalForce):
            return base
        k = k_trilinear if k_trilinear is not None else trilinear_constant(trunc, cfg.seed)
        delta = spec.delta if spec.delta is not None else 0.1 * nu**2 * math.sqrt(lam1) / k
        pattern = random_coeffs(trunc, substream(spec.pattern_seed, 6), slope=1.0)
        return make_almost_zonal_force(base, pattern, delta)
    assert isinstance(spec, TableForce)
    if spec.amplitude is not None:
        amp = spec.amplitude
    else:
        k = k_trilinear if k_trilinear is not None else trilinear_constant(trunc, cfg.seed)
        amp = spec.small_force_fraction * nu**2 * math.sqrt(lam1) / k
    pattern = random_coeffs(trunc, substream(spec.pattern_seed, 6), slope=1.0)
    return periodic_table_force(pattern, amp, spec.period, spec.n_table, spec.horizon)


def build_law(cfg: ExperimentConfig, force: ForcingModel, solver_cfg: SolverConfig) -> KickLaw:
    trunc = Truncation(cfg.truncation.n_max)
    k = cfg.kicks
    if k.big_kick is not None:
        d = absorbing_radius(force, solver_cfg).radius_h
        return build_big_kick_law(BigKickParams(int(k.big_kick["M"]), int(k.big_kick["N"]), d), k.density, trunc, k.b_min)
    if k.b is not None:
        return KickLaw(np.array(k.b, dtype=float), k.density, trunc)
    return law_with_amplitude(k.amplitude, k.n_kick, k.density, trunc)


def build_strategy(cfg: ExperimentConfig) -> CouplingStrategy:
    c = cfg.coupling
    return CouplingStrategy(c.kind, c.n_couple, c.d0, c.l_d0, c.waiting)


def build_process(cfg: ExperimentConfig, k_trilinear: Optional[float] = None) -> KickedProcess:
    scfg = build_solver_config(cfg)
    force = build_force(cfg, k_trilinear)
    return KickedProcess(Solver(scfg, force), build_law(cfg, force, scfg))


# ---------------------------------------------------------------- runners


def run_verify_operators(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    trunc = Truncation(cfg.truncation.n_max)
    res = identity_suite(trunc, substream(cfg.seed, 7), cfg.params.trials)
    rng = substream(cfg.seed, 8)
    states = random_coeffs(trunc, rng, (POINCARE_STATES,), slope=3.0)
    lam1 = float(np.min(trunc.eigenvalues[trunc.mask]))
    ratio = norm_v(states) ** 2 / norm_h(states) ** 2
    deg1 = trunc.zeros((cfg.params.trials,))
    deg1[:, 1, :2] = random_coeffs(trunc, rng, (cfg.params.trials,))[:, 1, :2]
    eq = np.abs(norm_v(deg1) ** 2 / norm_h(deg1) ** 2 - lam1) / lam1
    tol = cfg.params.tolerance
    flags = {name: value <= tol for name, value in res.items()}
    flags["poincare"] = bool(np.all(ratio >= lam1 * (1 - 1e-14)))
    flags["poincare_equality_degree_1"] = bool(np.max(eq) <= 1e-12)
    write_json(
        out / "operators.json",
        {
            "residuals": res,
            "tolerance": tol,
            "lambda_1": lam1,
            "poincare_min_ratio": float(np.min(ratio)),
            "poincare_degree_1_max_rel_gap": float(np.max(eq)),
            "n_max": trunc.n_max,
            "fields": cfg.params.trials,
        },
    )
    return flags


def run_verify_estimates(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    trunc = Truncation(cfg.truncation.n_max)
    k = trilinear_constant(trunc, cfg.seed)
    scfg = build_solver_config(cfg)
    force = build_force(cfg, k)
    solver = Solver(scfg, force)
    p = cfg.params
    rng = substream(cfg.seed, 9)
    u0 = random_ball(trunc, rng, min(p.trials, 20), p.radius)
    v0 = random_ball(trunc, rng, u0.shape[0], p.radius)
    tu = record_trajectory(solver, u0, 0.0, p.t_end, p.sample_every, p.n_low)
    tv = record_trajectory(solver, v0, 0.0, p.t_end, p.sample_every, p.n_low)
    energy = verify_energy_estimates(tu, scfg.nu, force, tv, k_trilinear=k)
    stability = verify_exponential_stability(
        solver, min(p.trials, 20), p.radius, p.t_end, p.sample_every, cfg.seed
    )
    write_json(
        out / "estimates.json",
        {
            "trilinear_constant": k,
            "small_force_threshold": scfg.nu**2 * math.sqrt(2.0) / k,
            "force_sup_norm_H": force.sup_norm_h,
            "absorbing_radius": absorbing_radius(force, scfg).radius_h,
            "energy": energy.to_json(),
            "stability": stability.to_json(),
        },
    )
    mean_norm = stability.norms.mean(axis=1) if stability.norms.size else np.zeros_like(stability.times)
    write_csv(out / "decay.csv", ["t", "norm_H"], zip(stability.times.tolist(), mean_norm.tolist()))
    flags = {f"energy:{name}": c.holds for name, c in energy.checks.items()}
    flags["stability"] = stability.stable
    return flags


def run_deterministic(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    trunc = Truncation(cfg.truncation.n_max)
    scfg = build_solver_config(cfg)
    force = build_force(cfg)
    solver = Solver(scfg, force)
    p = cfg.params
    u0 = random_ball(trunc, substream(cfg.seed, 10), 1, p.radius)[0]
    traj = record_trajectory(solver, u0, 0.0, p.t_end, p.sample_every, p.n_low)
    refs = [""] * len(traj.times)
    if p.snapshot_stride:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for i in range(0, len(traj.times), p.snapshot_stride):
            name = f"snapshots/state_{i:06d}.snap"
            save(Snapshot(traj.states[i], scfg.nu, scfg.omega, float(traj.times[i])), out / name)
            refs[i] = name
    traj.write_csv(out / "trajectory.csv", refs)
    energy = verify_energy_estimates(traj, scfg.nu, force)
    write_json(out / "deterministic.json", {"energy": energy.to_json(), "final_norm_H": float(traj.norm_h[-1])})
    flags = {f"energy:{name}": c.holds for name, c in energy.checks.items()}
    flags["finite"] = bool(np.all(np.isfinite(traj.states)))
    return flags


def run_kicked(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    trunc = Truncation(cfg.truncation.n_max)
    process = build_process(cfg)
    p = cfg.params
    psi = random_ball(trunc, substream(cfg.seed, 11), p.n_chains, p.radius)
    rows = [(0, *_ensemble_stats(psi))]
    b0 = process.law.b0
    bound_ok = True
    for k in range(p.k_max):
        flowed = process.flow(psi, k)
        psi = advance_ensemble(process, psi, k, cfg.seed, threads=threads)
        bound_ok &= bool(np.all(norm_h(psi - flowed) <= math.sqrt(b0) * (1 + 1e-12)))
        rows.append((k + 1, *_ensemble_stats(psi)))
        if p.snapshot_stride and (k + 1) % p.snapshot_stride == 0:
            (out / "snapshots").mkdir(exist_ok=True)
            save(Snapshot(psi[0], cfg.solver.nu, cfg.solver.omega, float(k + 1)), out / f"snapshots/chain0_{k + 1:06d}.snap")
    write_csv(out / "kicked.csv", ["k", "mean_norm_H", "max_norm_H", "mean_norm_V"], rows)
    return {"kick_norm_bound": bound_ok, "finite": bool(np.all(np.isfinite(psi)))}


def _ensemble_stats(psi: np.ndarray) -> tuple[float, float, float]:
    h = norm_h(psi)
    return float(h.mean()), float(h.max()), float(norm_v(psi).mean())


def run_verify_conditions(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    process = build_process(cfg)
    strategy = build_strategy(cfg)
    p = cfg.params
    d0 = strategy.d0
    c1 = verify_condition_1(process, p.d, p.radius, p.c1_trials, p.l_grid, cfg.seed, threads=threads)
    maximal = strategy if strategy.kind == "maximal_low_mode" else CouplingStrategy(
        "maximal_low_mode", cfg.coupling.n_couple, d0, waiting=cfg.coupling.waiting
    )
    d_grid = p.d_grid or [d0 / 4, d0 / 2, d0]
    c2 = verify_condition_2(process, maximal, d_grid, p.radius, p.condition_trials, cfg.seed, threads)
    sq = verify_squeezing(process, [n for n in p.n_grid if n <= process.truncation.dimension], p.radius, p.squeezing_trials, cfg.seed)
    contraction = coupling_contraction(process, maximal, p.radius, p.condition_trials, p.contraction_k, cfg.seed, threads=threads)
    write_json(
        out / "conditions.json",
        {
            "condition_1": c1.to_json(),
            "condition_2": c2.to_json(),
            "squeezing": sq.to_json(),
            "contraction": contraction,
        },
    )
    write_csv(
        out / "condition_2.csv",
        ["d", "p_hat", "C_hat", "C_lo", "C_hi"],
        [(d, ph, ch, lo, hi) for d, ph, ch, (lo, hi) in zip(c2.d_grid, c2.p_hat, c2.c_hat, c2.c_ci)],
    )
    lam = process.truncation.basis_eigenvalues
    lo_n, hi_n = sq.n_grid[0], sq.n_grid[-1]
    flags = {
        "condition_1": c1.success,
        "condition_2": c2.satisfied,
        "squeezing_monotone": sq.monotone,
        # tail ratio against the 1/lambda_{N+1} shape of the bound
        "squeezing_ratio": sq.ratio(0, -1) <= SQUEEZE_FACTOR * lam[lo_n] / lam[min(hi_n, lam.size - 1)],
    }
    for k, r in contraction.items():
        flags[f"contraction_k{k}"] = r["p_hat"] >= 0.875 - 2 * r["sigma"]
    return flags


def run_mixing(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    trunc = Truncation(cfg.truncation.n_max)
    process = build_process(cfg)
    strategy = build_strategy(cfg)
    p = cfg.params
    rng = substream(cfg.seed, 12)
    fits = []
    rows = []
    for i in range(p.n_initial_pairs):
        u0, v0 = random_ball(trunc, rng, 2, p.radius)
        fit = mixing_experiment(process, strategy, u0, v0, p.k_max, p.n_pairs, cfg.seed, threads, first_id=i * p.n_pairs)
        fits.append(fit)
        rows += [(i, int(k), float(lo), float(up)) for k, lo, up in zip(fit.k_values, fit.lower_estimates, fit.upper_estimates)]
    write_csv(out / "mixing.csv", ["pair", "k", "lower", "upper"], rows)
    cs = [f.c_fit for f in fits]
    mean_c = float(np.mean(cs))
    write_json(out / "mixing.json", {"fits": [f.summary() for f in fits], "c_mean": mean_c, "seed": cfg.seed, "config_hash": cfg.config_hash()})
    return {
        "c_fit_positive": all(c > 0 for c in cs),
        "r2": all(f.r_squared >= p.r2_min for f in fits),
        "lower_le_upper": all(f.ordered for f in fits),
        "c_consistent": all(abs(c - mean_c) <= p.c_spread * abs(mean_c) for c in cs),
    }


RUNNERS: dict[str, Callable[[ExperimentConfig, Path, int], dict]] = {
    "verify-operators": run_verify_operators,
    "verify-estimates": run_verify_estimates,
    "run-deterministic": run_deterministic,
    "run-kicked": run_kicked,
    "verify-conditions": run_verify_conditions,
    "mixing": run_mixing,
}

SERIES = {"mixing.csv": "mixing", "decay.csv": "decay", "trajectory.csv": "decay"}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_experiment(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    """Run ``cfg`` into ``out_dir``; returns the manifest (also written as manifest.json)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    flags = RUNNERS[cfg.experiment](cfg, out_dir, threads)
    write_json(out_dir / "config.json", cfg.model_dump(mode="json"))
    manifest = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "started": started,
        "series": {SERIES[f]: f for f in sorted(SERIES) if (out_dir / f).exists()},
        "criteria": {k: bool(v) for k, v in flags.items()},
        "passed": all(flags.values()),
    }
    if manifest["series"]:
        emit_plot_data(manifest, out_dir)
    manifest["finished"] = _now()
    manifest["files"] = _file_list(out_dir)
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def _file_list(out_dir: Path) -> list[dict]:
    files = []
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files.append({"path": path.relative_to(out_dir).as_posix(), "bytes": path.stat().st_size})
    return files


def check_manifest(manifest: dict, out_dir: Path) -> list[str]:
    """Problems with the listed files (missing or wrong length); empty when consistent."""
    problems = []
    for entry in manifest.get("files", []):
        path = Path(out_dir) / entry["path"]
        if not path.is_file():
            problems.append(f"missing {entry['path']}")
        elif path.stat().st_size != entry["bytes"]:
            problems.append(f"{entry['path']}: {path.stat().st_size} bytes, manifest says {entry['bytes']}")
    return problems


def emit_plot_data(manifest: dict, out_dir: Path) -> list[Path]:
    """Write ``mixing_k.csv`` (k,lower,upper) and/or ``decay_t.csv`` (t,norm_H).

    Mixing series from several initial pairs are averaged per k.
    """
    series = manifest.get("series") or {}
    if not series:
        raise ConfigurationError("manifest has no plottable series; expected one of: mixing, decay")
    out_dir = Path(out_dir)
    written = []
    if "mixing" in series:
        with open(out_dir / series["mixing"]) as fh:
            rows = list(csv.DictReader(fh))
        ks = sorted({int(r["k"]) for r in rows})
        agg = []
        for k in ks:
            sel = [r for r in rows if int(r["k"]) == k]
            agg.append((k, float(np.mean([float(r["lower"]) for r in sel])), float(np.mean([float(r["upper"]) for r in sel]))))
        written.append(write_csv(out_dir / "mixing_k.csv", ["k", "lower", "upper"], agg))
    if "decay" in series:
        with open(out_dir / series["decay"]) as fh:
            rows = list(csv.DictReader(fh))
        written.append(write_csv(out_dir / "decay_t.csv", ["t", "norm_H"], [(float(r["t"]), float(r["norm_H"])) for r in rows]))
    return written


def default_output_dir(cfg: ExperimentConfig, override: Optional[str] = None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    base = os.environ.get(OUTPUT_ENV, "kickmix-output")
    return Path(base) / f"{cfg.experiment}-{cfg.config_hash()[:12]}"
