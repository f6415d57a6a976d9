"""Experiment orchestration, result persistence and plot-data emission."""
from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, seeding
from .analytics import (
    CriticalBeta,
    FieldParams,
    ParamError,
    build_speed_profile,
    critical_levels,
    entropy,
    free_energy,
    free_energy_by_maximization,
    l_beta,
    limiting_two_overlap,
)
from .config import ExperimentConfig
from .gibbs import (
    MCEstimate,
    ModelCache,
    OverlapFunction,
    PairIndicator,
    empirical_two_overlap_cdf,
    free_energy_samples,
    gg_residual,
)
from .rpc import CascadeParams, cascade_overlap_cdf, pd_moment, ultrametric_violations


def fmt(x) -> str:
    """17 significant digits for floats, so CSV values round-trip exactly."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    if isinstance(x, MCEstimate):
        return _jsonable(x.as_dict())
    return x


def write_json(path: Path, obj) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def build_id() -> str:
    """Package version plus the git commit of the source tree, when available."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunReport:
    config: dict
    build: str
    stages: dict = field(default_factory=dict)        # stage -> "ok" | "failed: ..."
    wall_times: dict = field(default_factory=dict)    # stage -> seconds (kept out of report.json)
    estimates: dict = field(default_factory=dict)     # name -> MCEstimate dict
    gates: dict = field(default_factory=dict)         # criterion -> passed
    data: dict = field(default_factory=dict)          # tables reused by plot emission
    artifacts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(v == "ok" for v in self.stages.values()) and all(self.gates.values())

    def as_dict(self) -> dict:
        """Deterministic content (no wall times)."""
        return {"config": self.config, "build": self.build, "stages": self.stages, "estimates": self.estimates,
                "gates": self.gates, "data": self.data, "artifacts": sorted(self.artifacts), "notes": self.notes}

    @classmethod
    def merge_dir(cls, out_dir) -> "RunReport | None":
        """Combine every ``report-<kind>.json`` in a directory (data, estimates, notes)."""
        paths = sorted(Path(out_dir).glob("report-*.json"))
        if not paths:
            return None
        merged = cls.load(paths[0])
        for p in paths[1:]:
            r = cls.load(p)
            merged.stages.update(r.stages)
            merged.estimates.update(r.estimates)
            merged.gates.update(r.gates)
            merged.data.update(r.data)
            merged.artifacts += r.artifacts
            merged.notes += [n for n in r.notes if n not in merged.notes]
        return merged

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["config"], d["build"], d["stages"], {}, d["estimates"], d["gates"], d["data"],
                   d["artifacts"], d["notes"])


class _Run:
    def __init__(self, cfg: ExperimentConfig, report: RunReport, out: Path):
        self.cfg, self.report, self.out = cfg, report, out
        self.params = FieldParams(tuple(cfg.sigma), tuple(cfg.lam))

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.report.artifacts.append(name)

    def json(self, name, obj):
        write_json(self.out / name, obj)
        self.report.artifacts.append(name)

    def stage(self, name, fn):
        t = time.perf_counter()
        try:
            fn()
            self.report.stages[name] = "ok"
        except Exception as e:  # partial-failure policy: keep going, mark the stage
            self.report.stages[name] = f"failed: {type(e).__name__}: {e}"
        self.report.wall_times[name] = time.perf_counter() - t


# ---------------------------------------------------------------- stages

def _analytics(run: _Run) -> None:
    prof = build_speed_profile(run.params)
    levels = critical_levels(prof)
    rows = [("gamma_star", float(levels[-1])), ("m", prof.m), ("J1", prof.J1)]
    rows += [(f"gamma_{l}", float(g)) for l, g in enumerate(levels)]
    rows += [(f"lambda_eff_{j}", float(x)) for j, x in enumerate(prof.eff_scales)]
    rows += [(f"sigma_bar_{j + 1}", float(x)) for j, x in enumerate(prof.sigma_bar)]
    run.csv("analytics_summary.csv", ("quantity", "value"), rows)
    g = np.linspace(0.0, float(levels[-1]), 201)
    run.csv("entropy.csv", ("gamma", "entropy"), [(x, entropy(prof, min(x, levels[-1]))) for x in g])
    s = np.union1d(np.linspace(0.0, 1.0, 201), run.params.grid)
    speed = [(x, float(prof.J(x)), float(prof.Jhat(x))) for x in s]
    run.csv("speed.csv", ("s", "J", "Jhat"), speed)
    run.report.data["speed"] = speed
    fe, atoms = [], []
    for b in run.cfg.beta:
        arg, _ = free_energy_by_maximization(prof, b)
        fe.append((b, free_energy(prof, b), l_beta(prof, b), arg))
        try:
            law = limiting_two_overlap(prof, b)
        except CriticalBeta:
            run.report.notes.append(f"beta={b} is critical: no limiting overlap law")
            continue
        cum = np.cumsum(law.masses)
        atoms += [(b, float(a), float(m), float(c)) for a, m, c in zip(law.atoms, law.masses, cum)]
    run.csv("free_energy.csv", ("beta", "f", "l_beta", "argmax_gamma"), fe)
    run.csv("overlap_atoms.csv", ("beta", "atom", "mass", "cdf"), atoms)
    run.report.data["free_energy_limit"] = fe


def _simulate(run: _Run, cache: ModelCache) -> None:
    cfg = run.cfg
    prof = build_speed_profile(run.params)
    per_sample, summary, cdf_rows, gg_rows = [], [], [], []
    fn_plot = []
    for N in cfg.N:
        ctx = cache.get(N, run.params)
        seeds = seeding.field_seeds(cfg.master_seed, "simulate", cfg.field_samples)
        for b in cfg.beta:
            ens = free_energy_samples(ctx, b, cfg.rho, seeds)
            fN = np.array([e.fN for e in ens])
            fr = np.array([e.fN_rho for e in ens])
            bm = np.array([e.boundary_mass for e in ens])
            per_sample += [(N, b, i, fN[i], fr[i], bm[i]) for i in range(len(ens))]
            f_lim = free_energy(prof, b)
            est = MCEstimate.from_values(fN, cfg.master_seed)
            run.report.estimates[f"fN[N={N},beta={b}]"] = est.as_dict()
            run.report.estimates[f"boundary_mass[N={N},beta={b}]"] = MCEstimate.from_values(
                bm, cfg.master_seed).as_dict()
            med = float(np.median(fN))
            summary.append((N, b, est.mean, est.se, med, float(np.median(np.abs(fN - f_lim))), f_lim))
            fn_plot.append((N, b, med, f_lim))
            try:
                oc = empirical_two_overlap_cdf(run.params, b, N, cfg.rho, cfg.field_samples, cfg.master_seed,
                                               contexts=cache)
            except CriticalBeta:
                run.report.notes.append(f"beta={b} is critical: overlap CDF skipped")
                continue
            cdf_rows += [(N, b, r, c, s) for r, c, s in zip(oc.r, oc.cdf, oc.se)]
            a, a2 = cfg.gg_window
            cut = float(prof.Jbar(a2))
            for s in cfg.replica_counts:
                h = OverlapFunction(s, tuple(PairIndicator(i, i + 1, cut, np.inf) for i in range(s - 1)))
                try:
                    r = gg_residual(run.params, b, N, 1.0, h, 0, a, a2, cfg.field_samples, cfg.master_seed,
                                    contexts=cache)
                except ParamError as e:
                    run.report.notes.append(f"GG residual skipped for beta={b}, s={s}: {e}")
                    continue
                run.report.estimates[f"gg[N={N},beta={b},s={s}]"] = r.as_dict()
                gg_rows.append((N, b, s, r.mean, r.se))
    run.csv("free_energy_samples.csv", ("N", "beta", "sample", "fN", "fN_rho", "boundary_mass"), per_sample)
    run.csv("free_energy_summary.csv", ("N", "beta", "mean", "se", "median", "median_abs_dev", "f_limit"), summary)
    run.csv("overlap_cdf_field.csv", ("N", "beta", "r", "cdf", "se"), cdf_rows)
    run.csv("gg_residuals.csv", ("N", "beta", "s", "mean", "se"), gg_rows)
    run.report.data["fn"] = fn_plot
    run.report.data["cdf_field"] = cdf_rows


def _rpc(run: _Run) -> None:
    cfg = run.cfg
    prof = build_speed_profile(run.params)
    rows, out = [], []
    for b in cfg.beta:
        try:
            law = limiting_two_overlap(prof, b)
        except CriticalBeta:
            run.report.notes.append(f"beta={b} is critical: cascade skipped")
            continue
        if law.rpc.r == 0:
            run.report.notes.append(f"beta={b}: single-atom overlap law, cascade is trivial")
            continue
        p = CascadeParams.from_limit_law(law, cfg.rpc.K, cfg.rpc.tail, cfg.rpc.construction)
        seed = seeding.derive_seed(cfg.master_seed, "rpc", len(out)).generate_state(2).tolist()
        mean, se = cascade_overlap_cdf(p, cfg.rpc.trees, cfg.rpc.pairs_per_tree, seed)
        closed = law.cdf(law.atoms)
        rows += [(b, float(a), float(c), float(m), float(s)) for a, c, m, s in zip(law.atoms, closed, mean, se)]
        viol = ultrametric_violations(p, cfg.rpc.trees, cfg.rpc.pairs_per_tree, seed)
        pd = {lev: pd_moment(p, lev, cfg.rpc.trees, seed).as_dict() for lev in range(p.r)}
        for lev, e in pd.items():
            run.report.estimates[f"rpc_pd_moment[beta={b},level={lev}]"] = e
        out.append({"beta": b, "ultrametric_violations": viol, "pd_moment": pd,
                    "pd_target": [p.level_moment(l) for l in range(p.r)]})
    run.csv("overlap_cdf_rpc.csv", ("beta", "atom", "cdf_closed", "cdf_rpc", "se"), rows)
    run.json("rpc_checks.json", out)
    run.report.data["cdf_rpc"] = rows


def _verify(run: _Run, cache: ModelCache) -> None:
    from .acceptance import run_gates

    results = run_gates(run.cfg.gates or None, cache=cache, echo=None)
    for r in results:
        run.report.gates[str(r.number)] = bool(r.passed)
        run.report.wall_times[f"gate_{r.number}"] = r.seconds
    run.json("gates.json", [r.as_dict() for r in results])
    run.report.data["gate_lines"] = [r.line().rsplit(" (", 1)[0] for r in results]


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.to_dict(), build_id())
    run = _Run(cfg, report, out)
    cache = ModelCache(cfg.rounding)
    with _thread_limit(cfg.threads):
        if cfg.kind in ("analytics", "simulate", "rpc"):
            run.stage("analytics", lambda: _analytics(run))
        if cfg.kind == "simulate":
            run.stage("simulate", lambda: _simulate(run, cache))
        if cfg.kind == "rpc":
            run.stage("rpc", lambda: _rpc(run))
        if cfg.kind == "verify":
            run.stage("verify", lambda: _verify(run, cache))
    write_json(out / f"report-{cfg.kind}.json", report.as_dict())
    write_json(out / f"timings-{cfg.kind}.json", report.wall_times)
    return report


class _thread_limit:
    """Caps BLAS threads for the duration of a run."""

    def __init__(self, n: int):
        self.n = n

    def __enter__(self):
        from threadpoolctl import threadpool_limits

        self._ctl = threadpool_limits(limits=self.n)
        return self

    def __exit__(self, *exc):
        self._ctl.restore_original_limits()
        return False


# ---------------------------------------------------------------- plot data

def emit_plot_data(report: RunReport, out_dir) -> list[Path]:
    """Per-figure CSVs: speed function, overlap CDFs per beta, free energy by N."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    params = FieldParams(tuple(cfg["params"]["sigma"]), tuple(cfg["params"]["lambda"]))
    prof = build_speed_profile(params)
    paths = []
    s = np.union1d(np.linspace(0.0, 1.0, 201), params.grid)
    paths.append(write_csv(out / "plot_speed.csv", ("s", "J", "Jhat"),
                           [(x, float(prof.J(x)), float(prof.Jhat(x))) for x in s]))
    betas = cfg["beta"]
    if not betas:
        report.notes.append("empty beta list: no overlap CDF plot data")
    field_rows = report.data.get("cdf_field", [])
    rpc_rows = report.data.get("cdf_rpc", [])
    for b in betas:
        try:
            law = limiting_two_overlap(prof, b)
        except CriticalBeta:
            report.notes.append(f"beta={b} is critical: no overlap CDF plot data")
            continue
        fr = [row for row in field_rows if row[1] == b]
        if fr:
            Nmax = max(row[0] for row in fr)
            fr = [row for row in fr if row[0] == Nmax]
            r = np.array([row[2] for row in fr])
            cf = np.clip(np.maximum.accumulate([row[3] for row in fr]), 0.0, 1.0)
        else:
            r = np.linspace(-0.2, 1.0, 121)
            cf = None
        closed = law.cdf(r)
        header = ["r"] + (["cdf_field"] if cf is not None else [])
        rr = [row for row in rpc_rows if row[0] == b]
        crpc = None
        if rr:
            atoms = np.array([row[1] for row in rr])
            vals = np.maximum.accumulate([row[3] for row in rr])
            idx = np.searchsorted(atoms, r, side="right")
            crpc = np.clip(np.where(idx == 0, 0.0, vals[np.maximum(idx - 1, 0)]), 0.0, 1.0)
            header.append("cdf_rpc")
        header.append("cdf_closed")
        rows = []
        for i, x in enumerate(r):
            row = [x] + ([cf[i]] if cf is not None else []) + ([crpc[i]] if crpc is not None else [])
            rows.append(row + [float(closed[i])])
        paths.append(write_csv(out / f"plot_overlap_cdf_beta{fmt(b)}.csv", header, rows))
    fn = report.data.get("fn", [])
    if fn:
        paths.append(write_csv(out / "plot_free_energy.csv", ("N", "beta", "fN_median", "f_limit"), fn))
    else:
        report.notes.append("no simulation data: free-energy plot data skipped")
    return paths
