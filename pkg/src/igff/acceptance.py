"""Acceptance gates.

Each gate runs one numbered criterion at its stated size and tolerance and
returns a ``GateResult``. ``run_gates`` drives any subset; the ``verify`` CLI
command and the test suite both go through here.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import seeding
from .analytics import (
    CriticalBeta,
    FieldParams,
    PerturbedProfile,
    build_speed_profile,
    critical_levels,
    entropy,
    free_energy,
    free_energy_by_maximization,
    free_energy_split,
    gamma_star,
    limiting_two_overlap,
    perturbed_free_energy,
    perturbed_free_energy_derivative,
)
from .field import FieldModel, all_pairs, overlap_estimate_check, restricted_set
from .gibbs import (
    ModelCache,
    OverlapFunction,
    PairIndicator,
    bovier_kurkova_check,
    boundary_mass_study,
    brute_force_gg_terms,
    free_energy_convergence_study,
    gg_residual,
    gg_terms,
    gibbs_weights,
    window_function,
)
from .lattice import GREEN_SCALE, LatticeBox, green_matrix, green_monte_carlo, walk_generator
from .rpc import (
    CascadeParams,
    cascade_gg_check,
    cascade_overlap_cdf,
    indicator,
    pd_moment,
    ultrametric_violations,
)

WORKED = FieldParams((2.0, 1.0), (0.5, 1.0))
# calibration master seeds for the Monte Carlo gates
SEEDS = {
    5: 5005,
    6: 6006,
    8: 8008,
    9: 9009,
    10: 10010,
    11: 11011,
    12: 20240601,
}


@dataclass
class GateResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.summary} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed, "summary": self.summary,
                "details": _plain(self.details)}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def random_params(rng: np.random.Generator, max_M: int = 6) -> FieldParams:
    """Random admissible parameters: M <= max_M, lambda on a 1/20 grid, sigma in [0.2, 3]."""
    M = int(rng.integers(1, max_M + 1))
    lam = np.sort(rng.choice(np.arange(1, 20), M - 1, replace=False)) / 20 if M > 1 else np.array([])
    lam = tuple(float(x) for x in np.append(lam, 1.0))
    sig = tuple(float(x) for x in rng.uniform(0.2, 3.0, M))
    return FieldParams(sig, lam)


def brute_hull(x: np.ndarray, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Least concave majorant of the piecewise-linear interpolant, by maximizing over all chords."""
    out = np.full(len(t), -np.inf)
    for i in range(len(x)):
        for j in range(i, len(x)):
            if j == i:
                val = np.where(np.isclose(t, x[i], rtol=0, atol=0), y[i], -np.inf)
            else:
                inside = (t >= x[i]) & (t <= x[j])
                val = np.where(inside, y[i] + (y[j] - y[i]) * (t - x[i]) / (x[j] - x[i]), -np.inf)
            out = np.maximum(out, val)
    return out


# ---------------------------------------------------------------- gates

def gate_1() -> GateResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        p = random_params(rng)
        prof = build_speed_profile(p)
        x = p.grid
        t = np.concatenate((x, rng.uniform(0, 1, 20)))
        worst = max(worst, float(np.abs(prof.Jhat(t) - brute_hull(x, prof.J(x), t)).max()))
    return GateResult(1, "concavification oracle", worst <= 1e-12, f"max |Jhat - hull| = {worst:.2e}",
                      {"max_error": worst, "cases": 1000}, budget=5)


def gate_2() -> GateResult:
    rng = np.random.default_rng(2)
    worst, n = 0.0, 0
    while n < 200:
        p = random_params(rng)
        prof = build_speed_profile(p)
        beta = float(rng.uniform(0.05, 5.0))
        a = free_energy(prof, beta)
        b = free_energy_split(prof, beta)
        c = free_energy_by_maximization(prof, beta)[1]
        worst = max(worst, abs(a - b), abs(a - c), abs(b - c))
        n += 1
    return GateResult(2, "free-energy triple equivalence", worst <= 1e-10, f"max pairwise gap = {worst:.2e}",
                      {"max_gap": worst, "cases": n}, budget=5)


def gate_3() -> GateResult:
    prof = build_speed_profile(WORKED)
    law = limiting_two_overlap(prof, 1.5)
    arg, fmax = free_energy_by_maximization(prof, 1.5)
    got = {
        "gamma_star": gamma_star(prof),
        "gamma_1": float(critical_levels(prof)[1]),
        "f": free_energy(prof, 1.5),
        "argmax": arg,
        "max": fmax,
        "mass_0": float(law.masses[0]),
        "mass_08": float(law.masses[1]),
        "atom_1": float(law.atoms[1]),
        "r": law.rpc.r,
        "zeta_0": float(law.rpc.zetas[0]),
        "q_1": float(law.rpc.qs[1]),
    }
    want = {"gamma_star": 1.5, "gamma_1": 1.25, "f": 2.28125, "argmax": 1.375, "max": 2.28125,
            "mass_0": 2 / 3, "mass_08": 1 / 3, "atom_1": 0.8, "r": 1, "zeta_0": 2 / 3, "q_1": 0.8}
    err = max(abs(got[k] - want[k]) for k in want)
    return GateResult(3, "worked example", err <= 1e-12, f"max deviation = {err:.2e}", {"values": got}, budget=1)


def gate_4() -> GateResult:
    rng = np.random.default_rng(4)
    h = 1e-6
    gap = lambda prof, g, h: abs((entropy(prof, g + h) - 2 * entropy(prof, g) + entropy(prof, g - h)) / h)
    worst, at, n, over = 0.0, None, 0, 0
    while n < 100:
        prof = build_speed_profile(random_params(rng))
        levels = critical_levels(prof)
        if len(levels) < 3:
            continue
        n += 1
        gaps = [gap(prof, g, h) for g in levels[1:-1]]
        over += max(gaps) > 1e-4
        if max(gaps) > worst:
            worst, at = max(gaps), (prof, levels[1 + int(np.argmax(gaps))])
    # a kink leaves an O(1) gap; curvature leaves one that scales with h
    ratio = worst / gap(*at, h / 10) if at else float("nan")
    return GateResult(4, "entropy C1 at critical levels", worst <= 1e-4,
                      f"max one-sided gap = {worst:.2e} ({over}/{n} params over 1e-4, gap(h)/gap(h/10) = {ratio:.2f})",
                      {"max_gap": worst, "params": n, "params_over": over, "h_scaling": ratio}, budget=5)


def _perturbed_case(rng):
    p = random_params(rng)
    i = int(rng.integers(1, p.M + 1))
    lo, hi = p.grid[i - 1], p.grid[i]
    a, b = np.sort(rng.uniform(lo, hi, 2))
    return PerturbedProfile(p, float(a), float(b))


def gate_5() -> GateResult:
    rng = np.random.default_rng(SEEDS[5])
    tol, h = 1e-6, 1e-5
    errs = []
    while len(errs) < 100:
        pp = _perturbed_case(rng)
        beta = float(rng.uniform(0.1, 4.0))
        try:
            d = perturbed_free_energy_derivative(pp, beta)
        except CriticalBeta:
            continue
        fd = (perturbed_free_energy(pp, beta, h) - perturbed_free_energy(pp, beta, -h)) / (2 * h)
        errs.append(abs(d - fd))
    smooth_ok = max(errs) <= tol
    # critical side: beta = 2 / sigma_bar_{j*}
    gaps = []
    cases = [PerturbedProfile(WORKED, 0.1, 0.4)] + [_perturbed_case(rng) for _ in range(20)]
    for pp in cases:
        beta = 2.0 / float(build_speed_profile(pp.base).sigma_bar[pp.j_star - 1])
        f0 = perturbed_free_energy(pp, beta, 0.0)
        right = (perturbed_free_energy(pp, beta, h) - f0) / h
        left = (f0 - perturbed_free_energy(pp, beta, -h)) / h
        gaps.append(abs(right - left))
    kink_ok = min(gaps) > 10 * tol
    return GateResult(
        5, "perturbed free-energy derivative", smooth_ok and kink_ok,
        f"max |closed - FD| = {max(errs):.2e} (<= {tol:g}: {smooth_ok}); "
        f"one-sided gap at critical beta: worked {gaps[0]:.2e}, min {min(gaps):.2e} (> {10 * tol:g}: {kink_ok})",
        {"smooth_max_error": max(errs), "smooth_ok": smooth_ok, "critical_gaps": gaps, "kink_ok": kink_ok},
        budget=10)


def gate_6() -> GateResult:
    g3 = green_matrix(LatticeBox.square(2))
    single = abs(g3.G[0, 0] - GREEN_SCALE)
    sym, resid = 0.0, 0.0
    for N in (8, 16, 32):
        op = green_matrix(LatticeBox.square(N), method="dense")
        sym = max(sym, float(np.abs(op.G - op.G.T).max()))
        A = walk_generator(op.box)
        resid = max(resid, float(np.abs(A @ op.G - GREEN_SCALE * np.eye(op.n_interior)).max()))
    box = LatticeBox.square(8)
    op = green_matrix(box)
    rng = np.random.default_rng(SEEDS[6])
    inner = box.interior
    agree, zs = 0, []
    for t in range(100):
        v, w = inner[rng.integers(len(inner), size=2)]
        est, se = green_monte_carlo(box, tuple(v), tuple(w), 100_000, seeding.derive_seed(SEEDS[6], "green-mc", t))
        z = (est - op.value(tuple(v), tuple(w))) / se
        zs.append(z)
        agree += abs(z) <= 3
    ok = single <= 1e-12 and sym <= 1e-10 and resid <= 1e-9 and agree >= 99
    return GateResult(6, "Green function exactness", ok,
                      f"3x3 err {single:.1e}, symmetry {sym:.1e}, generator residual {resid:.1e}, "
                      f"MC within 3 SE {agree}/100", {"max_abs_z": float(np.max(np.abs(zs)))}, budget=120)


def gate_7() -> GateResult:
    model = FieldModel(16, WORKED)
    grid = WORKED.grid
    incs = [model.ops.phi_increment_operator(grid[i - 1], grid[i]) for i in range(1, len(grid))]
    worst = 0.0
    for i in range(len(incs)):
        for j in range(i + 1, len(incs)):
            worst = max(worst, float(np.abs(np.diag(model.cross_cov(incs[i], incs[j]))).max()))
    return GateResult(7, "martingale orthogonality", worst <= 1e-8, f"max |Cov| across scales = {worst:.2e}",
                      {"max_cov": worst}, budget=60)


def gate_8(cache: ModelCache | None = None) -> GateResult:
    r = bovier_kurkova_check(WORKED, 1.5, 16, 1.0, 0.1, 0.3, 1, 0, None, 10_000, SEEDS[8], contexts=cache)
    ok = abs(r.diff.mean) <= 3 * r.diff.se
    return GateResult(8, "Gaussian integration by parts", ok,
                      f"LHS - RHS = {r.diff.mean:.2e} +- {r.diff.se:.1e} ({r.diff.mean / r.diff.se:+.2f} SE)",
                      {"lhs": r.lhs.as_dict(), "rhs": r.rhs.as_dict(), "diff": r.diff.as_dict()}, budget=300)


def gate_9(cache: ModelCache | None = None, samples_per_N: int = 100) -> GateResult:
    seeds = [SEEDS[9] + i for i in range(20)]
    out, ok = {}, True
    for beta in (0.5, 2.0):
        rep = free_energy_convergence_study(WORKED, beta, (16, 32, 64), samples_per_N, seeds, contexts=cache)
        pooled = np.median(rep.median_dev, axis=0)
        out[beta] = {"decreasing_fraction": rep.decreasing_fraction, "median_of_medians": pooled,
                     "mean_fN": rep.mean_fN, "f_limit": rep.f_limit}
        ok &= rep.decreasing_fraction >= 0.8
    summ = "; ".join(f"beta={b}: decreasing in {d['decreasing_fraction']:.0%} of seeds, "
                     f"median dev {np.round(d['median_of_medians'], 3).tolist()}" for b, d in out.items())
    return GateResult(9, "free-energy trend", ok, summ, {"by_beta": out, "samples_per_N": samples_per_N},
                      budget=900)


def gate_10(cache: ModelCache | None = None, samples: int = 200) -> GateResult:
    ests = boundary_mass_study(WORKED, 2.0, (16, 32, 64), 0.2, samples, SEEDS[10], contexts=cache)
    m = [e.mean for e in ests]
    ok = m[0] > m[1] > m[2] and m[2] < 0.2
    return GateResult(10, "boundary mass", ok, f"E G(A^c) = {np.round(m, 4).tolist()} at N=16,32,64",
                      {"estimates": [e.as_dict() for e in ests]}, budget=600)


def gate_11() -> GateResult:
    seed = SEEDS[11]
    laws = {
        "r1": limiting_two_overlap(build_speed_profile(WORKED), 1.5),
        "r3": limiting_two_overlap(build_speed_profile(FieldParams((3.0, 2.0, 1.0), (1 / 3, 2 / 3, 1.0))), 2.5),
    }
    det, ok = {}, True
    for name, law in laws.items():
        p512 = CascadeParams.from_limit_law(law, K=512)
        p1024 = CascadeParams.from_limit_law(law, K=1024)
        viol = ultrametric_violations(p512, 1000, 1000, seed)
        m512, s512 = cascade_overlap_cdf(p512, 1000, 100, seed)
        m1024, _ = cascade_overlap_cdf(p1024, 1000, 100, seed)
        closed = law.cdf(law.atoms)
        atoms_ok = bool(np.all(np.abs(m512 - closed) <= np.maximum(3 * s512, 1e-12)))
        stable_ok = bool(np.all(np.abs(m512 - m1024) <= np.maximum(s512, 1e-12)))
        qs = p512.qs
        gg = {}
        for s in (2, 3):
            for j in range(len(qs) - 1):
                g = indicator(qs, qs[j])
                target = qs[min(j + 1, len(qs) - 1)]
                hfun = (lambda R, t=target: np.isclose(R[:, 0, 1], t).astype(float))
                est = cascade_gg_check(p512, s, 0, g, hfun, 300, 200,
                                       seeding.derive_seed(seed, "gg", s, j).generate_state(2).tolist())
                gg[f"s={s},g=1{{q={qs[j]:.3f}}}"] = est.as_dict()
        gg_ok = all(abs(e["mean"]) <= 3 * e["se"] + 1e-12 for e in gg.values())
        pd = {}
        for lev in range(p512.r):
            e = pd_moment(p512, lev, 3000, seed + lev)
            pd[lev] = {"estimate": e.as_dict(), "target": p512.level_moment(lev)}
        pd_ok = all(abs(v["estimate"]["mean"] - v["target"]) <= 3 * v["estimate"]["se"] for v in pd.values())
        det[name] = {"violations": viol, "cdf_512": m512, "se_512": s512, "cdf_1024": m1024, "closed": closed,
                     "atoms_ok": atoms_ok, "stable_ok": stable_ok, "gg": gg, "gg_ok": gg_ok, "pd": pd,
                     "pd_ok": pd_ok}
        ok &= viol == 0 and atoms_ok and stable_ok and gg_ok and pd_ok
    summ = "; ".join(f"{k}: violations {v['violations']}, atoms {v['atoms_ok']}, K-stable {v['stable_ok']}, "
                     f"GG {v['gg_ok']}, PD {v['pd_ok']}" for k, v in det.items())
    return GateResult(11, "cascade exact-limit suite", ok, summ, det, budget=300)


GG_H = OverlapFunction(2, (PairIndicator(0, 1, 0.4, np.inf),))


def gate_12(cache: ModelCache | None = None, seeds: int = 10, samples: int = 200) -> GateResult:
    res = np.zeros((seeds, 3))
    for j, N in enumerate((16, 32, 64)):
        for i in range(seeds):
            res[i, j] = gg_residual(WORKED, 1.5, N, 1.0, GG_H, 0, 0.1, 0.4, samples, SEEDS[12] + i,
                                    contexts=cache).mean
    med = np.median(np.abs(res), axis=0)
    trend_ok = bool(med[0] > med[1] > med[2])
    # exhaustive enumeration at N = 4
    model = FieldModel(4, WORKED)
    Q = model.q
    PhiQ = window_function(model.profile, 0.1, 0.4)(Q)
    psi = model.sampler().psi(seeding.field_seeds(SEEDS[12], "gg-brute", 3))
    worst = 0.0
    for i in range(psi.shape[1]):
        w = gibbs_weights(psi[:, i], 0.1)[0]
        a, b = gg_terms(w, Q, PhiQ, GG_H, 0), brute_force_gg_terms(w, Q, PhiQ, GG_H, 0)
        worst = max(worst, *(abs(getattr(a, f) - getattr(b, f)) for f in ("t_extra", "t_pair", "t_h", "t_within")))
    brute_ok = worst <= 1e-10
    return GateResult(12, "Ghirlanda-Guerra residual trend", trend_ok and brute_ok,
                      f"median |residual| {np.round(med, 5).tolist()} at N=16,32,64 (decreasing: {trend_ok}); "
                      f"enumeration gap {worst:.1e}", {"residuals": res, "median_abs": med, "brute_gap": worst},
                      budget=900)


def gate_13() -> GateResult:
    med, sizes = {}, {}
    for N in (16, 32, 64):
        mask = restricted_set(N, 0.2)
        sizes[N] = int(mask.sum())
        if not mask.any():
            med[N] = None
            continue
        rep = overlap_estimate_check(FieldModel(N, WORKED), 0.2, all_pairs(mask))
        med[N] = rep.median_dev
    vals = [med[N] for N in (16, 32, 64)]
    trend_ok = None not in vals and vals[0] > vals[1] > vals[2]
    bound_ok = med[32] is not None and med[32] <= 0.5
    show = ["undefined (A empty)" if v is None else f"{v:.4f}" for v in vals]
    return GateResult(13, "overlap vs branching scale", bool(trend_ok and bound_ok),
                      f"median |q - Jbar(b)| = {show} at N=16,32,64; |A| = {list(sizes.values())}",
                      {"median": med, "sizes": sizes, "trend_ok": trend_ok, "bound_ok": bound_ok}, budget=600)


GATES: dict[int, Callable[..., GateResult]] = {
    1: gate_1, 2: gate_2, 3: gate_3, 4: gate_4, 5: gate_5, 6: gate_6, 7: gate_7,
    8: gate_8, 9: gate_9, 10: gate_10, 11: gate_11, 12: gate_12, 13: gate_13,
}
USES_CACHE = {8, 9, 10, 12}


def run_gate(number: int, cache: ModelCache | None = None) -> GateResult:
    t = time.perf_counter()
    fn = GATES[number]
    res = fn(cache) if number in USES_CACHE else fn()
    res.seconds = time.perf_counter() - t
    return res


def run_gates(numbers=None, cache: ModelCache | None = None, echo: Callable[[str], None] | None = print):
    cache = cache or ModelCache()
    out = []
    for n in numbers or sorted(GATES):
        r = run_gate(n, cache)
        if echo:
            echo(r.line())
        out.append(r)
    return out
