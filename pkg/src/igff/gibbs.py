"""Monte Carlo over field samples with exact per-sample Gibbs expectations.

Given one realization of psi, the Gibbs measure is an explicit categorical
distribution on the vertices, so every replica expectation whose replica
graph is a forest is evaluated exactly with matrix-vector products
(see :func:`replica_moment`). Only the outer expectation over the field is
Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import seeding
from .analytics import (
    FieldParams,
    ParamError,
    build_speed_profile,
    check_noncritical,
    free_energy,
    l_beta,
)
from .field import EmptyRestriction, FieldModel, restricted_set


@dataclass
class MCEstimate:
    mean: float
    se: float
    n: int
    seed: object = None

    def __post_init__(self):
        self.mean = float(self.mean)
        self.se = float(self.se)

    @classmethod
    def from_values(cls, values, seed=None) -> "MCEstimate":
        v = np.asarray(values, dtype=float)
        se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
        return cls(v.mean(), se, len(v), seed)

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        """Pool two independent estimates of the same quantity (sample-size weighted)."""
        n = self.n + other.n
        mean = (self.n * self.mean + other.n * other.mean) / n
        # recover second moments from (mean, se, n)
        def ss(e):
            return (e.se**2 * e.n * (e.n - 1)) + e.n * e.mean**2 if e.n > 1 else e.n * e.mean**2
        var = (ss(self) + ss(other) - n * mean**2) / max(n - 1, 1)
        return MCEstimate(mean, math.sqrt(max(var, 0.0) / n), n, self.seed)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.se

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n, "seed": str(self.seed)}


# ---------------------------------------------------------------- ensembles

def gibbs_weights(psi: np.ndarray, beta: float, mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Normalized weights ``exp(beta psi)/Z`` (optionally restricted) and ``log Z``."""
    x = beta * np.asarray(psi, dtype=float)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    logZ = float(logsumexp(x))
    return np.exp(x - logZ), logZ


@dataclass
class GibbsEnsemble:
    N: int
    beta: float
    rho: float
    psi: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    weights_rho: np.ndarray | None = field(repr=False)
    logZ: float
    logZ_rho: float
    logZ_comp: float
    max_psi: float

    @property
    def log_norm(self) -> float:
        return math.log(self.N**2)

    @property
    def fN(self) -> float:
        return self.logZ / self.log_norm

    @property
    def fN_rho(self) -> float:
        return self.logZ_rho / self.log_norm

    @property
    def f_comp(self) -> float:
        """Free energy of the complement of A_{N,rho}."""
        return self.logZ_comp / self.log_norm

    @property
    def xi(self) -> float:
        return self.max_psi / self.log_norm

    @property
    def boundary_mass(self) -> float:
        return float(np.exp(self.logZ_comp - self.logZ))


def build_ensemble(psi: np.ndarray, N: int, beta: float, rho: float = 1.0, allow_empty: bool = False) -> GibbsEnsemble:
    """Gibbs measures on V_N and on A_{N,rho} for one field realization."""
    if beta <= 0:
        raise ParamError("beta must be positive")
    mask = restricted_set(N, rho)
    if not mask.any() and not allow_empty:
        raise EmptyRestriction(f"A_(N={N}, rho={rho}) is empty")
    w, logZ = gibbs_weights(psi, beta)
    x = beta * psi
    logZ_rho = float(logsumexp(x[mask])) if mask.any() else -np.inf
    logZ_comp = float(logsumexp(x[~mask])) if (~mask).any() else -np.inf
    w_rho = gibbs_weights(psi, beta, mask)[0] if mask.any() else None
    return GibbsEnsemble(N, beta, rho, psi, w, w_rho, logZ, logZ_rho, logZ_comp, float(np.max(psi)))


def boundary_mass(psi: np.ndarray, N: int, beta: float, rho: float) -> float:
    """Gibbs mass of the complement of A_{N,rho} (equals 1 when A is empty)."""
    return build_ensemble(psi, N, beta, rho, allow_empty=True).boundary_mass


def high_point_counts(psi: np.ndarray, N: int, gammas) -> np.ndarray:
    """Number of vertices with ``psi_v >= gamma log N^2`` for each gamma."""
    gammas = np.asarray(gammas, dtype=float)
    s = np.sort(psi)
    thr = gammas * math.log(N**2)
    return len(s) - np.searchsorted(s, thr, side="left")


def normalized_log_counts(psi: np.ndarray, N: int, gammas) -> np.ndarray:
    c = high_point_counts(psi, N, gammas).astype(float)
    with np.errstate(divide="ignore"):
        return np.log(c) / math.log(N**2)


def sample_replicas(weights: np.ndarray, count: int, seed) -> np.ndarray:
    """i.i.d. vertex draws by inverse CDF."""
    cdf = np.cumsum(weights)
    u = np.random.default_rng(seed).random(count) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)


# ---------------------------------------------------------------- exact replica moments

def replica_moment(w: np.ndarray, n_replicas: int, node: dict | None = None, edges: Sequence = ()) -> float:
    """Exact ``sum over v_1..v_n of prod w(v_i) prod node_i(v_i) prod edge_e(v_a, v_b)``.

    ``node`` maps replica index to a vertex vector; ``edges`` lists
    ``(a, b, M)`` with ``M[v_a, v_b]``. Parallel edges are multiplied
    elementwise. The replica graph must be a forest; each edge then costs one
    matrix-vector product.
    """
    node = dict(node or {})
    merged: dict[tuple[int, int], np.ndarray] = {}
    for a, b, M in edges:
        if a == b:
            raise ValueError("self edge: use a node factor")
        if a > b:
            a, b, M = b, a, M.T
        merged[(a, b)] = merged[(a, b)] * M if (a, b) in merged else M
    parent = list(range(n_replicas))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    adj: dict[int, list] = {i: [] for i in range(n_replicas)}
    for (a, b), M in merged.items():
        ra, rb = find(a), find(b)
        if ra == rb:
            raise ValueError("replica graph has a cycle; exact evaluation unsupported")
        parent[ra] = rb
        adj[a].append((b, M))      # M[v_a, v_b]
        adj[b].append((a, M.T))

    seen = [False] * n_replicas
    total = 1.0
    for i in range(n_replicas):
        if not seen[i]:
            total *= float(_message(i, -1, w, node, adj, seen).sum())
    return total


def _message(i, parent_i, w, node, adj, seen) -> np.ndarray:
    # vector over v_i of w * node * prod of child messages; module level so no
    # closure cycle keeps the edge matrices alive
    seen[i] = True
    vec = w.copy()
    if i in node:
        vec = vec * node[i]
    for j, M in adj[i]:
        if j != parent_i:
            vec = vec * (M @ _message(j, i, w, node, adj, seen))
    return vec


@dataclass(frozen=True)
class PairIndicator:
    """``1{lo < q(v^a, v^b) <= hi}`` on replica indices a, b (0-based)."""

    a: int
    b: int
    lo: float
    hi: float

    def matrix(self, Q: np.ndarray) -> np.ndarray:
        return ((Q > self.lo) & (Q <= self.hi)).astype(float)


@dataclass(frozen=True)
class OverlapFunction:
    """``h = const * prod of pair indicators`` on s replicas."""

    s: int
    factors: tuple = ()
    const: float = 1.0

    def edges(self, Q: np.ndarray) -> list:
        return [(f.a, f.b, f.matrix(Q)) for f in self.factors]

    def evaluate(self, Qsub: np.ndarray) -> float:
        """Value on an s x s overlap array of concrete replicas."""
        out = self.const
        for f in self.factors:
            q = Qsub[f.a, f.b]
            out *= float(f.lo < q <= f.hi)
        return out

    @property
    def sup_norm(self) -> float:
        return abs(self.const)


def window_function(prof, alpha: float, alpha_prime: float) -> Callable[[np.ndarray], np.ndarray]:
    """``q -> integral over (Jbar(alpha), Jbar(alpha')] of 1{r < q} dr``."""
    a, b = float(prof.Jbar(alpha)), float(prof.Jbar(alpha_prime))
    return lambda q: np.clip(q - a, 0.0, b - a)


def check_window(prof, beta: float, alpha: float, alpha_prime: float) -> None:
    """Require lambda^{j-1} < alpha < alpha' < lambda^{j'} with j' = m when j = l_beta."""
    if not alpha < alpha_prime:
        raise ParamError("need alpha < alpha'")
    lam = prof.eff_scales
    lb = l_beta(prof, beta)
    for j in range(1, lb + 1):
        if j > prof.m:
            break
        top = lam[prof.m] if j == lb else lam[j]
        if lam[j - 1] < alpha and alpha_prime < top:
            return
    raise ParamError(f"(alpha, alpha') = ({alpha}, {alpha_prime}) not between effective scales")


@dataclass
class GGTerms:
    """Per-field inner expectations entering the Ghirlanda-Guerra residual."""

    t_extra: float   # E G^{s+1}[Phi(q_{k,s+1}) h]
    t_pair: float    # E G^2[Phi(q_12)]
    t_h: float       # E G^s[h]
    t_within: float  # sum_{l != k} E G^s[Phi(q_kl) h]


def gg_terms(w: np.ndarray, Q: np.ndarray, PhiQ: np.ndarray, h: OverlapFunction, k: int) -> GGTerms:
    s = h.s
    he = h.edges(Q)
    t_extra = h.const * replica_moment(w, s + 1, edges=he + [(k, s, PhiQ)])
    t_pair = replica_moment(w, 2, edges=[(0, 1, PhiQ)])
    t_h = h.const * replica_moment(w, s, edges=he)
    t_within = sum(h.const * replica_moment(w, s, edges=he + [(k, l, PhiQ)]) for l in range(s) if l != k)
    return GGTerms(t_extra, t_pair, t_h, t_within)


def gg_residual_from_terms(terms: Sequence[GGTerms], s: int, seed=None) -> MCEstimate:
    """Residual ``E[t_extra] - E[t_pair] E[t_h] / s - E[t_within] / s`` with delta-method SE."""
    X = np.array([[t.t_extra, t.t_pair, t.t_h, t.t_within] for t in terms])
    n = len(X)
    m = X.mean(axis=0)
    est = m[0] - m[1] * m[2] / s - m[3] / s
    grad = np.array([1.0, -m[2] / s, -m[1] / s, -1.0 / s])
    if n > 1:
        cov = np.cov(X, rowvar=False)
        se = math.sqrt(max(grad @ cov @ grad, 0.0) / n)
    else:
        se = 0.0
    return MCEstimate(est, se, n, seed)


def brute_force_gg_terms(w, Q, PhiQ, h: OverlapFunction, k: int) -> GGTerms:
    """Exhaustive enumeration over all replica tuples (tiny vertex sets only)."""
    import itertools

    n, s = len(w), h.s
    t_extra = t_h = t_within = 0.0
    for tup in itertools.product(range(n), repeat=s):
        wt = np.prod(w[list(tup)])
        hv = h.evaluate(Q[np.ix_(tup, tup)])
        t_h += wt * hv
        t_within += wt * hv * sum(PhiQ[tup[k], tup[l]] for l in range(s) if l != k)
        t_extra += wt * hv * float(w @ PhiQ[tup[k]])
    t_pair = float(w @ PhiQ @ w)
    return GGTerms(t_extra, t_pair, t_h, t_within)


# ---------------------------------------------------------------- studies

@dataclass
class StudyContext:
    """Shared exact model and sampler for one (N, params) pair."""

    model: FieldModel
    cuts: tuple = ()

    def __post_init__(self):
        self.sampler = self.model.sampler(self.cuts)

    @property
    def N(self) -> int:
        return self.model.N


class ModelCache:
    """Reuses exact models and samplers across studies, keyed by (N, params, cuts)."""

    def __init__(self, rounding: str = "floor"):
        self.rounding = rounding
        self._items: dict = {}

    def get(self, N: int, params: FieldParams, cuts=()) -> StudyContext:
        key = (N, params, tuple(cuts))
        if key not in self._items:
            extra = tuple(x for c in cuts for x in c)
            self._items[key] = StudyContext(FieldModel(N, params, extra, rounding=self.rounding), tuple(cuts))
        return self._items[key]

    def clear(self) -> None:
        self._items.clear()


def _context(N, params, cuts=(), cache: ModelCache | None = None) -> StudyContext:
    return (cache or ModelCache()).get(N, params, cuts)


def free_energy_samples(ctx: StudyContext, beta: float, rho: float, seeds) -> list[GibbsEnsemble]:
    psi = ctx.sampler.psi(seeds)
    return [build_ensemble(psi[:, i], ctx.N, beta, rho, allow_empty=True) for i in range(psi.shape[1])]


@dataclass
class ConvergenceReport:
    beta: float
    Ns: list
    f_limit: float
    # deviations[seed_index][N_index] = median |f_N - f| over that seed's fields
    median_dev: np.ndarray
    mean_fN: np.ndarray
    sd_fN: np.ndarray
    decreasing_fraction: float


def free_energy_convergence_study(params: FieldParams, beta: float, Ns, samples_per_N: int, master_seeds,
                                  rho: float = 1.0, contexts: ModelCache | None = None) -> ConvergenceReport:
    """Paired-seed study of ``|f_N - f(beta)|`` across N."""
    f_lim = free_energy(build_speed_profile(params), beta)
    med = np.zeros((len(master_seeds), len(Ns)))
    allf = [[] for _ in Ns]
    for j, N in enumerate(Ns):
        ctx = _context(N, params, cache=contexts)
        for i, ms in enumerate(master_seeds):
            seeds = seeding.field_seeds(ms, "free-energy", samples_per_N)
            ens = free_energy_samples(ctx, beta, rho, seeds)
            f = np.array([e.fN_rho if rho < 1 else e.fN for e in ens])
            med[i, j] = np.median(np.abs(f - f_lim))
            allf[j].extend(f)
    dec = np.all(np.diff(med, axis=1) < 0, axis=1)
    return ConvergenceReport(beta, list(Ns), f_lim, med, np.array([np.mean(a) for a in allf]),
                             np.array([np.std(a) for a in allf]), float(dec.mean()))


@dataclass
class OverlapCdfEstimate:
    r: np.ndarray
    cdf: np.ndarray
    se: np.ndarray
    cdf_rho: np.ndarray | None
    se_rho: np.ndarray | None
    n_fields: int


def inner_overlap_cdf(w: np.ndarray, Q: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Exact ``sum_{v,v'} w_v w_v' 1{Q <= r}`` for each r."""
    nz = np.flatnonzero(w > 0)
    wq = w[nz]
    Qs = Q[np.ix_(nz, nz)].ravel()
    ws = np.outer(wq, wq).ravel()
    order = np.argsort(Qs, kind="stable")
    cum = np.concatenate(([0.0], np.cumsum(ws[order])))
    # tolerance: diagonal overlaps equal 1 only up to rounding
    idx = np.searchsorted(Qs[order], np.asarray(r) + 1e-12, side="right")
    return cum[idx]


def empirical_two_overlap_cdf(params: FieldParams, beta: float, N: int, rho: float, field_samples: int,
                              seed: int, r_grid=None, replica_pairs: int = 0,
                              contexts: ModelCache | None = None) -> OverlapCdfEstimate:
    """Field-averaged two-overlap CDF on V_N and on A_{N,rho}.

    Inner Gibbs expectations are exact double sums; ``replica_pairs > 0``
    switches to sampled replica pairs instead.
    """
    check_noncritical(build_speed_profile(params), beta)
    ctx = _context(N, params, cache=contexts)
    Q = ctx.model.q
    r = np.linspace(-0.2, 1.0, 121) if r_grid is None else np.asarray(r_grid, dtype=float)
    mask = restricted_set(N, rho)
    seeds = seeding.field_seeds(seed, "two-overlap", field_samples)
    psi = ctx.sampler.psi(seeds)
    rows, rows_rho = [], []
    for i in range(field_samples):
        ens = build_ensemble(psi[:, i], N, beta, rho, allow_empty=True)
        if replica_pairs:
            rr = np.random.default_rng(seeding.derive_seed(seed, "two-overlap-replicas", i))
            a = sample_replicas(ens.weights, replica_pairs, rr)
            b = sample_replicas(ens.weights, replica_pairs, rr)
            qs = np.sort(Q[a, b])
            rows.append(np.searchsorted(qs, r + 1e-12, side="right") / replica_pairs)
        else:
            rows.append(inner_overlap_cdf(ens.weights, Q, r))
        if mask.any():
            rows_rho.append(inner_overlap_cdf(ens.weights_rho, Q, r))
    X = np.array(rows)
    sd = X.std(axis=0, ddof=1) / math.sqrt(len(X)) if len(X) > 1 else np.zeros(len(r))
    if rows_rho:
        Y = np.array(rows_rho)
        sdr = Y.std(axis=0, ddof=1) / math.sqrt(len(Y)) if len(Y) > 1 else np.zeros(len(r))
        return OverlapCdfEstimate(r, X.mean(axis=0), sd, Y.mean(axis=0), sdr, field_samples)
    return OverlapCdfEstimate(r, X.mean(axis=0), sd, None, None, field_samples)


def gg_residual(params: FieldParams, beta: float, N: int, rho: float, h: OverlapFunction, k: int,
                alpha: float, alpha_prime: float, field_samples: int, seed: int,
                contexts: ModelCache | None = None, check: bool = True) -> MCEstimate:
    """Finite-N Ghirlanda-Guerra residual with common random numbers across its terms.

    ``rho = 1`` uses the Gibbs measure on all of V_N.
    """
    prof = build_speed_profile(params)
    check_noncritical(prof, beta)
    if check:
        check_window(prof, beta, alpha, alpha_prime)
    ctx = _context(N, params, cache=contexts)
    Q = ctx.model.q
    PhiQ = window_function(prof, alpha, alpha_prime)(Q)
    seeds = seeding.field_seeds(seed, "gg", field_samples)
    psi = ctx.sampler.psi(seeds)
    terms = []
    for i in range(field_samples):
        ens = build_ensemble(psi[:, i], N, beta, rho)
        w = ens.weights if rho >= 1 else ens.weights_rho
        terms.append(gg_terms(w, Q, PhiQ, h, k))
    return gg_residual_from_terms(terms, h.s, seed)


@dataclass
class BKResult:
    lhs: MCEstimate
    rhs: MCEstimate
    diff: MCEstimate


def bovier_kurkova_check(params: FieldParams, beta: float, N: int, rho: float, alpha: float, alpha_prime: float,
                         s: int, k: int, h: OverlapFunction | None, field_samples: int, seed: int,
                         contexts: ModelCache | None = None, batch: int = 2000) -> BKResult:
    """Gaussian integration by parts identity for the Gibbs measure, paired per field.

    LHS = E G^s[psi_{v^k}(alpha, alpha') h] / (beta D)
    RHS = sum_l E G^s[q_{alpha,alpha'}(v^k, v^l) h] - s E G^{s+1}[q_{alpha,alpha'}(v^k, v^{s+1}) h]
    """
    h = h or OverlapFunction(s)
    ctx = _context(N, params, cuts=((alpha, alpha_prime),), cache=contexts)
    m = ctx.model
    Qa = m.q_increment(alpha, alpha_prime)
    Q = m.q
    he = h.edges(Q)
    diagQa = np.diag(Qa).copy()
    mask = restricted_set(N, rho)
    if not mask.any():
        raise EmptyRestriction(f"A_(N={N}, rho={rho}) is empty")
    lhs_v, rhs_v = [], []
    all_seeds = seeding.field_seeds(seed, "bk", field_samples)
    for start in range(0, field_samples, batch):
        seeds = all_seeds[start:start + batch]
        psi, cut = ctx.sampler.psi_and_cuts(seeds)
        psi_a = cut[(alpha, alpha_prime)]
        for i in range(psi.shape[1]):
            w = gibbs_weights(psi[:, i], beta, None if rho >= 1 else mask)[0]
            lhs = h.const * replica_moment(w, s, node={k: psi_a[:, i]}, edges=he) / (beta * m.D)
            rhs = 0.0
            for l in range(s):
                if l == k:
                    rhs += h.const * replica_moment(w, s, node={k: diagQa}, edges=he)
                else:
                    rhs += h.const * replica_moment(w, s, edges=he + [(k, l, Qa)])
            rhs -= s * h.const * replica_moment(w, s + 1, edges=he + [(k, s, Qa)])
            lhs_v.append(lhs)
            rhs_v.append(rhs)
    lhs_v, rhs_v = np.array(lhs_v), np.array(rhs_v)
    return BKResult(MCEstimate.from_values(lhs_v, seed), MCEstimate.from_values(rhs_v, seed),
                    MCEstimate.from_values(lhs_v - rhs_v, seed))


def direct_differentiation_check(params: FieldParams, beta: float, N: int, rho: float, alpha: float,
                                 alpha_prime: float, field_samples: int, seed: int, step: float = 1e-4,
                                 contexts: ModelCache | None = None) -> tuple[MCEstimate, MCEstimate]:
    """Paired finite difference of ``E f_{N,rho}^{psi^u}`` at u = 0 versus
    ``beta E G[phi(alpha, alpha')] / log N^2``. Returns (fd, derivative)."""
    ctx = _context(N, params, cache=contexts)
    m = ctx.model
    Phi_op = m.interior_op(m.ops.phi_increment_operator(alpha, alpha_prime))
    Bphi = np.asarray(Phi_op @ m.chol)
    mask = restricted_set(N, rho)
    seeds = seeding.field_seeds(seed, "direct-diff", field_samples)
    Z = ctx.sampler.normals(seeds)
    psi, phi_a = ctx.sampler.B @ Z, Bphi @ Z
    ln = math.log(N**2)
    fd, der = [], []
    for i in range(field_samples):
        x, y = psi[:, i], phi_a[:, i]
        fp = gibbs_weights(x + step * y, beta, mask)[1]
        fm = gibbs_weights(x - step * y, beta, mask)[1]
        fd.append((fp - fm) / (2 * step * ln))
        w = gibbs_weights(x, beta, mask)[0]
        der.append(beta * float(w @ y) / ln)
    return MCEstimate.from_values(fd, seed), MCEstimate.from_values(der, seed)


def ultrametricity_statistic(params: FieldParams, beta: float, N: int, rho: float, eps: float,
                             field_samples: int, triplets_per_field: int, seed: int,
                             contexts: ModelCache | None = None) -> MCEstimate:
    """Probability under three Gibbs replicas that ``q12 < min(q13, q23) - eps``.

    The triangle is not a forest, so inner expectations use sampled triplets.
    """
    if eps >= 2:
        return MCEstimate(0.0, 0.0, field_samples, seed)
    ctx = _context(N, params, cache=contexts)
    Q = ctx.model.q
    mask = restricted_set(N, rho)
    seeds = seeding.field_seeds(seed, "ultrametric", field_samples)
    psi = ctx.sampler.psi(seeds)
    vals = []
    for i in range(field_samples):
        w = gibbs_weights(psi[:, i], beta, None if rho >= 1 else mask)[0]
        r = seeding.rng(seed, "ultrametric-replicas", i)
        v = sample_replicas(w, 3 * triplets_per_field, r).reshape(3, -1)
        q12, q13, q23 = Q[v[0], v[1]], Q[v[0], v[2]], Q[v[1], v[2]]
        vals.append(np.mean(q12 < np.minimum(q13, q23) - eps))
    return MCEstimate.from_values(vals, seed)


def boundary_mass_study(params: FieldParams, beta: float, Ns, rho: float, field_samples: int, seed: int,
                        contexts: ModelCache | None = None) -> list[MCEstimate]:
    out = []
    for N in Ns:
        ctx = _context(N, params, cache=contexts)
        seeds = seeding.field_seeds(seed, "boundary-mass", field_samples)
        psi = ctx.sampler.psi(seeds)
        vals = [boundary_mass(psi[:, i], N, beta, rho) for i in range(field_samples)]
        out.append(MCEstimate.from_values(vals, seed))
    return out
