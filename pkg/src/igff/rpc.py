"""Ruelle probability cascades: sampling, replica overlaps and exact-law checks.

Nodes of the cascade tree are generated lazily from ``(seed, path)`` so
deep trees with many children per node never have to be materialized; a
node's points depend only on its path, so every query sees the same tree.

Each node keeps its ``K`` largest Poisson points. The discarded points
carry, in expectation given the K-th point ``z_K``, the mass
``zeta / (1 - zeta) * z_K^(1 - zeta)``. With ``tail='dust'`` (default) that
mass is kept as an extra child made of infinitely many infinitesimal
atoms: a replica landing there never shares that child with any other
replica. ``tail='renormalize'`` drops it and renormalizes the kept weights.

Two constructions are available. ``independent`` normalizes every node's
Poisson points on their own, so node weights at depth p are PD(zeta_p, 0)
and independent. ``standard`` gives the cascade whose weights are the
globally normalized products of Poisson points; its node weights at depth p
are PD(zeta_p, -zeta_{p-1}) (stick-breaking, with the exact unbroken
remainder as dust), which makes ``P(R_12 <= q_j) = zeta_j`` at every level.
The two agree when r <= 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analytics import LimitLaw
from .gibbs import GGTerms, MCEstimate, gg_residual_from_terms

TAILS = ("dust", "renormalize")
CONSTRUCTIONS = ("standard", "independent")


@dataclass(frozen=True)
class CascadeParams:
    r: int
    zetas: tuple
    qs: tuple
    K: int = 512
    tail: str = "dust"
    construction: str = "standard"

    def __post_init__(self):
        zetas = tuple(float(z) for z in self.zetas)
        qs = tuple(float(q) for q in self.qs)
        object.__setattr__(self, "zetas", zetas)
        object.__setattr__(self, "qs", qs)
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if len(zetas) != self.r or len(qs) != self.r + 1:
            raise ValueError("need r zetas and r + 1 overlap values")
        if any(not 0 < z < 1 for z in zetas) or any(b <= a for a, b in zip(zetas, zetas[1:])):
            raise ValueError("zetas must be strictly increasing in (0, 1)")
        if qs[0] != 0 or any(b <= a for a, b in zip(qs, qs[1:])) or qs[-1] > 1:
            raise ValueError("qs must satisfy 0 = q_0 < ... < q_r <= 1")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.tail not in TAILS:
            raise ValueError(f"tail must be one of {TAILS}")
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"construction must be one of {CONSTRUCTIONS}")

    def node_law(self, depth: int) -> tuple[float, float]:
        """(alpha, theta) of the Poisson-Dirichlet law of node weights at ``depth``."""
        alpha = self.zetas[depth]
        theta = -self.zetas[depth - 1] if (self.construction == "standard" and depth > 0) else 0.0
        return alpha, theta

    def level_moment(self, level: int) -> float:
        """``1 - zeta_level``: PD(zeta_level, 0) second moment of the cluster masses at depth level + 1."""
        return 1.0 - self.zetas[level]

    @classmethod
    def from_limit_law(cls, law: LimitLaw, K: int = 512, tail: str = "dust",
                       construction: str = "standard") -> "CascadeParams":
        p = law.rpc
        return cls(p.r, tuple(p.zetas), tuple(p.qs), K, tail, construction)


def poisson_points(zeta: float, K: int, rng: np.random.Generator) -> np.ndarray:
    """K largest points of a Poisson process with intensity ``zeta x^(-1-zeta) dx``, decreasing."""
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    gam = np.cumsum(rng.standard_exponential(K))
    return gam ** (-1.0 / zeta)


def sample_poisson_points(zeta: float, K: int, seed) -> np.ndarray:
    return poisson_points(zeta, K, np.random.default_rng(seed))


def tail_mass(zeta: float, zK: float) -> float:
    """Expected total of the points below ``zK``."""
    return zeta / (1.0 - zeta) * zK ** (1.0 - zeta)


def stick_breaking(alpha: float, theta: float, K: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """First K GEM(alpha, theta) sticks and the unbroken remainder."""
    i = np.arange(1, K + 1)
    V = rng.beta(1.0 - alpha, theta + i * alpha)
    left = np.concatenate(([1.0], np.cumprod(1.0 - V)))
    return V * left[:-1], float(left[-1])


def pd_node(alpha: float, theta: float, K: int, rng: np.random.Generator, tail: str) -> "CascadeNode":
    """Kept weights (decreasing) and dust mass of one PD(alpha, theta) node."""
    if theta == 0.0:
        z = poisson_points(alpha, K, rng)
        S = z.sum()
        T = tail_mass(alpha, z[-1]) if tail == "dust" else 0.0
        return CascadeNode(z, z / (S + T), T / (S + T))
    w, rest = stick_breaking(alpha, theta, K, rng)
    w = np.sort(w)[::-1]
    if tail == "dust":
        return CascadeNode(w, w, rest)
    return CascadeNode(w, w / w.sum(), 0.0)


@dataclass(frozen=True)
class CascadeNode:
    points: np.ndarray
    weights: np.ndarray
    dust: float

    @property
    def probs(self) -> np.ndarray:
        """Child probabilities with the dust child last."""
        return np.append(self.weights, self.dust)


def _seed_words(seed) -> list[int]:
    if isinstance(seed, np.random.SeedSequence):
        return list(np.atleast_1d(seed.entropy)) + list(seed.spawn_key)
    return [int(s) for s in np.atleast_1d(seed)]


class CascadeTree:
    """Lazily generated truncated cascade."""

    def __init__(self, params: CascadeParams, seed):
        self.params = params
        self.seed = seed
        self._words = _seed_words(seed)
        self._nodes: dict[tuple, CascadeNode] = {}

    @property
    def r(self) -> int:
        return self.params.r

    def node(self, path: tuple) -> CascadeNode:
        path = tuple(int(p) for p in path)
        nd = self._nodes.get(path)
        if nd is None:
            depth = len(path)
            if depth >= self.r:
                raise ValueError("leaves have no children")
            alpha, theta = self.params.node_law(depth)
            rng = np.random.default_rng(self._words + [0x5EED, depth] + list(path))
            nd = pd_node(alpha, theta, self.params.K, rng, self.params.tail)
            self._nodes[path] = nd
        return nd

    def leaf_masses(self) -> tuple[np.ndarray, float]:
        """All explicit leaf masses (K^r of them) and the total dust mass."""
        if self.params.K ** self.r > 2_000_000:
            raise ValueError("tree too large to enumerate")
        masses = np.array([1.0])
        dust = 0.0
        frontier = [()]
        for depth in range(self.r):
            new_m, new_f = [], []
            for m, path in zip(masses, frontier):
                nd = self.node(path)
                dust += m * nd.dust
                new_m.append(m * nd.weights)
                new_f.extend(path + (i,) for i in range(self.params.K))
            masses = np.concatenate(new_m)
            frontier = new_f
        return masses, dust


def sample_leaf_paths(tree: CascadeTree, count: int, seed) -> np.ndarray:
    """Replica leaf paths, shape (count, r). Dust children get the unique label ``-1 - replica``."""
    r = tree.r
    paths = np.zeros((count, r), dtype=np.int64)
    if r == 0:
        return paths
    u = np.random.default_rng(seed).random((count, r))
    K = tree.params.K
    active = np.ones(count, dtype=bool)
    for d in range(r):
        idx = np.flatnonzero(active)
        if d == 0:
            groups = {(): idx}
        else:
            keys = paths[idx, :d]
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.ravel()
            groups = {tuple(uniq[g]): idx[inv == g] for g in range(len(uniq))}
        for prefix, members in groups.items():
            cdf = np.cumsum(tree.node(prefix).probs)
            choice = np.minimum(np.searchsorted(cdf, u[members, d] * cdf[-1], side="right"), K)
            paths[members, d] = choice
        dusty = active & (paths[:, d] == K)
        paths[dusty, d:] = (-1 - np.flatnonzero(dusty))[:, None]
        active &= ~dusty
    return paths


def common_depth(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Depth of the deepest common ancestor of paired leaf paths."""
    eq = (pa == pb) & (pa >= 0)
    return np.cumprod(eq, axis=-1).sum(axis=-1)


@dataclass
class ReplicaOverlapArray:
    paths: np.ndarray = field(repr=False)
    qs: np.ndarray

    @property
    def count(self) -> int:
        return len(self.paths)

    def depth_matrix(self) -> np.ndarray:
        r = self.paths.shape[1]
        D = common_depth(self.paths[:, None, :], self.paths[None, :, :])
        np.fill_diagonal(D, r)
        return D

    def matrix(self) -> np.ndarray:
        return np.asarray(self.qs)[self.depth_matrix()]

    def pair(self, a, b) -> np.ndarray:
        a, b = np.asarray(a), np.asarray(b)
        d = common_depth(self.paths[a], self.paths[b])
        d = np.where(a == b, self.paths.shape[1], d)
        return np.asarray(self.qs)[d]


def sample_cascade_replicas(tree: CascadeTree, count: int, seed) -> ReplicaOverlapArray:
    return ReplicaOverlapArray(sample_leaf_paths(tree, count, seed), np.asarray(tree.params.qs))


def _tree_seed(seed, t: int) -> list[int]:
    return _seed_words(seed) + [0x7EE, t]


def _replica_seed(seed, t: int) -> list[int]:
    return _seed_words(seed) + [0x4E9, t]


def node_moment(params: CascadeParams, level: int, trees: int, seed) -> MCEstimate:
    """``E sum_n w_n^2`` over the kept children of one node at depth ``level`` (dust adds nothing).

    Equals ``(1 - alpha) / (1 + theta)`` for the node's PD(alpha, theta) law.
    """
    vals = []
    for t in range(trees):
        tree = CascadeTree(params, _tree_seed(seed, t))
        w = tree.node((0,) * level).weights
        vals.append(float(w @ w))
    return MCEstimate.from_values(vals, seed)


def pd_moment(params: CascadeParams, level: int, trees: int, seed) -> MCEstimate:
    """``E sum_v G(v)^2`` over the cluster masses at depth ``level + 1``.

    Node weights at different depths are independent, so the product of the
    node moments along one path is an unbiased per-tree estimate.
    """
    vals = []
    for t in range(trees):
        tree = CascadeTree(params, _tree_seed(seed, t))
        prod = 1.0
        for d in range(level + 1):
            w = tree.node((0,) * d).weights
            prod *= float(w @ w)
        vals.append(prod)
    return MCEstimate.from_values(vals, seed)


def cascade_overlap_cdf(params: CascadeParams, trees: int, pairs_per_tree: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Tree-averaged ``P(R_12 <= q_j)`` at every atom, with standard errors."""
    rows = []
    for t in range(trees):
        tree = CascadeTree(params, _tree_seed(seed, t))
        paths = sample_leaf_paths(tree, 2 * pairs_per_tree, _replica_seed(seed, t))
        d = common_depth(paths[:pairs_per_tree], paths[pairs_per_tree:])
        rows.append([(d <= j).mean() for j in range(params.r + 1)])
    X = np.array(rows)
    se = X.std(axis=0, ddof=1) / np.sqrt(len(X)) if len(X) > 1 else np.zeros(params.r + 1)
    return X.mean(axis=0), se


def ultrametric_violations(params: CascadeParams, trees: int, triples_per_tree: int, seed, eps: float = 0.0) -> int:
    """Count of triples with ``R_12 < min(R_13, R_23) - eps``."""
    bad = 0
    for t in range(trees):
        tree = CascadeTree(params, _tree_seed(seed, t))
        p = sample_leaf_paths(tree, 3 * triples_per_tree, _replica_seed(seed, t)).reshape(3, triples_per_tree, -1)
        qs = np.asarray(params.qs)
        q12, q13, q23 = (qs[common_depth(p[a], p[b])] for a, b in ((0, 1), (0, 2), (1, 2)))
        bad += int(np.sum(q12 < np.minimum(q13, q23) - eps))
    return bad


@dataclass(frozen=True)
class AlphabetFunction:
    """Function on the overlap alphabet given as a value table."""

    table: dict

    def check(self, qs: Sequence[float]) -> None:
        if set(np.round(list(self.table), 12)) != set(np.round(list(qs), 12)):
            raise ValueError("function alphabet does not match the cascade overlap values")

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q)
        out = np.zeros(q.shape)
        for key, val in self.table.items():
            out[np.isclose(q, key, atol=1e-12)] = val
        return out


def indicator(qs: Sequence[float], target: float) -> AlphabetFunction:
    return AlphabetFunction({float(q): float(np.isclose(q, target)) for q in qs})


def cascade_gg_check(params: CascadeParams, s: int, k: int, g: AlphabetFunction,
                     h: Callable[[np.ndarray], np.ndarray], trees: int, replicas: int, seed) -> MCEstimate:
    """Extended Ghirlanda-Guerra residual on the cascade.

    ``h`` maps an array of shape (n, s, s) of overlaps to n values. For each
    tree, ``replicas`` tuples of s + 1 replicas share their draws across all
    terms of the identity.
    """
    g.check(params.qs)
    terms = []
    for t in range(trees):
        tree = CascadeTree(params, _tree_seed(seed, t))
        paths = sample_leaf_paths(tree, (s + 1) * replicas, _replica_seed(seed, t)).reshape(s + 1, replicas, -1)
        qs = np.asarray(params.qs)
        R = np.empty((replicas, s + 1, s + 1))
        for a in range(s + 1):
            R[:, a, a] = qs[-1]
            for b in range(a + 1, s + 1):
                R[:, a, b] = R[:, b, a] = qs[common_depth(paths[a], paths[b])]
        hv = h(R[:, :s, :s])
        t_extra = np.mean(g(R[:, k, s]) * hv)
        t_pair = np.mean(g(R[:, 0, 1]))
        t_h = np.mean(hv)
        t_within = np.mean(sum(g(R[:, k, l]) for l in range(s) if l != k) * hv) if s > 1 else 0.0
        terms.append(GGTerms(t_extra, t_pair, t_h, t_within))
    return gg_residual_from_terms(terms, s, seed)


@dataclass
class MatchReport:
    atoms: list
    closed: list
    rpc: list
    rpc_se: list
    field: list | None
    field_se: list | None
    passed: bool

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("atoms", "closed", "rpc", "rpc_se", "field", "field_se", "passed")}


def match_field_to_cascade(law: LimitLaw, rpc_cdf: tuple, field_cdf=None, k: float = 3.0) -> MatchReport:
    """Three-way table at the overlap atoms; gate: cascade vs closed form within k SE."""
    atoms = [float(a) for a in law.atoms]
    closed = [float(c) for c in law.cdf(np.asarray(atoms))]
    rpc_mean, rpc_se = (list(map(float, x)) for x in rpc_cdf)
    ok = all(abs(m - c) <= max(k * s, 1e-12) for m, c, s in zip(rpc_mean, closed, rpc_se))
    fvals = fse = None
    if field_cdf is not None:
        # right-continuous lookup on the estimate's grid
        pos = [max(int(np.searchsorted(field_cdf.r, a + 1e-12, side="right")) - 1, 0) for a in atoms]
        fvals = [float(field_cdf.cdf[i]) for i in pos]
        fse = [float(field_cdf.se[i]) for i in pos]
    return MatchReport(atoms, closed, rpc_mean, rpc_se, fvals, fse, bool(ok))
