"""Sampling the GFF on V_N and building the scale-inhomogeneous field from it.

All scale-decomposed quantities are linear in the GFF: ``phi_v(lambda) =
(H_lambda phi)_v`` where row v of the sparse operator ``H_lambda`` is the
hitting distribution on the boundary of ``[v]_lambda``. Hence
``psi = S phi`` for a sparse operator S and every covariance is an exact
quadratic form ``S G S^T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .analytics import FieldParams, PerturbedProfile, SpeedProfile, build_speed_profile
from .lattice import GreenOperator, HarmonicCache, LatticeBox, green_matrix, harmonic_operator

N_EXACT_MAX = 64


class EmptyRestriction(ValueError):
    """A_{N,rho} has no vertices."""


@dataclass(frozen=True)
class FieldSample:
    N: int
    phi: np.ndarray
    phi_at_scale: dict | None = None
    psi: np.ndarray | None = None
    psi_u: np.ndarray | None = None
    seed: object = None

    def to_csv(self, path) -> None:
        n1 = self.N + 1
        xs, ys = np.divmod(np.arange(n1 * n1), n1)
        psi = self.psi if self.psi is not None else np.full(n1 * n1, np.nan)
        with open(path, "w") as fh:
            fh.write("x,y,phi,psi\n")
            for x, y, a, b in zip(xs, ys, self.phi, psi):
                fh.write(f"{x},{y},{a:.17g},{b:.17g}\n")


def vertex_coords(N: int) -> np.ndarray:
    n1 = N + 1
    xs, ys = np.divmod(np.arange(n1 * n1), n1)
    return np.stack([xs, ys], axis=1)


def exterior_distance(N: int) -> np.ndarray:
    """Euclidean distance from each vertex of V_N to Z^2 minus V_N."""
    c = vertex_coords(N)
    return np.minimum.reduce([c[:, 0] + 1, N + 1 - c[:, 0], c[:, 1] + 1, N + 1 - c[:, 1]]).astype(float)


def restricted_set(N: int, rho: float) -> np.ndarray:
    """Boolean mask of A_{N,rho}: vertices at distance >= N^(1-rho) from the exterior."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    return exterior_distance(N) >= N ** (1.0 - rho) * (1 - 1e-12)


def branching_scale(N: int, v, w) -> float:
    """Largest scale at which the neighbourhoods of v and w intersect."""
    v, w = np.asarray(v), np.asarray(w)
    d = np.max(np.abs(v - w), axis=-1)
    with np.errstate(divide="ignore"):
        b = 1.0 - np.log(np.maximum(d, 1)) / math.log(N)
    b = np.clip(b, 0.0, 1.0)
    return np.where(d == 0, 1.0, b)


def branching_matrix(N: int, idx: np.ndarray | None = None) -> np.ndarray:
    c = vertex_coords(N)
    if idx is not None:
        c = c[idx]
    d = np.max(np.abs(c[:, None, :] - c[None, :, :]), axis=-1)
    with np.errstate(divide="ignore"):
        b = 1.0 - np.log(np.maximum(d, 1)) / math.log(N)
    b = np.clip(b, 0.0, 1.0)
    b[d == 0] = 1.0
    return b


class ScaleOperators:
    """Harmonic operators on V_N for a grid of scales, plus psi assembly."""

    def __init__(self, N: int, scales, cache: HarmonicCache | None = None, rounding: str = "floor"):
        self.N = N
        self.rounding = rounding
        grid = sorted(set(float(s) for s in scales) | {0.0, 1.0})
        self.cache = cache or HarmonicCache()
        self.H = {s: harmonic_operator(N, s, self.cache, rounding) for s in grid}
        self.n = (N + 1) ** 2

    @property
    def scales(self) -> list[float]:
        return sorted(self.H)

    def add_scale(self, s: float) -> None:
        s = float(s)
        if s not in self.H:
            self.H[s] = harmonic_operator(self.N, s, self.cache, self.rounding)

    def op(self, s: float) -> sp.csr_matrix:
        s = float(s)
        if s <= 0:
            return sp.csr_matrix((self.n, self.n))
        self.add_scale(s)
        return self.H[s]

    def psi_operator(self, params: FieldParams, cut: float = 1.0) -> sp.csr_matrix:
        """Sparse S with ``S phi = psi(cut)``; cut = 1 gives psi itself."""
        grid = params.grid
        S = sp.csr_matrix((self.n, self.n))
        for i, sig in enumerate(params.sigma, start=1):
            hi, lo = min(grid[i], cut), min(grid[i - 1], cut)
            if hi > lo:
                S = S + sig * (self.op(hi) - self.op(lo))
        return S.tocsr()

    def psi_increment_operator(self, params: FieldParams, a: float, b: float) -> sp.csr_matrix:
        """``psi(a, b) = psi(b) - psi(a)``."""
        return (self.psi_operator(params, b) - self.psi_operator(params, a)).tocsr()

    def phi_increment_operator(self, a: float, b: float) -> sp.csr_matrix:
        return (self.op(b) - self.op(a)).tocsr()


def sample_gff(green: GreenOperator, seed, chol: np.ndarray | None = None) -> FieldSample:
    """One exact draw of the GFF on V_N (zero on the boundary)."""
    L = chol if chol is not None else cholesky_factor(green)
    z = np.random.default_rng(seed).standard_normal(L.shape[0])
    phi = green.embedding() @ (L @ z)
    return FieldSample(N=green.box.width - 1, phi=phi, seed=seed)


def cholesky_factor(green: GreenOperator) -> np.ndarray:
    try:
        return sla.cholesky(green.G, lower=True)
    except np.linalg.LinAlgError as exc:
        w = np.linalg.eigvalsh(green.G)
        raise RuntimeError(f"Green matrix not PSD: smallest eigenvalue {w[0]:.3e}") from exc


def scale_decompose(sample: FieldSample, params: FieldParams, ops: ScaleOperators) -> FieldSample:
    """Attach ``phi_v(lambda)`` on the operator grid and ``psi``."""
    at_scale = {s: (ops.op(s) @ sample.phi if s > 0 else np.zeros_like(sample.phi)) for s in ops.scales}
    grid = params.grid
    psi = np.zeros_like(sample.phi)
    for i, sig in enumerate(params.sigma, start=1):
        for s in (grid[i], grid[i - 1]):
            if s not in at_scale:
                at_scale[s] = ops.op(s) @ sample.phi
        psi += sig * (at_scale[grid[i]] - at_scale[grid[i - 1]])
    return replace(sample, phi_at_scale=at_scale, psi=psi)


def perturb_field(sample: FieldSample, pp: PerturbedProfile, u: float, ops: ScaleOperators) -> FieldSample:
    """``psi^u = u * phi(alpha, alpha') + psi``."""
    if u <= -pp.sigma_star:
        raise ValueError(f"u={u} must exceed -sigma_i* = {-pp.sigma_star}")
    if sample.psi is None:
        sample = scale_decompose(sample, pp.base, ops)
    inc = ops.op(pp.alpha_prime) @ sample.phi - (ops.op(pp.alpha) @ sample.phi if pp.alpha > 0 else 0.0)
    return replace(sample, psi_u=sample.psi + u * inc)


@dataclass
class FieldModel:
    """Exact linear-Gaussian description of psi on V_N for one parameter set.

    ``extra_scales`` adds cuts (e.g. alpha, alpha') to the harmonic grid.
    """

    N: int
    params: FieldParams
    extra_scales: tuple = ()
    green: GreenOperator | None = None
    cache: HarmonicCache | None = None
    rounding: str = "floor"

    def __post_init__(self):
        if self.green is None:
            self.green = green_matrix(LatticeBox.square(self.N))
        self.ops = ScaleOperators(self.N, tuple(self.params.lam) + tuple(self.extra_scales), self.cache,
                                  self.rounding)
        self.E = self.green.embedding()

    @property
    def n(self) -> int:
        return (self.N + 1) ** 2

    @cached_property
    def profile(self) -> SpeedProfile:
        return build_speed_profile(self.params)

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky_factor(self.green)

    @cached_property
    def S(self) -> sp.csr_matrix:
        return self.ops.psi_operator(self.params)

    def interior_op(self, S: sp.spmatrix) -> sp.csr_matrix:
        """Restrict a vertex operator to act on interior GFF values."""
        return (S @ self.E).tocsr()

    def cross_cov(self, S1: sp.spmatrix, S2: sp.spmatrix) -> np.ndarray:
        """Exact ``Cov(S1 phi, S2 phi) = S1 G S2^T`` (dense)."""
        A1, A2 = self.interior_op(S1), self.interior_op(S2)
        left = np.asarray(A1 @ self.green.G)
        return np.asarray((A2 @ left.T).T)

    def pair_cov(self, S1: sp.spmatrix, S2: sp.spmatrix, v: int, w: int) -> float:
        """Single entry of ``S1 G S2^T`` without forming the full matrix."""
        a = self.interior_op(S1)[v].toarray().ravel()
        b = self.interior_op(S2)[w].toarray().ravel()
        return float(a @ self.green.G @ b)

    @cached_property
    def cov_psi(self) -> np.ndarray:
        if self.N > N_EXACT_MAX:
            raise ValueError(f"dense psi covariance limited to N <= {N_EXACT_MAX}")
        C = self.cross_cov(self.S, self.S)
        return 0.5 * (C + C.T)

    @cached_property
    def var_psi(self) -> np.ndarray:
        A = self.interior_op(self.S)
        return np.asarray(((A @ self.green.G) * A.toarray()).sum(axis=1)).ravel()

    @property
    def J1(self) -> float:
        return self.profile.J1

    @cached_property
    def C0(self) -> float:
        return max(0.0, float(self.var_psi.max()) - self.J1 * math.log(self.N))

    @property
    def D(self) -> float:
        """Uniform variance bound used to normalize overlaps."""
        return self.J1 * math.log(self.N) + self.C0

    @cached_property
    def q(self) -> np.ndarray:
        """Overlap matrix ``Cov(psi_v, psi_w) / D``."""
        return self.cov_psi / self.D

    def q_increment(self, a: float, b: float) -> np.ndarray:
        """``Cov(psi_v(a, b), psi_w) / D`` (rows: v, cols: w); not symmetric."""
        Sab = self.ops.psi_increment_operator(self.params, a, b)
        return self.cross_cov(Sab, self.S) / self.D

    def restricted(self, rho: float) -> np.ndarray:
        return restricted_set(self.N, rho)

    def sampler(self, cuts: tuple = ()) -> "PsiSampler":
        return PsiSampler(self, cuts)

    def sample(self, seed) -> FieldSample:
        s = sample_gff(self.green, seed, self.chol)
        return scale_decompose(s, self.params, self.ops)


class PsiSampler:
    """Batch sampler of psi and psi(a, b) increments driven by one normal vector per field.

    Rows of ``B = S E L`` map a standard normal vector to psi, so a batch of
    fields is one dense product. ``cuts`` lists (a, b) increment pairs.
    """

    def __init__(self, model: FieldModel, cuts: tuple = ()):
        self.model = model
        L = model.chol
        self.B = np.asarray(model.interior_op(model.S) @ L)
        self.cuts = tuple(cuts)
        self.B_cut = {
            c: np.asarray(model.interior_op(model.ops.psi_increment_operator(model.params, *c)) @ L) for c in cuts
        }

    def normals(self, seeds) -> np.ndarray:
        d = self.B.shape[1]
        return np.stack([np.random.default_rng(s).standard_normal(d) for s in seeds], axis=1)

    def psi(self, seeds) -> np.ndarray:
        """Columns are psi fields for each seed."""
        return self.B @ self.normals(seeds)

    def psi_and_cuts(self, seeds) -> tuple[np.ndarray, dict]:
        Z = self.normals(seeds)
        return self.B @ Z, {c: Bc @ Z for c, Bc in self.B_cut.items()}


@dataclass
class OverlapReport:
    N: int
    rho: float
    alpha: float
    alpha_prime: float
    n_pairs: int
    max_dev: float
    median_dev: float
    deviations: np.ndarray = field(repr=False)


def overlap_estimate_check(model: FieldModel, rho: float, pairs: np.ndarray, alpha: float = 0.0,
                           alpha_prime: float = 1.0) -> OverlapReport:
    """Compare ``q^N`` (or its increment) with the normalized speed at the branching scale.

    ``pairs`` is an (n, 2) array of vertex indices inside A_{N,rho}.
    """
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptyRestriction("no vertex pairs to compare")
    mask = model.restricted(rho)
    if not mask[pairs].all():
        raise ValueError("pairs must lie in A_{N,rho}")
    coords = vertex_coords(model.N)
    b = branching_scale(model.N, coords[pairs[:, 0]], coords[pairs[:, 1]])
    prof = model.profile
    target = prof.Jbar(np.minimum(alpha_prime, b)) - prof.Jbar(np.minimum(alpha, b))
    if (alpha, alpha_prime) == (0.0, 1.0):
        qv = model.q[pairs[:, 0], pairs[:, 1]]
    else:
        Q = model.q_increment(alpha, alpha_prime)
        qv = Q[pairs[:, 0], pairs[:, 1]]
    dev = np.abs(qv - target)
    return OverlapReport(model.N, rho, alpha, alpha_prime, len(pairs), float(dev.max()), float(np.median(dev)), dev)


def all_pairs(mask: np.ndarray, distinct: bool = False) -> np.ndarray:
    idx = np.flatnonzero(mask)
    a, b = np.meshgrid(idx, idx, indexing="ij")
    p = np.stack([a.ravel(), b.ravel()], axis=1)
    return p[p[:, 0] < p[:, 1]] if distinct else p


def fit_overlap_bound(Ns, rhos, devs) -> tuple[float, float]:
    """Least-squares fit of ``dev ~ C7 / sqrt(log N) + C8 * rho``."""
    Ns, rhos, devs = map(np.asarray, (Ns, rhos, devs))
    X = np.stack([1 / np.sqrt(np.log(Ns)), rhos], axis=1)
    coef, *_ = np.linalg.lstsq(X, devs, rcond=None)
    return float(coef[0]), float(coef[1])
