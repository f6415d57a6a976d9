"""Closed-form limit quantities of the scale-inhomogeneous GFF.

Everything here is a pure function of the variance profile ``(sigma, lambda)``:
the speed function and its concave majorant, effective scales, critical
levels, the entropy of high points, REM and field free energies, the limiting
two-overlap law and the matching Ruelle cascade parameters.

All integrals are of step functions and are evaluated exactly on breakpoint
grids; nothing in this module uses quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CRITICAL_TOL = 1e-12


class ParamError(ValueError):
    """Invalid model parameters."""


class CriticalBeta(ValueError):
    """Raised when beta sits on a critical inverse temperature 2 / sigma_bar_j."""

    def __init__(self, beta: float, index: int):
        self.beta = beta
        self.index = index
        super().__init__(f"beta={beta!r} equals the critical value 2/sigma_bar_{index}")


@dataclass(frozen=True)
class FieldParams:
    """Variance multipliers ``sigma`` on the scale intervals ``(lam[i-1], lam[i]]``."""

    sigma: tuple[float, ...]
    lam: tuple[float, ...]

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        lam = tuple(float(x) for x in self.lam)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lam", lam)
        problems = validate_params(sigma, lam)
        if problems:
            raise ParamError("; ".join(problems))

    @property
    def M(self) -> int:
        return len(self.sigma)

    @property
    def grid(self) -> np.ndarray:
        """Breakpoints ``0 = lam_0 < lam_1 < ... < lam_M = 1``."""
        return np.concatenate(([0.0], self.lam))

    def sigma_at(self, s) -> np.ndarray:
        """Left-continuous step function sigma(s), with sigma(0) = sigma_1."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.lam, s, side="left")
        return np.asarray(self.sigma)[np.clip(idx, 0, self.M - 1)]


def validate_params(sigma: Sequence[float], lam: Sequence[float]) -> list[str]:
    """Return every violated constraint (empty list when valid)."""
    problems = []
    if len(sigma) < 1:
        problems.append("sigma must have at least one entry")
    if len(sigma) != len(lam):
        problems.append("sigma and lambda must have the same length")
    if any(not np.isfinite(s) or s <= 0 for s in sigma):
        problems.append("sigma entries must be positive")
    if any(not np.isfinite(x) for x in lam):
        problems.append("lambda entries must be finite")
    elif lam:
        if lam[0] <= 0:
            problems.append("lambda entries must be positive")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            problems.append("lambda not strictly increasing")
        if lam[-1] != 1.0:
            problems.append("last lambda must equal 1")
    return problems


def step_integral(grid: np.ndarray, values: np.ndarray, s) -> np.ndarray:
    """Integral from 0 to s of the step function equal to values[i] on (grid[i], grid[i+1]]."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(values * np.diff(grid))))
    return np.interp(s, grid, cum)


def upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the vertices of the least concave majorant of the points (x, y).

    ``x`` must be strictly increasing. Collinear middle points are dropped, so
    consecutive hull slopes are strictly decreasing.
    """
    hull: list[int] = []
    for k in range(len(x)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # j is kept only if it lies strictly above the chord from i to k
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            scale = abs(x[k] - x[i]) * (abs(y[k]) + abs(y[i]) + 1.0)
            if cross >= -1e-14 * scale:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.asarray(hull, dtype=int)


@dataclass(frozen=True)
class SpeedProfile:
    """Speed function J, its concave majorant Jhat, and the effective scales."""

    params: FieldParams
    grid: np.ndarray = field(repr=False)
    J_grid: np.ndarray = field(repr=False)
    hull_index: np.ndarray = field(repr=False)
    sigma_bar: np.ndarray
    eff_scales: np.ndarray

    @property
    def m(self) -> int:
        return len(self.sigma_bar)

    @property
    def J1(self) -> float:
        return float(self.J_grid[-1])

    @property
    def atoms(self) -> np.ndarray:
        """Overlap atoms x^j = Jbar(lambda^j), j = 0..m."""
        return self.Jbar(self.eff_scales)

    def J(self, s) -> np.ndarray:
        return np.interp(s, self.grid, self.J_grid)

    def Jhat(self, s) -> np.ndarray:
        return np.interp(s, self.grid[self.hull_index], self.J_grid[self.hull_index])

    def Jbar(self, s) -> np.ndarray:
        return self.J(s) / self.J1

    def sigma_bar_at(self, s) -> np.ndarray:
        """Left-continuous sigma_bar(s), with sigma_bar(0) = sigma_bar_1."""
        idx = np.searchsorted(self.eff_scales[1:], np.asarray(s, dtype=float), side="left")
        return self.sigma_bar[np.clip(idx, 0, self.m - 1)]

    def segment_sigma_bar(self) -> np.ndarray:
        """sigma_bar on each (lam_{i-1}, lam_i]; constant there since hull vertices are breakpoints."""
        mids = 0.5 * (self.grid[:-1] + self.grid[1:])
        return self.sigma_bar_at(mids)

    def J_ratio(self, s) -> np.ndarray:
        """J_{sigma^2 / sigma_bar}(s)."""
        sig = np.asarray(self.params.sigma)
        return step_integral(self.grid, sig**2 / self.segment_sigma_bar(), s)


def build_speed_profile(params: FieldParams) -> SpeedProfile:
    grid = params.grid
    sig2 = np.asarray(params.sigma) ** 2
    J_grid = np.concatenate(([0.0], np.cumsum(sig2 * np.diff(grid))))
    hull = upper_hull(grid, J_grid)
    hx, hy = grid[hull], J_grid[hull]
    slopes = np.diff(hy) / np.diff(hx)
    return SpeedProfile(
        params=params,
        grid=grid,
        J_grid=J_grid,
        hull_index=hull,
        sigma_bar=np.sqrt(slopes),
        eff_scales=hx,
    )


def gamma_star(profile: SpeedProfile) -> float:
    """First-order maximum level J_{sigma^2/sigma_bar}(1)."""
    return float(profile.J_ratio(1.0))


def critical_levels(profile: SpeedProfile) -> np.ndarray:
    """gamma^0 = 0 < gamma^1 < ... < gamma^m = gamma_star."""
    lam = profile.eff_scales
    levels = [0.0]
    for l in range(1, profile.m + 1):
        tail = profile.J1 - profile.J(lam[l])
        levels.append(float(profile.J_ratio(lam[l]) + tail / profile.sigma_bar[l - 1]))
    return np.asarray(levels)


def entropy(profile: SpeedProfile, gamma: float) -> float:
    """Exponent of the number of gamma-high points, on [0, gamma_star]."""
    levels = critical_levels(profile)
    gs = levels[-1]
    if gamma < 0 or gamma > gs * (1 + 1e-14) + 1e-300:
        raise ValueError(f"gamma={gamma} outside [0, {gs}]")
    if gamma == 0:
        return 1.0
    l = int(np.searchsorted(levels, gamma, side="left"))
    l = min(max(l, 1), profile.m)
    lam_prev = profile.eff_scales[l - 1]
    tail = profile.J1 - float(profile.J(lam_prev))
    return float((1 - lam_prev) - (gamma - float(profile.J_ratio(lam_prev))) ** 2 / tail)


def entropy_derivative(profile: SpeedProfile, gamma: float) -> float:
    levels = critical_levels(profile)
    l = int(np.searchsorted(levels, gamma, side="left"))
    l = min(max(l, 1), profile.m)
    lam_prev = profile.eff_scales[l - 1]
    tail = profile.J1 - float(profile.J(lam_prev))
    return float(-2 * (gamma - float(profile.J_ratio(lam_prev))) / tail)


def rem_free_energy(sigma: float, beta: float) -> float:
    beta_c = 2.0 / sigma
    if beta > beta_c:
        return 2.0 * beta / beta_c
    return 1.0 + (beta / beta_c) ** 2


def l_beta(profile: SpeedProfile, beta: float) -> int:
    """Smallest l with beta <= 2/sigma_bar_l, or m+1."""
    for l, sb in enumerate(profile.sigma_bar, start=1):
        if beta <= 2.0 / sb:
            return l
    return profile.m + 1


def free_energy(profile: SpeedProfile, beta: float) -> float:
    """Limiting free energy as the effective-scale weighted sum of REM free energies."""
    widths = np.diff(profile.eff_scales)
    return float(sum(rem_free_energy(sb, beta) * w for sb, w in zip(profile.sigma_bar, widths)))


def free_energy_split(profile: SpeedProfile, beta: float) -> float:
    """Same limit, written as frozen levels below l_beta plus high-temperature levels above."""
    lb = l_beta(profile, beta)
    widths = np.diff(profile.eff_scales)
    bc = 2.0 / profile.sigma_bar
    frozen = sum(2 * beta / bc[j] * widths[j] for j in range(lb - 1))
    hot = sum((1 + beta**2 / bc[j] ** 2) * widths[j] for j in range(lb - 1, profile.m))
    return float(frozen + hot)


def free_energy_by_maximization(profile: SpeedProfile, beta: float) -> tuple[float, float]:
    """Maximize beta*gamma + E(gamma) over [0, gamma_star] branch by branch.

    Each branch of E is a downward parabola, so its maximizer is the clamped
    stationary point. Returns ``(argmax, max)``.
    """
    levels = critical_levels(profile)
    candidates = [0.0, float(levels[-1])]
    for l in range(1, profile.m + 1):
        lam_prev = profile.eff_scales[l - 1]
        tail = profile.J1 - float(profile.J(lam_prev))
        stationary = float(profile.J_ratio(lam_prev)) + 0.5 * beta * tail
        candidates.append(min(max(stationary, levels[l - 1]), levels[l]))
    best_g, best_v = 0.0, -np.inf
    for g in candidates:
        v = beta * g + entropy(profile, g)
        if v > best_v:
            best_g, best_v = g, v
    return best_g, best_v


def check_noncritical(profile: SpeedProfile, beta: float) -> None:
    for j, sb in enumerate(profile.sigma_bar, start=1):
        bc = 2.0 / sb
        if abs(beta - bc) <= CRITICAL_TOL * max(1.0, bc):
            raise CriticalBeta(beta, j)


@dataclass(frozen=True)
class RPCParams:
    r: int
    zetas: np.ndarray
    qs: np.ndarray


@dataclass(frozen=True)
class LimitLaw:
    beta: float
    gamma_star: float
    gamma_levels: np.ndarray
    l_beta: int
    free_energy: float
    atoms: np.ndarray
    masses: np.ndarray
    rpc: RPCParams

    def cdf(self, r) -> np.ndarray:
        """Right-continuous step CDF of the limiting overlap."""
        r = np.asarray(r, dtype=float)
        cum = np.cumsum(self.masses)
        idx = np.searchsorted(self.atoms, r, side="right")
        return np.where(idx == 0, 0.0, cum[np.maximum(idx - 1, 0)])


def limiting_two_overlap(profile: SpeedProfile, beta: float) -> LimitLaw:
    """Limiting two-overlap law and matching cascade parameters (beta off the critical set)."""
    check_noncritical(profile, beta)
    lb = l_beta(profile, beta)
    x = profile.atoms
    atoms = x[:lb]
    # CDF value beta_c(sigma_bar_j)/beta on [x^{j-1}, x^j), j <= l_beta - 1, then 1
    cdf_vals = [2.0 / profile.sigma_bar[j] / beta for j in range(lb - 1)] + [1.0]
    masses = np.diff(np.concatenate(([0.0], cdf_vals)))
    levels = critical_levels(profile)
    rpc = RPCParams(r=lb - 1, zetas=np.asarray(cdf_vals[:-1]), qs=np.asarray(atoms))
    return LimitLaw(
        beta=beta,
        gamma_star=float(levels[-1]),
        gamma_levels=levels,
        l_beta=lb,
        free_energy=free_energy(profile, beta),
        atoms=np.asarray(atoms),
        masses=masses,
        rpc=rpc,
    )


@dataclass(frozen=True)
class PerturbedProfile:
    """Base profile with sigma on (alpha, alpha'] shifted by u.

    The interval must sit inside one sigma-interval ``(lam_{i*-1}, lam_{i*}]``;
    ``j_star`` indexes the effective-scale interval containing it.
    """

    base: FieldParams
    alpha: float
    alpha_prime: float

    def __post_init__(self):
        grid = self.base.grid
        if not (0 <= self.alpha < self.alpha_prime <= 1):
            raise ParamError("need 0 <= alpha < alpha' <= 1")
        i = int(np.searchsorted(grid, self.alpha, side="right"))
        if i < 1 or i > self.base.M or self.alpha_prime > grid[i] + 1e-15:
            raise ParamError("(alpha, alpha'] must lie inside a single sigma interval")

    @property
    def i_star(self) -> int:
        return int(np.searchsorted(self.base.grid, self.alpha, side="right"))

    @property
    def j_star(self) -> int:
        eff = build_speed_profile(self.base).eff_scales
        return int(np.searchsorted(eff, self.alpha, side="right"))

    @property
    def sigma_star(self) -> float:
        return self.base.sigma[self.i_star - 1]

    def params(self, u: float) -> FieldParams:
        """FieldParams of the perturbed field, with (alpha, alpha'] spliced into the grid."""
        if u <= -self.sigma_star:
            raise ParamError(f"u={u} must exceed -sigma_i* = {-self.sigma_star}")
        i = self.i_star
        lo, hi = self.base.grid[i - 1], self.base.grid[i]
        s = self.sigma_star
        pieces = []
        if self.alpha > lo:
            pieces.append((s, self.alpha))
        pieces.append((s + u, self.alpha_prime))
        if self.alpha_prime < hi:
            pieces.append((s, hi))
        sigma = list(self.base.sigma[: i - 1]) + [p[0] for p in pieces] + list(self.base.sigma[i:])
        lam = list(self.base.lam[: i - 1]) + [p[1] for p in pieces] + list(self.base.lam[i:])
        return FieldParams(tuple(sigma), tuple(lam))

    def profile(self, u: float) -> SpeedProfile:
        return build_speed_profile(self.params(u))

    def l_beta(self, beta: float, u: float = 0.0) -> int:
        return l_beta(self.profile(u), beta)


def perturbed_free_energy(pp: PerturbedProfile, beta: float, u: float) -> float:
    return free_energy(pp.profile(u), beta)


def perturbed_free_energy_derivative(pp: PerturbedProfile, beta: float) -> float:
    """d/du of the limiting free energy of the perturbed field at u = 0."""
    prof = build_speed_profile(pp.base)
    js = pp.j_star
    bc = 2.0 / prof.sigma_bar[js - 1]
    if abs(beta - bc) <= CRITICAL_TOL * max(1.0, bc):
        raise CriticalBeta(beta, js)
    width = pp.alpha_prime - pp.alpha
    if js <= l_beta(prof, beta) - 1:
        return beta * pp.sigma_star * width / prof.sigma_bar[js - 1]
    return beta**2 * pp.sigma_star * width / 2.0
