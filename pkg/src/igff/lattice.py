"""Discrete potential theory on lattice boxes.

Green functions of simple random walk killed on the box boundary, hitting
distributions (harmonic measures) of clipped neighbourhoods, a random-walk
Monte Carlo oracle and a potential-kernel cross check.

Vertices of the square ``V_N = {0..N}^2`` are indexed row-major as
``x * (N + 1) + y``.
"""
from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

GREEN_SCALE = math.pi / 2
DENSE_LIMIT = 4096
EULER_GAMMA = 0.5772156649015329
# a(w) = (2/pi)(log|w| + gamma + 1.5 log 2) + O(|w|^-2); in the pi/2 normalization
# this becomes log|w| + KERNEL_CONST.
KERNEL_CONST = EULER_GAMMA + 1.5 * math.log(2)
MAGIC = b"GRN1"


@dataclass(frozen=True)
class LatticeBox:
    """Box ``{x0..x1} x {y0..y1}`` of Z^2 (inclusive corners)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError("empty box")

    @classmethod
    def square(cls, N: int) -> "LatticeBox":
        return cls(0, 0, N, N)

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.width, self.height

    def contains(self, x, y):
        return (self.x0 <= x) & (x <= self.x1) & (self.y0 <= y) & (y <= self.y1)

    def on_boundary(self, x, y):
        return self.contains(x, y) & ((x == self.x0) | (x == self.x1) | (y == self.y0) | (y == self.y1))

    def is_interior(self, x, y):
        return (self.x0 < x) & (x < self.x1) & (self.y0 < y) & (y < self.y1)

    @cached_property
    def vertices(self) -> np.ndarray:
        xs, ys = np.meshgrid(np.arange(self.x0, self.x1 + 1), np.arange(self.y0, self.y1 + 1), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        v = self.vertices
        return v[self.is_interior(v[:, 0], v[:, 1])]

    @cached_property
    def boundary(self) -> np.ndarray:
        v = self.vertices
        return v[~self.is_interior(v[:, 0], v[:, 1])]

    def local_index(self, x, y):
        """Row-major index inside the box's own vertex list."""
        return (np.asarray(x) - self.x0) * self.height + (np.asarray(y) - self.y0)

    def interior_index(self, x, y):
        """Index among interior vertices (row-major over the inner box)."""
        return (np.asarray(x) - self.x0 - 1) * (self.height - 2) + (np.asarray(y) - self.y0 - 1)


def walk_generator(box: LatticeBox) -> sp.csc_matrix:
    """Sparse ``I - P`` restricted to interior vertices (P: one SRW step)."""
    w, h = box.width - 2, box.height - 2
    if w <= 0 or h <= 0:
        raise ValueError("box has no interior vertex")
    lap_x = sp.diags([-0.25, -0.25], [-1, 1], shape=(w, w))
    lap_y = sp.diags([-0.25, -0.25], [-1, 1], shape=(h, h))
    return (sp.identity(w * h) + sp.kron(lap_x, sp.identity(h)) + sp.kron(sp.identity(w), lap_y)).tocsc()


def interior_to_boundary(box: LatticeBox) -> sp.csr_matrix:
    """0/1 adjacency between interior vertices (rows) and boundary vertices (cols).

    Boundary columns follow ``box.boundary`` ordering.
    """
    bnd = box.boundary
    col_of = {tuple(b): k for k, b in enumerate(bnd)}
    rows, cols = [], []
    for k, (x, y) in enumerate(box.interior):
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            c = col_of.get((x + dx, y + dy))
            if c is not None:
                rows.append(k)
                cols.append(c)
    n_int = len(box.interior)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_int, len(bnd)))


@dataclass
class GreenOperator:
    """Green function ``(pi/2)(I - P)^{-1}`` on interior vertices of ``box``."""

    box: LatticeBox
    G: np.ndarray

    @property
    def n_interior(self) -> int:
        return self.G.shape[0]

    def value(self, v, w) -> float:
        """G(v, w) for lattice points, zero when either is off the interior."""
        b = self.box
        if not (b.is_interior(*v) and b.is_interior(*w)):
            return 0.0
        return float(self.G[b.interior_index(*v), b.interior_index(*w)])

    def full(self) -> np.ndarray:
        """Zero-extended matrix over all box vertices (row-major)."""
        E = self.embedding()
        return (E @ (E @ self.G).T).T

    def embedding(self) -> sp.csr_matrix:
        """Sparse map from interior values to all-vertex values (zeros on the boundary)."""
        b = self.box
        inner = b.interior
        rows = b.local_index(inner[:, 0], inner[:, 1])
        n_all = b.width * b.height
        return sp.csr_matrix((np.ones(len(inner)), (rows, np.arange(len(inner)))), shape=(n_all, len(inner)))

    def save(self, path) -> None:
        """Binary dump: magic, N (uint32), interior count (uint64), then float64 row-major."""
        b = self.box
        if b.width != b.height or (b.x0, b.y0) != (0, 0):
            raise ValueError("binary format stores square boxes V_N only")
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<IQ", b.width - 1, self.n_interior))
            fh.write(np.ascontiguousarray(self.G, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GreenOperator":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError("bad magic")
        N, n = struct.unpack("<IQ", raw[4:16])
        G = np.frombuffer(raw, dtype="<f8", offset=16).reshape(n, n).astype(float)
        return cls(LatticeBox.square(N), G)


def green_matrix(box: LatticeBox, method: str = "auto", tol: float = 1e-10) -> GreenOperator:
    """Exact Green matrix of SRW killed on the box boundary.

    Dense factorization up to ``DENSE_LIMIT`` interior vertices, conjugate
    gradients column by column above (or when ``method='cg'``).
    """
    A = walk_generator(box)
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "cg"
    if method == "dense":
        # I - P is symmetric positive definite
        G = sla.cho_solve(sla.cho_factor(A.toarray()), np.eye(n) * GREEN_SCALE)
        G = 0.5 * (G + G.T)
    elif method == "cg":
        G = np.empty((n, n))
        e = np.zeros(n)
        for k in range(n):
            e[k] = GREEN_SCALE
            col, info = spla.cg(A, e, rtol=tol * 1e-2, atol=0.0, maxiter=20 * n)
            if info != 0:
                raise RuntimeError(f"CG did not converge for column {k}")
            G[:, k] = col
            e[k] = 0.0
        G = 0.5 * (G + G.T)
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = np.abs(A @ G - GREEN_SCALE * np.eye(n)).max()
    if resid > max(tol, 1e-12) * max(1.0, n ** 0.5):
        raise RuntimeError(f"Green solve residual {resid:.3e} too large")
    return GreenOperator(box, G)


def green_monte_carlo(box: LatticeBox, v, w, walks: int, seed, batch: int = 20000) -> tuple[float, float]:
    """(pi/2) times the mean number of visits to w before absorption, starting at v.

    Returns ``(estimate, standard_error)``.
    """
    if walks <= 0:
        raise ValueError("walks must be positive")
    if not box.is_interior(*v):
        raise ValueError("start vertex must be interior")
    if not box.is_interior(*w):
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    steps = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < walks:
        nb = min(batch, walks - done)
        pos = np.tile(np.asarray(v), (nb, 1))
        visits = np.zeros(nb)
        alive = np.ones(nb, dtype=bool)
        while alive.any():
            idx = np.flatnonzero(alive)
            p = pos[idx]
            visits[idx] += (p[:, 0] == w[0]) & (p[:, 1] == w[1])
            p = p + steps[rng.integers(0, 4, size=len(idx))]
            pos[idx] = p
            alive[idx] = box.is_interior(p[:, 0], p[:, 1])
        total += visits.sum()
        total_sq += (visits**2).sum()
        done += nb
    mean = total / walks
    var = max(total_sq / walks - mean**2, 0.0) * walks / max(walks - 1, 1)
    return GREEN_SCALE * mean, GREEN_SCALE * math.sqrt(var / walks)


ROUNDING = ("floor", "round")


def half_width(N: int, lam: float, rounding: str = "floor") -> int:
    """Half-width of the lambda-neighbourhood on V_N.

    ``floor`` is the default; ``round`` is kept for sensitivity studies.
    """
    x = N ** (1.0 - lam) / 2.0
    if rounding == "floor":
        return int(math.floor(x + 1e-12))
    if rounding == "round":
        return int(math.floor(x + 0.5))
    raise ValueError(f"unknown rounding {rounding!r}")


def neighbourhood(N: int, v, lam: float, rounding: str = "floor") -> LatticeBox:
    """Clipped box ``[v]_lambda`` inside V_N; lambda = 0 gives V_N, lambda = 1 gives {v}."""
    x, y = int(v[0]), int(v[1])
    if lam <= 0:
        return LatticeBox.square(N)
    if lam >= 1:
        return LatticeBox(x, y, x, y)
    r = half_width(N, lam, rounding)
    return LatticeBox(max(0, x - r), max(0, y - r), min(N, x + r), min(N, y + r))


@dataclass(frozen=True)
class HarmonicMeasure:
    """Hitting distribution of SRW from ``source`` on the boundary of its lambda-box."""

    source: tuple[int, int]
    lam: float
    support: np.ndarray  # (k, 2) lattice points
    weights: np.ndarray


class _ShapeSolver:
    """Exit distributions for every interior start of one box shape."""

    def __init__(self, w: int, h: int):
        self.box = LatticeBox(0, 0, w - 1, h - 1)
        A = walk_generator(self.box)
        B = interior_to_boundary(self.box)
        # row i: hitting distribution on the boundary from interior vertex i
        self.exit = 0.25 * spla.splu(A).solve(B.toarray())
        self.exit[np.abs(self.exit) < 1e-300] = 0.0


class HarmonicCache:
    """Thread-safe cache of exit distributions keyed by box shape.

    The hitting distribution from ``v`` depends only on the box dimensions
    and the offset of ``v`` inside it, so one solve per shape covers all
    offsets.
    """

    def __init__(self):
        self._shapes: dict[tuple[int, int], _ShapeSolver] = {}
        self._lock = threading.Lock()

    def shape(self, w: int, h: int) -> _ShapeSolver:
        key = (w, h)
        solver = self._shapes.get(key)
        if solver is None:
            with self._lock:
                solver = self._shapes.get(key)
                if solver is None:
                    solver = _ShapeSolver(w, h)
                    self._shapes[key] = solver
        return solver

    def __len__(self):
        return len(self._shapes)


_default_cache = HarmonicCache()


def harmonic_measure(N: int, v, lam: float, cache: HarmonicCache | None = None,
                     rounding: str = "floor") -> HarmonicMeasure:
    """Hitting distribution from v on the boundary of the clipped box ``[v]_lambda``.

    When v itself lies on that boundary (including lambda = 1) the walk is
    stopped at time 0 and the measure is a point mass at v.
    """
    cache = cache or _default_cache
    x, y = int(v[0]), int(v[1])
    box = neighbourhood(N, (x, y), lam, rounding)
    if not box.is_interior(x, y):
        return HarmonicMeasure((x, y), lam, np.array([[x, y]]), np.array([1.0]))
    solver = cache.shape(box.width, box.height)
    row = solver.exit[solver.box.interior_index(x - box.x0, y - box.y0)]
    nz = np.flatnonzero(row > 0)
    support = solver.box.boundary[nz] + np.array([box.x0, box.y0])
    return HarmonicMeasure((x, y), lam, support, row[nz])


def harmonic_operator(N: int, lam: float, cache: HarmonicCache | None = None,
                      rounding: str = "floor") -> sp.csr_matrix:
    """Sparse matrix H with ``(H phi)_v = phi_v(lambda)`` over all vertices of V_N."""
    n = (N + 1) ** 2
    if lam >= 1:
        return sp.identity(n, format="csr")
    cache = cache or _default_cache
    xs, ys = np.divmod(np.arange(n), N + 1)
    if lam <= 0:
        x0, y0, x1, y1 = (np.zeros(n, int), np.zeros(n, int), np.full(n, N), np.full(n, N))
    else:
        r = half_width(N, lam, rounding)
        x0, y0 = np.maximum(xs - r, 0), np.maximum(ys - r, 0)
        x1, y1 = np.minimum(xs + r, N), np.minimum(ys + r, N)
    inside = (x0 < xs) & (xs < x1) & (y0 < ys) & (ys < y1)
    stopped = np.flatnonzero(~inside)
    rows, cols, vals = [stopped], [stopped], [np.ones(len(stopped))]
    w, h = x1 - x0 + 1, y1 - y0 + 1
    keys = w[inside] * (N + 2) + h[inside]
    idx_inside = np.flatnonzero(inside)
    for key in np.unique(keys):
        grp = idx_inside[keys == key]
        solver = cache.shape(int(key // (N + 2)), int(key % (N + 2)))
        local = solver.box.interior_index(xs[grp] - x0[grp], ys[grp] - y0[grp])
        block = solver.exit[local]
        gi, bj = np.nonzero(block > 0)
        bnd = solver.box.boundary[bj]
        rows.append(grp[gi])
        cols.append((bnd[:, 0] + x0[grp[gi]]) * (N + 1) + bnd[:, 1] + y0[grp[gi]])
        vals.append(block[gi, bj])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def potential_kernel(w) -> np.ndarray:
    """Asymptotic potential kernel in the pi/2 normalization, ``a(0) = 0``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    r = np.hypot(w[:, 0], w[:, 1])
    out = np.zeros(len(r))
    nz = r > 0
    out[nz] = np.log(r[nz]) + KERNEL_CONST
    return out


def potential_kernel_check(green: GreenOperator, v, w) -> float:
    """Discrepancy between G(v, w) and its exit-distribution/potential-kernel representation.

    ``G(v, w) = sum_z P_v(W_tau = z) a(z - w) - a(w - v)``; the additive
    constant in ``a`` cancels because the exit distribution has mass one.
    """
    box = green.box
    if tuple(v) == tuple(w):
        raise ValueError("v and w must differ")
    if not (box.is_interior(*v) and box.is_interior(*w)):
        raise ValueError("v and w must be interior")
    solver = _default_cache.shape(box.width, box.height)
    row = solver.exit[solver.box.interior_index(v[0] - box.x0, v[1] - box.y0)]
    pts = solver.box.boundary + np.array([box.x0, box.y0])
    rep = float(row @ potential_kernel(pts - np.asarray(w)) - potential_kernel(np.asarray(w) - np.asarray(v))[0])
    return rep - green.value(v, w)
