"""Continuous-time lattice random walks: absorbed propagators, duality and sampling.

Time is measured in expected jumps (unit total jump rate). Exact transient
quantities use uniformization: a rate-1 chain observed at time ``t`` has made
``Poisson(t)`` jumps, so ``int_0^t P(X_s = .) ds = sum_M F_{M+1}(t) Q^M``
where ``F_N`` is the Gamma(N, 1) distribution function.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.special import gammainc
from scipy.stats import poisson

from .geometry import Domain, GeometryError, LatticeSpec, square_lattice
from .records import DensityField

SIGMA_MAX_COND = 1e8


class WalkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WalkModel:
    """A jump law on a raw lattice together with its diffusive normalization."""

    raw: LatticeSpec

    def __post_init__(self):
        if self.raw.weights is None:
            raise WalkError("a random walk needs jump weights")
        s = self.sigma
        if np.linalg.cond(s) > SIGMA_MAX_COND:
            raise WalkError("jump covariance is (nearly) singular")

    @property
    def weights(self) -> np.ndarray:
        return self.raw.weights

    @property
    def sigma(self) -> np.ndarray:
        """Covariance of the displacement per unit time, ``sum_j P(w_j) w_j w_j^T``."""
        w = self.raw.jump_vectors
        return (self.raw.weights[:, None, None] * w[:, :, None] * w[:, None, :]).sum(axis=0)

    @property
    def lattice(self) -> LatticeSpec:
        """The normalized lattice ``Sigma^{-1/2} L``, whose walk has identity covariance."""
        vals, vecs = np.linalg.eigh(self.sigma)
        inv_sqrt = vecs @ np.diag(vals**-0.5) @ vecs.T
        return self.raw.linear_map(inv_sqrt)


def ssrw_model() -> WalkModel:
    """Simple symmetric walk; the normalized lattice is ``sqrt(2) Z^2``."""
    return WalkModel(square_lattice(1.0, weights=[0.25] * 4))


# --- absorbed chains -----------------------------------------------------------


@dataclass(eq=False)
class AbsorbedChain:
    """One-step kernel of the walk killed on leaving ``D_L``.

    ``Q[i, k]`` is the probability of jumping from site ``i`` to site ``k``;
    ``exit_mass[i] = 1 - sum_k Q[i, k]``.
    """

    domain: Domain
    Q: sp.csr_matrix
    exit_mass: np.ndarray
    neighbours: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, domain: Domain, weights, reverse: bool = False) -> "AbsorbedChain":
        weights = np.asarray(weights, dtype=float)
        jumps = domain.lattice.jumps
        nbr = domain.neighbour_table(-jumps if reverse else jumps)
        n = len(domain)
        rows = np.repeat(np.arange(n), len(jumps))
        cols = nbr.ravel()
        vals = np.tile(weights, n)
        keep = cols >= 0
        Q = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
        exit_mass = np.where(nbr < 0, weights[None, :], 0.0).sum(axis=1)
        return cls(domain, Q, exit_mass, nbr, weights)

    @property
    def absorbing(self) -> bool:
        """True when every site can reach an exit."""
        reach = self.exit_mass > 0
        frontier = reach.copy()
        QT = self.Q.T.tocsr()
        while frontier.any():
            new = (QT @ frontier.astype(float) > 0) & ~reach
            reach |= new
            frontier = new
        return bool(reach.all())


def _stationary_solve(M: sp.csr_matrix, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    A = (sp.identity(M.shape[0], format="csc") - M.tocsc())
    x = spsolve(A, rhs)
    res = np.abs(A @ x - rhs).max()
    if not np.all(np.isfinite(x)) or res > tol * max(1.0, np.abs(rhs).max(), np.abs(x).max()):
        raise WalkError(f"absorbed chain is singular or ill-conditioned (residual {res:.3e})")
    return x


def uniformized_integral(M: sp.csr_matrix, vec: np.ndarray, t: float, tol: float = 1e-13,
                         max_steps: int = 10_000_000):
    """``sum_{m >= 0} F_{m+1}(t) M^m vec`` for a substochastic (in 1-norm) ``M``.

    Stops once the remaining tail is provably below ``tol``; returns
    ``(value, steps, tail_bound)``.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    v = np.array(vec, dtype=float)
    acc = np.zeros_like(v)
    if t == 0:
        return acc, 0, 0.0
    m = 0
    while True:
        F = gammainc(m + 1, t)
        acc += F * v
        v = M @ v
        norm = np.abs(v).sum()
        # sum_{N >= m+2} F_N(t) = t F_{m+1}(t) - (m+1) F_{m+2}(t)
        tail = norm * max(t * F - (m + 1) * gammainc(m + 2, t), 0.0)
        m += 1
        if tail < tol or norm == 0:
            return acc, m, tail
        if m >= max_steps:
            raise WalkError(f"uniformization did not converge within {max_steps} steps")


def occupancy_stationary(chain: AbsorbedChain, source: np.ndarray) -> DensityField:
    """Expected occupation numbers for constant injection: ``(I - Q^T)^{-1} src``."""
    src = np.asarray(source, dtype=float)
    if not np.any(src):
        return DensityField(chain.domain, np.zeros(len(src)))
    if not chain.absorbing:
        raise WalkError("chain is not absorbing: some site never exits")
    return DensityField(chain.domain, _stationary_solve(chain.Q.T.tocsr(), src))


def occupancy_transient(chain: AbsorbedChain, source: np.ndarray, t: float, tol: float = 1e-13) -> DensityField:
    """Expected occupation numbers after injecting for time ``t`` from an empty domain."""
    if np.isinf(t):
        return occupancy_stationary(chain, source)
    val, _, _ = uniformized_integral(chain.Q.T.tocsr(), source, t, tol)
    return DensityField(chain.domain, val, time=t)


def dual_harmonic(domain: Domain, weights, boundary_values: np.ndarray, t: float = np.inf,
                  tol: float = 1e-13) -> DensityField:
    """``E[F(Z'_{tau-}) 1{tau < t} | Z'_0 = m]`` for the reversed walk ``w -> -w``.

    ``boundary_values[i]`` is the data ``F`` at site ``i``; only sites from
    which the reversed walk can exit contribute.
    """
    rev = AbsorbedChain.build(domain, weights, reverse=True)
    # the walk exits from site l at rate exit_mass(l) per jump
    g = rev.exit_mass * np.asarray(boundary_values, dtype=float)
    if np.isinf(t):
        if not rev.absorbing:
            raise WalkError("reversed chain is not absorbing")
        return DensityField(domain, _stationary_solve(rev.Q, g))
    val, _, _ = uniformized_integral(rev.Q, g, t, tol)
    return DensityField(domain, val, time=t)


# --- survival ------------------------------------------------------------------


@dataclass
class SurvivalResult:
    probability: float
    error_bound: float
    mode: str
    stderr: float = 0.0


def _x_step(model: WalkModel, lattice: LatticeSpec):
    """Common step of the first-coordinate increments, and integer increments."""
    dx = lattice.jump_vectors[:, 0]
    nz = np.abs(dx[np.abs(dx) > 1e-12])
    if len(nz) == 0:
        raise WalkError("walk never moves horizontally")
    h = nz.min()
    k = dx / h
    if not np.allclose(k, np.round(k), atol=1e-9):
        raise WalkError("horizontal increments are not commensurate; use mc mode")
    return h, np.round(k).astype(np.int64)


def survival_profile(start_x: float, model: WalkModel, T: float, mode: str = "exact",
                     n: int = 10_000, seed=0, tol: float = 1e-4) -> SurvivalResult:
    """``P(tau_0^X > T)`` from first coordinate ``start_x >= 0`` (normalized units).

    Exact mode runs uniformization on the half-line truncated at ``10 sqrt(T)``
    beyond the start, with a reflecting far wall.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    lat = model.lattice
    h, k = _x_step(model, lat)
    x0 = int(round(start_x / h))
    if x0 < 0:
        raise ValueError("start must lie in the half-plane")
    w = model.weights
    if mode == "mc":
        cum = np.cumsum(w)
        alive = _survival_mc(np.random.default_rng(np.random.SeedSequence(seed)), x0, k, cum, float(T), n)
        p = alive / n
        return SurvivalResult(p, 0.0, "mc", np.sqrt(p * (1 - p) / n))
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    kmax = int(np.abs(k).max())
    N = x0 + int(np.ceil(10.0 * np.sqrt(T) / h)) + kmax
    # transition on {0..N}; leaving below 0 kills, above N is clamped
    size = N + 1
    rows, cols, vals = [], [], []
    for j, (kj, wj) in enumerate(zip(k.tolist(), w.tolist())):
        src = np.arange(size)
        dst = src + kj
        ok = dst >= 0
        rows.append(src[ok])
        cols.append(np.minimum(dst[ok], N))
        vals.append(np.full(ok.sum(), wj))
    Q = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    QT = Q.T.tocsr()
    Mmax = int(poisson.isf(1e-15, T)) + 1
    pmf = poisson.pmf(np.arange(Mmax + 1), T)
    v = np.zeros(size)
    v[x0] = 1.0
    total = 0.0
    for m in range(Mmax + 1):
        total += pmf[m] * v.sum()
        v = QT @ v
    # drift to the wall needs a 10 sigma excursion; Gaussian tail bound
    wall = float(np.exp(-0.5 * 10.0**2)) * 2.0
    err = wall + float(poisson.sf(Mmax, T))
    if err > tol:
        raise WalkError(f"truncation error {err:.2e} exceeds {tol:.1e}")
    return SurvivalResult(total, err, "exact")


@numba.njit(nogil=True, cache=True)
def _survival_mc(rng, x0, k, cum, T, n):
    alive = 0
    J = len(cum)
    for _ in range(n):
        x = x0
        t = rng.exponential()
        ok = True
        while t <= T:
            u = rng.random()
            j = 0
            while j < J - 1 and u >= cum[j]:
                j += 1
            x += k[j]
            if x < 0:
                ok = False
                break
            t += rng.exponential()
        if ok:
            alive += 1
    return alive


# --- sampling ------------------------------------------------------------------


@dataclass
class PathRecord:
    exit_time: float
    pre_exit: int
    positions: np.ndarray
    jumps: int


@numba.njit(nogil=True, cache=True)
def _path_kernel(rng, start, nbr, cum, t_end, probes, out_pos):
    J = len(cum)
    pos = start
    t = 0.0
    nprobe = len(probes)
    p = 0
    jumps = 0
    while True:
        dt = rng.exponential()
        while p < nprobe and probes[p] < t + dt:
            out_pos[p] = pos
            p += 1
        if t + dt > t_end:
            return np.inf, -1, jumps
        t += dt
        u = rng.random()
        j = 0
        while j < J - 1 and u >= cum[j]:
            j += 1
        nxt = nbr[pos, j]
        jumps += 1
        if nxt < 0:
            while p < nprobe:
                out_pos[p] = -1
                p += 1
            return t, pos, jumps
        pos = nxt


def simulate_path(start, chain: AbsorbedChain, t_end: float, seed=0, probe_times=()) -> PathRecord:
    """One trajectory with exponential(1) holding times up to ``t_end`` or exit.

    ``positions[k]`` is the site index at ``probe_times[k]`` (-1 after exit);
    ``exit_time`` is ``inf`` when the walk is still inside at ``t_end``.
    """
    i = chain.domain.site_index(start) if not isinstance(start, (int, np.integer)) else int(start)
    probes = np.sort(np.asarray(probe_times, dtype=float))
    out = np.full(len(probes), -1, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed)
    cum = np.cumsum(chain.weights)
    if t_end <= 0:
        out[:] = i
        return PathRecord(np.inf, -1, out, 0)
    et, pre, nj = _path_kernel(rng, i, chain.neighbours, cum, float(t_end), probes, out)
    return PathRecord(et, int(pre), out, int(nj))


@numba.njit(nogil=True, cache=True)
def evolve_particles(rng, start, ages, nbr, cum):
    """Final site of each particle after running for its age; -1 if it exited."""
    J = len(cum)
    out = np.empty(len(start), dtype=np.int64)
    for p in range(len(start)):
        pos = start[p]
        n = rng.poisson(ages[p])
        for _ in range(n):
            u = rng.random()
            j = 0
            while j < J - 1 and u >= cum[j]:
                j += 1
            pos = nbr[pos, j]
            if pos < 0:
                break
        out[p] = pos
    return out
