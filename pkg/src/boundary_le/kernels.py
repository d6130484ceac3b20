"""Analytic kernels for the limiting density and finite-difference PDE oracles.

The series here describe Brownian motion in a strip or square: ``phi`` is
the transition density killed at 0 and ``xi``, ``psi`` the endpoint density
of a Brownian meander with bounded maximum, and ``r_term`` the image-sum
summand whose integral against the boundary profile gives the density of
surviving particles.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve
from scipy.special import gammainc

SQRT_2PI = np.sqrt(2.0 * np.pi)
RICHARDSON_DELTAS = (0.04, 0.02, 0.01)


class KernelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesTruncation:
    """Cap on the summation index and the tail tolerance of a series."""

    max_index: int = 10_000
    tail_tol: float = 1e-14

    def gaussian_reach(self) -> float:
        # exp(-s^2/2) <= tail_tol
        return float(np.sqrt(2.0 * np.log(1.0 / self.tail_tol)))


DEFAULT_TRUNC = SeriesTruncation()


def _gaussian_terms(width: float, trunc: SeriesTruncation) -> int:
    """Number of image terms on each side for a series whose images sit at ``2*n*width``."""
    if not np.isfinite(width):
        return 0
    m = int(np.ceil((trunc.gaussian_reach() + 1.0) / (2.0 * width))) + 1
    if m > trunc.max_index:
        raise KernelDomainError(
            f"series needs {m} terms for tail {trunc.tail_tol:g}; cap is {trunc.max_index}"
        )
    return m


def phi(eta, gamma, xi, trunc: SeriesTruncation = DEFAULT_TRUNC):
    """Density at ``gamma`` at time 1 of Brownian motion from ``eta`` killed at 0 and ``xi``.

    Arrays broadcast; ``xi`` must be a scalar (``np.inf`` allowed).
    """
    eta = np.asarray(eta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    xi = float(xi)
    if xi <= 0 or np.any(eta < 0) or np.any(gamma < 0) or np.any(eta > xi) or np.any(gamma > xi):
        raise KernelDomainError("phi requires 0 <= eta, gamma <= xi")
    m = _gaussian_terms(xi, trunc)
    n = np.arange(-m, m + 1).reshape((-1,) + (1,) * np.broadcast(eta, gamma).ndim)
    shift = 2.0 * n * xi if m else 0.0
    terms = np.exp(-0.5 * (gamma - eta - shift) ** 2) - np.exp(-0.5 * (gamma + eta + shift) ** 2)
    return terms.sum(axis=0) / SQRT_2PI


def psi(alpha, beta, trunc: SeriesTruncation = DEFAULT_TRUNC):
    """Endpoint density of a Brownian meander on [0, 1] jointly with ``max < beta``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = float(beta)
    if beta <= 0 or np.any(alpha < 0) or np.any(alpha > beta):
        raise KernelDomainError("psi requires 0 <= alpha <= beta")
    m = _gaussian_terms(beta, trunc)
    k = np.arange(-m, m + 1).reshape((-1,) + (1,) * alpha.ndim)
    a = 2.0 * k * beta + alpha if m else alpha[None]
    return (a * np.exp(-0.5 * a**2)).sum(axis=0)


def scaled_phi(eta, gamma, xi, t: float):
    """``phi`` for elapsed time ``t`` (Brownian scaling)."""
    r = np.sqrt(t)
    return phi(np.asarray(eta) / r, np.asarray(gamma) / r, xi / r) / r


# --- boundary profiles --------------------------------------------------------


def mollifier(s, delta: float):
    """Piecewise-linear cut-off vanishing on ``[0, delta]`` and ``[1 - delta, 1]``."""
    s = np.asarray(s, dtype=float)
    up = np.clip(s / delta - 1.0, 0.0, 1.0)
    down = np.clip((1.0 - s) / delta - 1.0, 0.0, 1.0)
    return np.minimum(up, down)


@dataclass(frozen=True)
class BoundaryProfile:
    """Non-negative continuous data on one side, parametrized by ``s`` in ``[0, length]``."""

    side: str
    func: Callable
    delta: float | None = None
    length: float = 1.0

    def __post_init__(self):
        if self.side not in ("W", "S", "E", "N"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.delta is not None and not 0 < self.delta < 0.25:
            raise KernelDomainError("mollification width must lie in (0, 1/4)")
        probe = np.asarray(self.func(np.linspace(0.0, self.length, 257)), dtype=float)
        if np.any(probe < -1e-12):
            raise ValueError("boundary profile must be non-negative")

    @classmethod
    def from_samples(cls, side: str, samples, length: float = 1.0) -> "BoundaryProfile":
        """Linear interpolation of equally spaced samples over ``[0, length]``."""
        values = np.asarray(samples, dtype=float)
        if values.size == 1:
            c = float(values.ravel()[0])
            return cls(side, lambda s: np.full(np.shape(s), c), length=length)
        grid = np.linspace(0.0, length, values.size)
        return cls(side, lambda s: np.interp(s, grid, values), length=length)

    @classmethod
    def constant(cls, side: str, value: float = 1.0, length: float = 1.0) -> "BoundaryProfile":
        return cls(side, lambda s: np.full(np.shape(s), float(value)), length=length)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        val = np.asarray(self.func(s), dtype=float)
        if self.delta is not None:
            val = val * mollifier(s / self.length, self.delta)
        return val

    def mollified(self, delta: float) -> "BoundaryProfile":
        return replace(self, delta=delta)


# --- the image-sum kernel -------------------------------------------------------


def r_term(k, n, sigma, x, y, t: float = np.inf):
    """Image summand of the surviving density without the profile factor.

    ``2 (x + 2k) / sqrt(2 pi) * [g(P1) - g(P2)]`` with ``g(P) = 1/P`` for the
    stationary problem and ``exp(-P / 2t) / P`` at finite time.
    """
    k, n, sigma, x, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (k, n, sigma, x, y)))
    a = x + 2.0 * k
    p1 = a**2 + (y - sigma - 2.0 * n) ** 2
    p2 = a**2 + (y + sigma + 2.0 * n) ** 2
    if np.any(p1 == 0) or np.any(p2 == 0):
        raise KernelDomainError("kernel singular: evaluation point on the boundary")
    if np.isinf(t):
        g = 1.0 / p1 - 1.0 / p2
    else:
        if t <= 0:
            raise KernelDomainError("time must be positive")
        g = np.exp(-p1 / (2.0 * t)) / p1 - np.exp(-p2 / (2.0 * t)) / p2
    return 2.0 * a / SQRT_2PI * g


def r_sum(sigma, x, y, M: int, t: float = np.inf):
    """Direct sum of ``r_term`` over ``|k|, |n| <= M``.

    The ``k`` range is taken as ``-M-1..M`` so that every ``k`` is paired with
    ``-k-1``; the pair cancels exactly on ``x = 1``.
    """
    sigma = np.asarray(sigma, dtype=float)
    k = np.arange(-M - 1, M + 1, dtype=float)
    total = np.zeros(np.broadcast(sigma, x, y).shape)
    for n in range(-M, M + 1):
        total += r_term(k.reshape((-1,) + (1,) * total.ndim), n, sigma, x, y, t).sum(axis=0)
    return total


def _stationary_kernel(sigma, x, y, tol: float = 1e-16):
    """Sum of ``r_term`` over all ``k, n`` at ``t = inf``.

    The ``n`` sum is done in closed form with
    ``sum_n 1/(a^2 + (c + 2n)^2) = pi sinh(pi a) / (2a (cosh(pi a) - cos(pi c)))``;
    the remaining ``k`` sum decays like ``exp(-pi |2k + x|)``.
    """
    kmax = int(np.ceil(-np.log(tol) / (2.0 * np.pi))) + 1
    total = 0.0
    for k in range(-kmax, kmax + 1):
        a = x + 2.0 * k
        sh, ch = np.sinh(np.pi * a), np.cosh(np.pi * a)
        total = total + sh * (
            1.0 / (ch - np.cos(np.pi * (y - sigma))) - 1.0 / (ch - np.cos(np.pi * (y + sigma)))
        )
    # 2a/sqrt(2pi) * pi/(2a) = pi/sqrt(2pi)
    return total * np.pi / SQRT_2PI


def _transient_kernel(sigma, x, y, t: float, trunc: SeriesTruncation = DEFAULT_TRUNC):
    m = int(np.ceil((np.sqrt(2.0 * t) * trunc.gaussian_reach() + 2.0) / 2.0)) + 1
    if m > trunc.max_index:
        raise KernelDomainError(f"finite-time kernel needs {m} terms; cap is {trunc.max_index}")
    return r_sum(sigma, x, y, m, t)


def west_kernel(sigma, x, y, t: float = np.inf):
    """``sum_{k,n} R(t, k, n, sigma, x, y)`` for data on the West side of the unit square."""
    if np.isinf(t):
        return _stationary_kernel(sigma, x, y)
    return _transient_kernel(sigma, x, y, t)


def _to_west_frame(side: str, x, y):
    """Map a point so that ``side`` becomes the West side ``x = 0``."""
    if side == "W":
        return x, y
    if side == "E":
        return 1.0 - x, y
    if side == "S":
        return y, x
    if side == "N":
        return 1.0 - y, x
    raise ValueError(side)


def _simpson_nodes(breaks, panels_total: int):
    """Composite Simpson nodes and weights over consecutive intervals."""
    breaks = np.asarray(breaks, dtype=float)
    widths = np.diff(breaks)
    nodes, weights = [], []
    for a, b, w in zip(breaks[:-1], breaks[1:], widths):
        if w <= 0:
            continue
        p = max(8, int(np.ceil(panels_total * w / widths.sum())))
        p += p % 2
        s = np.linspace(a, b, p + 1)
        c = np.ones(p + 1)
        c[1:-1:2] = 4.0
        c[2:-1:2] = 2.0
        nodes.append(s)
        weights.append(c * (b - a) / (3.0 * p))
    return np.concatenate(nodes), np.concatenate(weights)


def _series_value(z, profile: BoundaryProfile, varsigma: float, t: float, panels: int):
    if profile.length != 1.0:
        raise KernelDomainError("the image series supports the unit square only (A = 1)")
    d = profile.delta
    x, y = _to_west_frame(profile.side, *np.asarray(z, dtype=float).T)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(x >= 1) or np.any(y <= 0) or np.any(y >= 1):
        raise KernelDomainError("evaluation point must be interior")
    breaks = [d, 2 * d, 1 - 2 * d, 1 - d] if d else [0.0, 1.0]
    s, w = _simpson_nodes(breaks, panels)
    fw = profile(s) * w
    keep = fw != 0
    s, fw = s[keep], fw[keep]
    kern = west_kernel(s[None, :], x.reshape(-1, 1), y.reshape(-1, 1), t)
    val = varsigma / SQRT_2PI * (kern * fw).sum(axis=1)
    return val.reshape(x.shape)


def _richardson(values) -> np.ndarray:
    # The kernel vanishes at the corners, so the width error has no linear term:
    # fit c0 + c2 d^2 + c3 d^3 through the three widths and keep c0.
    d = np.asarray(RICHARDSON_DELTAS)
    basis = np.stack([np.ones_like(d), d**2, d**3], axis=1)
    w = np.linalg.solve(basis.T, np.array([1.0, 0.0, 0.0]))
    return sum(wi * np.asarray(v) for wi, v in zip(w, values))


def u_series(z, profile: BoundaryProfile, varsigma: float = 1.0, *, delta: float | None = None,
             panels: int = 512):
    """Stationary limit density at interior point(s) ``z`` from one side's data.

    With ``delta`` the data are mollified by that width; without it the
    values for widths 0.04, 0.02, 0.01 are extrapolated to width zero.
    """
    return _profile_series(z, profile, varsigma, np.inf, delta, panels)


def v_series(t: float, z, profile: BoundaryProfile, varsigma: float = 1.0, *,
             delta: float | None = None, panels: int = 512):
    """Finite-time limit density (heat equation with zero initial data)."""
    if t <= 0:
        raise KernelDomainError("time must be positive")
    return _profile_series(z, profile, varsigma, float(t), delta, panels)


def _profile_series(z, profile, varsigma, t, delta, panels):
    if delta is not None:
        return _series_value(z, profile.mollified(delta), varsigma, t, panels)
    if profile.delta is not None:
        return _series_value(z, profile, varsigma, t, panels)
    vals = [_series_value(z, profile.mollified(d), varsigma, t, panels) for d in RICHARDSON_DELTAS]
    return _richardson(vals)


# --- finite differences -------------------------------------------------------------


@dataclass
class GridField:
    """Values on the closed grid ``x[i], y[j]``; ``values[i, j]``."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    time: float = np.inf

    def at(self, z):
        interp = RegularGridInterpolator((self.x, self.y), self.values)
        return interp(np.atleast_2d(z))


def _side_values(data, s):
    if data is None:
        return np.zeros_like(s)
    if callable(data):
        return np.asarray(data(s), dtype=float) * np.ones_like(s)
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.full_like(s, float(arr))
    return np.interp(s, np.linspace(s[0], s[-1], arr.size), arr)


def _grid(n: int, A: float):
    if n < 16:
        raise ValueError("grid must have at least 16 intervals")
    nx = int(round(A * n))
    return np.linspace(0.0, A, nx + 1), np.linspace(0.0, 1.0, n + 1)


def _apply_dirichlet(u, x, y, boundary):
    u[0, :] = _side_values(boundary.get("W"), y)
    u[-1, :] = _side_values(boundary.get("E"), y)
    south = _side_values(boundary.get("S"), x)
    north = _side_values(boundary.get("N"), x)
    u[1:-1, 0] = south[1:-1]
    u[1:-1, -1] = north[1:-1]
    for i, j, s in ((0, 0, south[0]), (-1, 0, south[-1]), (0, -1, north[0]), (-1, -1, north[-1])):
        u[i, j] = 0.5 * (u[i, j] + s)


def fd_laplace(n: int, boundary: dict, A: float = 1.0, residual_tol: float = 1e-10) -> GridField:
    """Five-point Dirichlet solve on ``[0, A] x [0, 1]`` with ``n`` intervals per unit.

    ``boundary`` maps sides to callables, arrays of samples, or scalars.
    """
    x, y = _grid(n, A)
    u = np.zeros((x.size, y.size))
    _apply_dirichlet(u, x, y, boundary)
    mx, my = x.size - 2, y.size - 2
    lap = sp.kronsum(
        sp.diags([1, -2, 1], [-1, 0, 1], shape=(my, my)),
        sp.diags([1, -2, 1], [-1, 0, 1], shape=(mx, mx)),
        format="csr",
    )
    rhs = np.zeros((mx, my))
    rhs[0, :] -= u[0, 1:-1]
    rhs[-1, :] -= u[-1, 1:-1]
    rhs[:, 0] -= u[1:-1, 0]
    rhs[:, -1] -= u[1:-1, -1]
    b = rhs.ravel()
    sol = spsolve(lap.tocsc(), b)
    res = np.abs(lap @ sol - b).max()
    if res > residual_tol * max(1.0, np.abs(b).max()):
        raise RuntimeError(f"Laplace solve did not converge: residual {res:.3e}")
    u[1:-1, 1:-1] = sol.reshape(mx, my)
    return GridField(x, y, u)


def fd_heat(n: int, t: float, boundary: dict, A: float = 1.0, dt: float | None = None) -> GridField:
    """Explicit scheme for ``v_t = (v_xx + v_yy) / 2`` from zero initial data."""
    x, y = _grid(n, A)
    h = 1.0 / n
    dt_max = h * h / 4.0
    dt = dt_max if dt is None else dt
    if dt > dt_max * (1 + 1e-12):
        raise ValueError(f"timestep {dt:g} exceeds the stability bound {dt_max:g}")
    steps = int(np.ceil(t / dt))
    dt = t / steps if steps else 0.0
    v = np.zeros((x.size, y.size))
    _apply_dirichlet(v, x, y, boundary)
    c = 0.5 * dt / (h * h)
    for _ in range(steps):
        inner = v[1:-1, 1:-1]
        v[1:-1, 1:-1] = inner + c * (
            v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * inner
        )
    return GridField(x, y, v, time=t)


def boundary_from_profiles(profiles) -> dict:
    """FD boundary data from unmollified or mollified profiles."""
    return {p.side: p for p in profiles}


# --- misc ----------------------------------------------------------------------------


def gamma_cdf(N, t):
    """``P(E_1 + ... + E_N <= t)`` for unit exponentials (regularized incomplete gamma)."""
    N = np.asarray(N, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(N < 1):
        raise ValueError("shape must be a positive integer")
    return gammainc(N, np.maximum(t, 0.0))


def sigma_const(cbar: float, K: int, B: float) -> float:
    """Boundary constant ``sqrt(2 pi) * cbar * K / B``."""
    if cbar <= 0 or K <= 0 or B <= 0:
        raise ValueError("inputs must be positive")
    return SQRT_2PI * cbar * K / B
