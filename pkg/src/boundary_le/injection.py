"""Poisson injection of particles through the boundary of the discretized rectangle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import quad, trapezoid

from .geometry import SIDES, Domain, GeometryError
from .kernels import BoundaryProfile

EVENT_DTYPE = np.dtype(
    [("T", "f8"), ("lx", "i8"), ("ly", "i8"), ("side", "U1"), ("edge", "i8")]
)


class PeriodicFunction:
    """Period-1 function given by a callable or by samples on ``[0, 1)``."""

    def __init__(self, source, tol: float = 1e-6):
        if callable(source):
            self._f = source
            grid = np.linspace(0.0, 1.0, 4097)
            vals = np.asarray(source(grid), dtype=float) * np.ones_like(grid)
            mean = quad(lambda s: float(np.asarray(source(np.array([s])))[0]), 0.0, 1.0, limit=200)[0]
            self.sup = float(vals.max()) * (1.0 + 1e-9)
            self.samples = None
        else:
            vals = np.atleast_1d(np.asarray(source, dtype=float))
            self.samples = vals
            # linear interpolation, wrapping the last sample to the first
            ext = np.append(vals, vals[0])
            grid = np.linspace(0.0, 1.0, len(ext))
            self._f = lambda s: np.interp(np.mod(s, 1.0), grid, ext)
            mean = float(trapezoid(ext, grid)) if len(vals) > 1 else float(vals[0])
            self.sup = float(vals.max())
        if np.any(vals < 0):
            raise ValueError("time modulation must be non-negative")
        if abs(mean - 1.0) > tol:
            raise ValueError(f"time modulation must average to 1 over a period (got {mean:.8f})")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.asarray(self._f(np.mod(s, 1.0)), dtype=float) * np.ones_like(s)

    @property
    def is_constant(self) -> bool:
        return self.samples is not None and np.all(self.samples == self.samples[0])


def spec_a_weights(weights) -> Callable[[frozenset], float]:
    """``A(J) = sum_{j in J} P(w_j)``: the weights making the duality exact."""
    w = np.asarray(weights, dtype=float)
    return lambda J: float(sum(w[j] for j in J))


def count_weights(J: frozenset) -> float:
    """``A(J) = |J|``."""
    return float(len(J))


@dataclass
class InjectionSpec:
    """Intensity ``A(J(l)) B(s) f_side(l / L)`` of boundary injections over ``(-horizon, 0]``.

    ``edge_weights`` optionally maps ``(site_index, j)`` to a relative weight
    for the entry edge; by default edges in ``J(l)`` are equally likely.
    """

    A: Callable[[frozenset], float]
    profiles: Mapping[str, BoundaryProfile]
    horizon: float
    B: PeriodicFunction = field(default_factory=lambda: PeriodicFunction([1.0]))
    edge_weights: Callable[[int, int], float] | None = None

    def __post_init__(self):
        if not isinstance(self.B, PeriodicFunction):
            self.B = PeriodicFunction(self.B)
        for side, prof in self.profiles.items():
            if side not in SIDES or prof.side != side:
                raise ValueError(f"profile keyed {side!r} has side {prof.side!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def site_side_rates(self, domain: Domain) -> np.ndarray:
        """(N, 4) time-independent rates ``A(J(l)) f_side(l / L)``; zero off each side."""
        a = np.array([self.A(J) for J in domain.escape])
        rates = np.zeros((len(domain), len(SIDES)))
        for k, side in enumerate(SIDES):
            prof = self.profiles.get(side)
            if prof is None:
                continue
            mask = domain.side_mask[side]
            vals = np.asarray(prof(domain.side_coordinate(side)[mask]), dtype=float)
            rates[mask, k] = a[mask] * vals
        if np.any(rates < 0):
            raise ValueError("negative injection rate")
        return rates

    def source(self, domain: Domain) -> np.ndarray:
        """Per-site rate averaged over a period of ``B``."""
        return self.site_side_rates(domain).sum(axis=1)


def intensity(site, s, spec: InjectionSpec, domain: Domain) -> float:
    """Injection rate at boundary site ``site`` (basis coordinates) and time ``s``."""
    i = domain.site_index(site)
    if not domain.boundary_mask[i]:
        raise GeometryError(f"site {tuple(site)} is not on the boundary")
    return float(spec.site_side_rates(domain)[i].sum() * spec.B(s))


def _side_edges(domain: Domain):
    """Escape edges of every site that leave through each side.

    Returns a padded ``(N, 4, J)`` table and the ``(N, 4)`` counts; a side
    with no matching edge falls back to the whole escape set.
    """
    jumps = domain.lattice.jumps
    L, AL, e = domain.L, domain.A * domain.L, domain.eps
    n, nj = len(domain), len(jumps)
    table = np.full((n, len(SIDES), nj), -1, dtype=np.int64)
    count = np.zeros((n, len(SIDES)), dtype=np.int64)
    for i in np.flatnonzero(domain.boundary_mask):
        Js = np.array(sorted(domain.escape[i]), dtype=np.int64)
        if not len(Js):
            continue
        p = domain.lattice.to_real(domain.sites[i] + jumps[Js])
        beyond = (p[:, 0] < -e, p[:, 1] < -e, p[:, 0] > AL + e, p[:, 1] > L + e)
        for k in range(len(SIDES)):
            sel = Js[beyond[k]]
            sel = sel if len(sel) else Js
            table[i, k, : len(sel)] = sel
            count[i, k] = len(sel)
    return table, count


def _seed_for(seed, *keys) -> np.random.SeedSequence:
    base = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence([*base, *keys])


def sample_events(spec: InjectionSpec, domain: Domain, seed, n_partitions: int = 8) -> np.ndarray:
    """Sample the injection point process on ``(-horizon, 0]``.

    The time axis is split into ``n_partitions`` windows, each sampled with its
    own derived seed, so the result does not depend on how windows are
    distributed over workers. Events are sorted by ``(T, lx, ly)``.
    """
    if not np.isfinite(spec.horizon):
        raise ValueError("sampling needs a finite horizon")
    rates = spec.site_side_rates(domain)
    total = rates.sum(axis=1)
    active = np.flatnonzero(total > 0)
    if len(active) == 0:
        return np.zeros(0, dtype=EVENT_DTYPE)
    if not np.all(np.isfinite(total)):
        raise ValueError("unbounded intensity")
    etable, ecount = _side_edges(domain)
    bmax = spec.B.sup
    constant_b = spec.B.is_constant
    edges_t = np.linspace(-spec.horizon, 0.0, n_partitions + 1)
    chunks = []
    for p in range(n_partitions):
        rng = np.random.default_rng(_seed_for(seed, p))
        lo, hi = edges_t[p], edges_t[p + 1]
        counts = rng.poisson(total[active] * bmax * (hi - lo))
        site = np.repeat(active, counts)
        # (lo, hi]: partitions tile (-horizon, 0]
        T = hi - (hi - lo) * rng.random(len(site))
        if not constant_b:
            keep = rng.random(len(site)) * bmax < spec.B(T)
            site, T = site[keep], T[keep]
        cum = np.cumsum(rates[site], axis=1)
        u = rng.random(len(site)) * cum[:, -1]
        side_k = (u[:, None] >= cum).sum(axis=1)
        side_k = np.minimum(side_k, len(SIDES) - 1)
        v = rng.random(len(site))
        cnt = ecount[site, side_k]
        pick = np.minimum((v * cnt).astype(np.int64), np.maximum(cnt - 1, 0))
        edge = np.where(cnt > 0, etable[site, side_k, pick], -1)
        if spec.edge_weights is not None:
            for n in np.flatnonzero(cnt > 1):
                cand = etable[site[n], side_k[n], : cnt[n]]
                w = np.cumsum([spec.edge_weights(int(site[n]), int(j)) for j in cand])
                edge[n] = cand[min(int(np.searchsorted(w, v[n] * w[-1], side="right")), len(cand) - 1)]
        ev = np.zeros(len(site), dtype=EVENT_DTYPE)
        ev["T"] = T
        ev["lx"] = domain.sites[site, 0]
        ev["ly"] = domain.sites[site, 1]
        ev["side"] = np.array(SIDES)[side_k] if len(site) else []
        ev["edge"] = edge
        chunks.append(ev)
    out = np.concatenate(chunks)
    order = np.lexsort((out["ly"], out["lx"], out["T"]))
    return out[order]


def event_site_indices(events: np.ndarray, domain: Domain) -> np.ndarray:
    return domain.site_indices(np.stack([events["lx"], events["ly"]], axis=1))
