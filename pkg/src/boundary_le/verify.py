"""Numerical checks of the hypotheses, the limit theorem, local equilibrium and duality."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, spsolve
from scipy.stats import poisson

from .geometry import SIDES, Domain, TypeTable, classify_types, h1_vector, round_to_lattice
from .injection import InjectionSpec, event_site_indices, sample_events, spec_a_weights
from .kernels import BoundaryProfile, phi, psi, sigma_const, u_series, v_series
from .records import CheckResult
from .walk import AbsorbedChain, WalkModel, dual_harmonic, evolve_particles, occupancy_transient, uniformized_integral

C1_SSRW = 4.0 / np.sqrt(np.pi)
MEMORY_LIMIT_BYTES = 2 * 1024**3
TRIAL_CHUNK = 50


def check_h1(lattice, L: float = 12.0) -> TypeTable:
    """Period bookkeeping on a test domain; failures come back as a diagnostic."""
    return classify_types(Domain(lattice, L))


# --- H2 ------------------------------------------------------------------------------


@dataclass
class H2Statistic:
    T: float
    params: tuple
    k: int
    p: float
    scaled: float
    reference: float
    start: tuple
    target: tuple

    @property
    def rel_error(self) -> float:
        return self.scaled / self.reference - 1.0


def _type_k_start(domain: Domain, k: int, height: float):
    table = classify_types(domain)
    if table.K is None:
        raise ValueError(table.diagnostic or "H1 fails")
    sites = [s for s, typ in table.assignment.items() if typ == k]
    if not sites:
        raise ValueError(f"no West-boundary site of type {k}")
    pts = domain.lattice.to_real(np.array(sites))
    return sites[int(np.argmin(np.abs(pts[:, 1] - height)))]


def h2_walk(model: WalkModel, T: float, params, k: int = 1, c_k: float | None = None,
            tol: float = 1e-16) -> H2Statistic:
    """Exact ``T^{3/2} P(Z_T = <(alpha, gamma) sqrt T>, box survival)`` by uniformization."""
    alpha, beta, gamma, eta, xi = (float(v) for v in params)
    if not (0 < alpha < beta and 0 < eta < xi and 0 < gamma < xi):
        raise ValueError("need 0 < alpha < beta and 0 < eta, gamma < xi")
    r = np.sqrt(T)
    lat = model.lattice
    est = (beta * r) * (xi * r) / lat.covolume * 8 * 12
    if est > MEMORY_LIMIT_BYTES:
        raise MemoryError(f"box needs about {est / 1e9:.1f} GB; use a smaller T")
    domain = Domain(lat, xi * r, A=beta / xi)
    chain = AbsorbedChain.build(domain, model.weights)
    start = _type_k_start(domain, k, eta * r)
    target = round_to_lattice((alpha * r, gamma * r), lat)
    s, tg = domain.site_index(start), domain.site_index(target)
    # P(Z_T = target) = sum_M Pois(T; M) (Q^M)[s, tg]
    mmax = int(poisson.isf(tol, T)) + 1
    pmf = poisson.pmf(np.arange(mmax + 1), T)
    v = np.zeros(len(domain))
    v[s] = 1.0
    QT = chain.Q.T.tocsr()
    p = 0.0
    for m in range(mmax + 1):
        p += pmf[m] * v[tg]
        v = QT @ v
    if c_k is None:
        c_k = 2.0 / np.sqrt(np.pi) * lat.covolume
    ref = c_k * float(psi(alpha, beta)) * float(phi(eta, gamma, xi))
    return H2Statistic(T, (alpha, beta, gamma, eta, xi), k, p, T**1.5 * p, ref, start, target)


# --- H3 ------------------------------------------------------------------------------


@dataclass
class H3Result:
    value: float
    early: float
    late: float
    late_bound: float
    full: float
    delta: float


def _strip_chain(model: WalkModel, L: float, window: float):
    """Chain on ``x in [0, L]`` and a ``y``-window of half-height ``window * L``, lattice aligned."""
    lat = model.lattice
    v = h1_vector(lat, axis=0)
    if v is None:
        raise ValueError("the strip needs a vertical lattice vector (H1)")
    step = float(lat.to_real(np.array(v))[1])
    nshift = int(np.ceil(window * L / step))
    shift = np.array(v) * nshift
    height = L + 2 * nshift * step
    domain = Domain(lat, height, A=L / height)
    return domain, shift


def h3_integral(model: WalkModel, L: float, delta: float, z, start=(0, 0), window: float = 5.0,
                tol: float = 1e-12) -> H3Result:
    """``L * int_{[0, delta L^2] u [L^2/delta, inf)} P(Z_t = <zL>, strip survival) dt``.

    The strip ``0 <= x <= L`` is truncated to ``|y| <= window * L`` around it.
    The late part is bounded through the spectral gap of the (symmetric)
    absorbed kernel and computed exactly only when the bound is not negligible.
    """
    x, y = (float(c) for c in z)
    if not (0 < x < 1) or not (-1 < y < 1):
        raise ValueError("need x in (0, 1) and y in (-1, 1)")
    domain, shift = _strip_chain(model, L, window)
    lat = model.lattice
    chain = AbsorbedChain.build(domain, model.weights)
    s = domain.site_index(np.array(start) + shift)
    target = np.array(round_to_lattice((x * L, y * L), lat)) + shift
    tg = domain.site_index(target)
    Q = chain.Q.tocsr()
    e = np.zeros(len(domain))
    e[s] = 1.0
    # Green function column: full = L * G[s, tg]
    A = sp.identity(len(domain), format="csc") - Q.tocsc()
    rhs = np.zeros(len(domain))
    rhs[tg] = 1.0
    g_col = spsolve(A, rhs)
    full = L * g_col[s]
    early_vec, _, _ = uniformized_integral(Q.T.tocsr(), e, delta * L * L, tol)
    early = L * early_vec[tg]
    T0 = L * L / delta
    symmetric = abs(Q - Q.T).max() == 0 if Q.nnz else True
    bound = np.inf
    if symmetric:
        rho = float(eigsh(Q, k=1, which="LA", return_eigenvectors=False)[0])
        gap = 1.0 - rho
        bound = L * np.exp(-gap * T0) / gap
    if bound <= tol * max(full, 1e-300):
        late = 0.0
    else:
        # distribution at T0, then the Green function from there
        mmax = int(poisson.isf(1e-16, T0)) + 1
        pmf = poisson.pmf(np.arange(mmax + 1), T0)
        v, pT0 = e.copy(), np.zeros_like(e)
        QT = Q.T.tocsr()
        for m in range(mmax + 1):
            pT0 += pmf[m] * v
            v = QT @ v
        late = L * float(pT0 @ g_col)
        bound = 0.0
    return H3Result(early + late, early, late, bound, full, delta)


# --- occupancy limit ----------------------------------------------------------------


@dataclass
class Theorem1Report:
    z: tuple
    site: tuple
    occupancy: float
    reference: float
    rel_error: float
    t: float


def theorem1_check(model: WalkModel, profiles, L: float, t: float, z, varsigma: float | None = None) -> Theorem1Report:
    """Exact expected occupation at ``<zL>`` against the kernel series.

    ``t`` is macroscopic (the walk runs for ``t L^2``); ``t = inf`` is the
    stationary problem. ``profiles`` maps sides to ``BoundaryProfile``.
    """
    domain = Domain(model.lattice, L)
    chain = AbsorbedChain.build(domain, model.weights)
    spec = InjectionSpec(spec_a_weights(model.weights), profiles, np.inf)
    src = spec.source(domain)
    site = round_to_lattice(np.asarray(z, dtype=float) * L, model.lattice)
    occ = occupancy_transient(chain, src, t * L * L).at(site)
    if varsigma is None:
        varsigma = 1.0
    zz = np.array([z], dtype=float)
    ref = 0.0
    for prof in profiles.values():
        ref += float((u_series(zz, prof, varsigma) if np.isinf(t) else v_series(t, zz, prof, varsigma))[0])
    rel = occ / ref - 1.0 if ref else (0.0 if occ == 0 else np.inf)
    return Theorem1Report(tuple(z), site, occ, ref, rel, t)


# --- duality ----------------------------------------------------------------------------


def duality_report(model: WalkModel, L: float, t: float, profiles=None) -> float:
    """Max over sites of |occupancy - dual harmonic| with the duality weights.

    ``t`` is macroscopic. ``profiles`` is a side-keyed dict or a single
    profile; it defaults to ``sin(pi y)`` on the West side.
    """
    if profiles is None:
        profiles = BoundaryProfile("W", lambda s: np.sin(np.pi * s))
    if isinstance(profiles, BoundaryProfile):
        profiles = {profiles.side: profiles}
    domain = Domain(model.lattice, L)
    chain = AbsorbedChain.build(domain, model.weights)
    spec = InjectionSpec(spec_a_weights(model.weights), profiles, np.inf)
    src = spec.source(domain)
    # corner sites carry the sum over their sides, as in the injection source
    F = np.zeros(len(domain))
    for side, prof in profiles.items():
        mask = domain.side_mask[side]
        F[mask] += prof(domain.side_coordinate(side)[mask])
    T = t * L * L
    lhs = occupancy_transient(chain, src, T).values
    rhs = dual_harmonic(domain, model.weights, F, T).values
    return float(np.abs(lhs - rhs).max())


# --- local equilibrium ------------------------------------------------------------------


@dataclass
class LEReport:
    probes: list
    offsets: list
    sites: list
    trials: int
    counts: np.ndarray = field(repr=False)
    means: np.ndarray = None
    variances: np.ndarray = None
    dispersion: np.ndarray = None
    cov_z: np.ndarray = None
    offset_mean_z: np.ndarray = None
    reference: np.ndarray = None

    def max_abs_cov_z(self) -> float:
        iu = np.triu_indices(len(self.sites), 1)
        return float(np.abs(self.cov_z[iu]).max())


def _le_statistics(counts: np.ndarray, n_probes: int, n_offsets: int):
    n = len(counts)
    mean = counts.mean(axis=0)
    var = counts.var(axis=0, ddof=1)
    disp = np.where(mean > 0, var / np.where(mean > 0, mean, 1.0), np.nan)
    c = counts - mean
    k = counts.shape[1]
    cov_z = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            prod = c[:, a] * c[:, b]
            se = prod.std(ddof=1) / np.sqrt(n)
            cov_z[a, b] = cov_z[b, a] = prod.mean() / se if se > 0 else 0.0
    mz = []
    for p in range(n_probes):
        cols = range(p * n_offsets, (p + 1) * n_offsets)
        for a in cols:
            for b in cols:
                if a < b:
                    d = counts[:, a] - counts[:, b]
                    se = d.std(ddof=1) / np.sqrt(n)
                    mz.append(d.mean() / se if se > 0 else 0.0)
    return mean, var, disp, cov_z, np.array(mz)


def _le_chunk(spec, domain, chain_nbr, cum, probe_idx, seed, trials):
    out = np.zeros((len(trials), len(probe_idx)), dtype=np.int64)
    for r, trial in enumerate(trials):
        ev = sample_events(spec, domain, (seed, trial, 0))
        start = event_site_indices(ev, domain)
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial, 1]))
        final = evolve_particles(rng, start, -ev["T"], chain_nbr, cum)
        final = final[final >= 0]
        hist = np.bincount(final, minlength=len(domain))
        out[r] = hist[probe_idx]
    return out


def le_poissonity(model: WalkModel, L: float, t: float, probes, offsets, trials: int, seed: int,
                  profiles=None, workers: int = 1, with_reference: bool = True) -> LEReport:
    """Repeated injection experiments; per-site count statistics at probes plus offsets.

    ``offsets`` are integer lattice vectors added to ``<z_i L>``. Trials are
    processed in fixed chunks with per-trial seeds, so results do not depend
    on ``workers``.
    """
    if profiles is None:
        profiles = {s: BoundaryProfile.constant(s) for s in SIDES}
    domain = Domain(model.lattice, L)
    chain = AbsorbedChain.build(domain, model.weights)
    spec = InjectionSpec(spec_a_weights(model.weights), profiles, t * L * L)
    sites, probe_idx = [], []
    for z in probes:
        base = np.array(round_to_lattice(np.asarray(z, dtype=float) * L, model.lattice))
        for off in offsets:
            s = tuple(int(v) for v in base + np.asarray(off))
            sites.append(s)
            probe_idx.append(domain.site_index(s))
    probe_idx = np.array(probe_idx)
    cum = np.cumsum(model.weights)
    chunks = [list(range(i, min(i + TRIAL_CHUNK, trials))) for i in range(0, trials, TRIAL_CHUNK)]
    job = lambda ch: _le_chunk(spec, domain, chain.neighbours, cum, probe_idx, seed, ch)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(ch) for ch in chunks]
    counts = np.concatenate(parts) if parts else np.zeros((0, len(sites)), dtype=np.int64)
    mean, var, disp, cov_z, mz = _le_statistics(counts, len(probes), len(offsets))
    ref = None
    if with_reference:
        ref = []
        for z in probes:
            zz = np.array([z], dtype=float)
            ref.append(sum(float(v_series(t, zz, p)[0]) for p in profiles.values()))
        ref = np.array(ref)
    return LEReport(list(probes), list(offsets), sites, trials, counts, mean, var, disp, cov_z, mz, ref)


def le_checks(rep: LEReport, dispersion_band=(0.9, 1.1), z_max: float = 3.0) -> list[CheckResult]:
    lo, hi = dispersion_band
    iu = np.triu_indices(len(rep.sites), 1)
    out = [
        CheckResult("le.dispersion", rep.dispersion.tolist(), 1.0, list(dispersion_band),
                    bool(np.all((rep.dispersion >= lo) & (rep.dispersion <= hi)))),
        CheckResult("le.covariance_z", float(np.abs(rep.cov_z[iu]).max()), 0.0, z_max,
                    bool(np.all(np.abs(rep.cov_z[iu]) < z_max))),
    ]
    if len(rep.offset_mean_z):
        out.append(CheckResult("le.offset_means_z", float(np.abs(rep.offset_mean_z).max()), 0.0, z_max,
                               bool(np.all(np.abs(rep.offset_mean_z) < z_max))))
    return out


# --- billiards ----------------------------------------------------------------------------

BILLIARD_CHUNK = 100_000


def _chunk_seed(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def _run_chunks(job, sizes, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(job, range(len(sizes)), sizes))
    return [job(i, m) for i, m in enumerate(sizes)]


def _chunk_sizes(n: int, chunk: int) -> list:
    return [min(chunk, n - i) for i in range(0, n, chunk)]


def billiard_cells(sigma: float, L: float) -> int:
    """Cells per side of the billiard domain: sites ``l`` with ``sigma l / L`` in the unit square."""
    return int(np.floor(sigma * L)) + 1


@dataclass
class BilliardDualityReport:
    L: float
    n_cells: int
    probe: tuple
    injections: int
    rate: float
    estimate: float
    stderr: float
    prediction: float
    capped: int

    @property
    def z(self) -> float:
        return (self.estimate - self.prediction) / self.stderr


def billiard_duality(table, L: float, sigma: float, n_inject: int, seed: int, workers: int = 1,
                     chunk: int = BILLIARD_CHUNK) -> BilliardDualityReport:
    """Stationary occupancy of a diagonal cell under West and East injection with ``f = 1``.

    Each edge injects at rate ``1 / kac`` (flux of the invariant measure).
    Campbell's formula turns mean occupation times into the expected count.
    The dual prediction is the harmonic function equal to 1 on the vertical
    sides and 0 on the horizontal ones; on the diagonal it is 1/2 by the
    ``x <-> y`` symmetry of the table.
    """
    from .billiard import EdgeSpec, occupation_times

    n = billiard_cells(sigma, L)
    probe = ((n - 1) // 2, (n - 1) // 2)
    kac = EdgeSpec(table, "W").kac
    rate = 2 * n / kac

    def job(i, m):
        return occupation_times(table, n, probe, m, _chunk_seed(seed, i, 0xD0), sides=("W", "E"))

    parts = _run_chunks(job, _chunk_sizes(n_inject, chunk), workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    capped = sum(p[2] for p in parts)
    mean = s1 / n_inject
    var = s2 / n_inject - mean**2
    se = np.sqrt(max(var, 0.0) / n_inject)
    return BilliardDualityReport(L, n, probe, n_inject, rate, rate * mean, rate * se, 0.5, capped)


@dataclass
class BilliardSurvival:
    T: float
    n: int
    survivors: int

    @property
    def fraction(self) -> float:
        return self.survivors / self.n

    @property
    def scaled(self) -> float:
        return np.sqrt(self.T) * self.fraction

    @property
    def stderr(self) -> float:
        p = self.fraction
        return np.sqrt(self.T) * np.sqrt(p * (1 - p) / self.n)


@dataclass
class BilliardH2:
    """Box-survival experiment from the West edge of cell ``(0, j0)``."""

    T: float
    sigma: float
    n: int
    start_row: int
    x_max: int
    y_max: int
    cells: np.ndarray = field(repr=False)
    survival: BilliardSurvival = None

    @property
    def scale(self) -> float:
        return self.sigma * np.sqrt(self.T)

    def norm(self, cell_coord) -> float:
        # the absorbing wall sits half a cell below cell 0
        return (np.asarray(cell_coord, dtype=float) + 0.5) / self.scale

    def target_cell(self, alpha, gamma) -> tuple:
        return int(round(alpha * self.scale)), int(round(gamma * self.scale))

    def block(self, alpha, gamma, radius: int = 1):
        """Local probability per cell averaged over a ``(2r+1)^2`` block, with its s.e."""
        cx, cy = self.target_cell(alpha, gamma)
        x, y = self.cells[:, 0], self.cells[:, 1]
        inside = (np.abs(x - cx) <= radius) & (np.abs(y - cy) <= radius)
        k = int(np.count_nonzero(inside))
        m = (2 * radius + 1) ** 2
        p = k / (m * self.n)
        se = np.sqrt(k * (1 - k / self.n)) / (m * self.n)
        return p, se, k

    def shape(self, alpha, gamma, radius: int = 1) -> float:
        """``psi phi`` averaged over the block cells, in the experiment's effective coordinates."""
        cx, cy = self.target_cell(alpha, gamma)
        b = (self.x_max + 1) / self.scale
        xi = (self.y_max + 1) / self.scale
        eta = self.norm(self.start_row)
        # Gauss-Legendre over each cell
        g, w = np.polynomial.legendre.leggauss(6)
        g, w = 0.5 * g, 0.5 * w
        xs = self.norm(np.add.outer(np.arange(cx - radius, cx + radius + 1), g).ravel())
        ys = self.norm(np.add.outer(np.arange(cy - radius, cy + radius + 1), g).ravel())
        wx = np.tile(w, 2 * radius + 1)
        fx = np.array([psi(a, b) if 0 < a < b else 0.0 for a in xs])
        fy = np.array([phi(eta, y, xi) if 0 < y < xi else 0.0 for y in ys])
        return float((wx @ fx) * (wx @ fy)) / (2 * radius + 1) ** 2

    def ratio(self, t1, t2, radius: int = 1):
        """Measured and predicted ratio of block probabilities at targets ``(alpha, gamma)``."""
        p1, s1, k1 = self.block(*t1, radius=radius)
        p2, s2, k2 = self.block(*t2, radius=radius)
        if k1 == 0 or k2 == 0:
            raise ValueError("insufficient statistics: empty target block")
        r = p1 / p2
        se = r * np.sqrt(1 / k1 + 1 / k2)
        return r, se, self.shape(*t1, radius=radius) / self.shape(*t2, radius=radius)


def _entries(table, n, rng, row):
    from .billiard import EdgeSpec, sample_edge_measure

    return sample_edge_measure(EdgeSpec(table, "W"), n, rng.bit_generator.seed_seq, cell=(0, row))


def billiard_survival(table, T: float, n: int, seed: int, workers: int = 1,
                      chunk: int = BILLIARD_CHUNK) -> BilliardSurvival:
    """``P(first coordinate stays >= 0 up to T)`` from the West edge measure."""
    from .billiard import box_survivors

    big = 1 << 30

    def job(i, m):
        st = _entries(table, m, _chunk_seed(seed, i, 0x5A), 0)
        return int(box_survivors(table, st, T, big, big)[:, 2].sum())

    surv = sum(_run_chunks(job, _chunk_sizes(n, chunk), workers))
    return BilliardSurvival(T, n, surv)


def h2_billiard(table, sigma: float, T: float, params, n: int, seed: int, workers: int = 1,
                chunk: int = BILLIARD_CHUNK) -> BilliardH2:
    """Monte Carlo box survival in cell units; shape is compared, never absolute constants.

    The box is ``0..floor(beta s)`` x ``0..floor(xi s)`` cells with ``s = sigma sqrt(T)``;
    particles start on the West edge of cell ``(0, round(eta s))``.
    """
    from .billiard import box_survivors

    alpha, beta, gamma, eta, xi = (float(v) for v in params)
    if not (0 < alpha < beta and 0 < eta < xi and 0 < gamma < xi):
        raise ValueError("need 0 < alpha < beta and 0 < eta, gamma < xi")
    s = sigma * np.sqrt(T)
    x_max, y_max = int(np.floor(beta * s)), int(np.floor(xi * s))
    row = int(round(eta * s))

    def job(i, m):
        st = _entries(table, m, _chunk_seed(seed, i, 0x42), row)
        return box_survivors(table, st, T, x_max, y_max)

    out = np.concatenate(_run_chunks(job, _chunk_sizes(n, chunk), workers))
    surv = BilliardSurvival(T, n, int(out[:, 2].sum()))
    alive = out[:, 0] >= 0
    return BilliardH2(T, sigma, n, row, x_max, y_max, out[alive, :2].astype(np.int64), surv)


# --- billiard LE ----------------------------------------------------------------------------


def _billiard_le_trial(table, n_cells, horizon, rate_per_edge, probe_cells, region, seed, trial):
    from .billiard import inject_and_flow

    rng = _chunk_seed(seed, trial, 0xE0)
    n_edges = 4 * n_cells
    m = rng.poisson(rate_per_edge * n_edges * horizon)
    ages = horizon * rng.random(m)
    rows = rng.integers(0, n_edges, size=m)
    st = inject_and_flow(table, n_cells, ages, rows, rng)
    st = st[~np.isnan(st[:, 0])]
    counts = np.zeros(len(probe_cells), dtype=np.int64)
    for j, (cx, cy) in enumerate(probe_cells):
        here = st[(st[:, 0] == cx) & (st[:, 1] == cy)]
        if region is not None:
            here = here[region(here[:, 2:4], here[:, 4:6])]
        counts[j] = len(here)
    return counts


def le_billiard(table, sigma: float, L: float, t: float, probe_cells, trials: int, seed: int,
                region=None, workers: int = 1) -> LEReport:
    """Local equilibrium for the billiard with ``f = 1`` on all four sides.

    ``region`` restricts counts to a phase region (detailed local equilibrium).
    Each probe cell is its own group; there are no offsets to compare.
    """
    from .billiard import EdgeSpec

    n = billiard_cells(sigma, L)
    rate = 1.0 / EdgeSpec(table, "W").kac
    horizon = t * L * L
    probes = [tuple(int(v) for v in c) for c in probe_cells]

    def job(i, trs):
        return np.array([_billiard_le_trial(table, n, horizon, rate, probes, region, seed, tr) for tr in trs])

    chunks = [list(range(i, min(i + TRIAL_CHUNK, trials))) for i in range(0, trials, TRIAL_CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, range(len(chunks)), chunks))
    else:
        parts = [job(i, c) for i, c in enumerate(chunks)]
    counts = np.concatenate(parts)
    mean, var, disp, cov_z, mz = _le_statistics(counts, len(probes), 1)
    return LEReport(probes, [(0, 0)], probes, trials, counts, mean, var, disp, cov_z, mz, None)


def billiard_invariants(table, seed: int = 0, involution_s: float = 0.5, n_points: int = 1000,
                        drift_traj: int = 1000, drift_flights: int = 1000, kac_samples: int = 1_000_000,
                        horizon_flights: int = 10_000_000, sigma_T: float = 500.0, sigma_n: int = 20_000,
                        z_max: float = 3.0) -> list[CheckResult]:
    """Structural checks of a table: reversibility, speed, Kac, horizon, isotropy."""
    from .billiard import (FLIGHT_CAP, EdgeSpec, _flight_stats, estimate_sigma, flow_states,
                           involution, mean_return, phase_distance, random_phase_points)

    rng = _chunk_seed(seed, 0x1A)
    out = []

    x = random_phase_points(table, n_points, rng)
    y = flow_states(involution(flow_states(x, involution_s, table)), involution_s, table)
    err = float(phase_distance(involution(y), x).max())
    out.append(CheckResult("billiard.involution", err, 0.0, 1e-9, err <= 1e-9, f"s={involution_s}"))

    st = random_phase_points(table, drift_traj, rng)
    _, _, cnt, drift, bad = _flight_stats(st, drift_flights, table.images, FLIGHT_CAP)
    out.append(CheckResult("billiard.speed_drift", float(drift), 0.0, 1e-12, bad < 0 and drift <= 1e-12,
                           f"collisions={cnt}"))

    est, kac, se = mean_return(EdgeSpec(table, "W"), kac_samples, np.random.SeedSequence([seed, 0x1B]))
    rel = est / kac - 1
    out.append(CheckResult("billiard.kac_return", est, kac, 0.02, abs(rel) <= 0.02, f"se={se:.3g}"))

    # horizon: maximum over a tenth of the flights against the maximum over all of them
    per = 1000
    st = random_phase_points(table, horizon_flights // per, rng)
    k = len(st) // 10
    m1, _, _, _, b1 = _flight_stats(st[:k], per, table.images, FLIGHT_CAP)
    m2, _, c2, _, b2 = _flight_stats(st[k:], per, table.images, FLIGHT_CAP)
    mx = max(m1, m2)
    ok = b1 < 0 and b2 < 0 and np.isfinite(mx) and (mx - m1) <= 0.05 * m1
    out.append(CheckResult("billiard.horizon", float(mx), float(m1), 0.05, bool(ok),
                           f"flights={(k + c2 // per) * per}"))

    sig = estimate_sigma(table, sigma_T, sigma_n, seed)
    z12 = sig.sigma[0, 1] / sig.stderr[0, 1]
    zd = sig.anisotropy / sig.aniso_stderr
    out.append(CheckResult("billiard.sigma_offdiag_z", float(z12), 0.0, z_max, abs(z12) < z_max,
                           f"sigma={sig.sigma.tolist()}"))
    out.append(CheckResult("billiard.sigma_aniso_z", float(zd), 0.0, z_max, abs(zd) < z_max))
    return out
