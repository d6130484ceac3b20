import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from boundary_le.geometry import Domain, GeometryError, round_to_lattice, square_lattice, triangular_lattice
from boundary_le.injection import InjectionSpec, spec_a_weights
from boundary_le.kernels import BoundaryProfile
from boundary_le.verify import duality_report
from boundary_le.walk import (
    AbsorbedChain,
    WalkError,
    WalkModel,
    dual_harmonic,
    occupancy_stationary,
    occupancy_transient,
    simulate_path,
    survival_profile,
)

SIN_W = BoundaryProfile("W", lambda s: np.sin(np.pi * s))


def sin_source(model, L):
    dom = Domain(model.lattice, L)
    spec = InjectionSpec(spec_a_weights(model.weights), {"W": SIN_W}, np.inf)
    return dom, AbsorbedChain.build(dom, model.weights), spec.source(dom)


class TestModel:
    def test_normalized_covariance_is_identity(self, ssrw):
        w = ssrw.lattice.jump_vectors
        cov = (ssrw.weights[:, None, None] * w[:, :, None] * w[:, None, :]).sum(axis=0)
        assert np.allclose(cov, np.eye(2), atol=1e-14)
        assert np.allclose(np.abs(w).max(axis=0), np.sqrt(2))

    def test_triangular_normalization(self):
        m = WalkModel(triangular_lattice(1.0, weights=[1 / 6] * 6))
        w = m.lattice.jump_vectors
        cov = (m.weights[:, None, None] * w[:, :, None] * w[:, None, :]).sum(axis=0)
        assert np.allclose(cov, np.eye(2), atol=1e-13)

    def test_needs_weights(self):
        with pytest.raises(WalkError):
            WalkModel(square_lattice(1.0))

    def test_rows_substochastic(self, ssrw):
        dom, chain, _ = sin_source(ssrw, 8)
        rows = np.asarray(chain.Q.sum(axis=1)).ravel()
        assert np.all(rows <= 1 + 1e-15)
        leaky = rows < 1 - 1e-15
        assert np.array_equal(leaky, np.array([len(J) > 0 for J in dom.escape]))


class TestPaths:
    def test_zero_time(self, ssrw):
        dom = Domain(ssrw.lattice, 8)
        rec = simulate_path((2, 2), AbsorbedChain.build(dom, ssrw.weights), 0.0, probe_times=[0.0])
        assert rec.jumps == 0 and rec.positions[0] == dom.site_index((2, 2))

    def test_outside_start_rejected(self, ssrw):
        dom = Domain(ssrw.lattice, 8)
        with pytest.raises(GeometryError):
            simulate_path((50, 50), AbsorbedChain.build(dom, ssrw.weights), 1.0)

    def test_forced_exit_is_exponential(self, ssrw):
        dom = Domain(ssrw.lattice, 0.5)  # only the origin
        assert len(dom) == 1
        chain = AbsorbedChain.build(dom, ssrw.weights)
        times = np.array([simulate_path(0, chain, 1e9, seed=s).exit_time for s in range(10_000)])
        assert abs(times.mean() - 1.0) < 3 * times.std(ddof=1) / 100
        rec = simulate_path(0, chain, 1e9, seed=1)
        assert rec.pre_exit == 0 and rec.jumps == 1

    def test_mean_square_displacement(self, ssrw):
        dom = Domain(ssrw.lattice, 300)
        chain = AbsorbedChain.build(dom, ssrw.weights)
        start = round_to_lattice((150, 150), dom.lattice)
        x0 = dom.points[dom.site_index(start)]
        sq = []
        for s in range(3000):
            rec = simulate_path(start, chain, 100.0, seed=s, probe_times=[100.0])
            assert rec.positions[0] >= 0
            sq.append(((dom.points[rec.positions[0]] - x0) ** 2).sum())
        sq = np.array(sq)
        assert abs(sq.mean() - 200.0) < 3 * sq.std(ddof=1) / np.sqrt(len(sq))


class TestOccupancy:
    def test_zero_source(self, ssrw):
        dom, chain, src = sin_source(ssrw, 8)
        assert np.all(occupancy_stationary(chain, 0 * src).values == 0)

    def test_single_site(self, ssrw):
        dom = Domain(ssrw.lattice, 0.5)
        chain = AbsorbedChain.build(dom, ssrw.weights)
        assert occupancy_stationary(chain, np.ones(1)).values[0] == pytest.approx(1.0, abs=1e-14)

    def test_transient_matches_matrix_exponential(self, ssrw):
        dom, chain, src = sin_source(ssrw, 8)
        G = (chain.Q.T - sp.identity(len(dom))).tocsc()
        t = 7.5
        # m(t) = G^{-1} (e^{tG} - I) src
        want = sp.linalg.spsolve(G, expm_multiply(G * t, src) - src)
        got = occupancy_transient(chain, src, t).values
        assert np.abs(got - want).max() < 1e-9

    def test_small_time_first_order(self, ssrw):
        dom, chain, src = sin_source(ssrw, 8)
        t = 1e-4
        assert np.abs(occupancy_transient(chain, src, t).values - t * src).max() < 1e-7

    def test_long_time_is_stationary(self, ssrw):
        L = 16
        dom, chain, src = sin_source(ssrw, L)
        diff = occupancy_transient(chain, src, 10 * L * L).values - occupancy_stationary(chain, src).values
        assert np.abs(diff).max() < 1e-6

    def test_monotone_in_time(self, ssrw):
        dom, chain, src = sin_source(ssrw, 8)
        vals = [occupancy_transient(chain, src, t).values for t in (1.0, 5.0, 20.0, 80.0)]
        assert all(np.all(b >= a - 1e-14) for a, b in zip(vals, vals[1:]))

    def test_non_absorbing_rejected(self):
        # zero jump weights: nothing ever leaves
        lat = square_lattice(1.0, weights=[0.25] * 4)
        dom = Domain(WalkModel(lat).lattice, 8)
        chain = AbsorbedChain.build(dom, np.zeros(4))
        with pytest.raises(WalkError):
            occupancy_stationary(chain, np.ones(len(dom)))


class TestDualHarmonic:
    def test_all_exits_give_one(self, ssrw):
        dom = Domain(ssrw.lattice, 12)
        h = dual_harmonic(dom, ssrw.weights, np.ones(len(dom)))
        assert np.abs(h.values - 1).max() < 1e-12

    def test_west_harmonic_measure_at_center(self, ssrw):
        dom = Domain(ssrw.lattice, 64)
        F = dom.side_mask["W"].astype(float)
        h = dual_harmonic(dom, ssrw.weights, F)
        c = dom.site_index(round_to_lattice((32, 32), dom.lattice))
        assert h.values[c] == pytest.approx(0.25, abs=2e-2)

    @pytest.mark.parametrize("L", [4, 8, 16, 24])
    @pytest.mark.parametrize("t", [np.inf, 0.5])
    def test_duality_exact(self, ssrw, L, t):
        assert duality_report(ssrw, L, t) <= 1e-10

    def test_duality_triangular(self):
        m = WalkModel(triangular_lattice(1.0, weights=[1 / 6] * 6))
        profs = {"W": SIN_W, "S": BoundaryProfile("S", lambda s: s * (1 - s))}
        assert duality_report(m, 12, np.inf, profs) <= 1e-10


class TestSurvival:
    def test_short_time(self, ssrw):
        assert survival_profile(3 * np.sqrt(2), ssrw, 1e-3).probability > 0.999

    def test_constant(self, ssrw):
        p = survival_profile(0.0, ssrw, 1e4).probability
        assert 1.09 <= np.sqrt(1e4) * p <= 1.17

    def test_decreasing(self, ssrw):
        ps = [survival_profile(0.0, ssrw, T).probability for T in (10, 100, 1000)]
        assert ps[0] > ps[1] > ps[2]

    def test_exact_matches_simulation(self, ssrw):
        ex = survival_profile(np.sqrt(2), ssrw, 50.0)
        mc = survival_profile(np.sqrt(2), ssrw, 50.0, mode="mc", n=40_000, seed=3)
        assert abs(ex.probability - mc.probability) < 3 * mc.stderr
        assert ex.error_bound < 1e-4

    def test_bad_time(self, ssrw):
        with pytest.raises(ValueError):
            survival_profile(0.0, ssrw, 0.0)
