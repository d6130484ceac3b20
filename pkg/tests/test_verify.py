import numpy as np
import pytest

from boundary_le.billiard import DEFAULT_SIGMA2, EdgeSpec
from boundary_le.geometry import square_lattice, triangular_lattice
from boundary_le.kernels import BoundaryProfile, phi, psi
from boundary_le.verify import (
    billiard_cells,
    billiard_duality,
    billiard_survival,
    check_h1,
    h2_billiard,
    h2_walk,
    h3_integral,
    le_billiard,
    le_checks,
    le_poissonity,
    theorem1_check,
)

SIGMA = np.sqrt(DEFAULT_SIGMA2)
MFT = 0.076542  # mean free time of the default table


class TestH1:
    def test_square_and_triangular(self):
        sq, tri = check_h1(square_lattice()), check_h1(triangular_lattice())
        assert (sq.K1, sq.K2) == (1, 1)
        assert (tri.K1, tri.K2) == (1, 2)


class TestH2Walk:
    PARAMS = (0.5, 1.5, 0.5, 0.5, 1.5)

    def test_reference_formula(self, ssrw):
        st = h2_walk(ssrw, 400, self.PARAMS)
        want = 4 / np.sqrt(np.pi) * psi(0.5, 1.5) * phi(0.5, 0.5, 1.5)
        assert st.reference == pytest.approx(want, rel=1e-12)
        assert 0 <= st.p <= 1

    def test_deterministic(self, ssrw):
        a, b = h2_walk(ssrw, 400, self.PARAMS), h2_walk(ssrw, 400, self.PARAMS)
        assert a.p == b.p

    def test_gamma_eta_swap(self, ssrw):
        a = h2_walk(ssrw, 2500, (0.5, 1.5, 0.4, 0.8, 1.5))
        b = h2_walk(ssrw, 2500, (0.5, 1.5, 0.8, 0.4, 1.5))
        assert a.reference == pytest.approx(b.reference, rel=1e-12)
        assert a.p == pytest.approx(b.p, rel=0.02)

    def test_error_shrinks_with_time(self, ssrw):
        errs = [abs(h2_walk(ssrw, T, self.PARAMS).rel_error) for T in (400, 1600)]
        assert errs[1] < errs[0]

    def test_bad_params(self, ssrw):
        with pytest.raises(ValueError):
            h2_walk(ssrw, 100, (1.5, 0.5, 0.5, 0.5, 1.5))

    def test_memory_guard(self, ssrw):
        with pytest.raises(MemoryError):
            h2_walk(ssrw, 1e12, self.PARAMS)


class TestH3:
    def test_decreasing_in_delta(self, ssrw):
        vals = [h3_integral(ssrw, 20, d, (0.5, 0.5)).value for d in (0.1, 0.05, 0.025)]
        assert vals[0] > vals[1] > vals[2] > 0

    def test_parts_below_full(self, ssrw):
        r = h3_integral(ssrw, 20, 0.05, (0.5, 0.5))
        assert 0 <= r.early <= r.full and 0 <= r.late <= r.full

    def test_boundary_point_rejected(self, ssrw):
        with pytest.raises(ValueError):
            h3_integral(ssrw, 20, 0.05, (0.0, 0.5))


class TestTheorem1:
    def test_zero_data(self, ssrw):
        rep = theorem1_check(ssrw, {"W": BoundaryProfile.constant("W", 0.0)}, 16, np.inf, (0.5, 0.5))
        assert rep.occupancy == 0 and rep.reference == 0 and rep.rel_error == 0

    def test_error_decreases_with_scale(self, ssrw):
        prof = {"W": BoundaryProfile("W", lambda s: np.sin(np.pi * s))}
        errs = [abs(theorem1_check(ssrw, prof, L, np.inf, (0.5, 0.5)).rel_error) for L in (15, 30, 60)]
        assert errs[0] > errs[1] > errs[2]


@pytest.fixture(scope="module")
def report(ssrw):
    return le_poissonity(ssrw, 16, 0.5, [(0.5, 0.5), (0.3, 0.6)], [(0, 0), (2, 0)], 1000, seed=11)


@pytest.fixture(scope="module")
def h2exp(table):
    return h2_billiard(table, SIGMA, 150.0, (1, 2, 1, 1, 2), 5_000_000, seed=7)


class TestLE:
    def test_shapes(self, report):
        assert report.counts.shape == (1000, 4)
        assert len(report.offset_mean_z) == 2

    def test_mean_near_limit(self, report):
        # finite L: only a loose comparison with the hydrodynamic profile
        assert np.all(np.abs(report.means[::2] / report.reference - 1) < 0.3)

    def test_poisson_statistics(self, report):
        # dispersion s.e. is about sqrt(2 / 1000) = 0.045 here
        assert all(c.passed for c in le_checks(report, dispersion_band=(0.85, 1.15)))

    def test_reproducible_across_workers(self, ssrw):
        a = le_poissonity(ssrw, 12, 0.5, [(0.5, 0.5)], [(0, 0)], 120, seed=4, workers=1)
        b = le_poissonity(ssrw, 12, 0.5, [(0.5, 0.5)], [(0, 0)], 120, seed=4, workers=3)
        assert np.array_equal(a.counts, b.counts)


class TestBilliardVerify:
    def test_cells(self):
        assert billiard_cells(SIGMA, 20) == 4
        assert billiard_cells(1.0, 3) == 4

    def test_duality_reproducible(self, table):
        a = billiard_duality(table, 20, SIGMA, 30_000, seed=1, workers=1, chunk=10_000)
        b = billiard_duality(table, 20, SIGMA, 30_000, seed=1, workers=3, chunk=10_000)
        assert a == b
        assert a.capped == 0
        assert a.rate == pytest.approx(8 / EdgeSpec(table).kac)

    def test_dle_whole_space_equals_le(self, table):
        cells = [(1, 1), (2, 1)]
        a = le_billiard(table, SIGMA, 20, 0.01, cells, 40, seed=2)
        b = le_billiard(table, SIGMA, 20, 0.01, cells, 40, seed=2, region=lambda q, v: np.ones(len(q), bool))
        assert np.array_equal(a.counts, b.counts)
        c = le_billiard(table, SIGMA, 20, 0.01, cells, 40, seed=2, region=lambda q, v: v[:, 0] > 0)
        assert np.all(c.counts <= a.counts)

    def test_h2_shape_ratio(self, h2exp):
        r, se, pred = h2exp.ratio((1, 0.5), (1, 1))
        assert abs(r - pred) < 3 * se

    def test_h2_mirror(self, h2exp):
        assert 2 * h2exp.start_row == h2exp.y_max
        r, se, _ = h2exp.ratio((1, 0.5), (1, 1.5))
        assert abs(r - 1) < 3 * se

    def test_h2_empty_block(self, table):
        exp = h2_billiard(table, SIGMA, 150.0, (1, 2, 1, 1, 2), 10, seed=7)
        with pytest.raises(ValueError, match="insufficient"):
            exp.ratio((1, 0.5), (1, 1))

    def test_survival_scaling(self, table):
        a = billiard_survival(table, 1000 * MFT, 400_000, seed=1)
        b = billiard_survival(table, 4000 * MFT, 400_000, seed=2)
        assert abs(a.scaled - b.scaled) < 3 * np.hypot(a.stderr, b.stderr)
