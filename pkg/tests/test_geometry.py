import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundary_le.geometry import (
    Domain,
    GeometryError,
    LatticeSpec,
    boundary_sets,
    classify_types,
    h1_vector,
    round_to_lattice,
    square_lattice,
    triangular_lattice,
)

Z2 = square_lattice()


class TestLatticeSpec:
    def test_covolume(self):
        lat = LatticeSpec.from_vectors([(1, 0), (0.5, 2)], [(1, 0), (-1, 0), (0.5, 2), (-0.5, -2)])
        assert lat.covolume == pytest.approx(2.0)

    def test_degenerate_basis(self):
        with pytest.raises(GeometryError, match="degenerate"):
            LatticeSpec([[1, 2], [2, 4]], [(1, 0), (0, 1)])

    def test_non_generating_jumps(self):
        with pytest.raises(GeometryError, match="generate"):
            LatticeSpec(np.eye(2), [(2, 0), (0, 1), (-2, 0), (0, -1)])

    def test_jump_not_on_lattice(self):
        with pytest.raises(GeometryError, match="not a lattice vector"):
            LatticeSpec.from_vectors([(1, 0), (0, 1)], [(0.5, 0), (0, 1)])

    def test_weights_must_sum_to_one(self):
        with pytest.raises(GeometryError, match="sum to 1"):
            square_lattice(weights=[0.3, 0.3, 0.3, 0.3])

    def test_mean_zero_required(self):
        with pytest.raises(GeometryError, match="mean"):
            square_lattice(weights=[0.1, 0.4, 0.25, 0.25])


class TestRounding:
    def test_exact_point(self):
        assert round_to_lattice((1, 1), Z2) == (1, 1)

    def test_tie_takes_lexicographic_minimum(self):
        assert round_to_lattice((0.5, 0.5), Z2) == (1, 0)

    def test_against_brute_force(self):
        z = np.array([0.3, 0.7])
        best = None
        for a in range(-2, 3):
            for b in range(-2, 3):
                if a < z[0]:
                    continue
                key = ((a - z[0]) ** 2 + (b - z[1]) ** 2, a, b)
                best = key if best is None or key < best else best
        assert round_to_lattice(z, Z2) == (best[1], best[2]) == (1, 1)

    @given(st.integers(-50, 50), st.integers(-50, 50))
    @settings(max_examples=60, deadline=None)
    def test_lattice_sites_are_fixed(self, a, b):
        tri = triangular_lattice()
        assert round_to_lattice(tri.to_real([a, b]), tri) == (a, b)


class TestBoundary:
    def test_west_side_of_small_square(self):
        dom = Domain(Z2, 3.0)
        sets = boundary_sets(dom)
        assert sorted(sets["W"]) == [(0, 0), (0, 1), (0, 2), (0, 3)]

    def test_escape_sets(self):
        sets = boundary_sets(Domain(Z2, 3.0))
        assert len(sets["J"][(0, 0)]) == 2
        assert (1, 1) not in sets["J"]

    def test_every_boundary_site_has_outside_neighbour(self):
        dom = Domain(triangular_lattice(), 7.3)
        for i in np.flatnonzero(dom.boundary_mask):
            assert len(dom.escape[i]) > 0

    def test_sides_cover_boundary(self):
        dom = Domain(Z2, 6.0, A=1.5)
        union = np.zeros(len(dom), bool)
        for m in dom.side_mask.values():
            union |= m
        assert np.array_equal(union, dom.boundary_mask)

    def test_bad_scale(self):
        with pytest.raises(GeometryError):
            Domain(Z2, 0.0)

    def test_site_indices_matches_dict(self):
        dom = Domain(triangular_lattice(), 6.0)
        probe = np.vstack([dom.sites, [[1000, 1000]]])
        idx = dom.site_indices(probe)
        assert idx[-1] == -1
        assert all(idx[i] == dom.index[tuple(s)] for i, s in enumerate(dom.sites.tolist()))


class TestTypes:
    def test_square_lattice(self):
        t = classify_types(Domain(Z2, 10.0))
        assert (t.K1, t.K2) == (1, 1)

    def test_triangular_lattice(self):
        t = classify_types(Domain(triangular_lattice(), 12.0))
        assert (t.K1, t.K2) == (1, 2)

    def test_irrational_lattice_fails_h1(self):
        lat = LatticeSpec.from_vectors([(1, 0), (np.sqrt(2), 1)], [(1, 0), (-1, 0), (np.sqrt(2), 1), (-np.sqrt(2), -1)])
        t = classify_types(Domain(lat, 10.0))
        assert t.K is None
        assert "H1 fails" in t.diagnostic

    def test_rational_dependence_example(self):
        # b2 = (0.5, sqrt 2): -b1 + 2 b2 = (0, 2 sqrt 2) is vertical
        lat = LatticeSpec.from_vectors([(1, 0), (0.5, np.sqrt(2))], [(1, 0), (-1, 0), (0.5, np.sqrt(2)), (-0.5, -np.sqrt(2))])
        assert h1_vector(lat) == (-1, 2)
        assert classify_types(Domain(lat, 12.0)).K1 == 2

    def test_types_cycle(self):
        t = classify_types(Domain(triangular_lattice(), 12.0))
        assert set(t.assignment.values()) == {1}

    def test_escape_sets_constant_within_type(self):
        lat = LatticeSpec.from_vectors([(1, 0), (0.5, np.sqrt(2))], [(1, 0), (-1, 0), (0.5, np.sqrt(2)), (-0.5, -np.sqrt(2))])
        dom = Domain(lat, 20.0)
        t = classify_types(dom)
        by_type = {}
        for site, k in t.assignment.items():
            i = dom.site_index(site)
            y = dom.points[i, 1]
            if 3 < y < dom.L - 3:
                by_type.setdefault(k, set()).add(dom.escape[i])
        assert all(len(v) == 1 for v in by_type.values())
