import numpy as np
import pytest

from boundary_le.geometry import Domain, GeometryError, square_lattice
from boundary_le.injection import (
    InjectionSpec,
    PeriodicFunction,
    count_weights,
    event_site_indices,
    intensity,
    sample_events,
    spec_a_weights,
)
from boundary_le.kernels import BoundaryProfile

Z2 = square_lattice(1.0, weights=[0.25] * 4)
ONE = {"W": BoundaryProfile.constant("W")}


@pytest.fixture(scope="module")
def dom():
    return Domain(Z2, 8.0)


def expected_total(spec, domain):
    return spec.horizon * spec.source(domain).sum()


class TestIntensity:
    def test_corner_counts_escape_edges(self, dom):
        spec = InjectionSpec(count_weights, ONE, 1.0)
        assert intensity((0, 0), 0.3, spec, dom) == 2.0
        assert intensity((0, 4), 0.3, spec, dom) == 1.0

    def test_sin_profile_midpoint(self, dom):
        prof = {"W": BoundaryProfile("W", lambda s: np.sin(np.pi * s))}
        spec = InjectionSpec(spec_a_weights(Z2.weights), prof, 1.0)
        assert intensity((0, 4), 0.0, spec, dom) == pytest.approx(0.25)

    def test_modulated_rate_averages_out(self, dom):
        B = PeriodicFunction(lambda s: 1 + 0.5 * np.cos(2 * np.pi * s))
        mod = InjectionSpec(count_weights, ONE, 1.0, B=B)
        flat = InjectionSpec(count_weights, ONE, 1.0)
        s = (np.arange(4000) + 0.5) / 4000
        avg = np.mean([intensity((0, 3), v, mod, dom) for v in s])
        assert avg == pytest.approx(intensity((0, 3), 0.0, flat, dom), rel=1e-9)

    def test_interior_site_rejected(self, dom):
        spec = InjectionSpec(count_weights, ONE, 1.0)
        with pytest.raises(GeometryError):
            intensity((3, 3), 0.0, spec, dom)

    def test_modulation_must_average_to_one(self):
        with pytest.raises(ValueError):
            PeriodicFunction(lambda s: 2 + 0 * s)
        with pytest.raises(ValueError):
            PeriodicFunction([1.5, -0.5])

    def test_same_type_same_rate(self, dom):
        spec = InjectionSpec(count_weights, {"W": BoundaryProfile.constant("W")}, 1.0)
        rates = spec.source(dom)[dom.side_mask["W"]]
        # non-corner West sites all share one escape edge
        assert np.all(rates[1:-1] == rates[1])


class TestSampling:
    def test_zero_profile_is_empty(self, dom):
        spec = InjectionSpec(count_weights, {"W": BoundaryProfile.constant("W", 0.0)}, 5.0)
        assert len(sample_events(spec, dom, 0)) == 0

    def test_deterministic(self, dom):
        spec = InjectionSpec(count_weights, ONE, 3.0)
        a, b = sample_events(spec, dom, 7), sample_events(spec, dom, 7)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_events(spec, dom, 8))

    def test_sorted_and_in_window(self, dom):
        spec = InjectionSpec(count_weights, ONE, 3.0)
        ev = sample_events(spec, dom, 1)
        assert np.all(np.diff(ev["T"]) >= 0)
        assert np.all((ev["T"] > -3.0) & (ev["T"] <= 0.0))
        assert np.all(dom.side_mask["W"][event_site_indices(ev, dom)])

    def test_mean_count(self, dom):
        prof = {"W": BoundaryProfile("W", lambda s: np.sin(np.pi * s)), "S": BoundaryProfile.constant("S")}
        spec = InjectionSpec(spec_a_weights(Z2.weights), prof, 2.0)
        counts = np.array([len(sample_events(spec, dom, s, n_partitions=2)) for s in range(10_000)])
        mu = expected_total(spec, dom)
        se = counts.std(ddof=1) / np.sqrt(len(counts))
        assert abs(counts.mean() - mu) < 3 * se
        # Poisson: variance equals mean
        assert counts.var(ddof=1) / mu == pytest.approx(1.0, abs=0.05)

    def test_disjoint_windows_uncorrelated(self, dom):
        spec = InjectionSpec(count_weights, ONE, 2.0)
        early, late = [], []
        for s in range(5000):
            T = sample_events(spec, dom, s, n_partitions=1)["T"]
            early.append(np.sum(T <= -1.0))
            late.append(np.sum(T > -1.0))
        early, late = np.array(early, float), np.array(late, float)
        prod = (early - early.mean()) * (late - late.mean())
        assert abs(prod.mean()) < 3 * prod.std(ddof=1) / np.sqrt(len(prod))

    def test_modulated_time_density(self, dom):
        B = PeriodicFunction(lambda s: 1 + 0.9 * np.cos(2 * np.pi * s))
        spec = InjectionSpec(count_weights, ONE, 20.0, B=B)
        T = np.concatenate([sample_events(spec, dom, s)["T"] for s in range(20)])
        phase = np.mod(T, 1.0)
        hist, edges = np.histogram(phase, bins=10, range=(0, 1))
        mid = 0.5 * (edges[1:] + edges[:-1])
        want = len(T) * np.array([
            np.mean(1 + 0.9 * np.cos(2 * np.pi * np.linspace(a, b, 101))) for a, b in zip(edges[:-1], edges[1:])
        ]) / 10
        assert np.all(np.abs(hist - want) < 4 * np.sqrt(want)), (mid, hist, want)

    def test_superposition(self, dom):
        f1 = {"W": BoundaryProfile.constant("W")}
        f2 = {"N": BoundaryProfile.constant("N", 0.5)}
        both = {**f1, **f2}
        n = 3000
        c1 = [len(sample_events(InjectionSpec(count_weights, f1, 1.0), dom, s)) for s in range(n)]
        c2 = [len(sample_events(InjectionSpec(count_weights, f2, 1.0), dom, n + s)) for s in range(n)]
        c12 = [len(sample_events(InjectionSpec(count_weights, both, 1.0), dom, s)) for s in range(n)]
        union = np.add(c1, c2)
        se = np.sqrt(np.var(union, ddof=1) / n + np.var(c12, ddof=1) / n)
        assert abs(np.mean(union) - np.mean(c12)) < 3 * se
        assert np.var(c12, ddof=1) / np.var(union, ddof=1) == pytest.approx(1.0, abs=0.1)

    def test_entry_edges_escape(self, dom):
        spec = InjectionSpec(count_weights, {s: BoundaryProfile.constant(s) for s in "WSEN"}, 2.0)
        ev = sample_events(spec, dom, 3)
        idx = event_site_indices(ev, dom)
        assert all(int(e) in dom.escape[i] for e, i in zip(ev["edge"], idx))

    def test_infinite_horizon_rejected(self, dom):
        with pytest.raises(ValueError):
            sample_events(InjectionSpec(count_weights, ONE, np.inf), dom, 0)
