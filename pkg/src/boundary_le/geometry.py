"""Lattices, the jump graph, the discretized rectangle and its boundary.

All lattice sites are stored as exact integer coordinates relative to the
lattice basis; real coordinates are derived views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import gcd

import numpy as np

SIDES = ("W", "S", "E", "N")
H1_SEARCH_BOUND = 64


class GeometryError(ValueError):
    pass


def _smith_gcd(jumps: np.ndarray) -> int:
    """gcd of all 2x2 minors of the integer jump matrix.

    The jumps generate the full lattice iff this equals 1 (the product of the
    two invariant factors of the Smith normal form).
    """
    g = 0
    for a, b in combinations(jumps.tolist(), 2):
        g = gcd(g, abs(a[0] * b[1] - a[1] * b[0]))
    return g


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """A planar lattice with a finite jump set.

    Parameters
    ----------
    basis : (2, 2) array
        Columns are the basis vectors ``b1`` and ``b2``.
    jumps : (J, 2) int array
        Jump vectors ``w_j`` in integer coordinates relative to the basis.
    weights : (J,) array, optional
        Jump probabilities; only meaningful for random walks.
    """

    basis: np.ndarray
    jumps: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float).reshape(2, 2)
        jumps = np.asarray(self.jumps)
        if jumps.ndim != 2 or jumps.shape[1] != 2 or len(jumps) == 0:
            raise GeometryError("jumps must be a non-empty (J, 2) array")
        if not np.allclose(jumps, np.round(jumps)):
            raise GeometryError("jumps must be integer combinations of the basis")
        jumps = np.round(jumps).astype(np.int64)
        det = float(np.linalg.det(basis))
        if abs(det) < 1e-14:
            raise GeometryError("degenerate basis: det[b1 b2] = 0")
        if _smith_gcd(jumps) != 1:
            raise GeometryError("jump vectors do not generate the lattice")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "jumps", jumps)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(jumps),):
                raise GeometryError("one weight per jump is required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise GeometryError("walk weights must be non-negative and sum to 1")
            mean = w @ (jumps @ basis.T)
            if np.max(np.abs(mean)) > 1e-12 * max(1.0, np.abs(basis).max()):
                raise GeometryError(f"jump law has non-zero mean {mean}")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_vectors(cls, basis_vectors, jump_vectors, weights=None) -> "LatticeSpec":
        """Build from real basis vectors ``(b1, b2)`` and real jump vectors."""
        basis = np.column_stack([np.asarray(b, dtype=float) for b in basis_vectors])
        coords = np.linalg.solve(basis, np.asarray(jump_vectors, dtype=float).T).T
        if not np.allclose(coords, np.round(coords), atol=1e-9):
            raise GeometryError("a jump vector is not a lattice vector")
        return cls(basis, np.round(coords).astype(np.int64), weights)

    @property
    def covolume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    @property
    def jump_vectors(self) -> np.ndarray:
        return self.jumps @ self.basis.T

    def to_real(self, sites) -> np.ndarray:
        return np.asarray(sites) @ self.basis.T

    def to_basis(self, z) -> np.ndarray:
        return np.linalg.solve(self.basis, np.asarray(z, dtype=float).T).T

    def linear_map(self, matrix) -> "LatticeSpec":
        """Image lattice ``matrix @ L`` with the same integer jumps."""
        return LatticeSpec(np.asarray(matrix) @ self.basis, self.jumps, self.weights)


def square_lattice(spacing: float = 1.0, weights=None) -> LatticeSpec:
    jumps = [(0, -1), (0, 1), (-1, 0), (1, 0)]
    return LatticeSpec(spacing * np.eye(2), jumps, weights)


def triangular_lattice(spacing: float = 1.0, weights=None) -> LatticeSpec:
    """Lattice generated by (0,1) and (sqrt(3)/2, 1/2) with its six neighbours."""
    basis = spacing * np.array([[0.0, np.sqrt(3) / 2], [1.0, 0.5]])
    jumps = [(1, 0), (-1, 0), (0, 1), (0, -1), (-1, 1), (1, -1)]
    return LatticeSpec(basis, jumps, weights)


def round_to_lattice(z, lattice: LatticeSpec) -> tuple[int, int]:
    """Closest lattice site ``l`` with ``l_1 >= z_1``.

    Ties are broken by the lexicographically smallest real coordinates.
    """
    z = np.asarray(z, dtype=float)
    scale = max(1.0, float(np.abs(z).max()))
    eps = 1e-12 * scale
    # any cell diameter bounds the distance to the best admissible site
    radius = 2.0 * float(np.abs(lattice.basis).sum())
    inv = np.linalg.inv(lattice.basis)
    reach = int(np.ceil(radius * np.abs(inv).sum(axis=1).max())) + 1
    centre = np.round(inv @ z).astype(int)
    a = np.arange(centre[0] - reach, centre[0] + reach + 1)
    b = np.arange(centre[1] - reach, centre[1] + reach + 1)
    cand = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = lattice.to_real(cand)
    ok = pts[:, 0] >= z[0] - eps
    cand, pts = cand[ok], pts[ok]
    d2 = ((pts - z) ** 2).sum(axis=1)
    best = d2.min()
    tie = d2 <= best + 1e-12 * max(1.0, best)
    cand, pts = cand[tie], pts[tie]
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return tuple(int(v) for v in cand[order[0]])


class Domain:
    """Sites of ``(L * [0, A] x [0, 1])`` on a lattice, with boundary data.

    Attributes
    ----------
    sites : (N, 2) int array of basis coordinates
    points : (N, 2) float array of real coordinates
    escape : list of frozensets, ``J(l) = {j : l + w_j not in D_L}``
    side_mask : dict side -> (N,) bool, sites joined to a point beyond that side
    """

    def __init__(self, lattice: LatticeSpec, L: float, A: float = 1.0):
        if L <= 0 or A <= 0:
            raise GeometryError("scale L and aspect A must be positive")
        self.lattice = lattice
        self.L = float(L)
        self.A = float(A)
        self.eps = 1e-9 * max(1.0, self.L * max(1.0, self.A))
        corners = np.array([[0, 0], [self.A * L, 0], [0, L], [self.A * L, L]])
        cb = lattice.to_basis(corners)
        lo = np.floor(cb.min(axis=0)).astype(int) - 1
        hi = np.ceil(cb.max(axis=0)).astype(int) + 1
        grid = np.stack(
            np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij"),
            axis=-1,
        ).reshape(-1, 2)
        inside = self.contains(grid)
        sites = grid[inside]
        if len(sites) == 0:
            raise GeometryError("domain too small: D_L is empty")
        pts = lattice.to_real(sites)
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        self.sites = sites[order]
        self.points = pts[order]
        self.index = {tuple(s): i for i, s in enumerate(self.sites.tolist())}
        self._classify_boundary()

    def __len__(self):
        return len(self.sites)

    def contains(self, sites) -> np.ndarray:
        p = self.lattice.to_real(np.atleast_2d(sites))
        e = self.eps
        return (
            (p[:, 0] >= -e)
            & (p[:, 0] <= self.A * self.L + e)
            & (p[:, 1] >= -e)
            & (p[:, 1] <= self.L + e)
        )

    def _classify_boundary(self):
        jumps = self.lattice.jumps
        e = self.eps
        n = len(self.sites)
        fwd = self.sites[:, None, :] + jumps[None, :, :]
        out = ~self.contains(fwd.reshape(-1, 2)).reshape(n, len(jumps))
        self.escape = [frozenset(np.flatnonzero(row).tolist()) for row in out]
        nbrs = np.concatenate([fwd, self.sites[:, None, :] - jumps[None, :, :]], axis=1)
        p = self.lattice.to_real(nbrs.reshape(-1, 2)).reshape(n, -1, 2)
        self.side_mask = {
            "W": (p[..., 0] < -e).any(axis=1),
            "S": (p[..., 1] < -e).any(axis=1),
            "E": (p[..., 0] > self.A * self.L + e).any(axis=1),
            "N": (p[..., 1] > self.L + e).any(axis=1),
        }
        self.boundary_mask = np.zeros(n, dtype=bool)
        for m in self.side_mask.values():
            self.boundary_mask |= m
        self.boundary_mask |= out.any(axis=1)

    def side_sites(self, side: str) -> np.ndarray:
        return np.flatnonzero(self.side_mask[side])

    def side_coordinate(self, side: str) -> np.ndarray:
        """Macroscopic boundary coordinate of every site for one side.

        West/East use ``l_2 / L``, South/North use ``l_1 / L``.
        """
        axis = 1 if side in ("W", "E") else 0
        return self.points[:, axis] / self.L

    def site_index(self, site) -> int:
        try:
            return self.index[tuple(int(v) for v in site)]
        except KeyError:
            raise GeometryError(f"site {tuple(site)} is not in D_L") from None

    def site_indices(self, sites) -> np.ndarray:
        """Vectorized lookup of many sites; -1 for sites outside ``D_L``."""
        if not hasattr(self, "_grid"):
            lo = self.sites.min(axis=0)
            shape = self.sites.max(axis=0) - lo + 1
            grid = np.full(tuple(shape), -1, dtype=np.int64)
            grid[tuple((self.sites - lo).T)] = np.arange(len(self.sites))
            self._grid, self._grid_lo = grid, lo
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64)) - self._grid_lo
        ok = np.all((s >= 0) & (s < np.array(self._grid.shape)), axis=1)
        out = np.full(len(s), -1, dtype=np.int64)
        out[ok] = self._grid[s[ok, 0], s[ok, 1]]
        return out

    def neighbour_table(self, jumps: np.ndarray | None = None) -> np.ndarray:
        """(N, J) table of neighbour indices for ``l + jumps[j]``; -1 when outside."""
        jumps = self.lattice.jumps if jumps is None else np.asarray(jumps)
        table = np.empty((len(self.sites), len(jumps)), dtype=np.int64)
        for j, w in enumerate(jumps):
            table[:, j] = self.site_indices(self.sites + w)
        return table


def boundary_sets(domain: Domain) -> dict:
    """Side sets and escape sets of a domain, keyed by site tuples."""
    out = {side: [tuple(domain.sites[i].tolist()) for i in domain.side_sites(side)] for side in SIDES}
    out["J"] = {
        tuple(domain.sites[i].tolist()): domain.escape[i] for i in np.flatnonzero(domain.boundary_mask)
    }
    return out


def h1_vector(lattice: LatticeSpec, axis: int = 0, bound: int = H1_SEARCH_BOUND):
    """Shortest non-zero lattice vector with coordinate ``axis`` equal to zero.

    Returns integer basis coordinates oriented so the other coordinate is
    positive, or None when no such vector exists with ``|a|, |b| <= bound``.
    """
    r = np.arange(-bound, bound + 1)
    a, b = np.meshgrid(r, r, indexing="ij")
    cand = np.stack([a.ravel(), b.ravel()], axis=1)
    cand = cand[(cand != 0).any(axis=1)]
    pts = lattice.to_real(cand)
    scale = float(np.abs(lattice.basis).max())
    hit = np.abs(pts[:, axis]) < 1e-10 * scale * bound
    if not hit.any():
        return None
    cand, pts = cand[hit], pts[hit]
    other = pts[:, 1 - axis]
    cand, other = cand[other > 0], other[other > 0]
    return tuple(int(v) for v in cand[np.argmin(other)])


@dataclass
class TypeTable:
    """Period and type assignment of West-boundary sites (H1 bookkeeping)."""

    K: int | None
    assignment: dict = field(default_factory=dict)
    K1: int | None = None
    K2: int | None = None
    h1: bool = False
    h1_swapped: bool = False
    diagnostic: str = ""

    @property
    def rational(self) -> bool:
        return self.h1 and self.h1_swapped


def _period(domain: Domain, side: str, axis: int) -> tuple[int | None, list[int]]:
    idx = domain.side_sites(side)
    pts = domain.points[idx]
    # increasing order of the along-side coordinate, then the other one
    order = np.lexsort((pts[:, axis], pts[:, 1 - axis]))
    idx, pts = idx[order], pts[order]
    zero = np.flatnonzero(np.abs(pts[:, axis]) <= domain.eps)
    later = zero[zero > 0]
    return (int(later[0]) if len(later) else None), idx.tolist()


def classify_types(domain: Domain) -> TypeTable:
    """Enumerate ``l^(0), l^(1), ...`` on the West side and assign types ``1..K``."""
    lat = domain.lattice
    v1 = h1_vector(lat, axis=0)
    v2 = h1_vector(lat, axis=1)
    table = TypeTable(K=None, h1=v1 is not None, h1_swapped=v2 is not None)
    notes = []
    if v1 is None:
        notes.append(
            f"H1 fails: no non-zero lattice vector with zero first coordinate "
            f"for |a|,|b| <= {H1_SEARCH_BOUND} (undetermined beyond this bound)"
        )
    else:
        K1, order = _period(domain, "W", 0)
        if K1 is None:
            notes.append("domain too small to resolve the West period K")
        else:
            table.K = table.K1 = K1
            table.assignment = {
                tuple(domain.sites[i].tolist()): (j - 1) % K1 + 1 for j, i in enumerate(order)
            }
    if v2 is None:
        notes.append("swapped-axis H1 fails within the search bound")
    else:
        K2, _ = _period(domain, "S", 1)
        if K2 is None:
            notes.append("domain too small to resolve the South period K2")
        table.K2 = K2
    table.diagnostic = "; ".join(notes)
    return table
