"""Periodic Lorentz gas with disk scatterers, simulated event by event.

A phase point is a cell ``(ix, iy)``, an offset ``q`` in ``[-1/2, 1/2)^2``
and a unit velocity. Inside a cell the particle meets either a cell wall
(it then changes cell, with the offset reset exactly to the opposite wall)
or one of the disk images overlapping the cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

GRAZING = 1e-12
FLIGHT_CAP = 10.0

# event codes returned by the single-step kernel
EV_WALL_X = 1
EV_WALL_Y = 2
EV_DISK = 3


class BilliardError(ValueError):
    pass


# --- numba core ------------------------------------------------------------------


@numba.njit(nogil=True, cache=True)
def _next_event(qx, qy, vx, vy, imgs):
    """Time and kind of the next event inside the current cell.

    Returns ``(t, kind, disk_row)``; ``kind`` is 1/2 for x/y walls and 3 for a disk.
    """
    if vx > 0:
        tx = (0.5 - qx) / vx
    elif vx < 0:
        tx = (-0.5 - qx) / vx
    else:
        tx = np.inf
    if vy > 0:
        ty = (0.5 - qy) / vy
    elif vy < 0:
        ty = (-0.5 - qy) / vy
    else:
        ty = np.inf
    if tx <= ty:
        best, kind = tx, 1
    else:
        best, kind = ty, 2
    row = -1
    for k in range(imgs.shape[0]):
        dx = qx - imgs[k, 0]
        dy = qy - imgs[k, 1]
        r = imgs[k, 2]
        b = dx * vx + dy * vy
        if b >= 0.0:
            continue
        cc = dx * dx + dy * dy - r * r
        disc = b * b - cc
        if disc <= 0.0:
            continue
        if cc <= 0.0:
            t = 0.0
        else:
            # smaller root of t^2 + 2bt + cc without cancellation
            t = cc / (-b + np.sqrt(disc))
        if t < best:
            nx = (dx + t * vx) / r
            ny = (dy + t * vy) / r
            if abs(nx * vx + ny * vy) < 1e-12:
                continue
            best, kind, row = t, 3, k
    return best, kind, row


@numba.njit(nogil=True, cache=True)
def _apply(state, t, kind, row, imgs):
    """Advance ``state = [ix, iy, qx, qy, vx, vy]`` to the event and resolve it."""
    qx = state[2] + t * state[4]
    qy = state[3] + t * state[5]
    vx, vy = state[4], state[5]
    if kind == 1:
        if vx > 0:
            state[0] += 1.0
            qx = -0.5
        else:
            state[0] -= 1.0
            qx = 0.5
    elif kind == 2:
        if vy > 0:
            state[1] += 1.0
            qy = -0.5
        else:
            state[1] -= 1.0
            qy = 0.5
    else:
        cx, cy, r = imgs[row, 0], imgs[row, 1], imgs[row, 2]
        nx = (qx - cx) / r
        ny = (qy - cy) / r
        nn = np.sqrt(nx * nx + ny * ny)
        nx /= nn
        ny /= nn
        qx = cx + r * nx
        qy = cy + r * ny
        d = vx * nx + vy * ny
        vx = vx - 2.0 * d * nx
        vy = vy - 2.0 * d * ny
        s = np.sqrt(vx * vx + vy * vy)
        vx /= s
        vy /= s
    state[2], state[3], state[4], state[5] = qx, qy, vx, vy


@numba.njit(nogil=True, cache=True)
def _flow_one(state, t_total, imgs, trace, max_trace):
    """Flow for ``t_total``; crossing times and new cells go to ``trace``. Returns trace length."""
    elapsed = 0.0
    n = 0
    while True:
        t, kind, row = _next_event(state[2], state[3], state[4], state[5], imgs)
        if elapsed + t >= t_total:
            dt = t_total - elapsed
            state[2] += dt * state[4]
            state[3] += dt * state[5]
            return n
        _apply(state, t, kind, row, imgs)
        elapsed += t
        if kind != 3 and n < max_trace:
            trace[n, 0] = elapsed
            trace[n, 1] = state[0]
            trace[n, 2] = state[1]
            n += 1


@numba.njit(nogil=True, cache=True)
def _flow_many(states, t_total, imgs):
    dummy = np.empty((0, 3))
    for i in range(states.shape[0]):
        _flow_one(states[i], t_total, imgs, dummy, 0)


@numba.njit(nogil=True, cache=True)
def _free_flight(state, imgs, cap):
    """Advance to the next collision; returns flight time (``inf`` beyond ``cap``)."""
    elapsed = 0.0
    while True:
        t, kind, row = _next_event(state[2], state[3], state[4], state[5], imgs)
        _apply(state, t, kind, row, imgs)
        elapsed += t
        if kind == 3:
            return elapsed, row
        if elapsed > cap:
            return np.inf, -1


@numba.njit(nogil=True, cache=True)
def _flight_stats(states, n_flights, imgs, cap):
    """Max and sum of free flights over trajectories; speed drift at the end."""
    mx = 0.0
    tot = 0.0
    cnt = 0
    drift = 0.0
    bad = -1
    for i in range(states.shape[0]):
        for _ in range(n_flights):
            f, row = _free_flight(states[i], imgs, cap)
            if not np.isfinite(f):
                bad = i
                return mx, tot, cnt, drift, bad
            if f > mx:
                mx = f
            tot += f
            cnt += 1
        sp = abs(np.sqrt(states[i, 4] ** 2 + states[i, 5] ** 2) - 1.0)
        if sp > drift:
            drift = sp
    return mx, tot, cnt, drift, bad


@numba.njit(nogil=True, cache=True)
def _first_flight(states, imgs, cap, out):
    for i in range(states.shape[0]):
        out[i] = _free_flight(states[i], imgs, cap)[0]


@numba.njit(nogil=True, cache=True)
def _return_times(states, imgs, cap, out):
    """Time until the next +x crossing of a vertical cell wall (torus return)."""
    for i in range(states.shape[0]):
        s = states[i]
        elapsed = 0.0
        while True:
            t, kind, row = _next_event(s[2], s[3], s[4], s[5], imgs)
            vx = s[4]
            _apply(s, t, kind, row, imgs)
            elapsed += t
            if kind == 1 and vx > 0:
                out[i] = elapsed
                break
            if elapsed > cap:
                out[i] = np.inf
                break


@numba.njit(nogil=True, cache=True)
def _sample_entry(rng, side, ix, iy, seg_lo, seg_hi, seg_cum, out):
    """Point of the edge measure on ``side`` of cell ``(ix, iy)``, moving into the cell.

    The free part of the edge is a union of segments in the along-edge
    coordinate; the angle to the inward normal has density ``cos / 2``.
    """
    u = rng.random() * seg_cum[-1]
    k = 0
    while k < len(seg_cum) - 1 and u >= seg_cum[k]:
        k += 1
    prev = seg_cum[k - 1] if k > 0 else 0.0
    s = seg_lo[k] + (u - prev)
    if s > seg_hi[k]:
        s = seg_hi[k]
    th = np.arcsin(2.0 * rng.random() - 1.0)
    c, sn = np.cos(th), np.sin(th)
    out[0] = ix
    out[1] = iy
    if side == 0:  # West edge, heading +x
        out[2], out[3], out[4], out[5] = -0.5, s, c, sn
    elif side == 1:  # South edge, heading +y
        out[2], out[3], out[4], out[5] = s, -0.5, -sn, c
    elif side == 2:  # East edge, heading -x
        out[2], out[3], out[4], out[5] = 0.5, s, -c, -sn
    else:  # North edge, heading -y
        out[2], out[3], out[4], out[5] = s, 0.5, sn, -c


@numba.njit(nogil=True, cache=True)
def _occupation_run(rng, n, edges, nx, ny, probe_x, probe_y, seg_lo, seg_hi, seg_cum, imgs, cap):
    """Inject ``n`` particles through random ``edges`` rows ``(side, ix, iy)``.

    Each particle flows until it leaves the ``nx x ny`` block of cells;
    returns the sum and sum of squares of the time spent in the probe cell,
    plus the number of particles that hit the time cap.
    """
    st = np.empty(6)
    s1 = 0.0
    s2 = 0.0
    capped = 0
    ne = edges.shape[0]
    for _ in range(n):
        e = int(rng.random() * ne)
        if e >= ne:
            e = ne - 1
        _sample_entry(rng, edges[e, 0], edges[e, 1], edges[e, 2], seg_lo, seg_hi, seg_cum, st)
        occ = 0.0
        elapsed = 0.0
        while True:
            t, kind, row = _next_event(st[2], st[3], st[4], st[5], imgs)
            if st[0] == probe_x and st[1] == probe_y:
                occ += t
            _apply(st, t, kind, row, imgs)
            elapsed += t
            if kind != 3:
                if st[0] < 0 or st[0] >= nx or st[1] < 0 or st[1] >= ny:
                    break
            if elapsed > cap:
                capped += 1
                break
        s1 += occ
        s2 += occ * occ
    return s1, s2, capped


@numba.njit(nogil=True, cache=True)
def _box_survivors(states, T, imgs, x_max, y_max, out_cells):
    """Flow each state for time ``T`` killing it on leaving ``0..x_max`` x ``0..y_max``.

    ``out_cells[i]`` gets the final cell or ``(-1, -1)``; returns survivors of
    the first-coordinate constraint alone in ``out_cells[i, 2]`` (1/0).
    """
    for i in range(states.shape[0]):
        s = states[i]
        elapsed = 0.0
        alive_box = True
        alive_x = True
        while True:
            t, kind, row = _next_event(s[2], s[3], s[4], s[5], imgs)
            if elapsed + t >= T:
                break
            _apply(s, t, kind, row, imgs)
            elapsed += t
            if kind != 3:
                if s[0] < 0:
                    alive_x = False
                    alive_box = False
                    break
                if s[0] > x_max or s[1] < 0 or s[1] > y_max:
                    alive_box = False
        if alive_box:
            out_cells[i, 0] = s[0]
            out_cells[i, 1] = s[1]
        else:
            out_cells[i, 0] = -1
            out_cells[i, 1] = -1
        out_cells[i, 2] = 1 if alive_x else 0


# --- tables -----------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float


@dataclass(eq=False)
class BilliardTable:
    """Disks in the unit cell, with their images overlapping the cell ``[-1/2, 1/2)^2``."""

    disks: tuple
    images: np.ndarray = field(repr=False)
    free_area: float
    horizon_bound: float = np.nan
    horizon_samples: int = 0

    @property
    def perimeter(self) -> float:
        return float(sum(2 * np.pi * d.radius for d in self.disks))

    def edge_segments(self, axis: int = 0):
        """Free parts of the cell edge ``x = -1/2`` (axis 0) or ``y = -1/2`` (axis 1)."""
        cuts = []
        for c0, c1, r in self.images:
            a, b = (c0, c1) if axis == 0 else (c1, c0)
            dist = abs(a + 0.5)
            if dist < r:
                h = np.sqrt(r * r - dist * dist)
                cuts.append((b - h, b + h))
        cuts.sort()
        free, pos = [], -0.5
        for lo, hi in cuts:
            if lo > pos:
                free.append((pos, min(lo, 0.5)))
            pos = max(pos, hi)
            if pos >= 0.5:
                break
        if pos < 0.5:
            free.append((pos, 0.5))
        free = [(max(lo, -0.5), min(hi, 0.5)) for lo, hi in free if min(hi, 0.5) > max(lo, -0.5)]
        return np.array(free).reshape(-1, 2)

    def edge_length(self, axis: int = 0) -> float:
        seg = self.edge_segments(axis)
        return float((seg[:, 1] - seg[:, 0]).sum())

    def kac_return(self, axis: int = 0) -> float:
        """Mean return time to an edge section: ``pi |D_0| / |E cap D|``."""
        return np.pi * self.free_area / self.edge_length(axis)

    def mean_free_time(self) -> float:
        return np.pi * self.free_area / self.perimeter

    def inside(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        d = np.zeros(len(q), dtype=bool)
        for c0, c1, r in self.images:
            d |= (q[:, 0] - c0) ** 2 + (q[:, 1] - c1) ** 2 < r * r
        return d


def _images(disks) -> np.ndarray:
    rows = []
    for d in disks:
        cx, cy = d.center
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                x, y = cx + a, cy + b
                # distance from the image centre to the closed cell square
                dx = max(abs(x) - 0.5, 0.0)
                dy = max(abs(y) - 0.5, 0.0)
                if dx * dx + dy * dy < d.radius**2:
                    rows.append((x, y, d.radius))
    return np.array(rows, dtype=float).reshape(-1, 3)


def random_phase_points(table: BilliardTable, n: int, rng) -> np.ndarray:
    """``n`` states drawn from the invariant measure on one cell (uniform position and angle)."""
    out = np.empty((0, 6))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        q = rng.random((m, 2)) - 0.5
        q = q[~table.inside(q)]
        th = 2 * np.pi * rng.random(len(q))
        block = np.column_stack([np.zeros(len(q)), np.zeros(len(q)), q, np.cos(th), np.sin(th)])
        out = np.vstack([out, block])
    return out[:n].copy()


def build_table(disks, validate: bool = True, n_traj: int = 10_000, n_flights: int = 1_000,
                seed: int = 0) -> BilliardTable:
    """Check disjointness and the corner convention, then estimate the horizon.

    ``disks`` is a sequence of ``(cx, cy, r)`` with centres in ``[0, 1)^2``.
    """
    ds = tuple(Disk((float(cx), float(cy)), float(r)) for cx, cy, r in disks)
    if not ds:
        raise BilliardError("at least one scatterer is needed")
    for d in ds:
        if d.radius <= 0:
            raise BilliardError("radii must be positive")
        if not (0 <= d.center[0] < 1 and 0 <= d.center[1] < 1):
            raise BilliardError("centres must lie in [0, 1)^2")
    for i, a in enumerate(ds):
        for j, b in enumerate(ds):
            for sx in (-1, 0, 1):
                for sy in (-1, 0, 1):
                    if i == j and sx == 0 and sy == 0:
                        continue
                    dist = np.hypot(a.center[0] - b.center[0] - sx, a.center[1] - b.center[1] - sy)
                    if dist <= a.radius + b.radius:
                        raise BilliardError(
                            f"scatterers overlap: disks {i} and {j} (shift {sx},{sy}) are "
                            f"{dist:.4f} apart, radii sum {a.radius + b.radius:.4f}"
                        )
    imgs = _images(ds)
    area = 1.0 - sum(np.pi * d.radius**2 for d in ds)
    table = BilliardTable(ds, imgs, area)
    if validate:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1]))
        states = random_phase_points(table, n_traj, rng)
        mx, tot, cnt, drift, bad = _flight_stats(states, n_flights, imgs, FLIGHT_CAP)
        if bad >= 0:
            v = states[bad, 4:6]
            raise BilliardError(
                f"finite horizon fails: free flight longer than {FLIGHT_CAP} along direction "
                f"({v[0]:.4f}, {v[1]:.4f})"
            )
        table.horizon_bound = float(mx)
        table.horizon_samples = int(cnt)
    if not table.inside(np.array([[-0.5, -0.5]]))[0]:
        raise BilliardError("the cell corner (-1/2, -1/2) must be covered by a scatterer")
    return table


DEFAULT_DISKS = ((0.0, 0.0, 0.49), (0.5, 0.5, 0.21))
# measured on the default table (T = 1000 and 2000, 6e4 trajectories); Sigma = DEFAULT_SIGMA2 * I
DEFAULT_SIGMA2 = 0.0281


def default_table(validate: bool = True, **kw) -> BilliardTable:
    return build_table(DEFAULT_DISKS, validate=validate, **kw)


# --- phase points and flow ----------------------------------------------------------


@dataclass
class PhasePoint:
    cell: tuple
    q: np.ndarray
    v: np.ndarray

    def as_state(self) -> np.ndarray:
        return np.array([self.cell[0], self.cell[1], self.q[0], self.q[1], self.v[0], self.v[1]], dtype=float)

    @classmethod
    def from_state(cls, s) -> "PhasePoint":
        return cls((int(s[0]), int(s[1])), np.array(s[2:4]), np.array(s[4:6]))

    def involution(self) -> "PhasePoint":
        return PhasePoint(self.cell, self.q.copy(), -self.v)


def reflect(v, n) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    d = float(v @ n)
    if d >= 0:
        raise BilliardError("reflection needs an incoming velocity (<v, n> < 0)")
    out = v - 2.0 * d * n
    return out / np.linalg.norm(out)


@dataclass
class FlightResult:
    time: float
    disk: int
    impact: np.ndarray
    normal: np.ndarray
    after: PhasePoint


def free_flight(x: PhasePoint, table: BilliardTable) -> FlightResult:
    """Next collision along the ray (crossing cells as needed)."""
    s = x.as_state()
    cap = 2 * table.horizon_bound if np.isfinite(table.horizon_bound) else FLIGHT_CAP
    # the state right before reflection gives the impact point
    elapsed = 0.0
    while True:
        t, kind, row = _next_event(s[2], s[3], s[4], s[5], table.images)
        if kind == 3:
            q = s[2:4] + t * s[4:6]
            c = table.images[row, :2]
            n = (q - c) / table.images[row, 2]
            _apply(s, t, kind, row, table.images)
            return FlightResult(elapsed + t, int(row), q, n / np.linalg.norm(n), PhasePoint.from_state(s))
        _apply(s, t, kind, row, table.images)
        elapsed += t
        if elapsed > cap:
            raise BilliardError("no collision within twice the horizon bound; table invalid")


def flow(x, t: float, table: BilliardTable, max_trace: int = 100_000):
    """``Phi^t(x)`` and the list of cell crossings ``(time, cellx, celly)``."""
    if t < 0:
        raise ValueError("flow time must be non-negative")
    s = x.as_state() if isinstance(x, PhasePoint) else np.array(x, dtype=float)
    trace = np.empty((max_trace, 3))
    n = _flow_one(s, float(t), table.images, trace, max_trace)
    return PhasePoint.from_state(s), trace[:n].copy()


def flow_states(states: np.ndarray, t: float, table: BilliardTable) -> np.ndarray:
    out = np.array(states, dtype=float, copy=True)
    _flow_many(out, float(t), table.images)
    return out


def involution(states: np.ndarray) -> np.ndarray:
    out = np.array(states, dtype=float, copy=True)
    out[:, 4:6] *= -1.0
    return out


def phase_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Max-norm distance between state arrays, positions unfolded over cells."""
    pa = a[:, 0:2] + a[:, 2:4]
    pb = b[:, 0:2] + b[:, 2:4]
    return np.maximum(np.abs(pa - pb).max(axis=1), np.abs(a[:, 4:6] - b[:, 4:6]).max(axis=1))


# --- collision section -----------------------------------------------------------------


@dataclass
class SectionPoint:
    """Post-collisional point: disk index, polar angle on the disk, angle to the normal."""

    disk: int
    theta: float
    phi: float
    state: np.ndarray


def _disk_of_image(table: BilliardTable, row: int) -> int:
    c = table.images[row, :2]
    for i, d in enumerate(table.disks):
        off = c - np.array(d.center)
        if np.allclose(off, np.round(off)) and abs(d.radius - table.images[row, 2]) < 1e-15:
            return i
    raise BilliardError("image does not match a disk")


def section_point(table: BilliardTable, state: np.ndarray, row: int) -> SectionPoint:
    c = table.images[row, :2]
    n = (state[2:4] - c) / table.images[row, 2]
    v = state[4:6]
    theta = float(np.arctan2(n[1], n[0]))
    # signed angle from the outward normal to v
    ph = float(np.arctan2(n[0] * v[1] - n[1] * v[0], n @ v))
    return SectionPoint(_disk_of_image(table, row), theta, ph, state.copy())


def section_state(table: BilliardTable, disk: int, theta: float, phi: float, cell=(0, 0)) -> np.ndarray:
    """State on ``disk`` (image nearest to the cell centre) from section coordinates."""
    d = table.disks[disk]
    n = np.array([np.cos(theta), np.sin(theta)])
    c = np.array(d.center, dtype=float)
    q = c + d.radius * n
    # shift into the cell; positions on a cell wall stay in this cell
    shift = np.floor(q + 0.5)
    c, q = c - shift, q - shift
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    v = rot @ n
    return np.array([cell[0] + shift[0], cell[1] + shift[1], q[0], q[1], v[0], v[1]])


def billiard_map(table: BilliardTable, state: np.ndarray):
    """Next post-collisional state; returns ``(state, image_row)``."""
    s = np.array(state, dtype=float, copy=True)
    f, row = _free_flight(s, table.images, FLIGHT_CAP)
    if not np.isfinite(f):
        raise BilliardError("no collision within the flight cap")
    return s, int(row)


def section_involution(table: BilliardTable, state: np.ndarray, row: int) -> np.ndarray:
    """Time reversal on the collision section: reverse, then reflect."""
    s = np.array(state, dtype=float, copy=True)
    c = table.images[row, :2]
    n = (s[2:4] - c) / table.images[row, 2]
    n /= np.linalg.norm(n)
    v = -s[4:6]
    v = v - 2.0 * (v @ n) * n
    s[4:6] = v / np.linalg.norm(v)
    return s


def sample_section(table: BilliardTable, n: int, rng):
    """``n`` points of the invariant collision measure ``cos(phi) dr dphi``.

    Returns states and their image rows (the image holding the impact point
    inside the cell).
    """
    rad = np.array([d.radius for d in table.disks])
    ctr = np.array([d.center for d in table.disks], dtype=float)
    disk = rng.choice(len(rad), size=n, p=rad / rad.sum())
    theta = 2 * np.pi * rng.random(n) - np.pi
    phi = np.arcsin(2 * rng.random(n) - 1)
    nrm = np.column_stack([np.cos(theta), np.sin(theta)])
    q = ctr[disk] + rad[disk, None] * nrm
    shift = np.floor(q + 0.5)
    q -= shift
    c = ctr[disk] - shift
    v = np.column_stack([
        np.cos(phi) * nrm[:, 0] - np.sin(phi) * nrm[:, 1],
        np.sin(phi) * nrm[:, 0] + np.cos(phi) * nrm[:, 1],
    ])
    states = np.column_stack([shift, q, v])
    # match each impact to its image row by centre and radius
    rows = np.full(n, -1, dtype=np.int64)
    for k, (cx, cy, r) in enumerate(table.images):
        hit = (np.abs(c[:, 0] - cx) < 1e-12) & (np.abs(c[:, 1] - cy) < 1e-12) & (np.abs(rad[disk] - r) < 1e-15)
        rows[hit] = k
    if (rows < 0).any():
        raise BilliardError("sampled impact point has no matching image")
    return states, rows


def _row_for(table: BilliardTable, disk: int, state: np.ndarray) -> int:
    d = table.disks[disk]
    best, row = np.inf, -1
    for k, (cx, cy, r) in enumerate(table.images):
        if abs(r - d.radius) > 1e-15:
            continue
        dist = abs(np.hypot(state[2] - cx, state[3] - cy) - r)
        if dist < best:
            best, row = dist, k
    return row


# --- edge measure and mean return ------------------------------------------------------


@dataclass
class EdgeSpec:
    """Edge between a cell and its neighbour in direction ``side`` (W/S/E/N)."""

    table: BilliardTable
    side: str = "W"

    @property
    def axis(self) -> int:
        return 0 if self.side in ("W", "E") else 1

    @property
    def length(self) -> float:
        return self.table.edge_length(self.axis)

    @property
    def kac(self) -> float:
        return self.table.kac_return(self.axis)

    def segments(self) -> np.ndarray:
        # by periodicity the opposite wall has the same free part
        seg = self.table.edge_segments(self.axis)
        if len(seg) == 0:
            raise BilliardError("edge fully blocked by scatterers")
        return seg


SIDE_CODE = {"W": 0, "S": 1, "E": 2, "N": 3}


def _segment_arrays(edge: EdgeSpec):
    seg = edge.segments()
    lo, hi = seg[:, 0].copy(), seg[:, 1].copy()
    return lo, hi, np.cumsum(hi - lo)


def sample_edge_measure(edge: EdgeSpec, n: int, seed=0, cell=(0, 0)) -> np.ndarray:
    """``n`` states on the edge, uniform along its free part, cosine law about the inward normal."""
    lo, hi, cum = _segment_arrays(edge)
    rng = np.random.default_rng(np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed)
    out = np.empty((n, 6))
    _fill_entries(rng, SIDE_CODE[edge.side], cell[0], cell[1], lo, hi, cum, out)
    return out


@numba.njit(nogil=True, cache=True)
def _fill_entries(rng, side, ix, iy, lo, hi, cum, out):
    for i in range(out.shape[0]):
        _sample_entry(rng, side, ix, iy, lo, hi, cum, out[i])


def mean_return(edge: EdgeSpec, n: int, seed=0):
    """Monte Carlo mean first return to the West-edge section, with its Kac value and s.e."""
    if edge.side != "W":
        raise ValueError("returns are measured for the West section")
    st = sample_edge_measure(edge, n, seed)
    out = np.empty(n)
    _return_times(st, edge.table.images, 1e6, out)
    return float(out.mean()), edge.kac, float(out.std(ddof=1) / np.sqrt(n))


# --- Sigma ---------------------------------------------------------------------------------


@dataclass
class SigmaEstimate:
    sigma: np.ndarray
    stderr: np.ndarray
    T: float
    n: int
    aniso_stderr: float = np.nan

    @property
    def anisotropy(self) -> float:
        return float(self.sigma[0, 0] - self.sigma[1, 1])


def displacements(table: BilliardTable, T: float, n: int, seed=0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x51]))
    st = random_phase_points(table, n, rng)
    start = st[:, :2] + st[:, 2:4]
    _flow_many(st, float(T), table.images)
    return st[:, :2] + st[:, 2:4] - start


def estimate_sigma(table: BilliardTable, T: float, n: int, seed=0, batches: int = 20) -> SigmaEstimate:
    """``mean(Z_T Z_T^T) / T`` over ``n`` trajectories from the invariant measure; s.e. by batching."""
    Z = displacements(table, T, n, seed)
    outer = Z[:, :, None] * Z[:, None, :] / T
    sig = outer.mean(axis=0)
    parts = np.array_split(outer, batches)
    bm = np.array([p.mean(axis=0) for p in parts])
    se = bm.std(axis=0, ddof=1) / np.sqrt(batches)
    d = bm[:, 0, 0] - bm[:, 1, 1]
    return SigmaEstimate(sig, se, T, n, float(d.std(ddof=1) / np.sqrt(batches)))


def phase_region_count(states: np.ndarray, region=None) -> int:
    """Number of states whose cell-projected phase ``(q, v)`` satisfies ``region``."""
    if region is None:
        return len(states)
    return int(np.count_nonzero(region(states[:, 2:4], states[:, 4:6])))


# --- injection experiments ---------------------------------------------------------------


@numba.njit(nogil=True, cache=True)
def _inject_and_flow(rng, ages, edge_rows, edges, nx, ny, seg_lo, seg_hi, seg_cum, imgs, out):
    """Enter each particle through ``edges[edge_rows[i]]`` and flow it for ``ages[i]``.

    Particles leaving the ``nx x ny`` block get ``out[i, 0] = nan``.
    """
    for i in range(ages.shape[0]):
        e = edge_rows[i]
        st = out[i]
        _sample_entry(rng, edges[e, 0], edges[e, 1], edges[e, 2], seg_lo, seg_hi, seg_cum, st)
        elapsed = 0.0
        while True:
            t, kind, row = _next_event(st[2], st[3], st[4], st[5], imgs)
            if elapsed + t >= ages[i]:
                dt = ages[i] - elapsed
                st[2] += dt * st[4]
                st[3] += dt * st[5]
                break
            _apply(st, t, kind, row, imgs)
            elapsed += t
            if kind != 3:
                if st[0] < 0 or st[0] >= nx or st[1] < 0 or st[1] >= ny:
                    st[0] = np.nan
                    break


def boundary_edges(n: int, sides=("W", "S", "E", "N")) -> np.ndarray:
    """Rows ``(side code, ix, iy)`` of the edges through which an ``n x n`` block is entered."""
    rows = []
    for s in sides:
        for j in range(n):
            if s == "W":
                rows.append((0, 0, j))
            elif s == "S":
                rows.append((1, j, 0))
            elif s == "E":
                rows.append((2, n - 1, j))
            else:
                rows.append((3, j, n - 1))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _shared_segments(table: BilliardTable, sides):
    # the compiled sampler takes one segment list for every side
    axes = sorted({EdgeSpec(table, s).axis for s in sides})
    lo, hi, cum = _segment_arrays(EdgeSpec(table, "W" if axes[0] == 0 else "S"))
    if len(axes) == 2:
        lo2, hi2, _ = _segment_arrays(EdgeSpec(table, "S"))
        if lo.shape != lo2.shape or not (np.allclose(lo, lo2) and np.allclose(hi, hi2)):
            raise BilliardError("injecting through both edge orientations needs equal free edge parts")
    return lo, hi, cum


def occupation_times(table: BilliardTable, n_cells: int, probe, n: int, rng, sides=("W", "E"),
                     cap: float = 1e6):
    """Sum and sum of squares of time spent in ``probe`` by ``n`` particles injected uniformly over edges."""
    edges = boundary_edges(n_cells, sides)
    lo, hi, cum = _shared_segments(table, sides)
    return _occupation_run(rng, int(n), edges, n_cells, n_cells, float(probe[0]), float(probe[1]),
                           lo, hi, cum, table.images, cap)


def inject_and_flow(table: BilliardTable, n_cells: int, ages, edge_rows, rng, sides=("W", "S", "E", "N")) -> np.ndarray:
    """Final states of particles entering through ``edge_rows`` of :func:`boundary_edges`; exited rows are nan."""
    edges = boundary_edges(n_cells, sides)
    lo, hi, cum = _shared_segments(table, sides)
    out = np.empty((len(ages), 6))
    _inject_and_flow(rng, np.asarray(ages, dtype=float), np.asarray(edge_rows, dtype=np.int64), edges,
                     n_cells, n_cells, lo, hi, cum, table.images, out)
    return out


def box_survivors(table: BilliardTable, states: np.ndarray, T: float, x_max: int, y_max: int) -> np.ndarray:
    """Rows ``(cellx, celly, survived_x)``; cells are ``-1`` once the box was left."""
    st = np.array(states, dtype=float, copy=True)
    out = np.empty((len(st), 3))
    _box_survivors(st, float(T), table.images, float(x_max), float(y_max), out)
    return out
