"""Command line entry point.

Every artifact depends only on the resolved configuration and the seed;
worker counts change wall time, never bytes.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .billiard import DEFAULT_SIGMA2, BilliardError, EdgeSpec, build_table, default_table, estimate_sigma
from .config import ConfigError, RunConfig
from .geometry import SIDES, Domain, GeometryError, LatticeSpec
from .injection import InjectionSpec, PeriodicFunction, count_weights, event_site_indices, sample_events, spec_a_weights
from .kernels import BoundaryProfile, fd_heat, fd_laplace, u_series, v_series
from .records import CheckResult, config_hash, format_report, write_csv
from .walk import AbsorbedChain, WalkError, WalkModel, evolve_particles, ssrw_model
from . import verify

VERIFY_CHECKS = ("h1", "h2", "h3", "duality", "le", "theorem1", "billiard-invariants")


class UsageError(ValueError):
    pass


# --- building objects from the configuration -----------------------------------------


def build_model(cfg: RunConfig) -> WalkModel:
    lat = cfg["lattice"]
    custom = [lat[k] is not None for k in ("basis", "jumps", "weights")]
    if any(custom):
        if not all(custom):
            raise ConfigError("lattice.basis, lattice.jumps and lattice.weights must be given together")
        basis = np.array(lat["basis"], dtype=float)
        if basis.shape != (2, 2):
            raise ConfigError("lattice.basis needs two vectors of two coordinates")
        return WalkModel(LatticeSpec(basis.T, np.array(lat["jumps"]), np.array(lat["weights"])))
    if lat["preset"] != "ssrw":
        raise ConfigError(f"unknown lattice preset {lat['preset']!r}")
    return ssrw_model()


def build_billiard(cfg: RunConfig):
    """Table and its diffusion constant ``sigma`` (``Sigma = sigma^2 I``)."""
    b = cfg["billiard"]
    if b["disks"] is not None:
        if any(len(d) != 3 for d in b["disks"]):
            raise ConfigError("billiard.disks rows are cx,cy,r")
        table = build_table(b["disks"], seed=cfg.seed)
        if b["sigma2"] is None:
            raise ConfigError("billiard.sigma2 is required for a custom table (see estimate-sigma)")
    else:
        if b["preset"] != "default-billiard":
            raise ConfigError(f"unknown billiard preset {b['preset']!r}")
        table = default_table(seed=cfg.seed)
    s2 = DEFAULT_SIGMA2 if b["sigma2"] is None else b["sigma2"]
    if s2 <= 0:
        raise ConfigError("billiard.sigma2 must be positive")
    return table, float(np.sqrt(s2))


def build_profiles(cfg: RunConfig) -> dict:
    inj = cfg["injection"]
    A = cfg["domain"]["A"]
    out = {}
    for side in SIDES:
        spec = cfgmod.profile_spec(inj[f"f_{side}"])
        if spec is None:
            continue
        length = 1.0 if side in ("W", "E") else A
        if isinstance(spec, str):
            out[side] = BoundaryProfile(side, lambda s, ln=length: np.sin(np.pi * s / ln), length=length)
        else:
            out[side] = BoundaryProfile.from_samples(side, spec, length=length)
    return out


def _require_walk(cfg, what):
    if cfg.dynamics != "walk":
        raise UsageError(f"{what} is only available for run.dynamics = walk")


def _require_billiard(cfg, what):
    if cfg.dynamics != "billiard":
        raise UsageError(f"{what} needs run.dynamics = billiard")


def _duality_weights_only(cfg, what):
    if cfg["injection"]["A_table"] != "specA":
        raise ConfigError(f"{what} uses the duality weights; injection.A_table must be specA")
    if not PeriodicFunction(cfg["injection"]["B"]).is_constant:
        raise ConfigError(f"{what} assumes B = 1")


# --- subcommands ---------------------------------------------------------------------


def cmd_solve(cfg: RunConfig, meta):
    profiles = build_profiles(cfg)
    n, A, t = cfg["solve"]["grid"], cfg["domain"]["A"], cfg["injection"]["t"]
    if not profiles:
        raise ConfigError("all boundary profiles are zero")
    field = fd_laplace(n, profiles, A) if np.isinf(t) else fd_heat(n, t, profiles, A)
    rows = ((x, y, field.values[i, j]) for i, x in enumerate(field.x.tolist()) for j, y in enumerate(field.y.tolist()))
    files = [write_csv(cfg.out / "solve.csv", ["x", "y", "value"], rows, meta)]
    pts = cfg["solve"]["points"]
    if pts:
        z = np.array(pts, dtype=float)
        ser = np.zeros(len(z))
        for p in profiles.values():
            ser += u_series(z, p) if np.isinf(t) else v_series(t, z, p)
        fd = field.at(z)
        files.append(write_csv(cfg.out / "solve_points.csv", ["x", "y", "series", "fd"],
                               zip(z[:, 0].tolist(), z[:, 1].tolist(), ser.tolist(), fd.tolist()), meta))
    return [], files


def _walk_simulate(cfg, meta):
    model = build_model(cfg)
    t = cfg["injection"]["t"]
    if not np.isfinite(t):
        raise ConfigError("simulate needs a finite injection.t")
    L = cfg["domain"]["L"]
    domain = Domain(model.lattice, L, cfg["domain"]["A"])
    chain = AbsorbedChain.build(domain, model.weights)
    A = spec_a_weights(model.weights) if cfg["injection"]["A_table"] == "specA" else count_weights
    if cfg["injection"]["A_table"] not in ("specA", "count"):
        raise ConfigError("injection.A_table must be specA or count")
    spec = InjectionSpec(A, build_profiles(cfg), t * L * L, PeriodicFunction(cfg["injection"]["B"]))
    cum = np.cumsum(model.weights)
    rows = []
    for trial in range(cfg["simulate"]["trials"]):
        ev = sample_events(spec, domain, (cfg.seed, trial, 0))
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 1]))
        final = evolve_particles(rng, event_site_indices(ev, domain), -ev["T"], chain.neighbours, cum)
        hist = np.bincount(final[final >= 0], minlength=len(domain))
        for i in np.flatnonzero(hist):
            rows.append((trial, int(domain.sites[i, 0]), int(domain.sites[i, 1]), int(hist[i])))
    return [], [write_csv(cfg.out / "simulate.csv", ["trial", "l1", "l2", "count"], rows, meta)]


def _billiard_simulate(cfg, meta):
    from .billiard import boundary_edges, inject_and_flow

    table, sigma = build_billiard(cfg)
    L, t = cfg["domain"]["L"], cfg["injection"]["t"]
    if not np.isfinite(t):
        raise ConfigError("simulate needs a finite injection.t")
    n = verify.billiard_cells(sigma, L)
    horizon = t * L * L
    B = PeriodicFunction(cfg["injection"]["B"])
    profiles = build_profiles(cfg)
    edges = boundary_edges(n)
    kac = EdgeSpec(table, "W").kac
    side_names = {0: "W", 1: "S", 2: "E", 3: "N"}
    # each edge injects at the invariant flux times f at the edge midpoint (macroscopic units)
    rates = np.zeros(len(edges))
    for r, (sd, ix, iy) in enumerate(edges):
        prof = profiles.get(side_names[int(sd)])
        if prof is not None:
            along = iy if sd in (0, 2) else ix
            rates[r] = float(prof(np.array([sigma * along / L]))[0]) / kac
    rows = []
    for trial in range(cfg["simulate"]["trials"]):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 2]))
        counts = rng.poisson(rates * B.sup * horizon)
        er = np.repeat(np.arange(len(edges)), counts)
        T = -horizon * rng.random(len(er))
        keep = rng.random(len(er)) * B.sup < B(T)
        er, T = er[keep], T[keep]
        st = inject_and_flow(table, n, -T, er, rng)
        st = st[~np.isnan(st[:, 0])]
        cells, cnt = np.unique(st[:, :2].astype(np.int64), axis=0, return_counts=True)
        rows.extend((trial, int(c[0]), int(c[1]), int(k)) for c, k in zip(cells, cnt))
    return [], [write_csv(cfg.out / "simulate.csv", ["trial", "cell1", "cell2", "count"], rows, meta)]


def cmd_simulate(cfg, meta):
    return _walk_simulate(cfg, meta) if cfg.dynamics == "walk" else _billiard_simulate(cfg, meta)


def cmd_estimate_sigma(cfg, meta):
    if cfg.dynamics == "walk":
        s = build_model(cfg).sigma
        se = np.zeros((2, 2))
    else:
        table, _ = build_billiard(cfg)
        est = estimate_sigma(table, cfg["billiard"]["T"], cfg["billiard"]["n"], cfg.seed)
        s, se = est.sigma, est.stderr
    rows = [(i, j, s[i, j], se[i, j]) for i in range(2) for j in range(2)]
    f = write_csv(cfg.out / "sigma.csv", ["i", "j", "sigma", "stderr"], rows, meta)
    res = [CheckResult("sigma.positive", float(s[0, 0]), 0.0, 0.0, bool(s[0, 0] > 0 and s[1, 1] > 0))]
    return res, [f]


# --- verify ------------------------------------------------------------------------------


def _v_h1(cfg, meta):
    _require_walk(cfg, "verify h1")
    tt = verify.check_h1(build_model(cfg).lattice)
    return [CheckResult("h1.rational", {"K1": tt.K1, "K2": tt.K2}, "K finite", None, tt.K is not None,
                        tt.diagnostic)], []


def _v_h2(cfg, meta):
    h = cfg["h2"]
    if cfg.dynamics == "walk":
        model = build_model(cfg)
        a = verify.h2_walk(model, h["T"], h["params"], h["k"])
        b = verify.h2_walk(model, h["T2"], h["params"], h["k"])
        return [
            CheckResult("h2.scaled", a.scaled, a.reference, h["tolerance"], abs(a.rel_error) <= h["tolerance"],
                        f"T={h['T']:g} rel_error={a.rel_error:.6f}"),
            CheckResult("h2.trend", abs(b.rel_error), abs(a.rel_error), "non-increasing",
                        abs(b.rel_error) <= abs(a.rel_error), f"T2={h['T2']:g}"),
        ], []
    table, sigma = build_billiard(cfg)
    T, workers = h["T_billiard"], cfg["run"]["workers"]
    exp = verify.h2_billiard(table, sigma, T, h["params_billiard"], h["n"], cfg.seed, workers)
    if len(h["targets"]) != 2:
        raise ConfigError("h2.targets needs exactly two alpha,gamma rows")
    t1, t2 = (tuple(t) for t in h["targets"])
    out = []
    try:
        r, se, pred = exp.ratio(t1, t2)
        out.append(CheckResult("h2_billiard.shape_ratio_z", (r - pred) / se, 0.0, 3.0, abs(r - pred) < 3 * se,
                               f"ratio={r:.6f} se={se:.6f} predicted={pred:.6f}"))
        xi = h["params_billiard"][4]
        if 2 * exp.start_row == exp.y_max:
            m1, m2 = (t1[0], t1[1]), (t1[0], xi - t1[1])
            r, se, _ = exp.ratio(m1, m2)
            out.append(CheckResult("h2_billiard.mirror_z", (r - 1) / se, 0.0, 3.0, abs(r - 1) < 3 * se))
    except ValueError as exc:
        out.append(CheckResult("h2_billiard.shape_ratio_z", None, 0.0, 3.0, False, str(exc)))
    s1 = verify.billiard_survival(table, T, h["n"] // 4, cfg.seed + 1, workers)
    s2 = verify.billiard_survival(table, 4 * T, h["n"] // 4, cfg.seed + 2, workers)
    z = (s2.scaled - s1.scaled) / np.hypot(s1.stderr, s2.stderr)
    out.append(CheckResult("h2_billiard.survival_scaling_z", z, 0.0, 3.0, abs(z) < 3,
                           f"C(T)={s1.scaled:.6f} C(4T)={s2.scaled:.6f}"))
    return out, []


def _v_h3(cfg, meta):
    _require_walk(cfg, "verify h3")
    model = build_model(cfg)
    L, h = cfg["domain"]["L"], cfg["h3"]
    res = [verify.h3_integral(model, L, d, h["z"]) for d in h["deltas"]]
    vals = [r.value for r in res]
    dec = all(b < a for a, b in zip(vals, vals[1:]))
    mid = res[1] if len(res) > 1 else res[0]
    rows = [(r.delta, r.value, r.early, r.late, r.late_bound, r.full) for r in res]
    f = write_csv(cfg.out / "h3.csv", ["delta", "value", "early", "late", "late_bound", "full"], rows, meta)
    return [
        CheckResult("h3.decreasing", vals, None, "strict", dec),
        CheckResult("h3.fraction", mid.value / mid.full, 0.0, h["fraction"], mid.value < h["fraction"] * mid.full,
                    f"delta={mid.delta:g}"),
    ], [f]


def _v_duality(cfg, meta):
    d = cfg["duality"]
    if cfg.dynamics == "walk":
        _duality_weights_only(cfg, "verify duality")
        t = cfg["injection"]["t"]
        profiles = build_profiles(cfg) or None
        diff = verify.duality_report(build_model(cfg), cfg["domain"]["L"], t, profiles)
        return [CheckResult("duality.max_abs_diff", diff, 0.0, d["tolerance"], diff <= d["tolerance"],
                            f"t={t:g}")], []
    table, sigma = build_billiard(cfg)
    rep = verify.billiard_duality(table, cfg["domain"]["L"], sigma, d["n_inject"], cfg.seed, cfg["run"]["workers"])
    return [CheckResult("duality.billiard_z", rep.z, rep.prediction, d["z_max"], abs(rep.z) < d["z_max"],
                        f"estimate={rep.estimate:.6f} se={rep.stderr:.6f} cells={rep.n_cells} "
                        f"probe={rep.probe} capped={rep.capped}")], []


def _hist_rows(rep):
    for k, site in enumerate(rep.sites):
        vals, freq = np.unique(rep.counts[:, k], return_counts=True)
        for v, f in zip(vals.tolist(), freq.tolist()):
            yield site[0], site[1], v, f


def _v_le(cfg, meta):
    h = cfg["le"]
    L, t = cfg["domain"]["L"], cfg["injection"]["t"]
    workers = cfg["run"]["workers"]
    if cfg.dynamics == "walk":
        _duality_weights_only(cfg, "verify le")
        profiles = build_profiles(cfg) or None
        offsets = [tuple(int(round(v)) for v in o) for o in h["offsets"]]
        rep = verify.le_poissonity(build_model(cfg), L, t, [tuple(p) for p in h["probes"]], offsets,
                                   h["trials"], cfg.seed, profiles, workers, with_reference=False)
    else:
        table, sigma = build_billiard(cfg)
        n = verify.billiard_cells(sigma, L)
        cells = sorted({tuple(int(min(max(round(v * sigma * L), 0), n - 1)) for v in p) for p in h["probes"]})
        rep = verify.le_billiard(table, sigma, L, t, cells, h["trials"], cfg.seed, workers=workers)
    f = write_csv(cfg.out / "le_counts.csv", ["s1", "s2", "count", "frequency"], _hist_rows(rep), meta)
    means = write_csv(cfg.out / "le_sites.csv", ["s1", "s2", "mean", "variance", "dispersion"],
                      ((s[0], s[1], m, v, d) for s, m, v, d in zip(rep.sites, rep.means.tolist(),
                                                                   rep.variances.tolist(), rep.dispersion.tolist())),
                      meta)
    return verify.le_checks(rep, tuple(h["band"]), h["z_max"]), [f, means]


def _v_theorem1(cfg, meta):
    _require_walk(cfg, "verify theorem1")
    _duality_weights_only(cfg, "verify theorem1")
    profiles = build_profiles(cfg)
    if not profiles:
        raise ConfigError("theorem1 needs a non-zero boundary profile")
    model, L, t = build_model(cfg), cfg["domain"]["L"], cfg["injection"]["t"]
    tol = cfg["theorem1"]["tolerance"]
    out = []
    for z in cfg["theorem1"]["points"]:
        r = verify.theorem1_check(model, profiles, L, t, z)
        out.append(CheckResult(f"theorem1.rel_error[{z[0]:g},{z[1]:g}]", r.rel_error, 0.0, tol,
                               abs(r.rel_error) <= tol, f"occupancy={r.occupancy:.8f} kernel={r.reference:.8f}"))
    return out, []


def _v_invariants(cfg, meta):
    _require_billiard(cfg, "verify billiard-invariants")
    table, _ = build_billiard(cfg)
    iv = cfg["invariants"]
    res = verify.billiard_invariants(table, cfg.seed, iv["involution_s"], kac_samples=iv["kac_samples"],
                                     horizon_flights=iv["horizon_flights"], sigma_T=iv["sigma_T"],
                                     sigma_n=iv["sigma_n"])
    return res, []


VERIFY = {
    "h1": _v_h1, "h2": _v_h2, "h3": _v_h3, "duality": _v_duality, "le": _v_le,
    "theorem1": _v_theorem1, "billiard-invariants": _v_invariants,
}


# --- driver ----------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boundary-le", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="built-in starting configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--workers", type=int, help="worker threads (does not change results)")
    p.add_argument("--out", type=Path, help="output directory (overrides run.out_dir)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a key")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", help="kernel and finite-difference fields to CSV")
    sub.add_parser("simulate", help="one or more injection experiments; counts to CSV")
    v = sub.add_parser("verify", help="run a check battery and write a report")
    v.add_argument("check", choices=VERIFY_CHECKS)
    sub.add_parser("estimate-sigma", help="diffusion matrix of the dynamics")
    return p


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config, args.preset, args.set, args.seed, args.workers, args.out)
        cfg.out = Path(cfg["run"]["out_dir"])
        h = config_hash(cfg.resolved())
        name = args.command if args.command != "verify" else f"verify-{args.check}"
        meta = {"config": h, "seed": cfg.seed, "command": name}
        if args.command == "verify":
            results, files = VERIFY[args.check](cfg, meta)
        else:
            results, files = {"solve": cmd_solve, "simulate": cmd_simulate,
                              "estimate-sigma": cmd_estimate_sigma}[args.command](cfg, meta)
    except (ConfigError, UsageError, GeometryError, WalkError, BilliardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = format_report(results, h)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / f"{name}.report").write_text(report)
    sys.stdout.write(report)
    for f in files:
        print(f"wrote {f}", file=sys.stderr)
    return 0 if all(r.passed for r in results) else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
