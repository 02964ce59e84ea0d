"""Command-line experiment runner.

Every run writes CSV files headed by the config hash and seed, plus a
``manifest.json`` with versions, seeds, output hashes and fitted constants.
Outputs depend only on (config, seed): Monte Carlo work is split into a fixed
number of chunks with spawned seeds, and ``--workers`` only decides how many
chunks run at once.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .billiard import config_distance, hyperbolicity_check, invariance_check
from .config import (DEFAULTS, ExperimentConfig, canonical_json, default_config, load_config,
                     load_table, table_from_spec)
from .cone import ConeParams, CurveSampler, cone_membership, hilbert_metric
from .curves import StableCurve
from .errors import BilliardError, ConfigError, Starvation
from .open_systems import (ArcHole, FullHole, OpenComposition, eigen_residual, escape_from_run,
                           exit_statistics, make_hole, merge_runs, simulate_open, surviving_cloud,
                           window_rate)
from .transfer import MapSequence, leafwise_transfer, memory_loss_experiment, random_test_function

log = logging.getLogger("seqbilliards")

ORBIT_TOL = 1e-8


# -- plumbing -------------------------------------------------------------------


def spawn(seed: int, n: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def pmap(fn, tasks, workers: int):
    """Ordered map; a process pool when ``workers > 1``."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def versions() -> dict:
    return {"seqbilliards": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


class Outputs:
    """Collects CSV outputs for one run and writes the manifest."""

    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def header(self) -> dict:
        return {"config_sha256": self.cfg.sha256, "seed": self.cfg.seed, "experiment": self.cfg.experiment}

    def csv(self, name: str, columns, rows) -> Path:
        buf = io.StringIO()
        for k, v in self.header().items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self._write(name, buf.getvalue())

    def _write(self, name: str, text: str) -> Path:
        p = self.dir / name
        p.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return p

    def manifest(self, constants: dict, checks: dict, warnings: list, force: bool) -> Path:
        doc = {"experiment": self.cfg.experiment, "config_sha256": self.cfg.sha256,
               "config": self.cfg.resolved(), "seed": self.cfg.seed, "versions": versions(),
               "force": force, "outputs": dict(sorted(self.files.items())),
               "constants": constants, "checks": checks, "warnings": warnings}
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
        p = self.dir / "manifest.json"
        p.write_text(text)
        return p


def observable(name: str, table):
    L = table.lengths
    table_ = {
        "one": lambda i, r, p: np.ones(np.shape(r)),
        "wave": lambda i, r, p: 1.0 + 0.3 * np.cos(2 * np.pi * r / L[i]),
        "tilt": lambda i, r, p: 1.0 + 0.3 * np.sin(p),
        "bump": lambda i, r, p: 1.0 + 0.5 * np.cos(p),
    }
    if name not in table_:
        raise ConfigError(f"unknown observable {name!r}; choose from {sorted(table_)}")
    return table_[name]


# -- experiments -----------------------------------------------------------------


class Run:
    """Result of an experiment: fitted constants, pass/fail checks and warnings."""

    def __init__(self):
        self.constants: dict = {}
        self.checks: dict = {}
        self.warnings: list = []

    def warn(self, msg: str):
        log.warning(msg)
        self.warnings.append(msg)


def _table(cfg: ExperimentConfig, force: bool):
    return table_from_spec(cfg.table_spec, check_family=not force)


def _decay_csv(out: Outputs, name: str, dt):
    fit = dt.fit
    out.csv(name, ["n", "leafwise_diff", "global_diff", "global_se", "rate", "ci_lo", "ci_hi"],
            [(n, lw, gd, se, fit.rate, fit.ci[0], fit.ci[1])
             for n, lw, gd, se in zip(dt.n, dt.leafwise, dt.global_diff, dt.global_se)])


def run_decay(cfg, out: Outputs, workers: int, force: bool) -> Run:
    p = cfg.params
    tab = _table(cfg, force)
    L = tab.lengths
    amp = float(p["amplitude"])
    u = lambda i, r, ph: amp * np.cos(2 * np.pi * r / L[i])  # noqa: E731
    f = lambda i, r, ph: 1.0 + u(i, r, ph)  # noqa: E731
    g = lambda i, r, ph: np.ones(np.shape(r))  # noqa: E731
    rng = spawn(cfg.seed, 1)[0]
    # a short stable segment in the bulk of scatterer 0 witnesses the leafwise decay
    W = StableCurve.segment(0, 0.4, 0.1, -3.0, 0.02)
    dt = memory_loss_experiment(f, g, u, tab, p["horizon"], rng, witnesses=[W], n_orbits=p["n_orbits"],
                                orbit_length=p["orbit_length"], leaf_points=20001)
    _decay_csv(out, "decay.csv", dt)
    res = Run()
    res.constants = {"theta_hat": dt.fit.rate, "theta_ci": dt.fit.ci, "r2": dt.fit.r2,
                     "prefactor": dt.fit.prefactor}
    out.csv("fit.csv", ["theta_hat", "ci_lo", "ci_hi", "r2", "prefactor"],
            [(dt.fit.rate, dt.fit.ci[0], dt.fit.ci[1], dt.fit.r2, dt.fit.prefactor)])
    res.checks["theta_below_one"] = bool(dt.fit.rate < 1)
    return res


def jittered_sequence(spec: dict, n: int, jitter: float, rng, n_rays: int, check_family: bool) -> list:
    tables = []
    for _ in range(n):
        s = json.loads(json.dumps(spec))
        for sc in s["scatterers"]:
            sc["center"] = [c + jitter * (2 * rng.random() - 1) for c in sc["center"]]
        tables.append(table_from_spec(s, check_family, n_rays))
    return tables


def run_equi(cfg, out: Outputs, workers: int, force: bool) -> Run:
    p = cfg.params
    base = _table(cfg, force)
    r_seq, r_mc = spawn(cfg.seed, 2)
    tables = jittered_sequence(cfg.table_spec, p["horizon"], float(p["jitter"]), r_seq, p["n_rays"], not force)
    seq = MapSequence(tables, blocks=[(len(tables), base)], kappa=float(p["kappa"]))
    res = Run()
    if force:
        res.warn("admissibility of the map sequence was not checked (--force)")
    else:
        seq.check_admissible()
    f = observable("wave", base)
    g = observable("tilt", base)
    L = base.lengths
    psi = lambda i, r, ph: np.cos(2 * np.pi * r / L[i])  # noqa: E731
    dt = memory_loss_experiment(f, g, psi, seq, p["horizon"], r_mc, samples=p["samples"])
    _decay_csv(out, "equi.csv", dt)
    res.constants = {"theta_hat": dt.fit.rate, "theta_ci": dt.fit.ci, "r2": dt.fit.r2,
                     "config_distances": [config_distance(t, base) for t in tables]}
    res.checks["theta_below_one"] = bool(dt.fit.rate < 1)
    return res


def cone_params(cfg, tab) -> ConeParams:
    return ConeParams.for_table(tab, **cfg.cone)


def run_cone_check(cfg, out: Outputs, workers: int, force: bool) -> Run:
    p = cfg.params
    tab = _table(cfg, force)
    if tab.family is None:
        raise ConfigError("cone-check needs a table with family bounds")
    params = cone_params(cfg, tab)
    sampler = CurveSampler(tab, tab.family, params.delta, p["n_curves"], seed=cfg.seed)
    rep = cone_membership(observable(p["observable"], tab), params, sampler)
    out.csv("cone.csv", ["triple_plus", "triple_minus", "cond2_margin", "cond3_margin", "cond5_margin",
                         "n_curves", "n_pairs"],
            [(rep.triple_plus, rep.triple_minus, rep.cond2_margin, rep.cond3_margin, rep.cond5_margin,
              rep.n_curves, rep.n_pairs)])
    res = Run()
    res.constants = {"a": params.a, "L": params.L, "A": params.A, "delta": params.delta,
                     "delta0": params.delta0, "diameter_bound": params.diameter_bound,
                     "contraction_bound": params.contraction_bound}
    res.checks["in_cone"] = rep.in_cone
    return res


def _escape_chunk(task):
    comp, f, n, samples, seed_seq = task
    return simulate_open(comp, f, n, np.random.default_rng(seed_seq), samples)


def _one(i, r, p):
    return np.ones(np.shape(r))


def _escape(comp, n, samples, chunks, seed, workers):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(chunks)
    sizes = [len(a) for a in np.array_split(np.arange(samples), chunks)]
    runs = pmap(_escape_chunk, [(comp, _one, n, s, q) for s, q in zip(sizes, seeds)], workers)
    return merge_runs(runs)


def run_escape(cfg, out: Outputs, workers: int, force: bool) -> Run:
    p = cfg.params
    tab = _table(cfg, force)
    hole = make_hole(tab, p["hole"])
    comp = OpenComposition(tab, hole, p["N"])
    res = Run()
    run = _escape(comp, p["n_macro"], p["samples"], p["chunks"], cfg.seed, workers)
    masses = run.masses
    if isinstance(hole, FullHole) or run.survivors[-1] == 0:
        res.warn("the hole covers every orbit: survival is 0 after the first check")
        out.csv("escape.csv", ["n", "survivors", "mass"], zip(range(masses.size), run.survivors, masses))
        res.constants = {"survival": list(masses)}
        return res
    try:
        est = escape_from_run(run)
    except Starvation as e:
        res.warn(f"too few survivors for a rate estimate ({e})")
        out.csv("escape.csv", ["n", "survivors", "mass"], zip(range(masses.size), run.survivors, masses))
        return res
    out.csv("escape.csv", ["n", "survivors", "mass", "ratio", "nu_hat"], est.rows())
    ex = exit_statistics(run, ("all",), est.nu)
    out.csv("exits.csv", ["n", "probability", "se", "scaled"], ex.rows())
    L = tab.lengths
    psis = [_one, lambda i, r, ph: 1 + 0.5 * np.cos(ph), lambda i, r, ph: 1 + 0.3 * np.cos(2 * np.pi * r / L[i])]
    resid = eigen_residual(surviving_cloud(run), comp, p["n_macro"], est.nu, psis)
    res.constants = {"nu_hat": est.nu, "nu_se": est.nu_se, "nu_ci": est.nu_ci, "escape_rate": est.escape_rate,
                     "ratio_spread": est.ratio_spread(), "eigen_residual": max(resid),
                     "hole_measure": hole.measure(tab, spawn(cfg.seed + 1, 1)[0], 200_000)[0]}
    if isinstance(hole, ArcHole):
        res.constants["hole_measure_exact"] = hole.exact_measure(tab)
    res.checks["nu_in_unit_interval"] = bool(0 < est.nu < 1)
    if p["double"] and isinstance(hole, ArcHole):
        b2 = min(hole.a + 2 * (hole.b - hole.a), float(tab.lengths[hole.scatterer_index]))
        big = OpenComposition(tab, ArcHole(hole.scatterer_index, hole.a, b2), p["N"])
        est2 = escape_from_run(_escape(big, p["n_macro"], p["samples"], p["chunks"], cfg.seed + 1, workers))
        out.csv("escape_doubled.csv", ["n", "survivors", "mass", "ratio", "nu_hat"], est2.rows())
        res.constants["nu_hat_doubled"] = est2.nu
        res.checks["nu_decreases_on_doubling"] = bool(est2.nu < est.nu)
    elif p["double"]:
        res.warn("hole doubling is only defined for arc holes; skipped")
    return res


def _lazy_chunk(task):
    from .applications.scattering import lazy_orbit

    bt, n_macro, N, size, seed_seq = task
    rng = np.random.default_rng(seed_seq)
    return lazy_orbit(bt, bt.sample(rng, size), n_macro, N)


def merge_lazy(parts):
    from .applications.scattering import LazyOrbits

    cat = lambda name: np.concatenate([getattr(x, name) for x in parts])  # noqa: E731
    return LazyOrbits(parts[0].N, parts[0].n_macro, cat("exit_macro"), cat("exit_x"), cat("exit_y"),
                      cat("exit_angle"), cat("reentries"), cat("lost"))


def run_scatter(cfg, out: Outputs, workers: int, force: bool) -> Run:
    from .applications.scattering import build_boxed

    p = cfg.params
    obstacles = [((float(o["center"][0]), float(o["center"][1])), float(o["radius"])) for o in p["obstacles"]]
    bt = build_boxed(obstacles, p["box"])
    lo, hi = p["window"]
    if not 0 <= lo < hi <= p["n_macro"]:
        raise ConfigError("params.window must satisfy 0 <= lo < hi <= n_macro")
    res = Run()
    res.constants = {"cover_error": bt.cover_error}
    rows = []
    for k, N in enumerate(p["N"]):
        seeds = np.random.SeedSequence([cfg.seed, k]).spawn(p["chunks"] + 1)
        sizes = [len(a) for a in np.array_split(np.arange(p["particles"]), p["chunks"])]
        lz = merge_lazy(pmap(_lazy_chunk, [(bt, p["n_macro"], N, s, q) for s, q in zip(sizes, seeds)], workers))
        nu_l, se_l, _ = lz.rate(lo, hi)
        run = _escape(bt.open_system(N), p["n_macro"], p["particles"], p["chunks"], seeds[-1], workers)
        nu_o, se_o, _ = window_rate(run, lo, hi)
        z = (nu_l - nu_o) / math.hypot(se_l, se_o)
        rows.append((N, nu_l, se_l, nu_o, se_o, z, int(lz.reentries.sum()), int(lz.lost.sum())))
        out.csv(f"survival_N{N}.csv", ["n", "inside", "survival", "open_mass"],
                [(i, int(a), s, m) for i, (a, s, m) in
                 enumerate(zip(lz.alive().sum(axis=1), lz.survival(), run.masses))])
        edges, counts = lz.exit_histogram()
        out.csv(f"exit_angles_N{N}.csv", ["theta_lo", "theta_hi", "count"],
                zip(edges[:-1], edges[1:], counts))
        res.checks[f"no_reentry_N{N}"] = bool(lz.reentries.sum() == 0)
        res.checks[f"rates_agree_N{N}"] = bool(abs(z) <= 1.96)
    out.csv("rates.csv", ["N", "nu_lazy", "se_lazy", "nu_open", "se_open", "z", "reentries", "lost"], rows)
    res.constants["rates"] = {str(r[0]): {"nu_lazy": r[1], "nu_open": r[3], "z": r[5]} for r in rows}
    return res


def _walk_chunk(task):
    from .applications.lorentz import lorentz_walk

    config, steps, size, seed_seq = task
    return lorentz_walk(config, steps, size, np.random.default_rng(seed_seq), keep_paths=False)


def run_lorentz(cfg, out: Outputs, workers: int, force: bool) -> Run:
    from .applications.lorentz import LorentzConfig, WalkRecord, lorentz_walk, memory_loss_sweep

    p = cfg.params
    config = LorentzConfig(r=p["r"], rho=p["rho"], eps=p["eps"], N=p["N"], seed=p["environment_seed"])
    res = Run()
    res.constants = {"tau_star": config.tau_star, "corners_block_diagonals": config.corners_block_diagonals}
    if not config.corners_block_diagonals:
        res.warn("corner disks do not block diagonal moves; double crossings are flagged per walker")
    seeds = np.random.SeedSequence(cfg.seed).spawn(p["chunks"] + 2)
    sizes = [len(a) for a in np.array_split(np.arange(p["walkers"]), p["chunks"])]
    parts = pmap(_walk_chunk, [(config, p["steps"], s, q) for s, q in zip(sizes, seeds)], workers)
    rec = WalkRecord(config, np.concatenate([x.z for x in parts]), np.concatenate([x.symbols for x in parts]),
                     np.concatenate([x.status for x in parts]))
    mean, se = rec.drift()
    z = mean / se
    out.csv("drift.csv", ["coordinate", "mean_per_step", "se", "z"],
            [("x", mean[0], se[0], z[0]), ("y", mean[1], se[1], z[1])])
    res.constants.update({"drift": list(mean), "drift_se": list(se), "failed_walkers": int((~rec.ok).sum())})
    res.checks["no_drift"] = bool(np.all(np.abs(z) <= 3))
    one = lorentz_walk(config, min(p["steps"], 200), 1, np.random.default_rng(seeds[-2]))
    path_rows = [(m, int(one.z[0, m, 0]), int(one.z[0, m, 1]), int(one.symbols[0, m])) for m in range(one.symbols.shape[1])]
    out.csv("path.csv", ["step", "z_x", "z_y", "gate"], path_rows)
    mem = p["memory"]
    if mem:
        sweep = memory_loss_sweep(config, mem["N_values"], mem["m"], mem["n_max"], mem["walkers"],
                                  np.random.default_rng(seeds[-1]))
        for N, t in sweep.tables.items():
            out.csv(f"memory_N{N}.csv", ["lag", "full", "recent", "difference", "se", "count"], t.rows())
        res.constants["memory_smallest_N"] = sweep.smallest
        res.constants["memory_paths"] = {str(N): list(t.path) for N, t in sweep.tables.items()}
        res.constants["memory_fits"] = {str(N): (None if t.fit is None else
                                                 {"rate": t.fit.rate, "slope": t.fit.slope,
                                                  "slope_se": t.fit.slope_se, "r2": t.fit.r2})
                                        for N, t in sweep.tables.items()}
        res.checks["memory_loss_found"] = sweep.smallest is not None
    return res


EXPERIMENTS = {"decay": run_decay, "equi": run_equi, "cone-check": run_cone_check, "escape": run_escape,
               "scatter": run_scatter, "lorentz": run_lorentz}


def run(cfg: ExperimentConfig, out, workers: int = 1, force: bool = False) -> tuple[int, dict]:
    """Run one experiment; returns the exit code and the manifest contents."""
    if force:
        log.warning("--force: admissibility checks are skipped for this run")
    outs = Outputs(Path(out), cfg)
    try:
        res = EXPERIMENTS[cfg.experiment](cfg, outs, workers, force)
    except BilliardError as e:
        raise type(e)(f"{cfg.experiment}: {e}") from e
    path = outs.manifest(res.constants, res.checks, res.warnings, force)
    code = 0 if all(res.checks.values()) else 1
    return code, json.loads(path.read_text())


# -- selftest ------------------------------------------------------------------------


def _item(ok, value, tol, **extra):
    return {"pass": bool(ok), "value": _jsonable(value), "tolerance": tol, **_jsonable(extra)}


def _involution(tab, rng, n, perturb):
    idx, r, phi = tab.sample_srb(rng, n)
    st = tab.forward(idx, r, phi)
    r1 = st.r + perturb
    back = tab.backward(st.idx, r1, st.phi)
    ok = st.ok & back.ok
    L = tab.lengths[idx]
    dr = np.abs((back.r - r + 0.5 * L) % L - 0.5 * L)
    err = np.where(back.idx == idx, np.maximum(dr, np.abs(back.phi - phi)), np.inf)[ok]
    return float(err.max())


def selftest(seed: int = 0, mutate: bool = False) -> dict:
    """Invariant suite on the bundled tables; one pass/fail entry per item.

    With ``mutate`` the forward images are displaced by ``1e3`` times the orbit
    tolerance before the involution check, which must then fail.
    """
    rng = spawn(seed, 8)
    report: dict = {}
    perturb = ORBIT_TOL * 1e3 if mutate else 0.0
    tables = {name: load_table(name) for name in ("finite3", "packed3")}
    for k, (name, tab) in enumerate(tables.items()):
        err = _involution(tab, rng[k], 10_000, perturb)
        report[f"involution[{name}]"] = _item(err <= ORBIT_TOL, err, ORBIT_TOL)
        L = tab.lengths
        obs = [lambda i, r, p: np.cos(p), lambda i, r, p: np.sin(2 * np.pi * r / L[i]) * np.cos(p) ** 2,
               lambda i, r, p: (i == 0) * np.sin(p) ** 2]
        z = max(abs(t[2]) for t in invariance_check(tab, obs, 200_000, rng[2 + k]))
        report[f"measure_invariance[{name}]"] = _item(z <= 4.0, z, 4.0)
        c = tab.srb_constant
        report[f"srb_constant[{name}]"] = _item(abs(c - 1 / (2 * float(np.sum(L)))) <= 1e-12, c, 1e-12)
    tab = tables["finite3"]
    hyp = hyperbolicity_check(tab, tab.family, rng[4], samples=500, n=4)
    report["cone_invariance"] = _item(hyp.cone_invariant and hyp.C1 > 0, hyp.cone_margin, 0.0, C1=hyp.C1)
    seq = MapSequence.constant(tab, 2)
    worst = 0.0
    for j in range(3):
        W = StableCurve.segment(j % 3, 0.05 + 0.1 * j, 0.2 - 0.3 * j, -4.0 - j, 0.01)
        f = lambda i, r, p, j=j: 1 + 0.3 * np.cos(2 * np.pi * r / tab.lengths[i] + j) + 0.2 * np.sin(p)
        psi = lambda s, s0=W.r[0]: 1 + 0.5 * (s - s0)  # noqa: E731
        for n in (1, 2):
            worst = max(worst, leafwise_transfer(f, W, psi, seq, n, tab.family, check=False).rel_diff)
    report["route_equivalence"] = _item(worst <= 1e-3, worst, 1e-3)
    params = ConeParams.for_table(tab)
    u = np.linspace(0.0, 1e-5, 257)
    fns = [random_test_function(rng[5], u[-1], params.a, params.beta)(u) for _ in range(12)]
    d = lambda x, y: hilbert_metric(u, x, y, params.a, params.beta)  # noqa: E731
    sym = max(abs(d(fns[i], fns[i + 1]) - d(fns[i + 1], fns[i])) for i in range(11))
    proj = max(abs(d(3.7 * fns[i], fns[i + 1]) - d(fns[i], fns[i + 1])) for i in range(11))
    tri = max(d(fns[i], fns[i + 2]) - d(fns[i], fns[i + 1]) - d(fns[i + 1], fns[i + 2]) for i in range(10))
    report["hilbert_axioms"] = _item(sym == 0.0 and proj <= 1e-12 and tri <= 1e-6, max(sym, proj, tri), 1e-6,
                                     symmetry=sym, projectivity=proj, triangle=tri)
    return {"seed": seed, "mutated": mutate, "items": report,
            "pass": all(v["pass"] for v in report.values())}


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqbilliards", description="Sequential dispersing billiard experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("selftest",) + tuple(DEFAULTS):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON config (bundled default if omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="parallel chunks (results do not depend on it)")
        sp.add_argument("--force", action="store_true", help="skip admissibility checks (logged)")
        if name == "selftest":
            sp.add_argument("--mutate", action="store_true",
                            help="displace orbits by 1e3 x the orbit tolerance; the suite must flag it")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return 2
    try:
        if args.command == "selftest":
            rep = selftest(args.seed or 0, args.mutate)
            text = json.dumps(rep, indent=2, sort_keys=True)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "selftest.json").write_text(text + "\n")
            print(text)
            return 0 if rep["pass"] else 1
        cfg = load_config(args.config) if args.config else default_config(args.command)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {args.command!r}")
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = args.out or Path(cfg.out or f"out/{cfg.experiment}")
        code, manifest = run(cfg, out, args.workers, args.force)
        print(canonical_json({"checks": manifest["checks"], "constants": manifest["constants"],
                              "warnings": manifest["warnings"], "out": str(out)}))
        return code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except BilliardError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
