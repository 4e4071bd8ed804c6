"""Batch experiment runner: ``qplab <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 configuration error (nothing written), 3 numerical
guard tripped (manifest.json still written).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import sys
import time
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from . import dynamics as dyn
from . import geometry as geo
from . import stationary as sp
from . import transforms as tr
from .fields import GaussianPacket, NyquistViolation, XGrid
from .operator import DIM_CAP, Criterion
from .parallel import resolve_threads
from .potential import PotentialSpec, diophantine_margin, random_potential, sample_frequencies

SUBCOMMANDS = ("scan", "surface", "project", "transport", "stationary", "diophantine")
EXIT_CONFIG = 2
EXIT_GUARD = 3

DEFAULTS = {
    "potential": {"d": 2, "l": 3, "Q": 1, "freq_seed": 7, "seed": 11, "amplitude": 1.0, "free": False},
    "coupling": 0.05,
    "M": 2,
    "threads": None,
    "criterion": {"gap_const": 0.1, "gap_floor": None, "min_dominance": 0.5, "corrector_const": None, "sigma": 0.05},
    "scan": {"mode": "rings", "annulus": [10.0, 12.0], "step": 0.25, "radii": [10.0, 14.0, 20.0], "directions": 360},
    "surface": {"lambdas": [100.0, 400.0, 1600.0], "directions": 720},
    "project": {"k_c": [12.0, 0.0], "s": 3.0, "window": 6.0, "N": 64, "L": 60.0, "lambda_floors": [100.0]},
    "packet": {"k_c": [12.0, 0.0], "s": 7.0, "x0": [0.0, 0.0], "delta": 0.06, "cutoff": "outer", "window": 6.0},
    "grid": {"N": 512, "L": 512.0},
    "transport": {"T0": 5.0, "Tmax": 40.0, "ratio": float(np.sqrt(2)), "co_moving": True, "edge_tol": 1e-3},
    "stationary": {
        "direction": [1.0, 0.0],
        "z_norms": [24.0, 48.0, 96.0],
        "t": [50.0, 100.0, 200.0],
        "g3_width": 3.0,
        "lambda_star": geo.LAMBDA_FLOOR,
        "integral_coupling": 0.0,
    },
    "diophantine": {"N": [1, 2, 4, 8], "tau": None},
}

GUARDS = (dyn.GuardViolation, NyquistViolation, sp.ResolutionGuard, geo.NewtonDivergence, sp.SingularHessian)


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("qplab").joinpath("config_schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "inline":
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path, seed: int | None = None, threads: int | None = None) -> dict:
    """Read, validate and complete a config; raises ConfigError."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config does not match the schema: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["potential"]["seed"] = int(seed)
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg["threads"] = int(threads)
    cfg["threads"] = resolve_threads(cfg["threads"])
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def build_potential(cfg: dict) -> PotentialSpec:
    p = cfg["potential"]
    if "inline" in p:
        try:
            return PotentialSpec.from_dict(p["inline"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"inline potential is invalid: {exc}") from exc
    try:
        freq = sample_frequencies(p["freq_seed"], p["d"], p["l"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if p["free"]:
        return PotentialSpec.free(freq, p["Q"])
    return random_potential(freq, p["Q"], seed=p["seed"], amplitude=p["amplitude"])


def build_criterion(cfg: dict) -> Criterion:
    return Criterion(**cfg["criterion"])


def _vec(cfg_vec, d: int, what: str) -> np.ndarray:
    v = np.asarray(cfg_vec, dtype=float)
    if v.shape != (d,):
        raise ConfigError(f"{what} must have {d} components")
    return v


# Eager checks: everything a subcommand can validate without heavy numerics.
def _check(sub: str, cfg: dict, spec: PotentialSpec) -> None:
    d, M = spec.d, cfg["M"]
    if M < spec.Q:
        raise ConfigError(f"M={M} is smaller than the potential range Q={spec.Q}")
    if (2 * M + 1) ** spec.l > DIM_CAP:
        raise ConfigError(f"lattice box of M={M}, l={spec.l} exceeds {DIM_CAP} sites")
    try:
        if sub == "scan":
            s = cfg["scan"]
            if s["mode"] == "annulus":
                lo, hi = s["annulus"]
                if not hi > lo:
                    raise ConfigError("scan.annulus must be increasing")
                geo._check_radius(lo, M, spec)
            else:
                geo._check_radius(min(s["radii"]), M, spec)
        elif sub == "surface":
            if min(cfg["surface"]["lambdas"]) <= geo.LAMBDA_FLOOR:
                raise ConfigError(f"surface.lambdas must exceed {geo.LAMBDA_FLOOR}")
        elif sub == "project":
            p = cfg["project"]
            kc = _vec(p["k_c"], d, "project.k_c")
            grid = XGrid.around(p["N"], p["L"], d, carrier=kc)
            reach = p["window"] / (2 * p["s"]) + np.abs(spec.freq.omega).sum(axis=0).max() * M + grid.dk
            grid.check_band(kc[None, :] + reach, "projection band")
        elif sub == "transport":
            p, g, t = cfg["packet"], cfg["grid"], cfg["transport"]
            kc = _vec(p["k_c"], d, "packet.k_c")
            _vec(p["x0"], d, "packet.x0")
            if p["delta"] > 0 and p["delta"] < 4 * np.pi / g["L"]:
                raise ConfigError("packet.delta must be 0 or at least two k-cells")
            if not t["Tmax"] > t["T0"]:
                raise ConfigError("transport.Tmax must exceed transport.T0")
            grid = XGrid.around(g["N"], g["L"], d, carrier=kc)
            reach = p["window"] / (2 * p["s"]) + np.abs(spec.freq.omega).sum(axis=0).max() * M + grid.dk
            grid.check_band(kc[None, :] + reach, "packet band")
        elif sub == "stationary":
            s = cfg["stationary"]
            u = _vec(s["direction"], d, "stationary.direction")
            if np.linalg.norm(u) == 0:
                raise ConfigError("stationary.direction must be nonzero")
            if min(s["z_norms"]) ** 2 <= s["lambda_star"]:
                raise ConfigError("every |z|^2 must exceed stationary.lambda_star")
    except (NyquistViolation, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# Subcommands return (summary dict, {filename: text}, [(filename, plot function)]).
def run_scan(cfg, spec):
    s, crit, thr = cfg["scan"], build_criterion(cfg), cfg["threads"]
    files, summary = {}, {}
    if s["mode"] == "annulus":
        res = geo.scan_nonresonant(tuple(s["annulus"]), s["step"], cfg["M"], spec, cfg["coupling"], criterion=crit, threads=thr)
        files["scan.csv"] = res.to_csv()
        summary = {"fraction": res.fraction, "stderr": res.stderr, "n": res.n, "max_shift": res.max_shift(), "max_u": res.max_u()}
        pts, acc = res.k, res.accepted

        def plot(ax):
            ax.scatter(pts[:, 0], pts[:, 1], c=acc, s=2, cmap="coolwarm")
            ax.set_xlabel("kx")
            ax.set_ylabel("ky")
            ax.set_title(f"accepted fraction {res.fraction:.3f}")

        return summary, files, [("scan.png", plot)]
    rows = []
    for R in s["radii"]:
        res = geo.ring_scan(R, s["directions"], cfg["M"], spec, cfg["coupling"], crit, thr)
        files[f"ring_R{R:g}.csv"] = res.to_csv()
        rows.append({"R": R, "fraction": res.fraction, "stderr": res.stderr, "max_shift": res.max_shift(), "max_u": res.max_u()})
    summary["rings"] = rows
    summary["fraction"] = float(np.mean([r["fraction"] for r in rows]))
    R = [r["R"] for r in rows]
    if len(rows) > 1 and all(r["max_shift"] > 0 for r in rows):
        summary["shift_slope"] = geo.loglog_slope(R, [r["max_shift"] for r in rows])
        summary["u_slope"] = geo.loglog_slope(R, [r["max_u"] for r in rows])

    def plot(ax):
        ax.plot(R, [r["max_shift"] for r in rows], "o-", label="max |lambda - k^2|")
        ax.plot(R, [r["max_u"] for r in rows], "s-", label="u sup bound")
        if all(r["max_shift"] > 0 and r["max_u"] > 0 for r in rows):
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel("|k|")
        ax.legend()

    return summary, files, [("decay.png", plot)]


def run_surface(cfg, spec):
    s, crit = cfg["surface"], build_criterion(cfg)
    files, rows, surfs = {}, [], []
    for lam in s["lambdas"]:
        surf = geo.surface(lam, s["directions"], cfg["M"], spec, cfg["coupling"], crit, threads=cfg["threads"])
        files[f"surface_L{lam:g}.csv"] = surf.to_csv()
        rows.append({"lambda": lam, "good_fraction": surf.good_fraction, "max_deviation": surf.max_deviation()})
        surfs.append(surf)
    summary = {"surfaces": rows}
    devs = [r["max_deviation"] for r in rows]
    if len(rows) > 1 and all(np.isfinite(devs)) and min(devs) > 0:
        summary["deviation_slope"] = geo.loglog_slope(s["lambdas"], devs)

    def plot(ax):
        for surf in surfs:
            a = surf.accepted
            ax.semilogy(surf.angles[a, 0], np.abs(surf.deviation[a]) + 1e-300, ".", ms=2, label=f"lambda={surf.lambda_target:g}")
        ax.set_xlabel("phi")
        ax.set_ylabel("|kappa - sqrt(lambda)|")
        ax.legend()

    return summary, files, [("surface.png", plot)]


def run_project(cfg, spec):
    p = cfg["project"]
    d = spec.d
    kc = np.asarray(p["k_c"], dtype=float)
    grid = XGrid.around(p["N"], p["L"], d, carrier=kc)
    F = GaussianPacket(kc, p["s"], x0=grid.center)
    cells = tr.ball_cells(kc, p["window"] * F.momentum_std, grid.dk)
    table = tr.tabulate(cells, grid.dk, spec, cfg["coupling"], cfg["M"], build_criterion(cfg), cfg["threads"])
    rows = []
    for lam in p["lambda_floors"]:
        region = tr.ProjectionRegion(table, lambda_floor=lam)
        if region.size == 0:
            raise tr.EmptyRegion(f"no accepted cell with lambda >= {lam}")
        par = tr.parseval_check(F, region, grid)
        EF = tr.apply_projection(F, region, grid)
        EEF = tr.apply_projection(EF, region, grid)
        rows.append(
            {
                "lambda_floor": lam,
                "cells": region.size,
                "parseval_relerr": par["relerr"],
                "idempotence": float(EEF.distance(EF) / EF.norm()),
                "free_discrepancy": float(tr.compare_free_projection(F, region, grid)),
                "max_u_sup": float(region.table.u_sup.max()),
            }
        )
    keys = list(rows[0])
    csv = ",".join(keys) + "\n" + "".join(",".join(repr(r[k]) for k in keys) + "\n" for r in rows)

    def plot(ax):
        ax.semilogy([r["lambda_floor"] for r in rows], [r["free_discrepancy"] for r in rows], "o-")
        ax.set_xlabel("lambda floor")
        ax.set_ylabel("||E F - free projection|| / ||F||")

    return {"regions": rows}, {"projection.csv": csv}, [("projection.png", plot)]


def run_transport(cfg, spec):
    p, g, t = cfg["packet"], cfg["grid"], cfg["transport"]
    d = spec.d
    kc = np.asarray(p["k_c"], dtype=float)
    grid = XGrid.around(g["N"], g["L"], d, carrier=kc)
    prof = GaussianPacket(kc, p["s"], x0=np.asarray(p["x0"], dtype=float))
    wspec = dyn.WavePacketSpec(
        prof, p["delta"], spec, cfg["coupling"], M=cfg["M"], criterion=build_criterion(cfg), window=p["window"], cutoff=p["cutoff"]
    )
    exp = dyn.expand(wspec, grid.dk, threads=cfg["threads"])
    T_grid = dyn.geometric_T_grid(t["T0"], t["Tmax"], t["ratio"])
    rec = dyn.transport(exp, grid, T_grid, co_moving=t["co_moving"], edge_tol=t["edge_tol"])
    summary = rec.summary()
    summary.update(
        {
            "beta_cesaro": rec.beta_cesaro,
            "norm0": rec.norm0,
            "group_velocity": rec.velocity.tolist(),
            "mass_outside": exp.mass_outside,
            "accepted_fraction": float(exp.table.accepted.mean()),
        }
    )
    files = {"averages.csv": rec.averages_csv(), "series.csv": rec.series_csv()}

    def plot(ax):
        ax.loglog(rec.T, rec.abel, "o-", label="Abel")
        ax.loglog(rec.T, rec.cesaro, "s-", label="Cesaro")
        ax.set_xlabel("T")
        ax.set_ylabel("<<|X|^2>>_T")
        ax.set_title(f"beta = {rec.beta:.3f}")
        ax.legend()

    return summary, files, [("moments.png", plot)]


def run_stationary(cfg, spec):
    s = cfg["stationary"]
    u = np.asarray(s["direction"], dtype=float)
    u = u / np.linalg.norm(u)
    offsets = []
    for zn in s["z_norms"]:
        z = zn * u
        disp = sp.local_dispersion(spec, cfg["coupling"], cfg["M"], z / 2, criterion=build_criterion(cfg))
        pt = sp.stationary_point(z, disp, s["lambda_star"])
        offsets.append({"z_norm": zn, "offset": pt.offset, "residual": pt.residual})
    z = s["z_norms"][0] * u
    if s["integral_coupling"] == 0:
        disp = sp.FreeDispersion()
    else:
        disp = sp.local_dispersion(spec, s["integral_coupling"], cfg["M"], z / 2, criterion=build_criterion(cfg))
    pt = sp.stationary_point(z, disp, s["lambda_star"])
    g3 = sp.gaussian_g3(pt.k0, s["g3_width"])
    rows = []
    for t in s["t"]:
        val, _ = sp.oscillatory_integral(t, pt, g3)
        rows.append(sp.StationaryRow(float(t), float(np.linalg.norm(z)), val, sp.asymptotic_leading(t, pt, g3)))
    rel = [r.relerr for r in rows]
    summary = {"offsets": offsets, "relerr": rel}
    if len(rows) > 1:
        summary["relerr_slope"] = geo.loglog_slope(s["t"], rel)

    def plot(ax):
        ax.loglog(s["t"], rel, "o-")
        ax.set_xlabel("t")
        ax.set_ylabel("relative error of the leading term")

    return summary, {"stationary.csv": sp.rows_csv(rows)}, [("stationary.png", plot)]


def run_diophantine(cfg, spec):
    s = cfg["diophantine"]
    rows = []
    for N in s["N"]:
        n, margin = diophantine_margin(spec.freq, N, s["tau"])
        rows.append({"N": N, "worst_n": list(n), "margin": margin})
    csv = "N,worst_n,margin\n" + "".join(f"{r['N']},{' '.join(map(str, r['worst_n']))},{r['margin']!r}\n" for r in rows)

    def plot(ax):
        ax.semilogy([r["N"] for r in rows], [r["margin"] for r in rows], "o-")
        ax.set_xlabel("N")
        ax.set_ylabel("min |n.omega| |n|^tau")

    return {"margins": rows, "tau": s["tau"] if s["tau"] is not None else spec.l + 1.0}, {"diophantine.csv": csv}, [("diophantine.png", plot)]


RUNNERS = {
    "scan": run_scan,
    "surface": run_surface,
    "project": run_project,
    "transport": run_transport,
    "stationary": run_stationary,
    "diophantine": run_diophantine,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "matplotlib", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _to_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_plots(out: Path, plots) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = []
    for name, fn in plots:
        fig, ax = plt.subplots(figsize=(6, 4))
        fn(ax)
        fig.tight_layout()
        fig.savefig(out / name, dpi=100)
        plt.close(fig)
        names.append(name)
    return names


def run(sub: str, config_path, out_dir, seed: int | None = None, threads: int | None = None) -> int:
    if sub not in RUNNERS:
        print(f"unknown subcommand {sub}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path, seed, threads)
        spec = build_potential(cfg)
        _check(sub, cfg, spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    manifest = {
        "subcommand": sub,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "versions": _versions(),
        "seed": cfg["potential"]["seed"],
        "threads": cfg["threads"],
    }
    t0 = time.perf_counter()
    try:
        summary, files, plots = RUNNERS[sub](cfg, spec)
    except GUARDS + (tr.EmptyRegion, sp.OutsideRegion, geo.DirectionRejected) as exc:
        manifest.update({"status": "guard", "error": f"{type(exc).__name__}: {exc}", "runtime_s": {sub: time.perf_counter() - t0}})
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(_to_json(manifest))
        print(f"numerical guard tripped: {exc}", file=sys.stderr)
        return EXIT_GUARD
    t1 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    (out / "summary.json").write_text(_to_json(summary))
    images = _write_plots(out, plots)
    manifest.update(
        {
            "status": "ok",
            "outputs": sorted(list(files) + images + ["summary.json"]),
            "runtime_s": {sub: t1 - t0, "write": time.perf_counter() - t1},
        }
    )
    (out / "manifest.json").write_text(_to_json(manifest))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="qplab", description="Quasi-periodic Schrodinger operator laboratory.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config (schema in docs/config.schema.json)")
    ap.add_argument("--out", default="qplab-out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="potential coefficient seed (overrides the config)")
    ap.add_argument("--threads", type=int, default=None, help="worker processes (default: config, then QPLAB_THREADS)")
    args = ap.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
