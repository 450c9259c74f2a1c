"""Command-line interface: ``mre-recon <command> [--config ...] [--out ...]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import deterministic_reconstruct, nodal_direct_inversion
from .config import METHODS, ConfigError, RunConfig, load_config
from .fem import assemble_system, top_axial_load
from .forward import (NoiseModel, delta_to_snr, load_displacement_csv, save_displacement_csv,
                      simulate)
from .inverse import fixed_point_solve
from .mesh import (TriMesh, assign_phantom, build_mesh, element_adjacency, load_field_csv,
                   save_field_csv)
from .metrics import CNR_FORMULA, RMS_FORMULA, RegionMasks, cnr, rms_error
from .render import line_chart, render_field

log = logging.getLogger("mre_recon")

SWEEP_COLUMNS = ["delta", "snr_db", "seed", "method", "regularizer", "lambda_reg", "rms", "cnr",
                 "outer_iters", "wall_time_s", "status"]


class UsageError(Exception):
    pass


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input file: {path}")
    return path


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "version": __version__,
            "sign": cfg.material.sign}


# -- pipeline pieces shared by commands and sweep ---------------------------

def make_phantom(cfg: RunConfig):
    mesh = build_mesh(cfg.phantom)
    return mesh, assign_phantom(mesh, cfg.phantom)


def run_method(method: str, cfg: RunConfig, system, graph, u_m, f, sigma_n, sigma_w,
               lambda_reg: float | None = None):
    """Dispatch one reconstruction; returns a ``ReconstructionResult``."""
    lam = cfg.lambda_for(method) if lambda_reg is None else float(lambda_reg)
    if method == "proposed":
        solver = replace(cfg.solver, lambda_reg=lam, regularizer="tv")
        cov_w = max(float(sigma_w), 1e-3 * float(np.max(np.abs(f)))) ** 2
        return fixed_point_solve(system, graph, u_m, f, cov_w, np.asarray(sigma_n) ** 2, solver)
    if method in ("baseline-tv", "baseline-ws"):
        return deterministic_reconstruct(system, graph, u_m, f, method.split("-")[1], lam, cfg.solver)
    raise UsageError(f"method {method!r} does not produce an element field")


# -- commands -----------------------------------------------------------------

def cmd_phantom(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    mesh, E = make_phantom(cfg)
    mesh.save(out / "mesh.json")
    save_field_csv(E, out / "E_true.csv", header="E_true")
    render_field(mesh, E, out / "E_true", title="E_true")
    _write_json(out / "phantom.json", {**_stamp(cfg), "phantom": asdict(cfg.phantom),
                                       "material": asdict(cfg.material),
                                       "n_nodes": mesh.n_nodes, "n_elements": mesh.n_elements})
    log.info("phantom: %d nodes, %d elements -> %s", mesh.n_nodes, mesh.n_elements, out)
    return 0


def cmd_simulate(cfg: RunConfig, out: Path):
    mesh = TriMesh.load(_require(out / "mesh.json"))
    E = load_field_csv(_require(out / "E_true.csv"))
    system = assemble_system(mesh, E, cfg.material)
    meas = simulate(system, top_axial_load(mesh, cfg.load_amplitude), cfg.noise)
    save_displacement_csv(meas.u, out / "u_clean.csv")
    save_displacement_csv(meas.u_m, out / "u_meas.csv")
    save_displacement_csv(meas.f, out / "f_clean.csv")
    save_displacement_csv(meas.f_m, out / "f_meas.csv")
    meta = {**_stamp(cfg), "noise": asdict(cfg.noise), "noise_seed": cfg.noise.seed,
            "delta_target": cfg.noise.delta, "delta_realized": meas.realized_delta,
            "sigma_n": meas.sigma_n[:2].tolist(), "sigma_w": meas.sigma_w}
    _write_json(out / "simulate.json", meta)
    log.info("simulate: realized noise level %.4g", meas.realized_delta)
    return 0


def _load_simulation(out: Path):
    mesh = TriMesh.load(_require(out / "mesh.json"))
    u_m = load_displacement_csv(_require(out / "u_meas.csv"))
    f_m = load_displacement_csv(_require(out / "f_meas.csv"))
    meta = json.loads(_require(out / "simulate.json").read_text())
    return mesh, u_m, f_m, meta


def cmd_reconstruct(cfg: RunConfig, out: Path, method: str | None = None):
    method = method or cfg.method
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    mesh, u_m, f_m, meta = _load_simulation(out)
    if method == "nodal":
        res = nodal_direct_inversion(mesh, u_m, cfg.material)
        mu = res.mu_field(mesh.n_nodes) / cfg.material.modulus_unit
        lines = ["node_id,mu,lambda_plus_mu,rank"]
        for k, n in enumerate(res.nodes):
            lines.append(f"{n},{res.mu[k] / cfg.material.modulus_unit!r},"
                         f"{res.lambda_plus_mu[k] / cfg.material.modulus_unit!r},{res.rank[k]}")
        (out / "nodal_mu.csv").write_text("\n".join(lines) + "\n")
        corner = mu[mesh.elements]
        known = np.isfinite(corner)
        per_elem = np.where(known, corner, 0.0).sum(axis=1) / np.maximum(known.sum(axis=1), 1)
        render_field(mesh, per_elem, out / "nodal_mu", title="mu (nodal)")
        _write_json(out / "nodal.json", {**_stamp(cfg), "method": "nodal", "noise_seed": meta.get("noise_seed"),
                                         "valid_nodes": int(res.valid.sum()), "interior_nodes": len(res.nodes)})
        return 0
    graph = element_adjacency(mesh)
    system = assemble_system(mesh, None, cfg.material)
    sigma_n = np.tile(np.asarray(meta["sigma_n"], dtype=float), mesh.n_nodes)
    result = run_method(method, cfg, system, graph, u_m, f_m, sigma_n, meta["sigma_w"])
    result.metadata.update({**_stamp(cfg), "noise_seed": meta.get("noise_seed")})
    e_true_path = out / "E_true.csv"
    if e_true_path.exists():
        E_true = load_field_csv(e_true_path)
        result.metadata["rms"] = rms_error(result.E_hat, E_true)
    result.save(out, stem=f"result_{method}")
    render_field(mesh, result.E_hat, out / f"E_hat_{method}", title=f"E_hat ({method})")
    log.info("reconstruct[%s]: converged=%s after %d outer iterations",
             method, result.converged, result.outer_iters)
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path):
    mesh = TriMesh.load(_require(out / "mesh.json"))
    E_true = load_field_csv(_require(out / "E_true.csv"))
    masks = RegionMasks.from_phantom(mesh, cfg.phantom)
    rows = {}
    for path in sorted(out.glob("result_*.csv")):
        E_hat = load_field_csv(path)
        rows[path.stem.removeprefix("result_")] = {"rms": rms_error(E_hat, E_true),
                                                    "cnr": cnr(E_hat, masks)}
    if not rows:
        raise FileNotFoundError(f"no result_*.csv files in {out}")
    _write_json(out / "metrics.json", {**_stamp(cfg), "rms_formula": RMS_FORMULA,
                                       "cnr_formula": CNR_FORMULA, "methods": rows})
    for name, m in rows.items():
        print(f"{name}: rms={m['rms']:.4f} cnr={m['cnr']:.4f}")
    return 0


# -- sweep --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else repr(v))
    return str(v)


def sweep_cell(cfg: RunConfig, delta: float, seed: int, methods) -> list[dict]:
    """One noise realization reconstructed by every requested method."""
    mesh, E_true = make_phantom(cfg)
    masks = RegionMasks.from_phantom(mesh, cfg.phantom)
    graph = element_adjacency(mesh)
    system = assemble_system(mesh, E_true, cfg.material)
    noise = replace(cfg.noise, delta=delta, sigma_n=None, seed=seed)
    meas = simulate(system, top_axial_load(mesh, cfg.load_amplitude), noise)
    rows = []
    for method in methods:
        grid = cfg.sweep.lambda_grid.get(method) or [cfg.lambda_for(method)]
        best = None
        t0 = time.perf_counter()
        try:
            for lam in grid:
                res = run_method(method, cfg, system, graph, meas.u_m, meas.f_m,
                                 meas.sigma_n, meas.sigma_w, lam)
                r = rms_error(res.E_hat, E_true)
                if best is None or r < best[0]:
                    best = (r, float(lam), res)
            r, lam, res = best
            row = {"rms": r, "cnr": cnr(res.E_hat, masks), "lambda_reg": lam,
                   "outer_iters": res.outer_iters, "status": "ok"}
        except Exception as exc:  # a failed cell must not stop the sweep
            log.warning("sweep cell delta=%g seed=%d %s failed: %s", delta, seed, method, exc)
            row = {"rms": float("nan"), "cnr": float("nan"), "lambda_reg": float("nan"),
                   "outer_iters": 0, "status": f"failed: {type(exc).__name__}"}
        wall = time.perf_counter() - t0
        rows.append({"delta": delta, "snr_db": delta_to_snr(delta) if delta > 0 else float("inf"),
                     "seed": seed, "method": method,
                     "regularizer": "ws" if method.endswith("ws") else "tv",
                     "wall_time_s": round(wall, 3) if cfg.sweep.record_wall_time else "", **row})
    return rows


def _sweep_task(args):
    cfg, delta, seed = args
    return sweep_cell(cfg, delta, seed, cfg.sweep.methods)


def sweep_csv(cfg: RunConfig, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# mre-recon sweep config_hash={cfg.digest()} seed={cfg.seed}\n")
    buf.write(f"# {RMS_FORMULA}\n# {CNR_FORMULA}\n")
    grids = {m: cfg.sweep.lambda_grid.get(m) or [cfg.lambda_for(m)] for m in cfg.sweep.methods}
    buf.write(f"# lambda search grid: {json.dumps(grids, sort_keys=True)}\n")
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in SWEEP_COLUMNS})
    return buf.getvalue()


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int = 1):
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, d, cfg.seed + s) for d in cfg.sweep.deltas for s in cfg.sweep.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    else:
        chunks = [_sweep_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    (out / "sweep.csv").write_text(sweep_csv(cfg, rows))

    deltas = list(cfg.sweep.deltas)
    for metric in ("rms", "cnr"):
        series = {}
        for method in cfg.sweep.methods:
            vals = []
            for d in deltas:
                v = [r[metric] for r in rows if r["method"] == method and r["delta"] == d
                     and r["status"] == "ok" and math.isfinite(r[metric])]
                vals.append(float(np.mean(v)) if v else float("nan"))
            series[method] = vals
        line_chart(out / f"sweep_{metric}.png", [100 * d for d in deltas], series,
                   title=f"{metric.upper()} vs noise level", xlabel="noise level [%]",
                   ylabel=metric)
    failed = sum(r["status"] != "ok" for r in rows)
    log.info("sweep: %d rows (%d failed) -> %s", len(rows), failed, out / "sweep.csv")
    return 0


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--out", type=Path, default=Path("mre_out"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="base RNG seed (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mre-recon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="build mesh and ground-truth modulus")
    sub.add_parser("simulate", parents=[common], help="forward-solve and add noise")
    rec = sub.add_parser("reconstruct", parents=[common], help="estimate the modulus field")
    rec.add_argument("--method", choices=METHODS, default=None)
    sub.add_parser("evaluate", parents=[common], help="RMS and CNR of stored results")
    sub.add_parser("sweep", parents=[common], help="noise-level sweep over methods and seeds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        out = args.out
        if args.command == "phantom":
            return cmd_phantom(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out, args.method)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        return cmd_sweep(cfg, out, args.jobs)
    except (ConfigError, UsageError) as exc:
        print(f"mre-recon: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"mre-recon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
