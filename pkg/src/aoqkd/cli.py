"""Command-line entry point: ``aoqkd <experiment> [--config PATH] [--seed N] ...``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ConfigError, RunConfig, from_dict, load, validate
from .experiments import (make_grid, run_coupling, run_fried, run_qkd, run_screens, run_tomography,
                          run_zernike_stats, under_sampled)
from .turbulence import wind_for_greenwood
from .zernike import zernike_name

log = logging.getLogger("aoqkd")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _num(x):
    return repr(float(x))


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_summary(out: Path, cfg: RunConfig, results: dict):
    doc = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "results": results,
        "version": __version__,
    }
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- commands --------------------------------------------------------------

def cmd_coupling(cfg: RunConfig, out: Path) -> dict:
    runs = run_coupling(cfg)
    rows = []
    per_seed = []
    for run in runs:
        for s in run.samples:
            rows.append([run.seed_index, s.t, s.residual, s.coupling, int(s.ao_on)])
        off, on = run.means()
        per_seed.append({"seed_index": run.seed_index, "mean_off": off, "mean_on": on})
    write_csv(out / "coupling.csv", ["seed_index", "t", "residual_rad", "coupling", "ao_on"], rows)
    offs = [p["mean_off"] for p in per_seed if math.isfinite(p["mean_off"])]
    ons = [p["mean_on"] for p in per_seed if math.isfinite(p["mean_on"])]
    wind = wind_for_greenwood(cfg.turbulence.greenwood, cfg.r0) if math.isfinite(cfg.r0) else 0.0
    return {
        "mean_coupling_off": float(np.mean(offs)) if offs else math.nan,
        "mean_coupling_on": float(np.mean(ons)) if ons else math.nan,
        "per_seed": per_seed,
        "greenwood_hz": cfg.turbulence.greenwood,
        "wind_m_per_s": wind,
        "under_sampled": under_sampled(cfg),
        "grid_n": cfg.coupling.grid_n,
    }


def cmd_tomography(cfg: RunConfig, out: Path) -> dict:
    results = run_tomography(cfg)
    rows, summary = [], []
    for r in results:
        tag = f"{r.condition}_ao-{'on' if r.ao else 'off'}"
        r.chi.to_csv(out / f"chi_{tag}.csv")
        r.chi.to_json(out / f"chi_{tag}.json", condition=r.condition, ao=r.ao, fidelity=r.fidelity)
        write_csv(out / f"table_{tag}.csv", ["alpha", "m", "beta", "n", "p"],
                  [[a, m, b, n, float(v)] for (a, m, b, n), v in np.ndenumerate(r.table)])
        rows.append([r.condition, int(r.ao), r.fidelity, r.fidelity_stderr])
        summary.append({"condition": r.condition, "ao": r.ao, "fidelity": r.fidelity,
                        "fidelity_stderr": r.fidelity_stderr})
    write_csv(out / "fidelity.csv", ["condition", "ao_on", "fidelity", "stderr"], rows)
    return {"d": cfg.tomography.d, "averaged": cfg.tomography.averaged, "conditions": summary}


def cmd_qkd(cfg: RunConfig, out: Path) -> dict:
    res = run_qkd(cfg)
    by = {(r.d, r.ao): r for r in res.reports}
    rows, table = [], []
    for d in sorted(cfg.qkd.dims):
        off, on = by[(d, False)], by[(d, True)]
        for b_off, b_on in zip(off.bases, on.bases):
            rows.append([d, b_off.basis, b_off.qder, b_off.stderr, b_on.qder, b_on.stderr, off.threshold,
                         int(b_off.secure), int(b_on.secure), b_off.key_rate, b_on.key_rate])
            table.append({"d": d, "basis": b_off.basis, "qder_off": b_off.qder, "qder_on": b_on.qder,
                          "stderr_off": b_off.stderr, "stderr_on": b_on.stderr, "boundary": off.threshold,
                          "secure_off": b_off.secure, "secure_on": b_on.secure})
    write_csv(out / "qder.csv",
              ["dimension", "basis", "qder_off", "stderr_off", "qder_on", "stderr_on", "boundary",
               "secure_off", "secure_on", "key_rate_off", "key_rate_on"], rows)
    for (d, b, ao), c in sorted(res.matrices.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        c.to_csv(out / f"crosstalk_d{d}_{b}_ao-{'on' if ao else 'off'}.csv")
    avg = [{"d": r.d, "ao": r.ao, "qder": r.qder, "secure": r.secure, "average_secure": r.average_secure,
            "key_rate": r.key_rate} for r in res.reports]
    return {"trials": cfg.trials, "rows": table, "reports": avg}


def cmd_zernike_stats(cfg: RunConfig, out: Path) -> dict:
    stats = run_zernike_stats(cfg)
    rows, summary = [], []
    for s in stats:
        for j, sig in enumerate(s.sigma, start=1):
            tgt = float(s.target[j - 1]) if s.target is not None else math.nan
            rows.append([s.setting, float(s.d_over_r0), j, zernike_name(j), float(sig), tgt])
        summary.append({"setting": s.setting, "d_over_r0": s.d_over_r0, "sigma": [float(v) for v in s.sigma]})
    write_csv(out / "zernike_sigma.csv", ["setting", "d_over_r0", "index", "name", "sigma", "target"], rows)
    return {"source": cfg.zernike.source, "trials": cfg.trials, "settings": summary}


def cmd_fried(cfg: RunConfig, out: Path) -> dict:
    res = run_fried(cfg)
    write_csv(out / "fried_centroids.csv", ["frame", "dx_m", "dy_m"],
              [[k, float(x), float(y)] for k, (x, y) in enumerate(res.centroids)])
    d = cfg.beam_diameter
    return {
        "frames": len(res.centroids),
        "cell_length_m": res.cell_length,
        "r0_configured_m": res.r0_configured,
        "r0_estimated_m": res.r0_estimated,
        "d_over_r0_configured": d / res.r0_configured,
        "d_over_r0_estimated": res.d_over_r0(d),
        "beam_diameter_m": d,
    }


def cmd_gen_screens(cfg: RunConfig, out: Path) -> dict:
    saved = []
    if cfg.screens.save:
        (out / "screens").mkdir(exist_ok=True)

    def sink(r0, k, screen):
        name = f"screens/screen_r0-{r0:.4g}_{k:04d}.aoqf"
        screen.save(out / name)
        saved.append(name)

    stats = run_screens(cfg, sink)
    grid = make_grid(cfg)
    rows, summary = [], []
    for s in stats:
        for lag, m, t in zip(s.lags, s.measured, s.theory):
            rows.append([float(s.r0), int(lag), float(lag * grid.pitch), float(m), float(t), float(m / t)])
        mid = s.lags >= 4
        summary.append({"r0": s.r0, "max_rel_error_mid": float(np.max(np.abs(s.measured[mid] / s.theory[mid] - 1)))})
    write_csv(out / "structure.csv", ["r0_m", "lag_px", "r_m", "measured_rad2", "theory_rad2", "ratio"], rows)
    return {"trials": cfg.trials, "structure": summary, "saved": saved}


COMMANDS = {
    "coupling": cmd_coupling,
    "tomography": cmd_tomography,
    "qkd": cmd_qkd,
    "zernike-stats": cmd_zernike_stats,
    "fried": cmd_fried,
    "gen-screens": cmd_gen_screens,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aoqkd", description="OAM QKD through turbulence with adaptive optics")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--trials", type=int, help="trial count (overrides the config)")
    common.add_argument("--threads", type=int, help="worker processes (overrides the config)")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    return p


def resolve(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    cfg = dataclasses.replace(cfg, experiment=args.command)
    for name, attr in (("seed", "seed"), ("trials", "trials"), ("threads", "threads")):
        v = getattr(args, name)
        if v is not None:
            cfg = dataclasses.replace(cfg, **{attr: v})
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output=str(args.out))
    return validate(from_dict(cfg.to_dict()))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"aoqkd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(cfg.to_yaml())
        return 0
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        results = COMMANDS[cfg.experiment](cfg, out)
        write_summary(out, cfg, results)
    except Exception as exc:  # noqa: BLE001 - report any failure with its category
        print(f"aoqkd: runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
