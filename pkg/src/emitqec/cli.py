"""Command-line batch runner.

    emitqec protocols   protocol sweep (alpha, alpha_base x alpha_distil, T, ES sets, p)
    emitqec table       superoperator table export
    emitqec qec         logical error rates over a p x d grid
    emitqec fit         threshold fit of a qec CSV
    emitqec pipeline    tables, qec grid and fit (optionally a cut-off scan)
    emitqec oracle      closed-form success rates and fidelities next to the simulation
"""
from __future__ import annotations

import argparse
import itertools
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import qec, threshold
from .noise import hardware_set
from .protocols import BRANCHES, CLOSED_FORM, run_elementary, run_protocol, closed_form_oracle
from .rng import stream
from .runio import (
    ConfigError,
    RunConfig,
    load_config,
    provenance,
    read_csv,
    write_csv,
    write_json,
)
from .superop import build_table, export_table, import_table

log = logging.getLogger("emitqec")


def point_seed(master: int, *keys: int) -> int:
    """Counter-derived 63-bit seed for one sweep point."""
    state = np.random.SeedSequence([master, *keys]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _evaluate(cfg: RunConfig, hw, timing, index: int):
    if cfg.protocol in BRANCHES:
        return run_elementary(cfg.protocol, hw, timing, same_detector=cfg.same_detector)
    return run_protocol(cfg.protocol, hw, timing, rng=stream(cfg.seed, "protocol", index))


def _base_row(cfg: RunConfig) -> dict:
    return {
        "protocol": cfg.protocol,
        "pnr": cfg.pnr,
        "same_detector": cfg.same_detector,
        "seed": cfg.seed,
        **provenance(),
    }


# protocols


def sweep_points(cfg: RunConfig):
    """(hardware, timing) for every point of the protocol sweep, in a fixed order."""
    es_list = cfg.es_sets or [None]
    T_list = cfg.T or [None]
    if cfg.alpha_base or cfg.alpha_distil:
        alphas = [
            {"alpha_base": ab, "alpha_distil": ad}
            for ab, ad in itertools.product(cfg.alpha_base or cfg.alpha, cfg.alpha_distil or cfg.alpha)
        ]
    else:
        alphas = [{"alpha": a} for a in cfg.alpha]
    for es, T, a, p in itertools.product(es_list, T_list, alphas, cfg.p):
        hw = cfg.hardware if es is None else hardware_set(es, pnr=cfg.pnr, alpha=cfg.alpha[0])
        hw = hw.with_(**a).with_p(p)
        timing = cfg.timing if T is None else cfg.timing.with_(T_link=T, T_idle=T)
        yield hw, timing


def run_protocol_sweep(cfg: RunConfig, threads: int = 1) -> list:
    points = list(sweep_points(cfg))

    def job(item):
        i, (hw, timing) = item
        res = _evaluate(cfg, hw, timing, i)
        return {
            **_base_row(cfg),
            "es": hw.name,
            "alpha": hw.alpha,
            "alpha_base": hw.base_alpha,
            "alpha_distil": hw.distil_alpha,
            "p": hw.p_g,
            "T_link": timing.T_link,
            "eta_ph": hw.eta_ph,
            "mu_i": hw.mu_i,
            "f_prep": hw.f_prep,
            "p_de": hw.p_de,
            "P_succ": res.success_prob,
            "F_GHZ": res.fidelity,
            "index": i,
        }

    with ThreadPoolExecutor(max(threads, 1)) as ex:
        return list(ex.map(job, enumerate(points)))


# tables and qec grid


def make_table(cfg: RunConfig, p: float, index: int = 0):
    hw = cfg.hardware.with_p(p)
    res = _evaluate(cfg, hw, cfg.timing, index)
    return build_table(res, hw, cfg.timing, x=cfg.cutoff, seed=point_seed(cfg.seed, 1, index))


def run_qec_grid(cfg: RunConfig, threads: int = 1, tables: dict | None = None) -> list:
    rows = []
    for i, p in enumerate(cfg.p):
        table = tables[p] if tables and p in tables else make_table(cfg, p, i)
        for d in cfg.d:
            seed = point_seed(cfg.seed, 2, i, d)
            t0 = time.perf_counter()
            fails = qec.failure_flags(qec.QECConfig(d, table), cfg.n_shots, seed, threads).any(axis=1)
            n_fail = int(fails.sum())
            p_l = n_fail / cfg.n_shots
            rows.append({
                "p": p,
                "d": d,
                "n_shots": cfg.n_shots,
                "failures": n_fail,
                "p_L": p_l,
                "sigma": float(np.sqrt(p_l * (1 - p_l) / cfg.n_shots)),
                **_base_row(cfg),
                "es": cfg.hardware.name,
                "alpha": cfg.alpha[0],
                "cutoff": cfg.cutoff,
                "T_link": cfg.timing.T_link,
                "point_seed": seed,
                "ghz_fidelity": table.metadata.get("ghz_fidelity"),
                "ghz_success_prob": table.metadata.get("ghz_success_prob"),
                "seconds": round(time.perf_counter() - t0, 3),
            })
            log.info("p=%g d=%d p_L=%.4g", p, d, p_l)
    return rows


def points_from_rows(rows) -> list:
    return [threshold.DataPoint.from_failures(float(r["p"]), int(r["d"]), int(r["failures"]), int(r["n_shots"]))
            for r in rows]


def fit_rows(rows) -> dict:
    try:
        fr = threshold.fit_threshold(points_from_rows(rows))
    except threshold.FitError as exc:
        return {"error": str(exc), "last": None if exc.last is None else list(map(float, exc.last))}
    return fr.to_dict()


def run_pipeline(cfg: RunConfig, threads: int = 1) -> dict:
    if len(cfg.d) < 3:
        raise ConfigError("the pipeline needs at least three distances")
    if cfg.cutoff_scan:
        def evaluate(x):
            return points_from_rows(run_qec_grid(replace(cfg, cutoff=x), threads))

        scan = threshold.optimize_cutoff(evaluate, (min(cfg.cutoff_scan), max(cfg.cutoff_scan)),
                                         budget=max(3, len(cfg.cutoff_scan)))
        if scan.optimum is None:
            return {"config": cfg.to_dict(), "scan": scan.to_dict(), "threshold": None}
        cfg = replace(cfg, cutoff=scan.optimum)
    else:
        scan = None
    rows = run_qec_grid(cfg, threads)
    report = {"config": cfg.to_dict(), "rows": rows, "fit": fit_rows(rows), **provenance()}
    if scan is not None:
        report["scan"] = scan.to_dict()
    return report


def oracle_rows(alphas, cfg: RunConfig) -> list:
    rows = []
    for name, pnr, a in itertools.product(CLOSED_FORM, (True, False), alphas):
        P, F = closed_form_oracle(name, a, pnr)
        hw = replace(cfg.hardware, pnr=pnr, alpha=a)
        bunching = cfg.same_detector and pnr and name in ("dc_ghz", "dc_w")
        # the closed forms assume no decoherence
        res = run_elementary(name, hw, cfg.timing.with_(T_link=math.inf, T_idle=math.inf), same_detector=bunching)
        rows.append({"protocol": name, "pnr": pnr, "alpha": a, "P_oracle": P, "F_oracle": F,
                     "P_sim": res.success_prob, "F_sim": res.fidelity})
    return rows


# argument handling


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--shots", type=int, dest="n_shots")
    common.add_argument("--pnr", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--bunching", action="store_true", default=None, dest="same_detector",
                        help="also herald same-detector two-photon patterns (PNR only)")
    common.add_argument("--protocol")
    common.add_argument("--es", help="hardware parameter set, e.g. ES-2")
    common.add_argument("--p", help="physical error rates, list or linspace(a, b, n)")
    common.add_argument("--d", help="code distances")
    common.add_argument("--alpha", help="bright-state parameters")
    common.add_argument("--cutoff", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="emitqec", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("protocols", "table", "qec", "pipeline", "oracle"):
        sub.add_parser(name, parents=[common])
    fit = sub.add_parser("fit", parents=[common])
    fit.add_argument("csv", type=Path, help="qec CSV to fit")
    return ap


def config_from_args(args) -> RunConfig:
    from .runio import _floats, _ints

    over = {
        "seed": args.seed,
        "n_shots": args.n_shots,
        "pnr": args.pnr,
        "same_detector": args.same_detector,
        "protocol": args.protocol,
        "cutoff": args.cutoff,
        "p": _floats(args.p) if args.p else None,
        "d": _ints(args.d) if args.d else None,
        "alpha": _floats(args.alpha) if args.alpha else None,
        "out": str(args.out) if args.out else None,
    }
    if args.config:
        cfg = load_config(args.config, **over)
    else:
        cfg = RunConfig(**{k: v for k, v in over.items() if v is not None})
    if args.es:
        cfg = replace(cfg, hardware=hardware_set(args.es))
    if cfg.same_detector and not cfg.pnr:
        raise ConfigError("--bunching needs photon-number-resolving detectors")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        out = Path(cfg.out)
        if args.command == "protocols":
            path = write_csv(out / "protocols.csv", "protocols", run_protocol_sweep(cfg, args.threads))
        elif args.command == "table":
            for i, p in enumerate(cfg.p):
                path = out / f"table_p{p:g}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                export_table(make_table(cfg, p, i), path)
        elif args.command == "qec":
            path = write_csv(out / "qec.csv", "qec", run_qec_grid(cfg, args.threads))
        elif args.command == "fit":
            path = write_json(out / "fit.json", fit_rows(read_csv(args.csv, "qec")))
        elif args.command == "pipeline":
            report = run_pipeline(cfg, args.threads)
            if "rows" in report:
                write_csv(out / "qec.csv", "qec", report.pop("rows"))
            path = write_json(out / "pipeline.json", report)
        else:
            path = write_csv(out / "oracle.csv", "oracle", oracle_rows(cfg.alpha, cfg))
    except (ValueError, OSError) as exc:
        print(f"emitqec: error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


__all__ = ["main", "run_protocol_sweep", "run_qec_grid", "run_pipeline", "import_table", "point_seed"]

if __name__ == "__main__":
    sys.exit(main())
