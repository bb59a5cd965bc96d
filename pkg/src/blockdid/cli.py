"""Command-line pipelines from a panel CSV to sets and plot data.

Subcommands: ``validate``, ``estimate``, ``vcov``, ``biasmap``, ``sets``,
``byperiod``, ``simulate``, ``compare``.  Set results are JSON, tabular and
plot data are CSV, and every output embeds the config hash and library
version.  Failures exit nonzero after printing a machine-readable error
record ``{"error": {"code": ..., "message": ...}}``.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass

from . import __version__
from .biasmap import build_w_csnyt, build_w_imputation, invert, write_biasmap_csv
from .estimators import aggregate, estimate, write_coefficients_csv, write_vcov_csv
from .inference import (
    GridSpec,
    aggregated_att_target,
    aggregated_system,
    by_period_sets,
    by_period_target,
    confidence_set,
    corrected_point,
    default_grid,
    overall_att_target,
    plugin_identified_set,
)
from .panel import build_cell_index, build_layout, load_panel
from .restrictions import map_to_delta_space, rm_cohort, rm_global, sd
from .simgen import gen_example1, gen_example2, gen_toy
from .vcov import BootstrapSpec, bootstrap_vcov

__all__ = ["RunConfig", "run", "main"]


@dataclass(frozen=True)
class RunConfig:
    """One resolved CLI invocation."""

    command: str
    input: str = None
    out: str = None
    estimator: str = "imputation"
    family: str = "rm-cohort"
    params: tuple = (0.0,)
    alpha: float = 0.05
    bootstrap: int = 1000
    seed: int = 0
    grid: tuple = None  # (lo, hi, n)
    framework: str = "cohort"
    target: str = "att"
    workers: int = 1
    example: str = None
    sizes: tuple = (4, 4, 4)
    noise_variance: float = 2.0
    inverse: bool = False
    kappa: float = None
    draws: int = 10_000

    def hash(self):
        payload = asdict(self)
        payload.pop("out", None)  # the destination does not shape the results
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_sweep(text):
    """``lo:hi:step`` inclusive sweep, or a single value; values must be
    nonnegative and ascending."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        if step <= 0 or hi < lo or lo < 0:
            raise ValueError(f"bad sweep {text!r}")
        n = int(round((hi - lo) / step)) + 1
        return tuple(lo + i * step for i in range(n))
    value = float(text)
    if value < 0:
        raise ValueError(f"sensitivity parameter must be nonnegative, got {text!r}")
    return (value,)


def _parse_grid(text):
    lo, hi, n = text.split(":")
    return (float(lo), float(hi), int(n))


def _meta_line(config):
    return f"# config_hash={config.hash()} version={__version__}\n"


def _build_parser():
    p = argparse.ArgumentParser(
        prog="blockdid",
        description="cohort-anchored robust inference for staggered panels",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", required=True, help="panel CSV path")
        sp.add_argument("--out", help="output path")
        sp.add_argument(
            "--estimator", choices=["imputation", "csnyt"], default="imputation"
        )
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("validate", help="check a panel file")
    sp.add_argument("--input", required=True)

    sp = sub.add_parser("estimate", help="coefficients CSV")
    common(sp)

    sp = sub.add_parser("vcov", help="bootstrap covariance CSV")
    common(sp)
    sp.add_argument("--bootstrap", type=int, default=1000)
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("biasmap", help="export the bias map as CSV")
    sp.add_argument("action", nargs="?", default="export", choices=["export"])
    common(sp)
    sp.add_argument("--inverse", action="store_true")

    for name in ("sets", "byperiod", "compare"):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument(
            "--family", choices=["rm-global", "rm-cohort", "sd"], default="rm-cohort"
        )
        sp.add_argument("--param", default="0", help="value or lo:hi:step sweep")
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--bootstrap", type=int, default=1000)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--grid", help="lo:hi:n")
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--draws", type=int, default=10_000)
        sp.add_argument(
            "--framework",
            choices=["cohort", "aggregated", "both"],
            default="cohort" if name != "compare" else "both",
        )
        sp.add_argument("--target", default="att", help="att or period:<s>")

    sp = sub.add_parser("simulate", help="write a simulated panel + truth sidecar")
    sp.add_argument("--example", choices=["1", "2", "toy"], required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sizes", default="4,4,4", help="toy sizes N5,N7,Nnever")
    sp.add_argument("--noise-variance", type=float, default=2.0)
    return p


def _config_from_args(args):
    kw = {"command": args.command}
    for field in (
        "input", "out", "estimator", "alpha", "bootstrap", "seed", "framework",
        "target", "workers", "example", "noise_variance", "inverse", "kappa",
        "draws",
    ):
        if hasattr(args, field.replace("-", "_")):
            kw[field] = getattr(args, field.replace("-", "_"))
    if getattr(args, "param", None) is not None:
        kw["params"] = _parse_sweep(args.param)
    if getattr(args, "grid", None):
        kw["grid"] = _parse_grid(args.grid)
    if getattr(args, "sizes", None):
        kw["sizes"] = tuple(int(x) for x in args.sizes.split(","))
    return RunConfig(**kw)


def _w_builder(estimator):
    return build_w_imputation if estimator == "imputation" else build_w_csnyt


def _family_builder(kind):
    return {"rm-global": rm_global, "rm-cohort": rm_cohort, "sd": sd}[kind]


def _cohort_target(config, layout, cells):
    if config.target == "att":
        return overall_att_target(layout, cells)
    if config.target.startswith("period:"):
        return by_period_target(layout, cells, int(config.target.split(":")[1]))
    raise ValueError(f"bad target {config.target!r}")


def _grid_spec(config, coeffs, family, target):
    if config.grid is not None:
        lo, hi, n = config.grid
        return GridSpec(lo=lo, hi=hi, n=n)
    return default_grid(coeffs, family, target)


def _cohort_records(config, panel):
    layout = build_layout(panel)
    coeffs = bootstrap_vcov(
        panel,
        BootstrapSpec(config.bootstrap, config.seed, config.estimator),
        workers=config.workers,
    )
    cells = coeffs.cells
    bias_map = invert(_w_builder(config.estimator)(layout, cells))
    target = _cohort_target(config, layout, cells)
    build = _family_builder(config.family)

    families = {
        p: map_to_delta_space(build(layout, cells, p), bias_map)
        for p in config.params
    }
    grid = _grid_spec(config, coeffs, families[max(config.params)], target)
    records = []
    for p in config.params:
        t0 = time.perf_counter()
        fam = families[p]
        plug = plugin_identified_set(coeffs, fam, target)
        cset = confidence_set(
            coeffs, fam, target, alpha=config.alpha, grid=grid,
            kappa=config.kappa, draws=config.draws, seed=config.seed,
        )
        records.append(
            {
                "framework": "cohort",
                "target": config.target,
                "family": config.family,
                "parameter": p,
                "alpha": config.alpha,
                "grid": {"lo": grid.lo, "hi": grid.hi, "n": grid.n},
                "intervals": [list(iv) for iv in cset.intervals],
                "plugin_bounds": [plug.lo, plug.hi],
                "corrected_point": corrected_point(
                    coeffs, config.family, bias_map, target
                ),
                "member_count": fam.member_count,
                "runtime_ms": round(1000 * (time.perf_counter() - t0), 3),
            }
        )
    return records, (layout, coeffs, bias_map, target)


def _aggregated_records(config, panel):
    layout = build_layout(panel)
    coeffs = bootstrap_vcov(
        panel,
        BootstrapSpec(config.bootstrap, config.seed, config.estimator),
        workers=config.workers,
    )
    agg = aggregate(coeffs, layout)
    agg_layout, agg_cells, agg_coeffs, agg_map = aggregated_system(agg)
    if config.target == "att":
        target = aggregated_att_target(agg, agg_cells)
    else:
        target = by_period_target(
            agg_layout, agg_cells, int(config.target.split(":")[1])
        )
    build = _family_builder(config.family)
    families = {
        p: map_to_delta_space(build(agg_layout, agg_cells, p), agg_map)
        for p in config.params
    }
    grid = _grid_spec(config, agg_coeffs, families[max(config.params)], target)
    records = []
    for p in config.params:
        t0 = time.perf_counter()
        fam = families[p]
        plug = plugin_identified_set(agg_coeffs, fam, target)
        cset = confidence_set(
            agg_coeffs, fam, target, alpha=config.alpha, grid=grid,
            kappa=config.kappa, draws=config.draws, seed=config.seed,
        )
        records.append(
            {
                "framework": "aggregated",
                "target": config.target,
                "family": config.family,
                "parameter": p,
                "alpha": config.alpha,
                "grid": {"lo": grid.lo, "hi": grid.hi, "n": grid.n},
                "intervals": [list(iv) for iv in cset.intervals],
                "plugin_bounds": [plug.lo, plug.hi],
                "corrected_point": corrected_point(
                    agg_coeffs, config.family, agg_map, target
                ),
                "member_count": fam.member_count,
                "runtime_ms": round(1000 * (time.perf_counter() - t0), 3),
            }
        )
    return records


def _write_json(path, payload, config):
    payload = {
        "config_hash": config.hash(),
        "version": __version__,
        **payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(config: RunConfig) -> int:
    if config.command == "validate":
        load_panel(config.input)
        print("ok")
        return 0

    if config.command == "simulate":
        if config.example == "1":
            sim = gen_example1(config.seed, config.noise_variance)
        elif config.example == "2":
            sim = gen_example2(config.seed, config.noise_variance)
        else:
            sim = gen_toy(config.seed, config.sizes, noise_sd=1.0)
        panel = sim.panel
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(config))
            fh.write("unit,time,outcome,cohort\n")
            for i, unit in enumerate(panel.units):
                t_g = panel.adoption[i]
                label = "never" if t_g is None else str(panel.time_label(t_g))
                for t in range(1, panel.n_periods + 1):
                    fh.write(
                        f"{unit},{panel.time_label(t)},"
                        f"{float(panel.outcome[i, t - 1])!r},{label}\n"
                    )
        sidecar = {
            "true_att": sim.effect,
            "violations": [
                {"cohort": t, "kind": v.kind, "amplitude": v.amplitude}
                for (t, _), v in zip(
                    sim.spec.cohorts,
                    sim.spec.violations or [None] * len(sim.spec.cohorts),
                )
                if v is not None
            ],
            "seed": config.seed,
        }
        _write_json(config.out + ".json", sidecar, config)
        return 0

    panel = load_panel(config.input)

    if config.command == "estimate":
        coeffs = estimate(panel, config.estimator)
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(config))
            write_coefficients_csv(coeffs, fh, time_labels=panel.time_labels)
        return 0

    if config.command == "vcov":
        coeffs = bootstrap_vcov(
            panel,
            BootstrapSpec(config.bootstrap, config.seed, config.estimator),
            workers=config.workers,
        )
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(config))
            write_vcov_csv(coeffs, fh)
        return 0

    if config.command == "biasmap":
        layout = build_layout(panel)
        cells = build_cell_index(layout, panel.n_periods, config.estimator)
        bias_map = invert(_w_builder(config.estimator)(layout, cells))
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(config))
            write_biasmap_csv(bias_map, fh, inverse=config.inverse)
        return 0

    if config.command == "sets":
        records = []
        if config.framework in ("cohort", "both"):
            recs, _ = _cohort_records(config, panel)
            records.extend(recs)
        if config.framework in ("aggregated", "both"):
            records.extend(_aggregated_records(config, panel))
        _write_json(config.out, {"results": records}, config)
        return 0

    if config.command == "byperiod":
        if len(config.params) != 1:
            raise ValueError("byperiod expects a single --param value")
        layout = build_layout(panel)
        coeffs = bootstrap_vcov(
            panel,
            BootstrapSpec(config.bootstrap, config.seed, config.estimator),
            workers=config.workers,
        )
        if config.framework == "aggregated":
            agg = aggregate(coeffs, layout)
            layout, _, coeffs, bias_map = aggregated_system(agg)
        else:
            bias_map = invert(_w_builder(config.estimator)(layout, coeffs.cells))
        cells = coeffs.cells
        fam = map_to_delta_space(
            _family_builder(config.family)(layout, cells, config.params[0]), bias_map
        )
        grid = None
        if config.grid is not None:
            lo, hi, n = config.grid
            grid = GridSpec(lo=lo, hi=hi, n=n)
        results = by_period_sets(
            coeffs, fam, bias_map, layout, alpha=config.alpha, grid=grid,
            kappa=config.kappa, draws=config.draws, seed=config.seed,
        )
        payload = {
            "framework": config.framework,
            "family": config.family,
            "parameter": config.params[0],
            "alpha": config.alpha,
            "periods": {
                str(s): {
                    "intervals": [list(iv) for iv in r.confidence.intervals],
                    "corrected_point": r.corrected,
                    "corrected_se": r.corrected_se,
                }
                for s, r in results.items()
            },
        }
        _write_json(config.out, payload, config)
        return 0

    if config.command == "compare":
        records = []
        if config.framework in ("cohort", "both"):
            recs, _ = _cohort_records(config, panel)
            records.extend(recs)
        if config.framework in ("aggregated", "both"):
            records.extend(_aggregated_records(config, panel))
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(_meta_line(config))
            fh.write("parameter,framework,bound,lo,hi\n")
            for r in records:
                fh.write(
                    f"{r['parameter']},{r['framework']},plugin,"
                    f"{float(r['plugin_bounds'][0])!r},{float(r['plugin_bounds'][1])!r}\n"
                )
                ivs = r["intervals"]
                lo = repr(float(ivs[0][0])) if ivs else ""
                hi = repr(float(ivs[-1][1])) if ivs else ""
                fh.write(
                    f"{r['parameter']},{r['framework']},confidence,{lo},{hi}\n"
                )
        return 0

    raise ValueError(f"unknown command {config.command!r}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        return run(config)
    except Exception as exc:  # surface stable error codes for scripting
        code = getattr(exc, "code", exc.__class__.__name__.upper())
        print(json.dumps({"error": {"code": code, "message": str(exc)}}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
