"""Command line interface: ``kdebalance {partition,compare,test,simulate}``.

Options may also come from a TOML config file (``--config``). Top-level keys
apply to every subcommand, a table named after the subcommand applies to it
alone, and command-line flags override both. Keys are the long option names
with dashes replaced by underscores, e.g. ``acceptance_prob = 0.05``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical or solver
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .baselines import RerandomizeConfig, rerandomize_detail, randomize
from .criterion import balance_report
from .data import (
    align_ids,
    read_assignment,
    read_column,
    read_covariates,
    write_csv,
    write_json,
)
from .errors import DataError, KDEBalanceError
from .harness import METHODS, MODEL_KINDS, StudyConfig, compare, external_model, gen_coefficients, gen_covariates, run_study
from .inference import Design, bootstrap_test, random_design
from .kernel_gram import gram_from_covariates
from .solvers import AnnealConfig, SolverConfig, default_sizes, kde_partition

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("kdebalance")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


COMMON_DEFAULTS = {
    "seed": 0,
    "threads": None,
    "output_dir": ".",
    "log_level": "WARNING",
    "record_timings": False,
}

DEFAULTS = {
    "partition": {
        "input": None,
        "groups": 2,
        "sizes": None,
        "method": "kde",
        "mode": "auto",
        "exact_limit": 24,
        "chains": 4,
        "iters": None,
        "t_initial": None,
        "cooling": 0.995,
        "restarts": 2,
        "acceptance_prob": 0.01,
        "max_draws": 1_000_000,
    },
    "compare": {
        "input": None,
        "n": 40,
        "d": 2,
        "model": "quadratic",
        "response": None,
        "response_column": None,
        "m": 200,
        "methods": ",".join(METHODS),
        "acceptance_prob": 0.01,
    },
    "test": {
        "input": None,
        "responses": None,
        "response_column": None,
        "design": None,
        "T": 200,
        "full_budget": False,
    },
    "simulate": {
        "model": "quadratic",
        "n": "20,40,60,80,100",
        "m": 1000,
        "methods": ",".join(METHODS),
        "d": 2,
        "input": None,
        "response_column": None,
        "acceptance_prob": 0.01,
        "anneal_iters_per_unit": 500,
    },
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    p.add_argument("--output-dir", dest="output_dir", help="directory for output files (default .)")
    p.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument(
        "--record-timings", dest="record_timings", action="store_const", const=True,
        help="store wall-clock timings in reports (makes outputs non-reproducible)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kdebalance", description="Covariate balancing by KDE-based partitioning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("partition", help="partition units into balanced groups")
    p.add_argument("--input", help="covariate CSV (header row, optional leading id column)")
    p.add_argument("--groups", type=int, help="number of groups L (default 2)")
    p.add_argument("--sizes", help="comma-separated group sizes (default: near-equal split)")
    p.add_argument("--method", choices=["kde", "random", "rerandom"])
    p.add_argument("--mode", choices=["auto", "exact", "anneal"], help="KDE solver (default auto)")
    p.add_argument("--exact-limit", dest="exact_limit", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int, help="annealing proposals per run (default 50 N)")
    p.add_argument("--t-initial", dest="t_initial", type=float)
    p.add_argument("--cooling", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--acceptance-prob", dest="acceptance_prob", type=float)
    p.add_argument("--max-draws", dest="max_draws", type=int)
    _common(p)

    p = sub.add_parser("compare", help="single-N comparison of partition methods")
    p.add_argument("--input", help="covariate CSV; omit to simulate standard normal covariates")
    p.add_argument("--n", type=int, help="units to simulate when --input is absent")
    p.add_argument("--d", type=int, help="covariates to simulate when --input is absent")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--response", help="observed response CSV for --model external")
    p.add_argument("--response-column", dest="response_column")
    p.add_argument("--m", type=int, help="designs per method")
    p.add_argument("--methods", help="comma-separated subset of random,rerandom,kde")
    p.add_argument("--acceptance-prob", dest="acceptance_prob", type=float)
    _common(p)

    p = sub.add_parser("test", help="bootstrap test of the sharp null hypothesis")
    p.add_argument("--input", help="covariate CSV")
    p.add_argument("--responses", help="response CSV")
    p.add_argument("--response-column", dest="response_column")
    p.add_argument("--design", help="design CSV with columns id, group, level")
    p.add_argument("--T", dest="T", type=int, help="bootstrap replicates (default 200)")
    p.add_argument("--full-budget", dest="full_budget", action="store_const", const=True)
    _common(p)

    p = sub.add_parser("simulate", help="MSE study over a grid of sample sizes")
    p.add_argument("--model", help="comma-separated model kinds")
    p.add_argument("--n", help="comma-separated even sample sizes")
    p.add_argument("--m", type=int, help="designs per method and N")
    p.add_argument("--methods", help="comma-separated subset of random,rerandom,kde")
    p.add_argument("--d", type=int)
    p.add_argument("--input", help="data CSV for --model external (covariates plus response)")
    p.add_argument("--response-column", dest="response_column")
    p.add_argument("--acceptance-prob", dest="acceptance_prob", type=float)
    p.add_argument("--anneal-iters-per-unit", dest="anneal_iters_per_unit", type=int)
    _common(p)
    return parser


def _load_config(path: str | None, command: str) -> dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{p}: {exc}") from None
    merged = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    merged.update(raw.get(command, {}))
    allowed = set(COMMON_DEFAULTS) | set(DEFAULTS[command])
    unknown = sorted(set(merged) - allowed)
    if unknown:
        raise UsageError(f"{p}: unknown key(s) for {command}: {', '.join(unknown)}")
    return merged


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    command = args.command
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS[command])
    cfg.update(_load_config(args.config, command))
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


def _int_list(text, what: str) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what}: expected comma-separated integers, got {text!r}") from None


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _require_file(cfg, key):
    if cfg.get(key) is not None and not Path(cfg[key]).is_file():
        raise DataError(f"--{key.replace('_', '-')}: file not found: {cfg[key]}")


def _meta(cfg) -> dict[str, Any]:
    # the output directory is left out so reruns elsewhere stay byte-identical
    config = {k: v for k, v in cfg.items() if k != "output_dir"}
    return {"tool": "kdebalance", "version": __version__, "seed": cfg["seed"], "config": config}


def _sort_config(cfg):
    return {k: cfg[k] for k in sorted(cfg)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_partition(cfg) -> str:
    _require(cfg, "input")
    _require_file(cfg, "input")
    cov = read_covariates(cfg["input"])
    N, L = cov.n_units, int(cfg["groups"])
    sizes = default_sizes(N, L) if cfg["sizes"] is None else np.array(_int_list(cfg["sizes"], "sizes"))
    if sizes.size != L:
        raise DataError(f"--sizes lists {sizes.size} groups but --groups is {L}")
    seed = int(cfg["seed"])
    flags = []
    t0 = time.perf_counter()
    gram = gram_from_covariates(cov, L)
    t_gram = time.perf_counter() - t0
    method = cfg["method"]
    if method == "kde":
        solver = SolverConfig(
            mode=cfg["mode"],
            seed=seed,
            exact_limit=int(cfg["exact_limit"]),
            threads=int(cfg["threads"]),
            anneal=AnnealConfig(
                chains=int(cfg["chains"]),
                iters_per_chain=cfg["iters"],
                t_initial=cfg["t_initial"],
                cooling=float(cfg["cooling"]),
                restarts=int(cfg["restarts"]),
            ),
        )
        part = kde_partition(gram, sizes, L, solver)
    elif method == "random":
        part = randomize(N, sizes, seed)
    else:
        res = rerandomize_detail(
            cov, sizes, RerandomizeConfig(float(cfg["acceptance_prob"]), int(cfg["max_draws"]), seed)
        )
        part = res.partition
        if res.exhausted:
            flags.append("rerandomization_max_draws_exhausted")
    t_solve = time.perf_counter() - t0 - t_gram
    timings = {"gram": t_gram, "solve": t_solve} if cfg["record_timings"] else None
    report = balance_report(cov, gram, part, method, seed=seed, timings=timings, flags=flags)

    out = Path(cfg["output_dir"])
    meta = _meta(cfg)
    write_csv(out / "partition.csv", ["id", "group"], zip(cov.unit_ids, part.g.tolist()), meta=meta)
    write_json(out / "report.json", {**report.to_dict(), "meta": meta})
    design = random_design(part, np.random.SeedSequence([seed, 1]))
    write_csv(
        out / "design.csv", ["id", "group", "level"],
        zip(cov.unit_ids, part.g.tolist(), design.x.tolist()), meta=meta,
    )
    sizes_txt = "/".join(str(s) for s in part.group_sizes)
    return (
        f"partition: method={method} N={N} L={L} sizes={sizes_txt} B_H={report.b_value:.6g}\n"
        f"wrote {out / 'partition.csv'}, {out / 'design.csv'} and {out / 'report.json'}"
    )


def cmd_compare(cfg) -> str:
    _require_file(cfg, "input")
    _require_file(cfg, "response")
    seed = int(cfg["seed"])
    if cfg["input"] is not None:
        cov = read_covariates(cfg["input"])
    else:
        cov = gen_covariates(int(cfg["n"]), int(cfg["d"]), seed)
    if cfg["model"] == "external":
        _require(cfg, "response")
        ids, h = read_column(cfg["response"], cfg["response_column"])
        h = h[align_ids(cov.unit_ids, ids, cfg["response"])] if ids is not None else h
        if h.size != cov.n_units:
            raise DataError(f"{cfg['response']}: {h.size} responses for {cov.n_units} units")
        model = external_model(h)
    else:
        model = gen_coefficients(cfg["model"], seed, d=cov.n_covariates)
    methods = _str_list(cfg["methods"])
    result = compare(cov, model, int(cfg["m"]), seed, methods, float(cfg["acceptance_prob"]))
    out = Path(cfg["output_dir"])
    write_json(out / "compare.json", {"methods": result, "model": _model_dict(model), "meta": _meta(cfg)})
    lines = [f"compare: N={cov.n_units} model={model.label} m={cfg['m']}"]
    for meth, r in result.items():
        lines.append(f"  {meth:9s} mse={r['mse']:.6g} B_H={r['report']['b_value']:.6g}")
    lines.append(f"wrote {out / 'compare.json'}")
    return "\n".join(lines)


def cmd_test(cfg) -> str:
    _require(cfg, "input", "responses", "design")
    for key in ("input", "responses", "design"):
        _require_file(cfg, key)
    cov = read_covariates(cfg["input"])
    ids, y = read_column(cfg["responses"], cfg["response_column"])
    y = y[align_ids(cov.unit_ids, ids, cfg["responses"])]
    d_ids, group, level = read_assignment(cfg["design"])
    if level is None:
        raise DataError(f"{cfg['design']}: missing column 'level'")
    perm = align_ids(cov.unit_ids, d_ids, cfg["design"])
    design = Design.from_levels(group[perm], level[perm])
    res = bootstrap_test(
        cov, y, design, int(cfg["T"]), int(cfg["seed"]),
        full_budget=bool(cfg["full_budget"]), threads=int(cfg["threads"]),
    )
    out = Path(cfg["output_dir"])
    write_json(out / "test_result.json", {**res.to_dict(), "meta": _meta(cfg)})
    return (
        f"test: alpha_hat={res.alpha_hat:.6g} p={res.p_value:.6g} (T={res.T})\n"
        f"wrote {out / 'test_result.json'}"
    )


def _model_dict(model) -> dict[str, Any]:
    coeffs = {k: np.asarray(v).tolist() for k, v in model.coeffs.items()}
    return {"kind": model.kind, "label": model.label, "alpha": model.alpha, "sigma": model.sigma, "coeffs": coeffs}


def cmd_simulate(cfg) -> str:
    _require_file(cfg, "input")
    seed = int(cfg["seed"])
    kinds = _str_list(cfg["model"])
    for k in kinds:
        if k not in MODEL_KINDS:
            raise UsageError(f"--model: unknown kind {k!r}; choose from {', '.join(MODEL_KINDS)}")
    cov = None
    if "external" in kinds:
        _require(cfg, "input", "response_column")
        cov = read_covariates(cfg["input"], exclude=[cfg["response_column"]])
        _, h = read_column(cfg["input"], cfg["response_column"])
    d = cov.n_covariates if cov is not None else int(cfg["d"])
    models = []
    for j, k in enumerate(kinds):
        models.append(external_model(h) if k == "external" else gen_coefficients(k, [seed, j], d=d))
    study = StudyConfig(
        _int_list(cfg["n"], "n"), int(cfg["m"]), _str_list(cfg["methods"]), seed, d,
        acceptance_prob=float(cfg["acceptance_prob"]),
        anneal_iters_per_unit=int(cfg["anneal_iters_per_unit"]),
    )
    report = run_study(study, models, cov=cov)
    out = Path(cfg["output_dir"])
    meta = _meta(cfg)
    write_csv(out / "alpha_hat_long.csv", ["model", "method", "N", "replicate", "alpha_hat"], report.records, meta=meta)
    keys = list(report.aggregate[0])
    write_csv(out / "aggregate.csv", keys, ([row[k] for k in keys] for row in report.aggregate), meta=meta)
    write_json(
        out / "aggregate.json",
        {"aggregate": report.aggregate, "models": [_model_dict(m) for m in models], "meta": meta},
    )
    lines = ["simulate: mean squared error of the difference-in-mean estimate"]
    for row in report.aggregate:
        lines.append(f"  {row['model']:10s} {row['method']:9s} N={row['N']:<4d} mse={row['mse']:.6g}")
    lines.append(f"wrote {out / 'alpha_hat_long.csv'}, {out / 'aggregate.csv'}, {out / 'aggregate.json'}")
    return "\n".join(lines)


COMMANDS = {"partition": cmd_partition, "compare": cmd_compare, "test": cmd_test, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        cfg = _sort_config(resolve(args))
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        out = Path(cfg["output_dir"])
        if out.exists() and not out.is_dir():
            raise DataError(f"--output-dir: {out} is not a directory")
        summary = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KDEBalanceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
