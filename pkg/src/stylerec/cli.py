"""``stylerec`` command line: gen, train-static, train-dynamic, eval, report.

All outputs go under ``--out`` with fixed names (see FORMATS.md). Exit codes:
0 success, 2 configuration/input error, 3 missing prerequisite, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .catalog import CatalogError, build_purchase_matrix, feature_matrix, load_catalog, load_sales, load_schema, split_sales
from .config import ConfigError, RunConfig, describe_defaults, load_config
from .dynamic_model import PreconditionError, SamplingError, load_dynamic, save_dynamic, train_dynamic
from .evaluation import (
    ProtocolError,
    UndefinedAucError,
    evaluate_model,
    format_report,
    prepare_backtest,
    read_metrics,
    write_metrics,
    write_roc,
)
from .numerics import EvaluationError
from .static_model import NumericalAbort, load_static, save_static, train_static
from .synthgen import GenerationError, generate_market, load_truth, write_market

log = logging.getLogger("stylerec")

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4

STATIC_CKPT = "static.ckpt"
DYNAMIC_CKPT = "dynamic.ckpt"
STATIC_LOG = "static_loss.tsv"
DYNAMIC_LOG = "dynamic_loss.tsv"
METRICS = "metrics.tsv"
REPORT = "report.md"


class DependencyError(RuntimeError):
    """A prerequisite file (data, checkpoint, metrics) is missing."""


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DependencyError(f"{what} not found: {path}")
    return path


def _load_market(cfg: RunConfig, need_truth=False):
    schema = load_schema(_require(cfg.data["schema"], "schema"))
    catalog = load_catalog(_require(cfg.data["catalog"], "catalog"), schema)
    sales = load_sales(_require(cfg.data["sales"], "sales"), catalog)
    truth = load_truth(_require(cfg.data["truth"], "ground truth")) if need_truth else None
    return catalog, sales, truth


def _write_loss_log(path: Path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch\ttrain_loss\tval_loss\n")
        for rec in history:
            tl = rec["train_loss"]
            fh.write(f"{rec['epoch']}\t{'nan' if math.isnan(tl) else repr(tl)}\t{rec['val_loss']!r}\n")


def cmd_gen(cfg: RunConfig, args) -> int:
    market = generate_market(cfg.gen)
    paths = write_market(cfg.out, market)
    n_sales = sum(len(s) for s in market.sales)
    print(f"wrote {len(paths)} files to {cfg.out} ({len(market.catalog)} articles, {n_sales} sales)")
    return EXIT_OK


def cmd_train_static(cfg: RunConfig, args) -> int:
    catalog, sales, _ = _load_market(cfg)
    train, _ = split_sales(sales, *cfg.window)
    customers = [s.customer for s in train]
    matrix = build_purchase_matrix(train, customers, catalog.ids)
    model = train_static(catalog, matrix, cfg.static, X=feature_matrix(catalog))
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_static(cfg.out / STATIC_CKPT, model, seed=cfg.seed)
    _write_loss_log(cfg.out / STATIC_LOG, model.history)
    print(f"static model: {model.n_params()} parameters, {len(customers)} customers -> {cfg.out / STATIC_CKPT}")
    return EXIT_OK


def cmd_train_dynamic(cfg: RunConfig, args) -> int:
    static = load_static(_require(cfg.out / STATIC_CKPT, "static checkpoint (run train-static first)"))
    catalog, sales, _ = _load_market(cfg)
    train, _ = split_sales(sales, *cfg.window)
    E = static.embed(feature_matrix(catalog))
    model = train_dynamic(catalog, train, E, cfg.dynamic)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_dynamic(cfg.out / DYNAMIC_CKPT, model)
    _write_loss_log(cfg.out / DYNAMIC_LOG, model.history)
    print(f"dynamic model: {model.params.n_params()} parameters -> {cfg.out / DYNAMIC_CKPT}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    models = args.models.split(",") if args.models else list(cfg.eval.models)
    for m in models:
        if m not in ("baseline", "static", "dynamic", "oracle"):
            raise ConfigError(f"unknown model {m!r}")
    # check every prerequisite before doing any work
    static = dynamic = None
    if "static" in models or "dynamic" in models:
        static = load_static(_require(cfg.out / STATIC_CKPT, "static checkpoint"))
    if "dynamic" in models:
        dynamic = load_dynamic(_require(cfg.out / DYNAMIC_CKPT, "dynamic checkpoint"))
    catalog, sales, truth = _load_market(cfg, need_truth="oracle" in models)
    window = cfg.window
    train, test = split_sales(sales, *window)
    E = static.embed(feature_matrix(catalog)) if static is not None else None
    bt = prepare_backtest(catalog, train, test, window)
    if not bt.customers:
        raise UndefinedAucError(f"no purchases in evaluation window [{window[0]}, {window[1]})")
    results = []
    for m in models:
        res = evaluate_model(m, catalog, test, train, window, static=static, dynamic=dynamic, E=E,
                             truth=truth, seed=cfg.seed, baseline_days=cfg.eval.baseline_days,
                             backtest=bt)
        results.append(res)
        log.info("%s: auc %.4f", m, res.curve.auc)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for res in results:
        write_roc(cfg.out / f"roc_{res.model}.tsv", res, cfg.seed)
    write_metrics(cfg.out / METRICS, results)
    print(format_report(read_metrics(cfg.out / METRICS)), end="")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    rows = read_metrics(_require(cfg.out / METRICS, "metrics (run eval first)"))
    text = format_report(rows)
    (cfg.out / REPORT).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train-static": cmd_train_static,
    "train-dynamic": cmd_train_dynamic,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run config")
    common.add_argument("--seed", help="unsigned 64-bit seed (overrides [run] seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")

    parser = argparse.ArgumentParser(prog="stylerec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--models", help="comma list of baseline,static,dynamic,oracle")
    sub.add_parser("print-config", help="show every config key with its default")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "print-config":
        print(describe_defaults(), end="")
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg, args)
    except DependencyError as exc:
        print(f"stylerec: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (NumericalAbort, EvaluationError) as exc:
        print(f"stylerec: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UndefinedAucError as exc:
        print(f"stylerec: undefined AUC: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, CatalogError, GenerationError, ProtocolError, PreconditionError,
            SamplingError) as exc:
        print(f"stylerec: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
