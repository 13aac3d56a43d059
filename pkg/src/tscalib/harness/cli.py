"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. ``TSCALIB_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..core import DataError, NumericError, QuantileLevels, UndefinedMetricError, load_series_csv, write_series_csv
from ..metrics import read_records_csv, write_records_csv
from ..rollout import STRATEGIES
from ..synthgen import SYNTH_KINDS, SynthSpec, generate, generate_suite, pacf, write_features_csv
from .backtest import run_backtest, score_external, write_rejects_csv
from .config import OUT_ENV, ConfigError, ExperimentConfig, apply_overrides, load_config
from .report import emit_report

log = logging.getLogger("tscalib")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _levels(text: str) -> QuantileLevels:
    try:
        return QuantileLevels.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "results")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--levels", type=_levels, help="comma-separated quantile levels")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    p.add_argument("--strategy", choices=("native",) + STRATEGIES)
    p.add_argument("--patch", type=int)
    p.add_argument("--n-traj", type=int, dest="n_traj")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tscalib", description="Calibration backtests for probabilistic forecasts")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset as CSV")
    p.add_argument("--kind", choices=SYNTH_KINDS, default="ar1")
    p.add_argument("--length", type=int, default=4367)
    p.add_argument("--split", type=int, default=1440)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--df", type=float, default=3.0)
    p.add_argument("--n-series", type=int, default=1, dest="n_series")
    p.add_argument("--name", default="")
    _common(p)

    p = sub.add_parser("backtest", help="run an experiment config")
    _common(p)

    p = sub.add_parser("score", help="score an external forecast file against truth")
    p.add_argument("--forecasts", required=True, help="JSON-lines forecast file")
    p.add_argument("--truth", required=True, help="series CSV with id,value columns")
    p.add_argument("--model", default="external")
    p.add_argument("--dataset", default="")
    _common(p)

    p = sub.add_parser("report", help="aggregate record CSVs into a report")
    p.add_argument("records", nargs="+", help="record CSV files")
    p.add_argument("--pooling", choices=("pooled", "window_mean"), default="pooled")
    _common(p)

    p = sub.add_parser("diag", help="diagnostics")
    dsub = p.add_subparsers(dest="diag", required=True, parser_class=_Parser)
    q = dsub.add_parser("pacf", help="partial autocorrelations of a series")
    q.add_argument("--input", help="series CSV (default: generated ar1 series)")
    q.add_argument("--series", help="series id within the CSV")
    q.add_argument("--max-lag", type=int, default=20, dest="max_lag")
    _common(q)
    return parser


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(
        cfg,
        seed=args.seed,
        horizon=args.horizon,
        stride=args.stride,
        levels=args.levels,
        out=args.out,
        strategy=args.strategy,
        patch=args.patch,
        n_traj=args.n_traj,
        workers=args.workers,
    )


def cmd_synth(args) -> int:
    cfg = _experiment(args)
    spec = SynthSpec(
        kind=args.kind, length=args.length, split=args.split, alpha=args.alpha, df=args.df,
        seed=cfg.seed, series_id=args.name or args.kind,
    )
    data = [generate(spec)] if args.n_series == 1 else generate_suite(spec, args.n_series)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{spec.name}.csv"
    write_series_csv(path, [d.series for d in data])
    for d in data:
        if d.features is not None:
            write_features_csv(out / f"{d.series.id}_features.csv", d.features)
    print(path)
    return EXIT_OK


def cmd_backtest(args) -> int:
    if not args.config:
        raise ConfigError("backtest needs --config")
    res = run_backtest(_experiment(args))
    print(res.paths["report_txt"].read_text(encoding="utf-8"), end="")
    if res.rejects:
        log.warning("%d forecast records rejected, see %s", len(res.rejects), res.paths["rejects"])
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _experiment(args)
    truth = load_series_csv(args.truth)
    records, rejects = score_external(args.forecasts, truth, cfg, args.model, args.dataset)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    write_rejects_csv(out / "rejects.csv", rejects)
    if not records:
        raise DataError(f"no forecast record could be scored ({len(rejects)} rejected)")
    write_records_csv(out / "records.csv", records)
    paths = emit_report(records, out, pooling=cfg.pooling)
    print(paths["report_txt"].read_text(encoding="utf-8"), end="")
    n_rep = sum(r.repaired for r in records)
    print(f"scored {len(records)} records, rejected {len(rejects)}, repaired crossings in {n_rep}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = []
    for path in args.records:
        if not Path(path).exists():
            raise DataError(f"no such records file: {path}")
        records.extend(read_records_csv(path))
    if not records:
        raise DataError("record files are empty")
    paths = emit_report(records, _out_dir(args), pooling=args.pooling)
    print(paths["report_txt"].read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_pacf(args) -> int:
    if args.input:
        series = load_series_csv(args.input)
        if args.series:
            series = [s for s in series if s.id == args.series]
            if not series:
                raise DataError(f"series {args.series!r} not found in {args.input}")
    else:
        seed = args.seed if args.seed is not None else 0
        series = [generate(SynthSpec(kind="ar1", seed=seed)).series]
    for s in series:
        vals = pacf(s, args.max_lag)
        bound = 2 / len(s) ** 0.5
        print(f"# {s.id}  n={len(s)}  band=±{bound:.4f}")
        for k, v in enumerate(vals, start=1):
            print(f"{k:4d}  {v: .6f}{'  *' if abs(v) >= bound else ''}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "backtest": cmd_backtest, "score": cmd_score, "report": cmd_report, "diag": cmd_pacf}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as e:
        print(f"tscalib: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"tscalib: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, UndefinedMetricError, FloatingPointError) as e:
        print(f"tscalib: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
