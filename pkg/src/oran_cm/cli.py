"""Command-line entry point: run variants x seeds and compare them."""
from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from . import sim_engine
from .config import (
    VARIANTS,
    ConfigError,
    apply_overrides,
    default_config,
    from_dict,
    load_config,
    to_dict,
    with_variant,
)
from .sim_engine import METRICS

OUT_ENV = "ORAN_CM_OUT"
DEFAULT_OUT = "results"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

log = logging.getLogger("oran_cm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_seeds(values: Sequence[str]) -> List[int]:
    """Expand ``--seed`` values; ``a..b`` is an inclusive range."""
    seeds = []
    for raw in values:
        if ".." in raw:
            lo, hi = raw.split("..", 1)
            try:
                lo_i, hi_i = int(lo), int(hi)
            except ValueError:
                raise ConfigError(f"seed: cannot parse range {raw!r}") from None
            if hi_i < lo_i:
                raise ConfigError(f"seed: empty range {raw!r}")
            seeds.extend(range(lo_i, hi_i + 1))
        else:
            try:
                seeds.append(int(raw))
            except ValueError:
                raise ConfigError(f"seed: not an integer: {raw!r}") from None
    return list(dict.fromkeys(seeds))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oran-cm", description="Simulate MLB/MRO xApps with and without conflict mitigation.")
    p.add_argument("--config", metavar="PATH", help="scenario JSON (defaults are used when omitted)")
    p.add_argument("--variant", action="append", choices=sorted(VARIANTS),
                   help="variant to run; repeatable (default: all three)")
    p.add_argument("--seed", action="append", metavar="N",
                   help="seed or inclusive range a..b; repeatable (default: the config seed)")
    p.add_argument("--duration", type=float, metavar="SECONDS", help="override the simulated duration")
    p.add_argument("--out", metavar="DIR", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                   help="override a configuration key, e.g. radio.shadowing_sigma=4; repeatable")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="runs executed in parallel")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def _run_one(task):
    variant, seed, config_dict, out_dir = task
    config = from_dict(config_dict)
    result = sim_engine.run(config)
    write_artifacts(result, variant, Path(out_dir) / variant / str(seed))
    return variant, seed, result.summary


def write_artifacts(result, variant: str, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "summary.json": sim_engine.summary_json(result, variant),
        "trace.csv": sim_engine.trace_csv(result.trace),
        "verdicts.jsonl": sim_engine.verdicts_jsonl(result.verdicts),
        "events.csv": sim_engine.events_csv(result.events),
    }
    for name, text in files.items():
        (directory / name).write_text(text)


def aggregate(results: dict, variants: Sequence[str]) -> dict:
    """Mean and sample standard deviation per variant and metric over seeds.

    ``results`` maps ``(variant, seed)`` to MetricsSummary. The standard
    deviation is None when a variant has a single seed.
    """
    table = {"variants": [v for v in variants if any(k[0] == v for k in results)], "metrics": {}}
    base = table["variants"][0] if table["variants"] else None
    for metric in METRICS:
        row = {}
        for v in table["variants"]:
            seeds = sorted(s for (vv, s) in results if vv == v)
            values = [getattr(results[(v, s)], metric) for s in seeds]
            mean = statistics.fmean(values)
            if all(isinstance(x, int) for x in values) and len(values) == 1:
                mean = values[0]
            row[v] = {
                "seeds": seeds,
                "values": values,
                "mean": mean,
                "stddev": statistics.stdev(values) if len(values) > 1 else None,
            }
        for v in table["variants"]:
            row[v]["delta"] = row[v]["mean"] - row[base]["mean"]
        table["metrics"][metric] = row
    table["baseline"] = base
    return table


def format_table(table: dict) -> str:
    variants = table["variants"]
    cells = {}
    for metric, row in table["metrics"].items():
        for v in variants:
            e = row[v]
            txt = f"{e['mean']:.2f}" if isinstance(e["mean"], float) else str(e["mean"])
            if e["stddev"] is not None:
                txt += f" ± {e['stddev']:.2f}"
            if v != table["baseline"]:
                txt += f" ({e['delta']:+.2f})"
            cells[(metric, v)] = txt
    width = max([len(t) for t in cells.values()] + [len(v) for v in variants]) + 2
    head = f"{'metric':<24}" + "".join(f"{v:>{width}}" for v in variants)
    lines = [head, "-" * len(head)]
    for metric in table["metrics"]:
        lines.append(f"{metric:<24}" + "".join(f"{cells[(metric, v)]:>{width}}" for v in variants))
    return "\n".join(lines) + "\n"


def write_comparison(table: dict, out: Path) -> str:
    out.mkdir(parents=True, exist_ok=True)
    text = format_table(table)
    (out / "comparison.txt").write_text(text)
    (out / "comparison.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return text


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("oran-cm: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        base = load_config(args.config) if args.config else default_config()
        base = apply_overrides(base, args.overrides)
        if args.duration is not None:
            base = apply_overrides(base, [f"duration={json.dumps(args.duration)}"])
        seeds = parse_seeds(args.seed) if args.seed else [base.seed]
        variants = list(dict.fromkeys(args.variant or ["off", "prio-mlb", "prio-mro"]))
        tasks = []
        for v in variants:
            for s in seeds:
                cfg = with_variant(apply_overrides(base, [f"seed={s}"]), v)
                tasks.append((v, s, to_dict(cfg), None))
    except ConfigError as err:
        print(f"oran-cm: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    tasks = [(v, s, c, str(out)) for v, s, c, _ in tasks]
    results = {}
    failure = None
    try:
        if args.jobs == 1:
            for task in tasks:
                log.info("running %s seed %s", task[0], task[1])
                v, s, summary = _run_one(task)
                results[(v, s)] = summary
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for v, s, summary in pool.map(_run_one, tasks):
                    log.info("finished %s seed %s", v, s)
                    results[(v, s)] = summary
    except Exception as exc:  # any run failure ends the batch
        failure = exc

    if results:
        text = write_comparison(aggregate(results, variants), out)
        if not args.quiet:
            sys.stdout.write(text)
    if failure is not None:
        print(f"oran-cm: run failed: {failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _entry()
