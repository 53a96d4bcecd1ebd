"""``statetab`` command line: run, bench-sweeps, verify, dump-table."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from ..tabular_model import TransitionTable
from . import bench, config, verify
from .run import OUTPUT_ENV, output_root, run


def cmd_run(args) -> int:
    try:
        cfg = config.load(args.config)
    except config.ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threaded:
        cfg.sweeper["mode"] = "threaded"
    out = Path(args.output_dir) / cfg.name if args.output_dir else output_root(cfg) / cfg.name
    summary = run(cfg, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    tops = bench.TOPOLOGIES if args.topology == "all" else (args.topology,)
    worst = float("inf")
    for top in tops:
        res = bench.bench_sweeps(args.transitions, top, seed=args.seed, threaded=args.threaded)
        print(res.line())
        if top == "random":
            worst = min(worst, res.rate)
    if args.min_rate is not None and worst < args.min_rate:
        print(f"FAIL backups/s below {args.min_rate:g}", file=sys.stderr)
        return 1
    return 0


def cmd_verify(args) -> int:
    try:
        results = verify.run_suite(args.suite, quick=args.quick)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return 2
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_dump_table(args) -> int:
    path = Path(args.snapshot)
    with open(path) as fh:
        first = fh.readline().split()
        fh.seek(0)
        if first and first[0] in ("Q", "V"):
            # Q/V/U snapshots are already written sorted
            sys.stdout.write(fh.read())
            return 0
        try:
            table = TransitionTable.load(fh)
        except ValueError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            return 2
    triples = list(table.triples())
    states = set(table.actions) | set(table.preds)
    pairs = len(table.n_sa)
    fan_in = Counter(len(p) for p in table.preds.values())
    print(f"# states={len(states)} pairs={pairs} distinct_transitions={len(triples)} "
          f"total_count={sum(table.n_sa.values())} max_fan_in={max(fan_in, default=0)}")
    if not args.summary:
        sys.stdout.write(table.dumps())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statetab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log schedule events and progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--output-dir", help=f"overrides ${OUTPUT_ENV} and the config's output_dir")
    r.add_argument("--seed", type=int, help="override the master seed")
    r.add_argument("--threaded", action="store_true", help="run the sweeper on its own thread")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench-sweeps", help="measure sweep throughput")
    b.add_argument("--transitions", type=int, default=10_000)
    b.add_argument("--topology", choices=bench.TOPOLOGIES + ("all",), default="random")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threaded", action="store_true")
    b.add_argument("--min-rate", type=float, help="exit 1 if the random-topology rate is lower")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(verify.SUITES) + ["all"])
    v.add_argument("--quick", action="store_true", help="fewer random cases")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-table", help="print a table or value snapshot")
    d.add_argument("snapshot")
    d.add_argument("--summary", action="store_true", help="header line only")
    d.set_defaults(func=cmd_dump_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
