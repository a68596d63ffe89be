"""Command-line front end for stream analysis, placement, and simulation.

Subcommands: synth, convert, stats, place, simulate, report.  Exit codes:
0 on success, 2 on configuration errors, 3 on data errors.  Flags can be
preloaded from a TOML config file whose tables are named after the
subcommands; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import ingest, placement, simcore
from .l2s import LatencyScorer, RateModel
from .tan import build_graph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _load_config(path: str | None, section: str) -> dict:
    if not path:
        return {}
    with open(path, "rb") as f:
        data = tomllib.load(f)
    table = data.get(section, {})
    if not isinstance(table, dict):
        raise ingest.ConfigInvalid(f"config section [{section}] must be a table")
    return table


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = ingest.SynthConfig(
        n=args.n,
        coinbase_fraction=args.coinbase_fraction,
        indeg_exponent=args.indeg_exponent,
        indeg_cap=args.indeg_cap,
        outdeg_exponent=args.outdeg_exponent,
        outdeg_cap=args.outdeg_cap,
        community_ring=args.community_ring,
        mix_rate=args.mix_rate,
        revive_rate=args.revive_rate,
        conflict_fraction=args.conflict_fraction,
        rng_seed=args.seed,
    )
    result = ingest.generate_synthetic(cfg)
    ingest.write_stream(args.out, result.records)
    if result.conflict_pairs:
        side = Path(args.out).with_suffix(Path(args.out).suffix + ".conflicts.csv")
        with open(side, "w", encoding="ascii", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["first_tx", "double_spender_tx"])
            writer.writerows(result.conflict_pairs)
        print(f"wrote {side}")
    print(f"wrote {args.out} ({len(result.records)} txs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------

def cmd_convert(args: argparse.Namespace) -> int:
    summary = ingest.convert_external(args.input, args.out, args.map)
    print(
        f"converted {summary.tx_count} txs "
        f"(dangling inputs: {summary.dangling_inputs}, "
        f"zero-io txs: {summary.zero_io_txs})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(args: argparse.Namespace) -> int:
    graph = build_graph(ingest.parse_stream(args.stream))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    hist = graph.degree_histogram()
    degrees = sorted(set(hist.in_degree) | set(hist.out_degree))
    with open(outdir / "degree_histogram.csv", "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["degree", "in_count", "out_count"])
        for d in degrees:
            writer.writerow([d, hist.in_degree.get(d, 0), hist.out_degree.get(d, 0)])
    with open(outdir / "avg_degree.csv", "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["window_index", "mean_in_degree"])
        if len(graph):
            for idx, mean in graph.avg_degree_series(args.window):
                writer.writerow([idx, repr(mean)])
    print(f"wrote stats for {len(graph)} txs to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# place
# ---------------------------------------------------------------------------

def _build_offline_strategy(args: argparse.Namespace, n_total: int) -> placement.BaseStrategy:
    capacity_n = args.capacity_n if args.capacity_n else n_total
    cfg = placement.StrategyConfig(
        kind=args.strategy,
        k=args.k,
        epsilon=args.epsilon,
        fitness_weight=args.fitness_weight,
        capacity_n=capacity_n,
        alpha=args.alpha,
        l2s_literal=args.strict_paper_l2s,
    )
    partition = None
    if args.strategy == "imported":
        if not args.partition:
            raise ingest.ConfigInvalid("--partition is required for the imported strategy")
        partition = placement.read_metis_partition(args.partition)
    scorer = None
    if args.strategy == "optchain":
        model = (
            RateModel.from_json(args.rates)
            if args.rates
            else RateModel.uniform(args.k, lambda_c=5.0, lambda_v=1.0)
        )
        scorer = LatencyScorer(model, literal_self_convolution=args.strict_paper_l2s)
    return placement.build_strategy(cfg, partition=partition, scorer=scorer)


def cmd_place(args: argparse.Namespace) -> int:
    records = ingest.load_stream(args.stream)
    strategy = _build_offline_strategy(args, len(records))
    start = 0
    if args.warm_partition:
        if not args.warm_prefix:
            raise ingest.ConfigInvalid("--warm-prefix is required with --warm-partition")
        partition = placement.read_metis_partition(args.warm_partition)
        placement.warm_start(strategy, records[: args.warm_prefix], partition)
        start = args.warm_prefix
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    decisions = placement.run_stream(strategy, records[start:])
    placement.write_decision_log(str(outdir / "decisions.csv"), decisions)
    summary = strategy.stats.report()
    summary["strategy"] = args.strategy
    summary["k"] = args.k
    summary["cap_overflow_events"] = strategy.cap_overflow_events
    summary["warm_prefix"] = start
    with open(outdir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    print(
        f"{args.strategy} k={args.k}: cross fraction "
        f"{summary['fraction']:.4f} over {summary['total']} txs"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cell_name(k: int, rate: float, strategy: str) -> str:
    rate_txt = f"{rate:g}"
    return f"k{k}_rate{rate_txt}_{strategy}"


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.stream:
        records = ingest.load_stream(args.stream)
    elif args.synth_n:
        result = ingest.generate_synthetic(
            ingest.SynthConfig(n=args.synth_n, rng_seed=args.seed)
        )
        records = result.records
    else:
        raise ingest.ConfigInvalid("either --stream or --synth-n is required")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for k in args.k:
        for rate in args.rate:
            for strat in args.strategy:
                cell = outdir / _cell_name(k, rate, strat)
                metrics_path = cell / "metrics.json"
                if metrics_path.exists():
                    print(f"skip {cell.name} (already complete)")
                    continue
                cell.mkdir(parents=True, exist_ok=True)
                cfg = simcore.SimConfig(
                    k=k,
                    tx_rate=rate,
                    block_capacity=args.block_capacity,
                    block_bytes=args.block_bytes,
                    avg_tx_bytes=args.avg_tx_bytes,
                    link_latency=args.link_latency,
                    bandwidth=args.bandwidth,
                    consensus_base_delay=args.consensus_delay,
                    block_interval=args.block_interval,
                    rng_seed=args.seed,
                    sample_period=args.sample_period,
                    arrival_process=args.arrival,
                    strategy=placement.StrategyConfig(
                        kind=strat,
                        k=k,
                        epsilon=args.epsilon,
                        fitness_weight=args.fitness_weight,
                        capacity_n=args.capacity_n if args.capacity_n else None,
                        alpha=args.alpha,
                        l2s_literal=args.strict_paper_l2s,
                    ),
                    event_log_path=str(cell / "events.ndjson") if args.event_log else None,
                )
                report = simcore.run(cfg, records)
                report.write_json(str(metrics_path))
                report.write_timeseries_csv(str(cell / "timeseries.csv"))
                report.write_latency_hist_csv(str(cell / "latency_hist.csv"))
                print(
                    f"{cell.name}: throughput {report.throughput:.1f} tps, "
                    f"mean latency {report.mean_latency:.2f} s, "
                    f"cross {report.cross_fraction:.3f}"
                )
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    cells = sorted(p for p in outdir.iterdir() if p.is_dir())
    rows = []
    for cell in cells:
        metrics = cell / "metrics.json"
        if not metrics.exists():
            print(f"warning: missing cell {cell.name}", file=sys.stderr)
            continue
        with open(metrics, "r", encoding="utf-8") as f:
            data = json.load(f)
        rows.append(
            {
                "k": data["config"]["k"],
                "rate": data["config"]["tx_rate"],
                "strategy": data["config"]["strategy"]["kind"],
                "throughput": data["throughput"],
                "mean_latency": data["mean_latency"],
                "max_latency": data["max_latency"],
                "cross_fraction": data["cross_fraction"],
                "aborted": data["aborted"],
                "hist_edges": data["latency_hist_edges"],
                "hist_counts": data["latency_hist_counts"],
            }
        )
    if not rows:
        print("no completed cells found", file=sys.stderr)
    rows.sort(key=lambda r: (r["strategy"], r["k"], r["rate"]))
    with open(outdir / "aggregate.csv", "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["strategy", "k", "rate", "throughput", "mean_latency", "max_latency",
             "cross_fraction", "aborted"]
        )
        for r in rows:
            writer.writerow(
                [r["strategy"], r["k"], r["rate"], repr(r["throughput"]),
                 repr(r["mean_latency"]), repr(r["max_latency"]),
                 repr(r["cross_fraction"]), r["aborted"]]
            )
    with open(outdir / "latency_cdf.csv", "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["strategy", "k", "rate", "latency", "cum_fraction"])
        for r in rows:
            total = sum(r["hist_counts"]) or 1
            cum = 0
            for edge, count in zip(r["hist_edges"][1:], r["hist_counts"]):
                cum += count
                writer.writerow([r["strategy"], r["k"], r["rate"], repr(edge), repr(cum / total)])
    # Max rate each (strategy, k) sustains without backlogging.
    best: dict[tuple[str, int], float] = {}
    for r in rows:
        if r["throughput"] >= args.healthy_threshold * r["rate"]:
            key = (r["strategy"], r["k"])
            best[key] = max(best.get(key, 0.0), r["rate"])
    with open(outdir / "scalability.csv", "w", encoding="ascii", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["strategy", "k", "max_healthy_rate"])
        for (strat, k), rate in sorted(best.items()):
            writer.writerow([strat, k, repr(rate)])
    print(f"aggregated {len(rows)} cells into {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardsim",
        description="Transaction placement strategies and sharded-ledger simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic transaction stream")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--coinbase-fraction", type=float, default=0.01)
    p.add_argument("--indeg-exponent", type=float, default=1.75)
    p.add_argument("--indeg-cap", type=int, default=16)
    p.add_argument("--outdeg-exponent", type=float, default=1.8)
    p.add_argument("--outdeg-cap", type=int, default=32)
    p.add_argument("--community-ring", type=int, default=512)
    p.add_argument("--mix-rate", type=float, default=0.15)
    p.add_argument("--revive-rate", type=float, default=0.10)
    p.add_argument("--conflict-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert a hash-keyed CSV dump to a stream file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map", default=None, help="sidecar hash-to-id CSV path")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="degree histograms and average-degree series")
    p.add_argument("--stream", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=1000)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("place", help="run one placement strategy over a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--strategy", choices=placement.STRATEGY_KINDS, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--fitness-weight", type=float, default=0.01)
    p.add_argument("--capacity-n", type=int, default=0,
                   help="cap total for greedy/t2s (default: stream length)")
    p.add_argument("--partition", default=None, help="partition file for imported")
    p.add_argument("--warm-partition", default=None,
                   help="partition file covering a warm-start prefix")
    p.add_argument("--warm-prefix", type=int, default=0)
    p.add_argument("--rates", default=None, help="JSON rate-model override")
    p.add_argument("--strict-paper-l2s", action="store_true",
                   help="use the literal self-convolution latency integral")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("simulate", help="run the simulator over a config grid")
    p.add_argument("--stream", default=None)
    p.add_argument("--synth-n", type=int, default=0)
    p.add_argument("--k", type=_int_list, default=[4])
    p.add_argument("--rate", type=_int_list, default=[2000])
    p.add_argument("--strategy", type=_str_list, default=["optchain"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--block-capacity", type=int, default=2000)
    p.add_argument("--block-bytes", type=int, default=1_048_576)
    p.add_argument("--avg-tx-bytes", type=int, default=500)
    p.add_argument("--link-latency", type=float, default=0.1)
    p.add_argument("--bandwidth", type=float, default=20e6)
    p.add_argument("--consensus-delay", type=float, default=0.5)
    p.add_argument("--block-interval", type=float, default=1.0)
    p.add_argument("--sample-period", type=float, default=50.0)
    p.add_argument("--arrival", choices=["fixed", "poisson"], default="fixed")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--fitness-weight", type=float, default=0.01)
    p.add_argument("--capacity-n", type=int, default=0)
    p.add_argument("--event-log", action="store_true")
    p.add_argument("--strict-paper-l2s", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate completed simulation cells")
    p.add_argument("--out", required=True, help="directory produced by simulate")
    p.add_argument("--healthy-threshold", type=float, default=0.95,
                   help="throughput/rate ratio counting a cell as backlog-free")
    p.set_defaults(func=cmd_report)

    for sp in sub.choices.values():
        if not any(a.dest == "config" for a in sp._actions):
            sp.add_argument("--config", default=None, help="TOML config file")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, remaining = parser.parse_known_args(argv)
    if remaining:
        parser.error(f"unrecognized arguments: {' '.join(remaining)}")
    if getattr(args, "config", None):
        overrides = _load_config(args.config, args.command)
        known = set(vars(args))
        given = set(argv if argv is not None else sys.argv[1:])
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if dest not in known:
                parser.error(f"unknown config key {key!r} in [{args.command}]")
            # Flags given on the command line stay; config fills the rest.
            if {f"--{key}", f"--{dest.replace('_', '-')}"}.isdisjoint(given):
                setattr(args, dest, value)
    try:
        return args.func(args)
    except (ingest.ConfigInvalid, placement.PlacementError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ingest.IngestError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
