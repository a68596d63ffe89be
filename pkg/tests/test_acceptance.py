"""Acceptance gate: one test per shipped criterion, tolerances pinned.

Each test prints a single PASS line (with timing where a runtime budget
applies) so the suite doubles as a checklist.  Run with `pytest -s
tests/test_acceptance.py` to see the lines.
"""

import os
import time

import numpy as np
import pytest

from shardsim.ingest import (
    SynthConfig,
    generate_synthetic,
    generate_two_input_stream,
    load_stream,
)
from shardsim.l2s import (
    ShardRates,
    all_proofs_pdf,
    expected_latency,
    proof_time_pdf,
)
from shardsim.placement import StrategyConfig, build_strategy
from shardsim.simcore import SimConfig, Simulator, run
from shardsim.t2s import batch_scores

BITCOIN_STREAM = os.environ.get("SHARDSIM_BITCOIN_STREAM", "data/bitcoin_1m.tan")

# Table-style column of expected cross fractions for the score strategy on
# the converted 1M-prefix dataset, checked only when that dataset exists.
BITCOIN_T2S_EXPECTED = {4: 9.28, 8: 12.52, 16: 15.73, 32: 18.94, 64: 21.65}

STREAM_SPECS = [(10_000, 101), (30_000, 102), (100_000, 103)]


@pytest.fixture(scope="module")
def streams():
    return {
        (n, seed): generate_synthetic(SynthConfig(n=n, rng_seed=seed)).records
        for n, seed in STREAM_SPECS
    }


def _place(records, kind, k):
    strat = build_strategy(
        StrategyConfig(kind=kind, k=k, capacity_n=len(records))
    )
    for rec in records:
        strat.place(rec)
    return strat


def test_criterion_1_t2s_oracle_equivalence(streams):
    for (n, seed), records in streams.items():
        for k in (4, 16):
            t0 = time.time()
            strat = _place(records, "t2s", k)
            batch = batch_scores(
                strat.graph, strat.scores.placements_array(), k=k, alpha=0.5
            )
            diff = float(np.abs(strat.scores.raw_matrix() - batch).max())
            elapsed = time.time() - t0
            assert diff < 1e-9, (n, k, diff)
            assert elapsed < 30.0, (n, k, elapsed)
            print(
                f"[criterion 1] PASS n={n} k={k}: max |incremental - batch| "
                f"= {diff:.2e} in {elapsed:.1f}s"
            )


def test_criterion_2_random_placement_analytics():
    records = generate_two_input_stream(1_000_000, rng_seed=2024)
    for k, tol_points in ((4, 0.5), (16, 0.2)):
        strat = build_strategy(StrategyConfig(kind="random", k=k))
        for rec in records:
            strat.place(rec)
        target = 1.0 - 1.0 / k**2
        got = strat.stats.fraction
        assert abs(got - target) * 100.0 <= tol_points, (k, got, target)
        print(
            f"[criterion 2] PASS k={k}: cross fraction {got*100:.3f}% vs "
            f"analytic {target*100:.3f}% (tol {tol_points} points)"
        )


def test_criterion_3_strategy_ordering(streams):
    for (n, seed), records in streams.items():
        for k in (4, 8, 16):
            frac = {
                kind: _place(records, kind, k).stats.fraction
                for kind in ("t2s", "greedy", "random")
            }
            assert frac["t2s"] < frac["greedy"] < frac["random"], (n, k, frac)
            print(
                f"[criterion 3] PASS n={n} k={k}: t2s {frac['t2s']*100:.2f}% "
                f"< greedy {frac['greedy']*100:.2f}% "
                f"< random {frac['random']*100:.2f}%"
            )


def test_criterion_3_bitcoin_prefix_column():
    if not os.path.exists(BITCOIN_STREAM):
        print(
            "[criterion 3] SKIP dataset column: no converted stream at "
            f"{BITCOIN_STREAM}"
        )
        pytest.skip("converted dataset not supplied")
    records = load_stream(BITCOIN_STREAM)
    for k, expected in BITCOIN_T2S_EXPECTED.items():
        strat = _place(records, "t2s", k)
        got = strat.stats.fraction * 100.0
        assert abs(got - expected) <= 2.0, (k, got, expected)
        print(f"[criterion 3] PASS dataset k={k}: {got:.2f}% vs {expected}%")


def test_criterion_4_l2s_numerics():
    t0 = time.time()
    rng = np.random.default_rng(404)
    n_mc = 1_000_000
    for case in range(10):
        m = int(rng.integers(1, 5))
        proof = [
            ShardRates(float(rng.uniform(0.2, 5.0)), float(rng.uniform(0.2, 5.0)))
            for _ in range(m)
        ]
        confirm = ShardRates(float(rng.uniform(0.2, 5.0)), float(rng.uniform(0.2, 5.0)))
        got = expected_latency(proof, confirm)
        # Monte-Carlo oracle: slowest proof among the shards, then confirm.
        stage = np.zeros((m, n_mc))
        for i, r in enumerate(proof):
            stage[i] = rng.exponential(1.0 / r.lambda_c, n_mc) + rng.exponential(
                1.0 / r.lambda_v, n_mc
            )
        total = stage.max(axis=0) + rng.exponential(
            1.0 / confirm.lambda_c, n_mc
        ) + rng.exponential(1.0 / confirm.lambda_v, n_mc)
        mc = float(total.mean())
        assert abs(got - mc) / mc < 0.02, (case, got, mc)
        # density normalization under an independent quadrature
        tmax = 20.0 * sum(r.mean_total for r in proof)
        ts = np.linspace(0.0, tmax, 16385)
        mass = float(np.trapezoid(np.atleast_1d(all_proofs_pdf(proof, ts)), ts))
        assert abs(mass - 1.0) < 1e-4, (case, mass)
    # continuity at the equal-rate limit
    for lam in (0.3, 1.0, 4.0):
        near = ShardRates(lam, lam * (1.0 + 1e-6))
        equal = ShardRates(lam, lam)
        for t in (0.1 / lam, 1.0 / lam, 4.0 / lam):
            gap = abs(proof_time_pdf(near, t) - proof_time_pdf(equal, t))
            assert gap < 1e-6, (lam, t, gap)
    elapsed = time.time() - t0
    assert elapsed < 60.0, elapsed
    print(
        f"[criterion 4] PASS 10 rate configs vs 1e6-sample oracle (2%), "
        f"normalization 1e-4, Erlang continuity 1e-6, in {elapsed:.1f}s"
    )


SHIPPED_CONFIGS = [
    dict(k=4, tx_rate=900.0, sample_period=1.0, rng_seed=5,
         strategy=StrategyConfig(kind="optchain", k=4)),
    dict(k=2, tx_rate=500.0, sample_period=0.5, rng_seed=6,
         arrival_process="poisson",
         strategy=StrategyConfig(kind="random", k=2)),
    dict(k=4, tx_rate=700.0, sample_period=1.0, rng_seed=7,
         strategy=StrategyConfig(kind="greedy", k=4)),
]


def test_criterion_5_conservation_and_determinism(tmp_path, streams):
    records = streams[(10_000, 101)][:4000]
    for i, kw in enumerate(SHIPPED_CONFIGS):
        logs = []
        for attempt in ("a", "b"):
            path = tmp_path / f"cfg{i}_{attempt}.ndjson"
            cfg = SimConfig(event_log_path=str(path), **kw)
            rep = run(cfg, records)
            for row in rep.time_series:
                assert row.injected == row.committed + row.aborted + row.pending
            logs.append(path.read_bytes())
        assert logs[0] == logs[1], f"config {i} not byte-deterministic"
        print(
            f"[criterion 5] PASS config {i} ({kw['strategy'].kind}): "
            f"conservation at all ticks, identical logs ({len(logs[0])} bytes)"
        )


def test_criterion_6_desk_scale_trends(streams):
    t0 = time.time()
    records = streams[(100_000, 103)]
    base = SimConfig(k=8, tx_rate=1.0)
    rate = 1.5 * base.same_shard_system_capacity()
    cycle = (
        base.consensus_base_delay
        + base.block_capacity * base.avg_tx_bytes * 8.0 / base.bandwidth
    )
    # Desk-scale temporal-fitness weight: one block-capacity of backlog
    # difference should outweigh the typical normalized lineage score,
    # which is about alpha*k/n at these stream sizes.
    weight = 0.5 * 8 / (len(records) * cycle)
    reports = {}
    for kind in ("optchain", "random", "greedy"):
        cfg = SimConfig(
            k=8, tx_rate=rate, sample_period=0.5, rng_seed=11,
            strategy=StrategyConfig(kind=kind, k=8, fitness_weight=weight),
        )
        reports[kind] = run(cfg, records)
    oc, rd, gd = reports["optchain"], reports["random"], reports["greedy"]
    thr_ratio = oc.throughput / rd.throughput
    lat_ratio = oc.mean_latency / rd.mean_latency
    q_oc = float(np.mean([row.ratio for row in oc.time_series]))
    q_gd = float(np.mean([row.ratio for row in gd.time_series]))
    elapsed = time.time() - t0
    assert thr_ratio >= 1.3, thr_ratio
    assert lat_ratio <= 0.5, lat_ratio
    assert q_oc <= q_gd, (q_oc, q_gd)
    assert elapsed < 600.0, elapsed
    print(
        f"[criterion 6] PASS k=8 rate={rate:.0f}: throughput x{thr_ratio:.2f} "
        f"(>=1.3), latency x{lat_ratio:.2f} (<=0.5), queue ratio "
        f"{q_oc:.1f} <= greedy {q_gd:.1f}, in {elapsed:.0f}s"
    )


def test_criterion_7_cross_cost_dominance(streams):
    records = streams[(30_000, 102)][:20_000]
    base = SimConfig(k=8, tx_rate=1.0)
    rate = 0.1 * base.same_shard_system_capacity()
    cfg = SimConfig(
        k=8, tx_rate=rate, sample_period=2.0, rng_seed=13,
        strategy=StrategyConfig(kind="random", k=8),
    )
    rep = run(cfg, records)
    gap = rep.mean_latency_cross - rep.mean_latency_same
    assert gap >= 2 * cfg.link_latency, gap
    print(
        f"[criterion 7] PASS unloaded run: cross {rep.mean_latency_cross:.3f}s "
        f"- same {rep.mean_latency_same:.3f}s = {gap:.3f}s >= "
        f"{2 * cfg.link_latency:.1f}s"
    )


def test_criterion_8_double_spend_safety():
    res = generate_synthetic(
        SynthConfig(n=10_000, rng_seed=88, conflict_fraction=0.01)
    )
    pairs = res.conflict_pairs
    assert len(pairs) == 100
    cfg = SimConfig(
        k=4, tx_rate=2000.0, sample_period=1.0, rng_seed=15,
        strategy=StrategyConfig(kind="random", k=4),
    )
    sim = Simulator(cfg, res.records)
    rep = sim.run()
    assert rep.aborted == len(pairs)
    for a, b in pairs:
        statuses = sorted((sim.lifecycles[a].status, sim.lifecycles[b].status))
        assert statuses == [1, 2], (a, b, statuses)
    for shard in sim.shards:
        spenders = {}
        for parent, spender in shard.utxo_spent:
            spenders.setdefault(parent, set())
            assert spender not in spenders[parent]
            spenders[parent].add(spender)
        for parent, count in shard.consumed.items():
            assert 0 <= count <= res.records[parent].output_count
    print(
        f"[criterion 8] PASS {len(pairs)} injected conflict pairs: one commit "
        f"+ one abort each, no double-locked outputs"
    )
