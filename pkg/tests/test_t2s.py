"""Incremental score updates against the from-scratch oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardsim.ingest import SynthConfig, generate_synthetic
from shardsim.placement import StrategyConfig, build_strategy
from shardsim.t2s import (
    BadShardIndex,
    DoubleCommit,
    MissingParentScore,
    ScoreError,
    ScoreState,
    batch_scores,
    load_checkpoint,
    save_checkpoint,
)
from shardsim.tan import TanGraph, TxRecord, build_graph


def test_coinbase_score_is_zero():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    state = ScoreState(k=4)
    score = state.compute_score(0, (), g)
    assert np.all(score == 0.0)
    assert np.all(state.raw(0) == 0.0)


def test_two_node_chain_hand_value():
    # Parent in shard 0 after its alpha update holds (0.5, 0); its only
    # child inherits half of that: raw (0.25, 0), score (0.25, 0) at
    # shard sizes (1, 1).
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    state = ScoreState(k=2, alpha=0.5)
    state.compute_score(0, (), g)
    state.commit_placement(0, 0)
    assert state.raw(0).tolist() == [0.5, 0.0]
    g.add_tx(TxRecord(id=1, inputs=(0,), output_count=1))
    state.shard_sizes[1] = 1  # force sizes (1, 1) as in the worked example
    score = state.compute_score(1, (0,), g)
    assert state.raw(1).tolist() == [0.25, 0.0]
    assert score.tolist() == [0.25, 0.0]


def test_commit_updates_raw_and_sizes():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    state = ScoreState(k=4, alpha=0.5)
    state.compute_score(0, (), g)
    state.commit_placement(0, 2)
    assert state.raw(0).tolist() == [0.0, 0.0, 0.5, 0.0]
    assert state.shard_sizes.tolist() == [0, 0, 1, 0]


def test_commit_errors():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    state = ScoreState(k=2)
    with pytest.raises(MissingParentScore):
        state.commit_placement(0, 0)
    state.compute_score(0, (), g)
    with pytest.raises(BadShardIndex):
        state.commit_placement(0, 5)
    state.commit_placement(0, 1)
    with pytest.raises(DoubleCommit):
        state.commit_placement(0, 0)


def test_missing_parent_score():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    g.add_tx(TxRecord(id=1, inputs=(0,), output_count=1))
    state = ScoreState(k=2)
    with pytest.raises(MissingParentScore):
        state.compute_score(1, (0,), g)


def test_sizes_count_commits():
    g = TanGraph()
    state = ScoreState(k=4)
    for i in range(1000):
        g.add_tx(TxRecord(id=i, inputs=(), output_count=1))
        state.compute_score(i, (), g)
        state.commit_placement(i, i % 4)
    assert int(state.shard_sizes.sum()) == 1000


def test_batch_oracle_single_coinbase():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    out = batch_scores(g, [0], k=4, alpha=0.5)
    assert out[0].tolist() == [0.5, 0.0, 0.0, 0.0]


def test_batch_oracle_chain_matches_hand():
    g = TanGraph()
    g.add_tx(TxRecord(id=0, inputs=(), output_count=1))
    g.add_tx(TxRecord(id=1, inputs=(0,), output_count=1))
    out = batch_scores(g, [0, 0], k=2, alpha=0.5)
    assert out[0].tolist() == [0.5, 0.0]
    assert out[1].tolist() == [0.75, 0.0]  # inherited 0.25 plus its own 0.5


def _place_stream(records, k, kind="t2s"):
    strat = build_strategy(StrategyConfig(kind=kind, k=k, capacity_n=len(records)))
    for r in records:
        strat.place(r)
    return strat


def test_incremental_matches_batch_on_stream():
    res = generate_synthetic(SynthConfig(n=10_000, rng_seed=21))
    strat = _place_stream(res.records, k=4)
    batch = batch_scores(strat.graph, strat.scores.placements_array(), k=4, alpha=0.5)
    diff = np.abs(strat.scores.raw_matrix() - batch).max()
    assert diff < 1e-9, diff


def test_commit_leaves_other_raw_vectors_untouched():
    res = generate_synthetic(SynthConfig(n=300, rng_seed=15))
    g = build_graph(res.records)
    state = ScoreState(k=4)
    snapshots = {}
    for rec in res.records:
        state.compute_score(rec.id, rec.inputs, g)
        if rec.id == 150:
            snapshots = {v: state.raw(v).copy() for v in range(100)}
        state.commit_placement(rec.id, rec.id % 4)
    for v, before in snapshots.items():
        assert np.array_equal(state.raw(v), before) or v >= 150


def test_argmax_stable_under_equal_sizes():
    rng = np.random.default_rng(0)
    state = ScoreState(k=8)
    state.shard_sizes[:] = 7  # uniform
    raw = rng.random(8)
    assert int(np.argmax(state.normalize(raw))) == int(np.argmax(raw))


def test_checkpoint_roundtrip(tmp_path):
    res = generate_synthetic(SynthConfig(n=500, rng_seed=33))
    strat = _place_stream(res.records, k=4)
    path = str(tmp_path / "scores.bin")
    save_checkpoint(strat.scores, path)
    loaded = load_checkpoint(path)
    assert loaded.k == 4 and loaded.alpha == 0.5
    assert np.array_equal(loaded.raw_matrix(), strat.scores.raw_matrix())
    assert np.array_equal(loaded.placements_array(), strat.scores.placements_array())
    assert np.array_equal(loaded.shard_sizes, strat.scores.shard_sizes)
    assert np.array_equal(
        loaded.snapshot_out_degrees(), strat.scores.snapshot_out_degrees()
    )


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ScoreError):
        load_checkpoint(str(path))


@st.composite
def placed_streams(draw):
    n = draw(st.integers(min_value=1, max_value=30))
    k = draw(st.sampled_from([2, 4]))
    recs, placements = [], []
    for i in range(n):
        if i == 0:
            parents = ()
        else:
            parents = tuple(
                draw(st.sets(st.integers(min_value=0, max_value=i - 1), max_size=3))
            )
        recs.append(TxRecord(id=i, inputs=parents, output_count=1))
        placements.append(draw(st.integers(min_value=0, max_value=k - 1)))
    return recs, placements, k


@settings(max_examples=60, deadline=None)
@given(placed_streams())
def test_incremental_equals_batch_property(case):
    recs, placements, k = case
    g = TanGraph()
    state = ScoreState(k=k, alpha=0.5)
    for rec, shard in zip(recs, placements):
        g.add_tx(rec)
        state.compute_score(rec.id, rec.inputs, g)
        state.commit_placement(rec.id, shard)
    batch = batch_scores(g, placements, k=k, alpha=0.5)
    assert np.abs(state.raw_matrix() - batch).max() < 1e-9
    # every raw entry stays finite and non-negative
    assert np.all(state.raw_matrix() >= 0.0)
    assert np.all(np.isfinite(state.raw_matrix()))
