"""Deterministic discrete-event simulator of a sharded UTXO ledger.

Clients submit transactions from a topologically ordered stream at a
configured rate; a placement strategy picks the output shard at submit
time.  A transaction whose input shards all equal its output shard goes
straight into the output shard's mempool; a cross-shard transaction
first asks every input shard to lock its inputs, collects
proof-of-acceptance or proof-of-rejection messages, and then either
sends an unlock-to-commit to the output shard or aborts and releases the
locks it did obtain.

Each shard batches its mempool into blocks.  A block forms when the
shard is idle and either the mempool has reached the block capacity or a
block interval has elapsed since the last formation; results become
visible after a consensus delay plus the block's transmission time, and
the next block cannot start before that.  Inputs are tracked as output
slots per parent transaction: a lock claim succeeds while the parent
still has unconsumed outputs in that shard, so only deliberately
conflicting (double-spend) transactions are ever rejected.

Event order is a total order (time, kind priority, sequence number), so
a fixed seed and config reproduce the event log byte for byte.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .ingest import ConfigInvalid
from .l2s import LatencyScorer, RateModel, ShardRates, ShardTelemetry, estimate_rates
from .placement import BaseStrategy, StrategyConfig, build_strategy
from .tan import TxRecord

# Event kind priorities; lower processes first at equal timestamps.
_EV_ARRIVAL = 0
_EV_BLOCK_DONE = 1
_EV_PROOF = 2
_EV_FORM = 3
_EV_SUBMIT = 4
_EV_SAMPLE = 5

PENDING = 0
COMMITTED = 1
ABORTED = 2


@dataclass
class SimConfig:
    k: int = 4
    tx_rate: float = 1000.0
    block_capacity: int = 2000
    block_bytes: int = 1_048_576
    avg_tx_bytes: int = 500
    link_latency: float = 0.1
    bandwidth: float = 20e6
    consensus_base_delay: float = 0.5
    block_interval: float = 1.0
    rng_seed: int = 0
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    sample_period: float = 50.0
    arrival_process: str = "fixed"  # or "poisson"
    ewma_halflife: float = 30.0
    default_lambda_c: float = 5.0
    default_lambda_v: float = 1.0
    # Time constant (seconds) smoothing the client's per-shard backlog
    # gauge; 0 reads the instantaneous value.  Smoothing filters the
    # block-drain sawtooth out of the latency feedback.
    backlog_smoothing: float = 0.0
    event_log_path: str | None = None

    def validate(self) -> None:
        positive = {
            "tx_rate": self.tx_rate,
            "block_capacity": self.block_capacity,
            "block_bytes": self.block_bytes,
            "avg_tx_bytes": self.avg_tx_bytes,
            "link_latency": self.link_latency,
            "bandwidth": self.bandwidth,
            "consensus_base_delay": self.consensus_base_delay,
            "block_interval": self.block_interval,
            "sample_period": self.sample_period,
            "ewma_halflife": self.ewma_halflife,
            "default_lambda_c": self.default_lambda_c,
            "default_lambda_v": self.default_lambda_v,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigInvalid(f"{name} must be > 0, got {value}")
        if self.backlog_smoothing < 0:
            raise ConfigInvalid("backlog_smoothing must be >= 0")
        if self.k < 1:
            raise ConfigInvalid(f"k must be >= 1, got {self.k}")
        if self.block_capacity * self.avg_tx_bytes > self.block_bytes:
            raise ConfigInvalid("block_capacity * avg_tx_bytes exceeds block_bytes")
        if self.arrival_process not in ("fixed", "poisson"):
            raise ConfigInvalid(f"unknown arrival process {self.arrival_process!r}")
        if self.strategy.k != self.k:
            raise ConfigInvalid("strategy shard count must match simulator k")

    @property
    def msg_delay(self) -> float:
        return self.link_latency + self.avg_tx_bytes * 8.0 / self.bandwidth

    def single_shard_capacity(self) -> float:
        """Saturated service rate of one shard, items per second."""
        cycle = (
            self.consensus_base_delay
            + self.block_capacity * self.avg_tx_bytes * 8.0 / self.bandwidth
        )
        return self.block_capacity / cycle

    def same_shard_system_capacity(self) -> float:
        """Throughput if every transaction cost one block slot on one shard."""
        return self.k * self.single_shard_capacity()


@dataclass
class TxLifecycle:
    tx: int
    submit_time: float
    output_shard: int
    is_cross: bool
    # parent ids grouped by the shard that must lock them
    shard_parents: dict[int, tuple[int, ...]]
    proofs: dict[int, bool | None]
    status: int = PENDING
    commit_time: float | None = None

    def proofs_complete(self) -> bool:
        return all(v is not None for v in self.proofs.values())

    def all_accepted(self) -> bool:
        return all(v is True for v in self.proofs.values())


class ShardState:
    def __init__(self, shard_id: int, halflife: float) -> None:
        self.id = shard_id
        self.mempool: deque[tuple[str, int]] = deque()
        self.consumed: dict[int, int] = {}
        self.utxo_spent: set[tuple[int, int]] = set()
        self.committed = 0
        self.busy = False
        self.inflight_items = 0
        self.last_form_time = -np.inf
        self.last_block_done: float | None = None
        self.pending_form_at: float | None = None
        self.telemetry = ShardTelemetry.fresh(halflife)


@dataclass
class SampleRow:
    time: float
    committed_window: int
    queue_max: int
    queue_min: int
    ratio: float
    cross_frac: float
    injected: int
    committed: int
    aborted: int
    pending: int


@dataclass
class MetricsReport:
    config: dict
    total_time: float
    injected: int
    committed: int
    aborted: int
    throughput: float
    mean_latency: float
    max_latency: float
    cross_fraction: float
    cap_overflow_events: int
    per_shard_committed: list[int]
    mean_latency_cross: float
    mean_latency_same: float
    latency_hist_edges: list[float]
    latency_hist_counts: list[int]
    time_series: list[SampleRow]

    def to_dict(self) -> dict:
        d = {
            "config": self.config,
            "total_time": self.total_time,
            "injected": self.injected,
            "committed": self.committed,
            "aborted": self.aborted,
            "throughput": self.throughput,
            "mean_latency": self.mean_latency,
            "max_latency": self.max_latency,
            "cross_fraction": self.cross_fraction,
            "cap_overflow_events": self.cap_overflow_events,
            "per_shard_committed": self.per_shard_committed,
            "mean_latency_cross": self.mean_latency_cross,
            "mean_latency_same": self.mean_latency_same,
            "latency_hist_edges": self.latency_hist_edges,
            "latency_hist_counts": self.latency_hist_counts,
            "time_series": [vars(r) for r in self.time_series],
        }
        return d

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def write_timeseries_csv(self, path: str) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("time,committed_window,queue_max,queue_min,ratio,cross_frac\n")
            for r in self.time_series:
                f.write(
                    f"{r.time!r},{r.committed_window},{r.queue_max},"
                    f"{r.queue_min},{r.ratio!r},{r.cross_frac!r}\n"
                )

    def write_latency_hist_csv(self, path: str) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("bin_low,bin_high,count\n")
            for i, c in enumerate(self.latency_hist_counts):
                f.write(
                    f"{self.latency_hist_edges[i]!r},"
                    f"{self.latency_hist_edges[i + 1]!r},{c}\n"
                )


class Simulator:
    """Single-run engine; see the module docstring for the protocol."""

    def __init__(
        self,
        cfg: SimConfig,
        records: Sequence[TxRecord],
        strategy: BaseStrategy | None = None,
        event_log: IO[str] | None = None,
    ) -> None:
        cfg.validate()
        self.cfg = cfg
        self.records = records
        self.output_counts = [r.output_count for r in records]
        if strategy is None:
            rate_model = RateModel.uniform(
                cfg.k, cfg.default_lambda_c, cfg.default_lambda_v
            )
            scorer = LatencyScorer(
                rate_model, literal_self_convolution=cfg.strategy.l2s_literal
            )
            strategy = build_strategy(
                cfg.strategy,
                scorer=scorer,
                confirm_expectation=self.confirm_expectation,
            )
        self.strategy = strategy
        self.scorer: LatencyScorer | None = getattr(strategy, "scorer", None)
        self.shards = [ShardState(i, cfg.ewma_halflife) for i in range(cfg.k)]
        self.client_pending = [0] * cfg.k
        self._pend_avg = [0.0] * cfg.k
        self._pend_t = [0.0] * cfg.k
        self.live: dict[int, TxLifecycle] = {}
        self.lifecycles: dict[int, TxLifecycle] = {}
        self._heap: list[tuple[float, int, int, tuple]] = []
        self._seq = 0
        self.now = 0.0
        self.injected = 0
        self.committed = 0
        self.aborted = 0
        self.cross_submitted = 0
        self._window_committed = 0
        self.latencies: list[tuple[float, bool]] = []  # (latency, is_cross)
        self.samples: list[SampleRow] = []
        self._rng_inject = np.random.default_rng([cfg.rng_seed, 0x1A])
        self._next_submit_idx = 0
        self._next_submit_time = self._gap()
        self._last_terminal_time = 0.0
        self._event_log = event_log
        self._defaults = ShardRates(cfg.default_lambda_c, cfg.default_lambda_v)
        rtt = 2.0 * cfg.msg_delay
        for shard in self.shards:
            shard.telemetry.rtt.update(0.0, rtt)

    # -- scheduling helpers -------------------------------------------------

    def _gap(self) -> float:
        if self.cfg.arrival_process == "poisson":
            return float(self._rng_inject.exponential(1.0 / self.cfg.tx_rate))
        return 1.0 / self.cfg.tx_rate

    def _pend_change(self, j: int, delta: int) -> None:
        tau = self.cfg.backlog_smoothing
        if tau > 0.0:
            cur = self.client_pending[j]
            decay = math.exp(-(self.now - self._pend_t[j]) / tau)
            self._pend_avg[j] = cur + (self._pend_avg[j] - cur) * decay
            self._pend_t[j] = self.now
        self.client_pending[j] += delta

    def _pend_read(self, j: int) -> float:
        tau = self.cfg.backlog_smoothing
        cur = self.client_pending[j]
        if tau <= 0.0:
            return float(cur)
        decay = math.exp(-(self.now - self._pend_t[j]) / tau)
        return cur + (self._pend_avg[j] - cur) * decay

    def confirm_expectation(self, j: int) -> float:
        """Expected confirmation delay at shard j, from the client's view.

        Communication expectation comes from the decayed round-trip mean,
        verification from the decayed block interval (default before any
        block completes) inflated by the work the client has sent to the
        shard and not yet seen resolved, in block capacities.  Client-side
        bookkeeping is lag-free, unlike sampling the remote queue.
        """
        tele = self.shards[j].telemetry
        rtt = tele.rtt.mean()
        comm = (1.0 / self.cfg.default_lambda_c) if rtt is None else rtt
        base = tele.block_interval.mean()
        if base is None:
            base = 1.0 / self.cfg.default_lambda_v
        return comm + base * (1.0 + self._pend_read(j) / self.cfg.block_capacity)

    def _push(self, time: float, kind: int, payload: tuple) -> None:
        heapq.heappush(self._heap, (time, kind, self._seq, payload))
        self._seq += 1

    def _log(self, kind: str, **fields) -> None:
        if self._event_log is None:
            return
        entry = {"t": self.now, "kind": kind}
        entry.update(fields)
        self._event_log.write(json.dumps(entry, separators=(",", ":")) + "\n")

    # -- protocol steps -----------------------------------------------------

    def submit_tx(self, record: TxRecord) -> None:
        decision = self.strategy.place(record)
        self.injected += 1
        shard_parents: dict[int, tuple[int, ...]] = {}
        for p in record.inputs:
            s = self.strategy.assignment[p]
            shard_parents.setdefault(s, ())
            shard_parents[s] += (p,)
        lc = TxLifecycle(
            tx=record.id,
            submit_time=self.now,
            output_shard=decision.shard,
            is_cross=decision.is_cross_shard,
            shard_parents=shard_parents,
            proofs={},
        )
        self.live[record.id] = lc
        self.lifecycles[record.id] = lc
        self._log("place", tx=record.id, shard=decision.shard, cross=decision.is_cross_shard)
        delay = self.cfg.msg_delay
        if decision.is_cross_shard:
            self.cross_submitted += 1
            lc.proofs = {s: None for s in sorted(lc.shard_parents)}
            for s in sorted(lc.shard_parents):
                self._pend_change(s, 1)
                self._push(self.now + delay, _EV_ARRIVAL, (s, "lock", record.id))
        else:
            self._pend_change(decision.shard, 1)
            self._push(self.now + delay, _EV_ARRIVAL, (decision.shard, "commit", record.id))

    def _lock_inputs(self, shard: ShardState, tx: int, parents: tuple[int, ...]) -> bool:
        """Atomically claim one output slot per parent; all or nothing."""
        for p in parents:
            if shard.consumed.get(p, 0) >= self.output_counts[p]:
                return False
        for p in parents:
            shard.consumed[p] = shard.consumed.get(p, 0) + 1
            shard.utxo_spent.add((p, tx))
        return True

    def process_lock(self, shard: ShardState, tx: int) -> bool:
        lc = self.live.get(tx)
        if lc is None:
            return False
        return self._lock_inputs(shard, tx, lc.shard_parents.get(shard.id, ()))

    def _terminal(self, lc: TxLifecycle, status: int, when: float) -> None:
        lc.status = status
        self.live.pop(lc.tx, None)
        self._last_terminal_time = max(self._last_terminal_time, when)
        if status == COMMITTED:
            lc.commit_time = when
            self.committed += 1
            self._window_committed += 1
            # The client learns of the commit one message delay after the
            # block is emitted; latency is measured at the client.
            self.latencies.append(
                (when + self.cfg.msg_delay - lc.submit_time, lc.is_cross)
            )
        else:
            self.aborted += 1

    def _process_block_item(self, shard: ShardState, kind: str, tx: int) -> None:
        if kind == "lock":
            lc = self.live.get(tx)
            if lc is None:
                return
            ok = self._lock_inputs(shard, tx, lc.shard_parents.get(shard.id, ()))
            self._push(self.now + self.cfg.msg_delay, _EV_PROOF, (tx, shard.id, ok))
            self._log("proof_sent", tx=tx, shard=shard.id, accepted=ok)
        elif kind == "commit":
            self._pend_change(shard.id, -1)
            lc = self.live.get(tx)
            if lc is None:
                return
            if not lc.is_cross:
                # Same-shard fast path validates its local inputs here.
                parents = lc.shard_parents.get(shard.id, ())
                if not self._lock_inputs(shard, tx, parents):
                    self._terminal(lc, ABORTED, self.now)
                    self._log("abort", tx=tx, reason="local_conflict")
                    return
            shard.committed += 1
            self._terminal(lc, COMMITTED, self.now)
            self._log("commit", tx=tx, shard=shard.id)
        elif kind == "unlock_abort":
            parents = self.lifecycles[tx].shard_parents.get(shard.id, ())
            released = 0
            for p in parents:
                if (p, tx) in shard.utxo_spent:
                    shard.utxo_spent.discard((p, tx))
                    shard.consumed[p] -= 1
                    released += 1
            self._log("unlock", tx=tx, shard=shard.id, released=released)

    def form_block(self, shard: ShardState) -> None:
        n = min(self.cfg.block_capacity, len(shard.mempool))
        batch = [shard.mempool.popleft() for _ in range(n)]
        bytes_used = n * self.cfg.avg_tx_bytes
        done = self.now + self.cfg.consensus_base_delay + bytes_used * 8.0 / self.cfg.bandwidth
        shard.busy = True
        shard.inflight_items = n
        shard.last_form_time = self.now
        self._push(done, _EV_BLOCK_DONE, (shard.id, batch))
        self._log("block_formed", shard=shard.id, items=n, done=done)

    def _maybe_form(self, shard: ShardState) -> None:
        if shard.busy or not shard.mempool:
            return
        due = shard.last_form_time + self.cfg.block_interval
        if len(shard.mempool) >= self.cfg.block_capacity or self.now >= due:
            shard.pending_form_at = None
            self.form_block(shard)
        elif shard.pending_form_at != due:
            shard.pending_form_at = due
            self._push(due, _EV_FORM, (shard.id,))

    def _on_proof(self, tx: int, shard_id: int, ok: bool) -> None:
        self._pend_change(shard_id, -1)
        lc = self.live.get(tx)
        if lc is None:
            return
        lc.proofs[shard_id] = ok
        if not lc.proofs_complete():
            return
        delay = self.cfg.msg_delay
        if lc.all_accepted():
            self._pend_change(lc.output_shard, 1)
            self._push(self.now + delay, _EV_ARRIVAL, (lc.output_shard, "commit", tx))
            self._log("unlock_commit", tx=tx, shard=lc.output_shard)
        else:
            accepted = [s for s, v in lc.proofs.items() if v]
            for s in sorted(accepted):
                self._push(self.now + delay, _EV_ARRIVAL, (s, "unlock_abort", tx))
            self._terminal(lc, ABORTED, self.now)
            self._log("abort", tx=tx, reason="rejected")

    def metrics_snapshot(self) -> SampleRow:
        queues = [len(s.mempool) for s in self.shards]
        qmax, qmin = max(queues), min(queues)
        pending = len(self.live)
        row = SampleRow(
            time=self.now,
            committed_window=self._window_committed,
            queue_max=qmax,
            queue_min=qmin,
            ratio=max(qmax, 1) / max(qmin, 1),
            cross_frac=self.cross_submitted / self.injected if self.injected else 0.0,
            injected=self.injected,
            committed=self.committed,
            aborted=self.aborted,
            pending=pending,
        )
        self._window_committed = 0
        if self.injected != self.committed + self.aborted + pending:
            raise AssertionError("conservation violated: injected != committed+aborted+pending")
        return row

    def _on_sample(self) -> None:
        row = self.metrics_snapshot()
        self.samples.append(row)
        self._log(
            "sample",
            injected=row.injected,
            committed=row.committed,
            aborted=row.aborted,
            pending=row.pending,
            queue_max=row.queue_max,
            queue_min=row.queue_min,
        )
        for shard in self.shards:
            # Backlog seen by a new item: queued plus the block in flight.
            shard.telemetry.queue_length = len(shard.mempool) + shard.inflight_items
            shard.telemetry.rtt.update(self.now, 2.0 * self.cfg.msg_delay)
        if self.scorer is not None:
            model = estimate_rates(
                [s.telemetry for s in self.shards], self._defaults, self.cfg.block_capacity
            )
            self.scorer.update_model(model)
        if self._next_submit_idx < len(self.records) or self.live:
            self._push(self.now + self.cfg.sample_period, _EV_SAMPLE, ())

    # -- main loop ----------------------------------------------------------

    def run(self) -> MetricsReport:
        if self.records:
            self._push(self._next_submit_time, _EV_SUBMIT, ())
            self._push(self.cfg.sample_period, _EV_SAMPLE, ())
        while self._heap:
            time, kind, _, payload = heapq.heappop(self._heap)
            self.now = time
            if kind == _EV_SUBMIT:
                idx = self._next_submit_idx
                self._log("submit", tx=idx)
                self.submit_tx(self.records[idx])
                self._next_submit_idx += 1
                if self._next_submit_idx < len(self.records):
                    self._next_submit_time += self._gap()
                    self._push(self._next_submit_time, _EV_SUBMIT, ())
            elif kind == _EV_ARRIVAL:
                shard_id, item_kind, tx = payload
                shard = self.shards[shard_id]
                shard.mempool.append((item_kind, tx))
                self._maybe_form(shard)
            elif kind == _EV_BLOCK_DONE:
                shard_id, batch = payload
                shard = self.shards[shard_id]
                shard.busy = False
                shard.inflight_items = 0
                if shard.last_block_done is not None:
                    shard.telemetry.block_interval.update(
                        self.now, self.now - shard.last_block_done
                    )
                shard.last_block_done = self.now
                self._log("block_done", shard=shard_id, items=len(batch))
                for item_kind, tx in batch:
                    self._process_block_item(shard, item_kind, tx)
                self._maybe_form(shard)
            elif kind == _EV_PROOF:
                self._on_proof(*payload)
            elif kind == _EV_FORM:
                shard = self.shards[payload[0]]
                shard.pending_form_at = None
                self._maybe_form(shard)
            elif kind == _EV_SAMPLE:
                self._on_sample()
        return self.final_report()

    def final_report(self) -> MetricsReport:
        total_time = self._last_terminal_time
        lat = np.array([x for x, _ in self.latencies]) if self.latencies else np.zeros(0)
        cross_lat = np.array([x for x, c in self.latencies if c])
        same_lat = np.array([x for x, c in self.latencies if not c])
        if lat.size:
            edges = np.linspace(0.0, float(lat.max()) or 1.0, 51)
            counts, _ = np.histogram(lat, bins=edges)
        else:
            edges = np.linspace(0.0, 1.0, 51)
            counts = np.zeros(50, dtype=int)
        cfg_dict = vars(self.cfg).copy()
        cfg_dict["strategy"] = vars(self.cfg.strategy).copy()
        cfg_dict.pop("event_log_path", None)
        return MetricsReport(
            config=cfg_dict,
            total_time=total_time,
            injected=self.injected,
            committed=self.committed,
            aborted=self.aborted,
            throughput=self.committed / total_time if total_time > 0 else 0.0,
            mean_latency=float(lat.mean()) if lat.size else 0.0,
            max_latency=float(lat.max()) if lat.size else 0.0,
            cross_fraction=self.cross_submitted / self.injected if self.injected else 0.0,
            cap_overflow_events=self.strategy.cap_overflow_events,
            per_shard_committed=[s.committed for s in self.shards],
            mean_latency_cross=float(cross_lat.mean()) if cross_lat.size else 0.0,
            mean_latency_same=float(same_lat.mean()) if same_lat.size else 0.0,
            latency_hist_edges=[float(e) for e in edges],
            latency_hist_counts=[int(c) for c in counts],
            time_series=self.samples,
        )


def run(cfg: SimConfig, records: Sequence[TxRecord]) -> MetricsReport:
    """Run one simulation to completion; see Simulator for knobs."""
    if cfg.event_log_path:
        with open(cfg.event_log_path, "w", encoding="ascii", newline="\n") as f:
            return Simulator(cfg, records, event_log=f).run()
    return Simulator(cfg, records).run()
