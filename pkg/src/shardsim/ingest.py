"""Stream files and synthetic transaction streams.

Canonical stream format (version TANv1): line-oriented ASCII, diff-able
and trivially parseable.  First line is the header ``TANv1 <n>``; line
r (0-based after the header) describes transaction r as

    output_count|p1,p2,...

where p1 < p2 < ... are the ids of the distinct parent transactions and
the parent list is empty for coinbase transactions.  Parents must always
reference earlier lines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .tan import TxRecord

STREAM_MAGIC = "TANv1"


class IngestError(Exception):
    pass


class ParseError(IngestError):
    def __init__(self, line_no: int, msg: str) -> None:
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class ForwardReference(ParseError):
    pass


class BadHeader(IngestError):
    pass


class DuplicateHash(IngestError):
    pass


class ConfigInvalid(IngestError):
    pass


def write_stream(path: str | Path, records: Iterable[TxRecord], n: int | None = None) -> None:
    """Write records in canonical form.  `n` defaults to len(records)."""
    records = list(records) if n is None else records
    count = len(records) if n is None else n  # type: ignore[arg-type]
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(f"{STREAM_MAGIC} {count}\n")
        for rec in records:
            parents = ",".join(str(p) for p in rec.inputs)
            f.write(f"{rec.output_count}|{parents}\n")


def parse_stream(path: str | Path) -> Iterator[TxRecord]:
    """Yield records in arrival order, validating ids and back-references."""
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        parts = header.split()
        if len(parts) != 2 or parts[0] != STREAM_MAGIC or not parts[1].isdigit():
            raise BadHeader(f"bad stream header: {header!r}")
        declared = int(parts[1])
        txid = 0
        for line_no, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                out_part, _, parent_part = line.partition("|")
                output_count = int(out_part)
                parents = (
                    tuple(int(p) for p in parent_part.split(",")) if parent_part else ()
                )
            except ValueError as exc:
                raise ParseError(line_no, f"malformed record: {line!r}") from exc
            for p in parents:
                if p >= txid or p < 0:
                    raise ForwardReference(
                        line_no, f"tx {txid} references non-prior tx {p}"
                    )
            yield TxRecord(id=txid, inputs=parents, output_count=output_count)
            txid += 1
        if txid != declared:
            raise BadHeader(f"header declares {declared} txs, file holds {txid}")


def load_stream(path: str | Path) -> list[TxRecord]:
    return list(parse_stream(path))


# ---------------------------------------------------------------------------
# External dump conversion (hash-keyed CSV -> dense-id canonical stream)
# ---------------------------------------------------------------------------

@dataclass
class ConvertSummary:
    tx_count: int = 0
    dangling_inputs: int = 0
    zero_io_txs: int = 0


def convert_external(
    raw_path: str | Path,
    out_path: str | Path,
    map_path: str | Path | None = None,
) -> ConvertSummary:
    """Convert a hash-keyed dump to a canonical stream plus id map.

    Input CSV columns: ``tx_hash, input_hashes, output_count`` where
    input_hashes is a semicolon-joined list (may be empty).  Inputs whose
    hash never appeared before are dropped with a warning counter, which
    turns the transaction into a coinbase-like node; transactions with
    neither inputs nor outputs are kept as isolated nodes.
    """
    ids: dict[str, int] = {}
    summary = ConvertSummary()
    records: list[TxRecord] = []
    with open(raw_path, "r", encoding="utf-8", newline="") as f:
        for row_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(row_no, f"expected 3 columns, got {len(row)}")
            tx_hash, input_field, out_field = row
            tx_hash = tx_hash.strip()
            if tx_hash in ids:
                raise DuplicateHash(f"row {row_no}: duplicate tx hash {tx_hash}")
            try:
                output_count = int(out_field)
            except ValueError as exc:
                raise ParseError(row_no, f"bad output count {out_field!r}") from exc
            raw_inputs = [h.strip() for h in input_field.split(";") if h.strip()]
            parents = []
            for h in raw_inputs:
                pid = ids.get(h)
                if pid is None:
                    summary.dangling_inputs += 1
                else:
                    parents.append(pid)
            txid = len(records)
            ids[tx_hash] = txid
            if not raw_inputs and output_count == 0:
                summary.zero_io_txs += 1
            records.append(
                TxRecord(
                    id=txid,
                    inputs=tuple(parents),
                    output_count=output_count,
                    input_count_raw=len(raw_inputs),
                )
            )
    summary.tx_count = len(records)
    write_stream(out_path, records)
    if map_path is not None:
        with open(map_path, "w", encoding="utf-8", newline="\n") as f:
            f.write("tx_hash,tx_id\n")
            for h, i in ids.items():
                f.write(f"{h},{i}\n")
    return summary


# ---------------------------------------------------------------------------
# Synthetic stream generation
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Knobs for the synthetic UTXO stream generator.

    The stream is organized as spending communities (wallet clusters):
    each coinbase starts a community, later transactions join the
    community of a recently active output and spend mostly within it,
    with a small rate of cross-community bridge inputs.  Community choice
    is preferential by recent activity (a ring of the last
    `community_ring` transactions), so busy lineages attract more
    spending.  In-degrees follow a truncated power law; the defaults land
    the empirical mean in-degree near 2.3.  Parents are always unspent
    output slots of earlier transactions, so streams are double-spend
    free unless conflicts are injected deliberately.
    """

    n: int = 10_000
    coinbase_fraction: float = 0.01
    indeg_exponent: float = 1.75
    indeg_cap: int = 16
    outdeg_exponent: float = 1.8
    outdeg_cap: int = 32
    community_ring: int = 512
    mix_rate: float = 0.15
    revive_rate: float = 0.10
    conflict_fraction: float = 0.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigInvalid("n must be >= 1")
        if not (0.0 <= self.coinbase_fraction < 1.0):
            raise ConfigInvalid("coinbase_fraction must be in [0, 1)")
        if self.indeg_cap < 1 or self.outdeg_cap < 1:
            raise ConfigInvalid("degree caps must be >= 1")
        if self.indeg_exponent <= 1.0 or self.outdeg_exponent <= 1.0:
            raise ConfigInvalid("power-law exponents must be > 1")
        if not (0.0 <= self.mix_rate <= 1.0):
            raise ConfigInvalid("mix_rate must be in [0, 1]")
        if not (0.0 <= self.revive_rate <= 1.0):
            raise ConfigInvalid("revive_rate must be in [0, 1]")
        if self.community_ring < 1:
            raise ConfigInvalid("community_ring must be >= 1")
        if not (0.0 <= self.conflict_fraction < 0.5):
            raise ConfigInvalid("conflict_fraction must be in [0, 0.5)")


@dataclass
class SynthResult:
    records: list[TxRecord]
    conflict_pairs: list[tuple[int, int]] = field(default_factory=list)


def _power_law_pmf(cap: int, exponent: float) -> np.ndarray:
    d = np.arange(1, cap + 1, dtype=float)
    w = d ** (-exponent)
    return w / w.sum()


def generate_synthetic(cfg: SynthConfig) -> SynthResult:
    """Deterministic DAG-valid stream with community spending structure.

    Each transaction consumes distinct free output slots of earlier
    transactions, so no parent is ever over-spent.  When
    `conflict_fraction` > 0, that fraction of the stream is emitted as
    conflicting pairs: a one-output funding coinbase followed by two
    single-input spenders of it, the second of which over-subscribes the
    funding output (a deliberate double spend).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    indeg_pmf = _power_law_pmf(cfg.indeg_cap, cfg.indeg_exponent)
    outdeg_pmf = _power_law_pmf(cfg.outdeg_cap, cfg.outdeg_exponent)

    records: list[TxRecord] = []
    pairs: list[tuple[int, int]] = []
    pools: list[list[int]] = []  # per community: free slots (owner tx ids)
    ring: list[int] = []  # community ids of recent txs, capped ring buffer
    ring_pos = 0

    n_pairs = int(round(cfg.conflict_fraction * cfg.n))
    # Each conflict burst is 3 txs (funding, spender, double-spender).
    conflict_starts: set[int] = set()
    if n_pairs:
        usable = cfg.n - 3
        if usable < 1:
            raise ConfigInvalid("stream too short for conflict injection")
        starts = np.linspace(1, usable, num=n_pairs, dtype=int)
        # Nudge collisions apart; bursts must not overlap.
        prev = -3
        for s in starts:
            s = max(int(s), prev + 3)
            if s > usable:
                break
            conflict_starts.add(s)
            prev = s

    def draw_outputs() -> int:
        return int(rng.choice(cfg.outdeg_cap, p=outdeg_pmf)) + 1

    def remember(comm: int) -> None:
        nonlocal ring_pos
        if len(ring) < cfg.community_ring:
            ring.append(comm)
        else:
            ring[ring_pos] = comm
            ring_pos = (ring_pos + 1) % cfg.community_ring

    def pick_community() -> int | None:
        """Recency-weighted community choice, with occasional revival of a
        dormant one (old unspent outputs coming back into circulation)."""
        if not ring:
            return None
        if rng.random() < cfg.revive_rate:
            for _ in range(8):
                comm = int(rng.integers(0, len(pools)))
                if pools[comm]:
                    return comm
        for _ in range(8):
            comm = ring[int(rng.integers(0, len(ring)))]
            if pools[comm]:
                return comm
        for comm in ring:
            if pools[comm]:
                return comm
        return None

    def take_slot(comm: int) -> int:
        pool = pools[comm]
        idx = int(rng.integers(0, len(pool)))
        owner = pool[idx]
        pool[idx] = pool[-1]
        pool.pop()
        return owner

    i = 0
    burst: list[TxRecord] = []
    while i < cfg.n:
        if burst:
            records.append(burst.pop(0))
            i += 1
            continue
        if i in conflict_starts and i + 2 < cfg.n:
            # Funding coinbase with a single output, reserved (not pooled).
            fund = TxRecord(id=i, inputs=(), output_count=1)
            a = TxRecord(id=i + 1, inputs=(i,), output_count=draw_outputs())
            b = TxRecord(id=i + 2, inputs=(i,), output_count=draw_outputs())
            pairs.append((i + 1, i + 2))
            records.append(fund)
            burst = [a, b]
            # Only the first spender commits; neither side's outputs are
            # pooled so no later tx builds on the doomed branch.
            i += 1
            continue
        comm = None if rng.random() < cfg.coinbase_fraction else pick_community()
        if comm is None:
            # Coinbase: starts a fresh community funded by its outputs.
            out = draw_outputs()
            comm = len(pools)
            pools.append([i] * out)
            records.append(TxRecord(id=i, inputs=(), output_count=out))
            remember(comm)
            i += 1
            continue
        d = int(rng.choice(cfg.indeg_cap, p=indeg_pmf)) + 1
        owners = [take_slot(comm)]
        for _ in range(d - 1):
            src = comm
            if rng.random() < cfg.mix_rate:
                other = pick_community()
                if other is not None:
                    src = other
            if not pools[src]:
                if not pools[comm]:
                    break
                src = comm
            owners.append(take_slot(src))
        parents = tuple(sorted(set(owners)))
        out = draw_outputs()
        records.append(
            TxRecord(id=i, inputs=parents, output_count=out, input_count_raw=len(owners))
        )
        pools[comm].extend([i] * out)
        remember(comm)
        i += 1
    return SynthResult(records=records, conflict_pairs=pairs)


def generate_two_input_stream(n: int, rng_seed: int = 0, n_seed_txs: int = 16) -> list[TxRecord]:
    """Stream where every tx past the seeds has exactly 2 distinct prior inputs.

    Parents are uniform over all earlier transactions; used for analytic
    cross-shard checks where input shards must be iid uniform.
    """
    if n <= n_seed_txs:
        raise ConfigInvalid(f"n must exceed {n_seed_txs}")
    rng = np.random.default_rng(rng_seed)
    ids = np.arange(n_seed_txs, n, dtype=np.int64)
    p1 = rng.integers(0, ids)  # uniform over [0, id)
    p2 = rng.integers(0, ids - 1)
    p2 = np.where(p2 >= p1, p2 + 1, p2)  # uniform over [0, id) \ {p1}
    records = [TxRecord(id=i, inputs=(), output_count=4) for i in range(n_seed_txs)]
    for i, a, b in zip(ids.tolist(), p1.tolist(), p2.tolist()):
        records.append(TxRecord(id=i, inputs=(a, b), output_count=4))
    return records
