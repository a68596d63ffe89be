"""Transaction-to-shard scoring with O(k * |parents|) incremental updates.

Each transaction u carries a raw k-vector built from its parents' raw
vectors: raw(u) = (1 - alpha) * sum_v raw(v) / children(v), where the
child count of each parent is snapshotted right after u's edges are
attached and never revisited.  Placing u into shard s then adds alpha to
raw(u)[s].  The queryable score divides entry i by the current size of
shard i (clamped to 1), so committing one transaction rescales a single
column for everybody without touching stored state.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from .tan import TanGraph


class ScoreError(Exception):
    pass


class MissingParentScore(ScoreError):
    """A parent's raw vector was never computed."""


class ZeroOutDegree(ScoreError):
    """Internal error: a parent of u must have >= 1 child once u is attached."""


class DoubleCommit(ScoreError):
    pass


class BadShardIndex(ScoreError):
    pass


class ScoreState:
    """Raw score vectors, shard sizes, and placement bookkeeping."""

    _GROW = 1024

    def __init__(self, k: int, alpha: float = 0.5) -> None:
        if k < 1:
            raise BadShardIndex(f"k must be >= 1, got {k}")
        if not (0.0 < alpha <= 1.0):
            raise ScoreError(f"alpha must be in (0, 1], got {alpha}")
        self.k = k
        self.alpha = alpha
        self.shard_sizes = np.zeros(k, dtype=np.int64)
        self._p_raw = np.zeros((self._GROW, k), dtype=np.float64)
        self._placements = np.full(self._GROW, -1, dtype=np.int64)
        self._computed = np.zeros(self._GROW, dtype=bool)
        self._snapshot_deg = np.zeros(self._GROW, dtype=np.int64)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _ensure(self, txid: int) -> None:
        cap = self._p_raw.shape[0]
        if txid >= cap:
            new_cap = max(cap * 2, txid + 1)
            self._p_raw = np.vstack(
                [self._p_raw, np.zeros((new_cap - cap, self.k), dtype=np.float64)]
            )
            self._placements = np.concatenate(
                [self._placements, np.full(new_cap - cap, -1, dtype=np.int64)]
            )
            self._computed = np.concatenate(
                [self._computed, np.zeros(new_cap - cap, dtype=bool)]
            )
            self._snapshot_deg = np.concatenate(
                [self._snapshot_deg, np.zeros(new_cap - cap, dtype=np.int64)]
            )

    def raw(self, txid: int) -> np.ndarray:
        if txid >= self._n or not self._computed[txid]:
            raise MissingParentScore(f"no raw score stored for tx {txid}")
        return self._p_raw[txid]

    def placement(self, txid: int) -> int:
        if txid >= self._n:
            return -1
        return int(self._placements[txid])

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return raw / np.maximum(self.shard_sizes, 1)

    def compute_score(
        self, txid: int, parents: Sequence[int], graph: TanGraph
    ) -> np.ndarray:
        """Store raw(txid) from its parents and return the normalized score.

        Must be called once per transaction, in arrival order, right after
        the record is inserted into the graph; parent child-counts are read
        from the graph at that moment and frozen.  Coinbase transactions get
        the zero vector with no computation.
        """
        self._ensure(txid)
        vec = np.zeros(self.k, dtype=np.float64)
        for v in parents:
            if v >= self._n or not self._computed[v]:
                raise MissingParentScore(f"parent {v} of tx {txid} has no score")
            deg = graph.out_degree(v)
            if deg < 1:
                raise ZeroOutDegree(f"parent {v} has out-degree {deg}")
            self._snapshot_deg[v] = deg
            vec += self._p_raw[v] / deg
        if parents:
            vec *= 1.0 - self.alpha
        self._p_raw[txid] = vec
        self._computed[txid] = True
        self._n = max(self._n, txid + 1)
        return self.normalize(vec)

    def commit_placement(self, txid: int, shard: int) -> None:
        if not (0 <= shard < self.k):
            raise BadShardIndex(f"shard {shard} out of range for k={self.k}")
        if txid >= self._n or not self._computed[txid]:
            raise MissingParentScore(f"tx {txid} has no computed score to commit")
        if self._placements[txid] >= 0:
            raise DoubleCommit(f"tx {txid} already placed in shard {self._placements[txid]}")
        self._p_raw[txid, shard] += self.alpha
        self._placements[txid] = shard
        self.shard_sizes[shard] += 1

    def raw_matrix(self) -> np.ndarray:
        return self._p_raw[: self._n]

    def placements_array(self) -> np.ndarray:
        return self._placements[: self._n]

    def snapshot_out_degrees(self) -> np.ndarray:
        return self._snapshot_deg[: self._n]


def batch_scores(
    graph: TanGraph, placements: Sequence[int], k: int, alpha: float = 0.5
) -> np.ndarray:
    """From-scratch forward pass reproducing the incremental semantics.

    Replays arrival order, re-deriving each parent's child count at the
    moment each child attached, and applies the alpha update for every
    placed transaction (placement -1 means never placed).  Serves as the
    independent oracle for the incremental path.
    """
    n = len(graph)
    if len(placements) < n:
        raise ScoreError(f"placements cover {len(placements)} of {n} txs")
    out = np.zeros((n, k), dtype=np.float64)
    child_count = np.zeros(n, dtype=np.int64)
    for u in range(n):
        parents = graph.parents(u)
        for v in parents:
            child_count[v] += 1
        if parents:
            vec = np.zeros(k, dtype=np.float64)
            for v in parents:
                vec += out[v] / child_count[v]
            vec *= 1.0 - alpha
            out[u] = vec
        s = placements[u]
        if s is not None and s >= 0:
            if s >= k:
                raise BadShardIndex(f"placement {s} out of range for k={k}")
            out[u, s] += alpha
    return out


# ---------------------------------------------------------------------------
# Binary checkpoint (versioned header, little-endian payload)
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"T2SC"
_CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIdIQ")  # magic, version, alpha, k, n


def save_checkpoint(state: ScoreState, path: str) -> None:
    """Dump the full score state so long runs can resume.

    Layout: header (magic ``T2SC``, u32 version, f64 alpha, u32 k, u64 n),
    then k u64 shard sizes, n i64 placements, n i64 snapshot child counts,
    and n*k f64 raw vectors in id order.  Everything little-endian.
    """
    n = len(state)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, state.alpha, state.k, n))
        f.write(state.shard_sizes.astype("<i8").tobytes())
        f.write(state.placements_array().astype("<i8").tobytes())
        f.write(state.snapshot_out_degrees().astype("<i8").tobytes())
        f.write(state.raw_matrix().astype("<f8").tobytes())


def load_checkpoint(path: str) -> ScoreState:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ScoreError("checkpoint truncated")
        magic, version, alpha, k, n = _HEADER.unpack(head)
        if magic != _CKPT_MAGIC:
            raise ScoreError(f"not a score checkpoint: {magic!r}")
        if version != _CKPT_VERSION:
            raise ScoreError(f"unsupported checkpoint version {version}")
        state = ScoreState(k=k, alpha=alpha)
        state._ensure(max(n - 1, 0))
        state.shard_sizes = np.frombuffer(f.read(8 * k), dtype="<i8").astype(np.int64)
        placements = np.frombuffer(f.read(8 * n), dtype="<i8").astype(np.int64)
        snap = np.frombuffer(f.read(8 * n), dtype="<i8").astype(np.int64)
        raw = np.frombuffer(f.read(8 * n * k), dtype="<f8").reshape(n, k)
        state._placements[:n] = placements
        state._snapshot_deg[:n] = snap
        state._p_raw[:n] = raw
        state._computed[:n] = True
        state._n = n
        return state
