"""Exact L2 nearest-neighbor store over encoded expert (latent, action) pairs.

Latents are stored as float32, matching the snapshot format. Queries cast the
probe to float32 as well, so a latent that was inserted is found again at
distance exactly 0. Distances are *squared* L2, accumulated in float64 one
dimension at a time in index order; the result is therefore bit-identical to
a naive per-entry scalar loop.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BuildError, DimensionError, DomainError, FormatError, QueryError

MAGIC = b"BOAIDX1"
VERSION = 1
_HEADER = struct.Struct("<IIII")
_TRAILER_MAGIC = b"FEAT"
_TRAILER = struct.Struct("<QII")


@dataclass(frozen=True)
class IndexEntry:
    latent: np.ndarray
    action: int
    trajectory_id: int
    step: int


@dataclass(frozen=True)
class Neighbor:
    entry_id: int
    distance: float
    action: int
    trajectory_id: int
    step: int


class LatentIndex:
    """Immutable flat index. Build with :meth:`build`, never mutate."""

    def __init__(
        self,
        latents: np.ndarray,
        actions: np.ndarray,
        trajectory_ids: np.ndarray,
        steps: np.ndarray,
        num_actions: int,
        featurizer: dict | None = None,
    ):
        self.latents = np.ascontiguousarray(latents, dtype=np.float32)
        self.actions = np.ascontiguousarray(actions, dtype=np.uint32)
        self.trajectory_ids = np.ascontiguousarray(trajectory_ids, dtype=np.uint32)
        self.steps = np.ascontiguousarray(steps, dtype=np.uint32)
        self.num_actions = int(num_actions)
        self.featurizer = featurizer
        for arr in (self.latents, self.actions, self.trajectory_ids, self.steps):
            arr.flags.writeable = False
        # column-major float64 copy: one contiguous row per dimension
        self._columns = np.ascontiguousarray(self.latents.T, dtype=np.float64)
        self._provenance = {
            (int(t), int(s)): i
            for i, (t, s) in enumerate(zip(self.trajectory_ids.tolist(), self.steps.tolist()))
        }
        if len(self._provenance) != len(self):
            raise BuildError("(trajectory_id, step) pairs must be unique within an index")

    @classmethod
    def build(
        cls,
        entries: Sequence[IndexEntry],
        num_actions: int | None = None,
        featurizer: dict | None = None,
    ) -> "LatentIndex":
        if len(entries) == 0:
            raise BuildError("cannot build an index from zero entries")
        dim = np.asarray(entries[0].latent).shape
        if len(dim) != 1 or dim[0] == 0:
            raise BuildError(f"latents must be non-empty vectors, got shape {dim}")
        latents = np.empty((len(entries), dim[0]), dtype=np.float32)
        for i, e in enumerate(entries):
            z = np.asarray(e.latent)
            if z.shape != dim:
                raise BuildError(f"entry {i} has dimension {z.shape}, expected {dim}")
            latents[i] = z
        if not np.all(np.isfinite(latents)):
            raise BuildError("latents must be finite")
        actions = np.array([e.action for e in entries], dtype=np.int64)
        if num_actions is None:
            num_actions = int(actions.max()) + 1
        if np.any(actions < 0) or np.any(actions >= num_actions):
            raise BuildError(f"actions must lie in [0, {num_actions})")
        return cls(
            latents,
            actions,
            np.array([e.trajectory_id for e in entries], dtype=np.int64),
            np.array([e.step for e in entries], dtype=np.int64),
            num_actions,
            featurizer,
        )

    def __len__(self) -> int:
        return self.latents.shape[0]

    @property
    def dim(self) -> int:
        return self.latents.shape[1]

    def entry_id(self, trajectory_id: int, step: int) -> int | None:
        return self._provenance.get((int(trajectory_id), int(step)))

    def neighbor(self, entry_id: int, distance: float = 0.0) -> Neighbor:
        return Neighbor(
            entry_id,
            distance,
            int(self.actions[entry_id]),
            int(self.trajectory_ids[entry_id]),
            int(self.steps[entry_id]),
        )

    def _probe(self, z) -> np.ndarray:
        q = np.asarray(z)
        if q.shape != (self.dim,):
            raise DimensionError(f"query has shape {q.shape}, index dimension is {self.dim}")
        if not np.all(np.isfinite(q)):
            raise DomainError("query latent must be finite")
        return q.astype(np.float32).astype(np.float64)

    def squared_distances_to(self, z, entry_id: int) -> float:
        """Squared distance to one entry, accumulated exactly as in a full scan."""
        q = self._probe(z)
        acc = 0.0
        for a, b in zip(self._columns[:, entry_id].tolist(), q.tolist()):
            acc += (a - b) * (a - b)
        return acc

    def squared_distances(self, z) -> np.ndarray:
        q = self._probe(z)
        acc = np.zeros(len(self), dtype=np.float64)
        buf = np.empty_like(acc)
        for j, col in enumerate(self._columns):
            np.subtract(col, q[j], out=buf)
            np.multiply(buf, buf, out=buf)
            np.add(acc, buf, out=acc)
        return acc

    def query(self, z, k: int) -> list[Neighbor]:
        """The k entries closest to ``z``; ties go to the lower entry id."""
        if k < 1:
            raise QueryError(f"k must be >= 1, got {k}")
        if k > len(self):
            raise QueryError(f"k={k} exceeds index size {len(self)}")
        dist = self.squared_distances(z)
        if k < len(self):
            kth = np.partition(dist, k - 1)[k - 1]
            below = np.flatnonzero(dist < kth)
            tied = np.flatnonzero(dist == kth)[: k - below.size]
            cand = np.concatenate([below, tied])
        else:
            cand = np.arange(len(self))
        order = cand[np.lexsort((cand, dist[cand]))]
        return [self.neighbor(int(i), float(dist[i])) for i in order]

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LatentIndex":
        return cls.from_bytes(Path(path).read_bytes())

    def to_bytes(self) -> bytes:
        n, d = self.latents.shape
        rec = np.zeros(n, dtype=_record_dtype(d))
        rec["latent"] = self.latents
        rec["action"] = self.actions
        rec["trajectory_id"] = self.trajectory_ids
        rec["step"] = self.steps
        parts = [MAGIC, _HEADER.pack(VERSION, d, self.num_actions, n), rec.tobytes()]
        if self.featurizer is not None:
            f = self.featurizer
            parts += [_TRAILER_MAGIC, _TRAILER.pack(f["seed"], f["dim"], f["input_dim"])]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LatentIndex":
        head = len(MAGIC) + _HEADER.size
        if len(data) < head or data[: len(MAGIC)] != MAGIC:
            raise FormatError("not an index snapshot (bad magic or truncated header)")
        version, d, num_actions, n = _HEADER.unpack_from(data, len(MAGIC))
        if version != VERSION:
            raise FormatError(f"unsupported index version {version}")
        if d == 0 or n == 0:
            raise FormatError("index snapshot declares zero dimension or zero entries")
        dtype = _record_dtype(d)
        end = head + n * dtype.itemsize
        if len(data) < end:
            raise FormatError("index snapshot is truncated")
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=head)
        featurizer = None
        rest = data[end:]
        if rest:
            if len(rest) != len(_TRAILER_MAGIC) + _TRAILER.size or rest[:4] != _TRAILER_MAGIC:
                raise FormatError("unexpected trailing bytes in index snapshot")
            seed, fd, input_dim = _TRAILER.unpack_from(rest, 4)
            featurizer = {"seed": seed, "dim": fd, "input_dim": input_dim}
        if np.any(rec["action"] >= num_actions):
            raise FormatError("index snapshot contains an out-of-range action")
        try:
            return cls(
                rec["latent"].copy(),
                rec["action"].copy(),
                rec["trajectory_id"].copy(),
                rec["step"].copy(),
                num_actions,
                featurizer,
            )
        except BuildError as exc:
            raise FormatError(str(exc)) from exc


def _record_dtype(d: int) -> np.dtype:
    return np.dtype(
        [("latent", "<f4", (d,)), ("action", "<u4"), ("trajectory_id", "<u4"), ("step", "<u4")]
    )


def action_counts(neighbors: Iterable[Neighbor], num_actions: int) -> np.ndarray:
    counts = np.zeros(num_actions, dtype=np.int64)
    for nb in neighbors:
        if not 0 <= nb.action < num_actions:
            raise DomainError(f"neighbor action {nb.action} outside [0, {num_actions})")
        counts[nb.action] += 1
    return counts


def expert_distribution(counts) -> np.ndarray:
    """Empirical expert policy: the fraction of neighbors taking each action."""
    c = np.asarray(counts, dtype=np.int64)
    total = int(c.sum())
    if total <= 0:
        raise DomainError("expert distribution needs at least one counted neighbor")
    return c / total
