"""Interaction ingestion, chronological sequences, popularity and head/tail labels.

Dense ids follow the order in which users and items first appear when the
records are read chronologically (timestamp, then input position). With
distinct timestamps this makes every derived quantity independent of the
order of lines in the input file.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDatasetError, FormatError, ParseError

log = logging.getLogger(__name__)

HEAD_FRACTION_DENOM = 5  # head = top ceil(n / 5) items, i.e. 20%
FDAT_MAGIC = b"FDAT"
FDAT_VERSION = 1


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int


@dataclass
class InteractionDataset:
    sequences: list[np.ndarray]
    popularity: np.ndarray
    head_flag: np.ndarray
    user_keys: list[str]
    item_keys: list[str]
    max_seq_len: int = 50

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    @property
    def head_items(self) -> np.ndarray:
        return np.flatnonzero(self.head_flag)

    @property
    def tail_items(self) -> np.ndarray:
        return np.flatnonzero(~self.head_flag)

    def item_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.item_keys)}

    def summary(self) -> str:
        return f"users={self.n_users} items={self.n_items} head={int(self.head_flag.sum())}"


@dataclass
class LeaveOneOutSplit:
    train: list[np.ndarray]
    valid: np.ndarray
    test: np.ndarray

    def history(self, split: str) -> list[np.ndarray]:
        """Model input sequences for predicting the ``split`` target."""
        if split == "valid":
            return self.train
        if split == "test":
            return [np.append(p, v) for p, v in zip(self.train, self.valid)]
        raise ValueError(f"unknown split {split!r}")

    def targets(self, split: str) -> np.ndarray:
        if split == "valid":
            return self.valid
        if split == "test":
            return self.test
        raise ValueError(f"unknown split {split!r}")


def load_interactions(path: str | Path, strict: bool = False) -> list[InteractionRecord]:
    """Read ``user<TAB>item<TAB>timestamp`` lines.

    Blank lines are ignored. Malformed lines raise :class:`ParseError` under
    ``strict``; otherwise they are skipped and their count is logged.
    """
    records: list[InteractionRecord] = []
    bad: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            rec = None
            if len(parts) == 3 and parts[0] and parts[1]:
                try:
                    ts = int(parts[2])
                except ValueError:
                    ts = -1
                if ts >= 0:
                    rec = InteractionRecord(parts[0], parts[1], ts)
            if rec is None:
                if strict:
                    raise ParseError(f"expected 'user<TAB>item<TAB>timestamp', got {line!r}", lineno)
                bad.append(lineno)
                continue
            records.append(rec)
    if bad:
        log.warning("%s: skipped %d malformed line(s), first at line %d", path, len(bad), bad[0])
    return records


def build_dataset(
    records: Sequence[InteractionRecord], min_seq_len: int = 3, max_seq_len: int = 50
) -> InteractionDataset:
    """Group records into per-user chronological sequences.

    Users with fewer than ``min_seq_len`` records are dropped, each sequence is
    truncated to its most recent ``max_seq_len`` items, and items left with no
    interactions are dropped from the catalog.
    """
    if min_seq_len < 3:
        raise ValueError("min_seq_len must be at least 3 for a leave-one-out split")
    if max_seq_len < min_seq_len:
        raise ValueError("max_seq_len must be >= min_seq_len")
    if not records:
        raise EmptyDatasetError("no interaction records")

    order = sorted(range(len(records)), key=lambda i: records[i].timestamp)
    per_user: dict[str, list[str]] = {}
    for i in order:
        r = records[i]
        per_user.setdefault(r.user, []).append(r.item)

    kept = {u: items[-max_seq_len:] for u, items in per_user.items() if len(items) >= min_seq_len}
    if not kept:
        raise EmptyDatasetError(f"every user has fewer than {min_seq_len} interactions")

    used = {item for items in kept.values() for item in items}
    item_ids: dict[str, int] = {}
    for i in order:
        r = records[i]
        if r.user in kept and r.item in used and r.item not in item_ids:
            item_ids[r.item] = len(item_ids)
    item_keys = list(item_ids)

    user_keys = list(kept)  # dict preserves chronological first appearance
    sequences = [np.array([item_ids[v] for v in kept[u]], dtype=np.int64) for u in user_keys]
    dataset = InteractionDataset(
        sequences=sequences,
        popularity=_train_popularity(sequences, len(item_keys)),
        head_flag=np.zeros(len(item_keys), dtype=bool),
        user_keys=user_keys,
        item_keys=item_keys,
        max_seq_len=max_seq_len,
    )
    return split_head_tail(dataset)


def _train_popularity(sequences: Iterable[np.ndarray], n_items: int) -> np.ndarray:
    counts = np.zeros(n_items, dtype=np.int64)
    for seq in sequences:
        np.add.at(counts, seq[:-2], 1)
    return counts


def head_count(n_items: int) -> int:
    return -(-n_items // HEAD_FRACTION_DENOM)


def split_head_tail(dataset: InteractionDataset) -> InteractionDataset:
    """Flag the top 20% (rounded up) most popular items as head.

    Ties in popularity go to the smaller dense id.
    """
    n = dataset.n_items
    ranked = np.lexsort((np.arange(n), -dataset.popularity))
    flags = np.zeros(n, dtype=bool)
    flags[ranked[: head_count(n)]] = True
    return replace(dataset, head_flag=flags)


def leave_one_out(dataset: InteractionDataset) -> LeaveOneOutSplit:
    train, valid, test = [], [], []
    for seq in dataset.sequences:
        train.append(seq[:-2])
        valid.append(seq[-2])
        test.append(seq[-1])
    return LeaveOneOutSplit(train, np.array(valid, dtype=np.int64), np.array(test, dtype=np.int64))


# -- FDAT ------------------------------------------------------------------

def _write_strings(buf: io.BytesIO, strings: Sequence[str]) -> None:
    for s in strings:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"key too long for FDAT: {s[:40]}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)


def write_dataset(path: str | Path, dataset: InteractionDataset) -> None:
    """Write the FDAT binary form (little-endian throughout)."""
    buf = io.BytesIO()
    buf.write(FDAT_MAGIC)
    buf.write(struct.pack("<III", FDAT_VERSION, dataset.n_users, dataset.n_items))
    for seq in dataset.sequences:
        buf.write(struct.pack("<I", len(seq)))
        buf.write(np.asarray(seq, dtype="<u4").tobytes())
    buf.write(np.asarray(dataset.popularity, dtype="<u4").tobytes())
    buf.write(np.asarray(dataset.head_flag, dtype="u1").tobytes())
    _write_strings(buf, dataset.user_keys)
    _write_strings(buf, dataset.item_keys)
    Path(path).write_bytes(buf.getvalue())


def read_dataset(path: str | Path) -> InteractionDataset:
    blob = Path(path).read_bytes()
    if blob[:4] != FDAT_MAGIC:
        raise FormatError(f"{path}: not an FDAT file (magic {blob[:4]!r})")
    try:
        version, n_users, n_items = struct.unpack_from("<III", blob, 4)
        if version != FDAT_VERSION:
            raise FormatError(f"{path}: unsupported FDAT version {version}")
        pos = 16
        sequences = []
        for _ in range(n_users):
            (length,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            seq = np.frombuffer(blob, dtype="<u4", count=length, offset=pos).astype(np.int64)
            pos += 4 * length
            sequences.append(seq)
        popularity = np.frombuffer(blob, dtype="<u4", count=n_items, offset=pos).astype(np.int64)
        pos += 4 * n_items
        head = np.frombuffer(blob, dtype="u1", count=n_items, offset=pos).astype(bool)
        pos += n_items
        keys: list[list[str]] = []
        for count in (n_users, n_items):
            out = []
            for _ in range(count):
                (length,) = struct.unpack_from("<H", blob, pos)
                pos += 2
                out.append(blob[pos : pos + length].decode("utf-8"))
                pos += length
            keys.append(out)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt FDAT file") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    for seq in sequences:
        if len(seq) < 3 or seq.max() >= n_items:
            raise FormatError(f"{path}: invalid sequence in FDAT file")
    return InteractionDataset(
        sequences=sequences,
        popularity=popularity,
        head_flag=head,
        user_keys=keys[0],
        item_keys=keys[1],
        max_seq_len=max(len(s) for s in sequences) if sequences else 3,
    )
