"""Full-catalog ranking evaluation with tail, bucket and coverage breakdowns."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import InteractionDataset, LeaveOneOutSplit, leave_one_out
from .errors import ContractError

DEFAULT_KS = (5, 10, 20)
BUCKET_EDGES = (0, 5, 10, 20, 50)


def bucket_label(i: int) -> str:
    lo = BUCKET_EDGES[i]
    return f"{lo}+" if i == len(BUCKET_EDGES) - 1 else f"{lo}-{BUCKET_EDGES[i + 1] - 1}"


def popularity_bucket(popularity) -> np.ndarray:
    """Bucket index for [0,5), [5,10), [10,20), [20,50), [50,inf)."""
    return np.searchsorted(np.asarray(BUCKET_EDGES), np.asarray(popularity), side="right") - 1


def hr_ndcg(rank: int, k: int) -> tuple[int, float]:
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > k:
        return 0, 0.0
    return 1, 1.0 / math.log2(rank + 1)


def _masked_scores(scores: np.ndarray, targets: np.ndarray, exclude) -> np.ndarray:
    masked = np.array(scores, dtype=np.float64, copy=True)
    if exclude is not None:
        for u, items in enumerate(exclude):
            items = np.asarray(items, dtype=np.int64)
            masked[u, items[items != targets[u]]] = -np.inf
    return masked


def rank_targets(scores: np.ndarray, targets, exclude=None) -> np.ndarray:
    """1-based rank of each row's target; excluded items are not candidates.

    Ties are resolved against the target: every other candidate scoring at
    least as high is ranked ahead of it.
    """
    scores = np.atleast_2d(scores)
    targets = np.asarray(targets, dtype=np.int64)
    masked = _masked_scores(scores, targets, exclude)
    rows = np.arange(len(targets))
    target_scores = masked[rows, targets]
    ahead = (masked >= target_scores[:, None]).sum(axis=1) - 1
    return ahead + 1


def rank_all(scores_row: np.ndarray, target: int, exclude=()) -> int:
    """Rank of one user's target given that user's scores over the catalog."""
    return int(rank_targets(np.asarray(scores_row)[None], [target], [exclude])[0])


def top_k(scores: np.ndarray, k: int, exclude=None) -> np.ndarray:
    """Top-``k`` item ids per row, best first; equal scores go to the smaller id."""
    scores = np.atleast_2d(scores)
    masked = _masked_scores(scores, np.full(len(scores), -1), exclude)
    order = np.argsort(-masked, axis=1, kind="stable")
    return order[:, :k]


def coverage(rec_lists, n_items: int, tail_items, k: int) -> tuple[float, float]:
    """(Coverage@K, Tail_Coverage@K) over the union of all recommendation lists."""
    seen: set[int] = set()
    for lst in rec_lists:
        lst = [int(i) for i in lst]
        if len(lst) != k or len(set(lst)) != k:
            raise ContractError(f"each recommendation list needs exactly {k} distinct items")
        seen.update(lst)
    tail = {int(i) for i in tail_items}
    cov = len(seen) / n_items
    tcov = len(seen & tail) / len(tail) if tail else 0.0
    return cov, tcov


@dataclass
class GroupMetrics:
    n_users: int
    hr: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    split: str
    ks: tuple[int, ...]
    overall: GroupMetrics
    tail: GroupMetrics
    head: GroupMetrics
    buckets: list[GroupMetrics]
    coverage: dict[int, float]
    tail_coverage: dict[int, float]

    @property
    def n_users(self) -> int:
        return self.overall.n_users

    def rows(self) -> list[tuple[str, str, int, float]]:
        """Flat (group, metric, k, value) rows in a fixed order."""
        out = []
        groups = [("overall", self.overall), ("tail", self.tail), ("head", self.head)]
        groups += [(f"pop_{bucket_label(i)}", g) for i, g in enumerate(self.buckets)]
        for name, g in groups:
            for k in self.ks:
                out.append((name, "HR", k, g.hr[k]))
                out.append((name, "NDCG", k, g.ndcg[k]))
        for k in self.ks:
            out.append(("all", "Coverage", k, self.coverage[k]))
            out.append(("all", "Tail_Coverage", k, self.tail_coverage[k]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["split", "group", "metric", "k", "value", "n_users"])
        sizes = {"overall": self.overall.n_users, "tail": self.tail.n_users, "head": self.head.n_users}
        sizes.update({f"pop_{bucket_label(i)}": g.n_users for i, g in enumerate(self.buckets)})
        for group, metric, k, value in self.rows():
            writer.writerow([self.split, group, metric, k, repr(float(value)), sizes.get(group, self.n_users)])
        return buf.getvalue()

    def format_table(self) -> str:
        header = ["Group", "Users"]
        for k in self.ks:
            header += [f"H@{k}", f"N@{k}"]
        lines = []
        groups = [("Overall", self.overall), ("Tail", self.tail), ("Head", self.head)]
        groups += [(f"pop {bucket_label(i)}", g) for i, g in enumerate(self.buckets)]
        for name, g in groups:
            row = [name, str(g.n_users)]
            for k in self.ks:
                row += [f"{g.hr[k]:.4f}", f"{g.ndcg[k]:.4f}"]
            lines.append(row)
        cov_row = ["Cov / TCov", ""]
        for k in self.ks:
            cov_row += [f"{self.coverage[k]:.4f}", f"{self.tail_coverage[k]:.4f}"]
        lines.append(cov_row)
        widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
        out = [fmt(header), "  ".join("-" * w for w in widths)]
        out += [fmt(r) for r in lines]
        return "\n".join(out)


def _group(ranks: np.ndarray, ks: Sequence[int]) -> GroupMetrics:
    g = GroupMetrics(n_users=len(ranks))
    for k in ks:
        if len(ranks) == 0:
            g.hr[k], g.ndcg[k] = 0.0, 0.0
            continue
        hit = ranks <= k
        g.hr[k] = float(hit.mean())
        g.ndcg[k] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())
    return g


def evaluate_scores(
    scores: np.ndarray,
    dataset: InteractionDataset,
    split: str = "test",
    ks: Sequence[int] = DEFAULT_KS,
    exclude_seen: bool = True,
    loo: LeaveOneOutSplit | None = None,
) -> EvalReport:
    """Aggregate metrics from a precomputed (n_users, n_items) score matrix."""
    loo = loo or leave_one_out(dataset)
    ks = tuple(sorted(ks))
    targets = loo.targets(split)
    exclude = loo.history(split) if exclude_seen else None
    ranks = rank_targets(scores, targets, exclude)
    tail_mask = ~dataset.head_flag[targets]
    buckets = popularity_bucket(dataset.popularity[targets])
    report = EvalReport(
        split=split,
        ks=ks,
        overall=_group(ranks, ks),
        tail=_group(ranks[tail_mask], ks),
        head=_group(ranks[~tail_mask], ks),
        buckets=[_group(ranks[buckets == b], ks) for b in range(len(BUCKET_EDGES))],
        coverage={},
        tail_coverage={},
    )
    order = top_k(scores, max(ks), exclude)
    for k in ks:
        report.coverage[k], report.tail_coverage[k] = coverage(
            order[:, :k], dataset.n_items, dataset.tail_items, k
        )
    return report


def evaluate(model, dataset: InteractionDataset, split: str = "test", ks: Sequence[int] = DEFAULT_KS,
             exclude_seen: bool = True, loo: LeaveOneOutSplit | None = None) -> EvalReport:
    """Score every user against the whole catalog and aggregate metrics.

    ``model`` needs a ``score(histories) -> (n_users, n_items)`` method.
    """
    loo = loo or leave_one_out(dataset)
    scores = model.score(loo.history(split))
    return evaluate_scores(scores, dataset, split, ks, exclude_seen, loo)
