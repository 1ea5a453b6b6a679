"""Item-level and feature-level alignment between ID and semantic embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, logsumexp, matmul, sqrt
from .errors import ConfigError, DegenerateInputError, DimensionError, GroupTooSmallError

ALIGN_MODES = ("no_ila", "no_fla", "no_cls", "no_pg")


def parse_mode(text: str) -> frozenset[str]:
    """Parse ``full`` or a ``+``-joined subset of ``no_ila``, ``no_fla``, ``no_cls``, ``no_pg``."""
    text = text.strip()
    if text in ("", "full"):
        return frozenset()
    flags = frozenset(p.strip() for p in text.split("+"))
    unknown = flags - set(ALIGN_MODES)
    if unknown:
        raise ConfigError(f"unknown align.mode flag(s): {sorted(unknown)}")
    return flags


def format_mode(mode: frozenset[str]) -> str:
    return "+".join(m for m in ALIGN_MODES if m in mode) or "full"


@dataclass(frozen=True)
class AlignmentConfig:
    tau: float = 0.1
    lam: float = 0.01
    w_max: float = 1.0
    w_min: float = 0.0
    period: int = 50
    popularity_grouping: bool = True
    eps_std: float = 1e-8
    mode: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", parse_mode(self.mode))
        if not self.tau > 0:
            raise ConfigError("align.tau must be positive")
        if self.lam < 0:
            raise ConfigError("align.lambda must be non-negative")
        if not (0.0 <= self.w_min <= self.w_max <= 1.0):
            raise ConfigError("align weights need 0 <= w_min <= w_max <= 1")
        if self.period < 1:
            raise ConfigError("align.period must be a positive number of epochs")
        if not self.eps_std > 0:
            raise ConfigError("align eps_std must be positive")

    @property
    def grouping(self) -> bool:
        return self.popularity_grouping and "no_pg" not in self.mode


@dataclass(frozen=True)
class BatchGroups:
    high_ids: np.ndarray
    low_ids: np.ndarray
    median: float


def _row_normalize(e: Tensor, what: str) -> Tensor:
    sq = (e * e).sum(axis=1, keepdims=True)
    if np.any(sq.data == 0):
        raise DegenerateInputError(f"{what} has a zero-norm row; cosine similarity is undefined")
    return e / sqrt(sq)


def ila_loss(e_id: Tensor, e_llm: Tensor, tau: float) -> Tensor:
    """InfoNCE over cosine similarities; row i of each view is the positive pair."""
    if e_id.ndim != 2 or e_id.shape != e_llm.shape:
        raise DimensionError(f"ila_loss: need two equal K x d matrices, got {e_id.shape} and {e_llm.shape}")
    k = e_id.shape[0]
    if k < 1:
        raise DimensionError("ila_loss: empty batch")
    logits = matmul(_row_normalize(e_id, "ID embedding"), _row_normalize(e_llm, "LLM embedding").T) * (1.0 / tau)
    idx = np.arange(k)
    return (logsumexp(logits, axis=1) - logits[idx, idx]).mean()


def lower_median(values) -> float:
    ordered = np.sort(np.asarray(values))
    return ordered[(len(ordered) - 1) // 2]


def split_by_median(item_ids, popularity) -> BatchGroups:
    """High group: popularity >= lower median of the batch; low group: the rest."""
    ids = np.asarray(item_ids)
    if ids.size == 0:
        raise ValueError("split_by_median: empty item set")
    pops = np.asarray(popularity)[ids]
    median = lower_median(pops)
    return BatchGroups(high_ids=ids[pops >= median], low_ids=ids[pops < median], median=float(median))


def standardize(e: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-column (x - mean) / (population std + eps) over the rows."""
    if e.ndim != 2:
        raise DimensionError(f"standardize: expected a matrix, got shape {e.shape}")
    if e.shape[0] < 2:
        raise GroupTooSmallError(f"standardize needs at least 2 rows, got {e.shape[0]}")
    centered = e - e.mean(axis=0, keepdims=True)
    std = sqrt((centered * centered).mean(axis=0, keepdims=True), floor=np.finfo(float).tiny)
    return centered / (std + eps)


def cross_corr(z_id: Tensor, z_llm: Tensor) -> Tensor:
    """d x d matrix of column cosine similarities between the two views."""
    if z_id.ndim != 2 or z_id.shape != z_llm.shape:
        raise DimensionError(f"cross_corr: shapes {z_id.shape} and {z_llm.shape} differ")
    d = z_id.shape[1]
    sq_id = (z_id * z_id).sum(axis=0)
    sq_llm = (z_llm * z_llm).sum(axis=0)
    if np.any(sq_id.data == 0) or np.any(sq_llm.data == 0):
        raise DegenerateInputError("cross_corr: a column has zero norm")
    norms = sqrt(sq_id).reshape(d, 1) * sqrt(sq_llm).reshape(1, d)
    return matmul(z_id.T, z_llm) / norms


def fla_group_loss(c: Tensor, lam: float) -> Tensor:
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"fla_group_loss: expected a square matrix, got {c.shape}")
    d = c.shape[0]
    idx = np.arange(d)
    on_diag = c[idx, idx]
    invariance = ((1.0 - on_diag) * (1.0 - on_diag)).sum()
    off_mask = 1.0 - np.eye(d)
    redundancy = (c * c * off_mask).sum()
    return invariance + lam * redundancy


def _group_loss(e_id: Tensor, e_llm: Tensor, rows: np.ndarray, cfg: AlignmentConfig) -> Tensor | None:
    if len(rows) < 2:
        return None
    try:
        z_id = standardize(e_id[rows], cfg.eps_std)
        z_llm = standardize(e_llm[rows], cfg.eps_std)
        return fla_group_loss(cross_corr(z_id, z_llm), cfg.lam)
    except DegenerateInputError:
        return None


def fla_loss(e_id: Tensor, e_llm: Tensor, item_ids, popularity, cfg: AlignmentConfig) -> Tensor:
    """Sum of per-group feature-level losses; rows of the inputs follow ``item_ids``.

    Groups with fewer than two items, or with a constant embedding column,
    contribute zero.
    """
    ids = np.asarray(item_ids)
    if len(ids) != e_id.shape[0] or e_id.shape != e_llm.shape:
        raise DimensionError("fla_loss: embeddings must have one row per item id")
    if cfg.grouping:
        groups = split_by_median(ids, popularity)
        high = set(groups.high_ids.tolist())
        mask = np.array([i in high for i in ids.tolist()])
        row_sets = [np.flatnonzero(mask), np.flatnonzero(~mask)]
    else:
        row_sets = [np.arange(len(ids))]
    total: Tensor | None = None
    for rows in row_sets:
        part = _group_loss(e_id, e_llm, rows, cfg)
        if part is not None:
            total = part if total is None else total + part
    return total if total is not None else Tensor(0.0)


def curriculum_weight(t: float, cfg: AlignmentConfig) -> float:
    """Cosine schedule for the item-level weight: w_max at t=0, w_min at t=T/2."""
    return (cfg.w_max - cfg.w_min) * (1.0 + math.cos(2.0 * math.pi * t / cfg.period)) / 2.0 + cfg.w_min


def loss_weights(t: float, cfg: AlignmentConfig) -> tuple[float, float, float]:
    """(w, item-level coefficient, feature-level coefficient) after ablation flags."""
    w = 0.5 if "no_cls" in cfg.mode else curriculum_weight(t, cfg)
    if "no_ila" in cfg.mode and "no_fla" in cfg.mode:
        return w, 0.0, 0.0
    if "no_ila" in cfg.mode:
        w = 0.0
    elif "no_fla" in cfg.mode:
        w = 1.0
    return w, w, 1.0 - w


def align_loss(e_id: Tensor, e_llm: Tensor, item_ids, popularity, t: float, cfg: AlignmentConfig) -> Tensor:
    """w(t) * item-level loss + (1 - w(t)) * feature-level loss."""
    _, c_ila, c_fla = loss_weights(t, cfg)
    total = Tensor(0.0)
    if c_ila:
        total = total + c_ila * ila_loss(e_id, e_llm, cfg.tau)
    if c_fla:
        total = total + c_fla * fla_loss(e_id, e_llm, item_ids, popularity, cfg)
    return total
