"""Total objective, Adam, and the epoch loop with validation-based model selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .alignment import AlignmentConfig, fla_loss, ila_loss, loss_weights
from .autodiff import Tensor, log_sigmoid, take
from .data import InteractionDataset, LeaveOneOutSplit, leave_one_out
from .errors import ConfigError, ContractError, TrainingError
from .evaluation import evaluate
from .model import FAERecModel, pad_left
from .params import ParameterStore, read_frec, write_frec

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "rec_loss", "ila_loss", "fla_loss", "w_t", "valid_HR10", "valid_N10")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    alpha: float = 0.3
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ConfigError("train.batch_size and train.patience must be positive, train.epochs >= 0")
        if self.alpha < 0:
            raise ConfigError("train.alpha must be non-negative")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: ParameterStore, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update of every registered parameter."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ContractError(f"no gradient for trainable parameter(s): {missing}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = t.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        t.data = t.data - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


# -- losses ----------------------------------------------------------------

def rec_loss(h: Tensor, e_pos: Tensor, e_neg: Tensor, mask=None) -> Tensor:
    """Negated binary cross-entropy with one positive and one negative per position.

    Inputs share a shape ``(..., d)``; the loss is averaged over the positions
    selected by ``mask`` (all positions when omitted).
    """
    pos = (h * e_pos).sum(axis=-1)
    neg = (h * e_neg).sum(axis=-1)
    per_position = -(log_sigmoid(pos) + log_sigmoid(-neg))
    if mask is None:
        return per_position.mean()
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractError("rec_loss: no positions selected")
    return (per_position * mask).sum() * (1.0 / count)


@dataclass
class Batch:
    inputs: np.ndarray     # (B, L) internal ids, 0 = pad
    positives: np.ndarray  # (B, L) internal ids of next items, 0 at pads
    negatives: np.ndarray  # (B, L)
    mask: np.ndarray       # (B, L) bool, real positions

    def align_items(self) -> np.ndarray:
        """Distinct dense item ids in the inputs and targets, ascending."""
        ids = np.concatenate([self.inputs[self.mask], self.positives[self.mask]])
        return np.unique(ids) - 1


@dataclass
class LossBreakdown:
    total: float
    rec: float
    ila: float
    fla: float
    w: float
    ila_coef: float
    fla_coef: float


def make_batch(prefixes, n_items: int, rng: np.random.Generator, max_len: int) -> Batch:
    """Next-item targets at every position of each training prefix, with one
    uniform negative per position drawn from the items other than the target."""
    inputs = pad_left([p[:-1] for p in prefixes], max_len)
    positives = pad_left([p[1:] for p in prefixes], max_len)
    mask = positives > 0
    draw = rng.integers(0, n_items - 1, size=positives.shape)
    negatives = draw + (draw >= positives - 1)  # skip the target, keep uniformity
    negatives = np.where(mask, negatives + 1, 0)
    return Batch(inputs=inputs, positives=positives, negatives=negatives, mask=mask)


def total_loss(
    batch: Batch,
    model: FAERecModel,
    popularity: np.ndarray,
    t: float,
    train_cfg: TrainConfig,
    align_cfg: AlignmentConfig,
) -> tuple[Tensor, LossBreakdown]:
    """Recommendation loss plus alpha times the alignment loss."""
    table = model.item_table(train=True)
    states = model.encode_states(table, batch.inputs)
    rec = rec_loss(states, take(table, batch.positives), take(table, batch.negatives), batch.mask)

    w, c_ila, c_fla = loss_weights(t, align_cfg)
    ila_value = fla_value = 0.0
    total = rec
    if model.cfg.uses_semantic:
        items = batch.align_items()
        e_id = model.id_embeddings(items)
        e_llm = model.llm_embeddings(items)
        ila = ila_loss(e_id, e_llm, align_cfg.tau)
        fla = fla_loss(e_id, e_llm, items, popularity, align_cfg)
        ila_value, fla_value = ila.item(), fla.item()
        for name, value in (("rec", rec.item()), ("ila", ila_value), ("fla", fla_value)):
            if not math.isfinite(value):
                raise TrainingError(f"non-finite {name} loss ({value})")
        align = None
        if c_ila:
            align = c_ila * ila
        if c_fla:
            align = c_fla * fla if align is None else align + c_fla * fla
        if align is not None and train_cfg.alpha:
            total = rec + train_cfg.alpha * align
    elif not math.isfinite(rec.item()):
        raise TrainingError(f"non-finite rec loss ({rec.item()})")

    breakdown = LossBreakdown(
        total=total.item(), rec=rec.item(), ila=ila_value, fla=fla_value, w=w, ila_coef=c_ila, fla_coef=c_fla
    )
    return total, breakdown


# -- training loop ---------------------------------------------------------

@dataclass
class TrainResult:
    model: FAERecModel
    metrics: list[dict]
    best_epoch: int
    best_valid_n10: float
    epochs_run: int


def _format_row(row: dict) -> list[str]:
    return [str(row["epoch"])] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]]


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow(_format_row(row))


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


META_PREFIX = "__meta__."
ADAM_M = "__adam_m__."
ADAM_V = "__adam_v__."


def checkpoint_arrays(model: FAERecModel, state: AdamState | None = None, meta: dict | None = None) -> dict:
    arrays = model.params.arrays()
    if state is not None:
        for name, m in state.m.items():
            arrays[ADAM_M + name] = m
        for name, v in state.v.items():
            arrays[ADAM_V + name] = v
        arrays[META_PREFIX + "adam_step"] = np.array([state.step], dtype=np.float64)
    for key, value in (meta or {}).items():
        arrays[META_PREFIX + key] = np.array([value], dtype=np.float64)
    return arrays


def split_checkpoint(arrays: dict) -> tuple[dict, AdamState, dict]:
    params, state, meta = {}, AdamState(), {}
    for name, value in arrays.items():
        if name.startswith(ADAM_M):
            state.m[name[len(ADAM_M):]] = value
        elif name.startswith(ADAM_V):
            state.v[name[len(ADAM_V):]] = value
        elif name.startswith(META_PREFIX):
            meta[name[len(META_PREFIX):]] = float(value.reshape(-1)[0])
        else:
            params[name] = value
    state.step = int(meta.pop("adam_step", 0))
    return params, state, meta


def train(
    dataset: InteractionDataset,
    semantic,
    model_cfg,
    train_cfg: TrainConfig,
    align_cfg: AlignmentConfig,
    out_dir: str | Path | None = None,
    resume: bool = False,
    exclude_seen: bool = True,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train with Adam, validating with N@10 after every epoch.

    The returned model carries the parameters of the best validation epoch
    (the initial parameters when no epoch ran). With ``out_dir``, ``last.frec``
    (parameters, Adam state, counters), ``best.frec`` and ``metrics.csv`` are
    written after each epoch; ``resume`` continues from ``last.frec``.
    """
    loo = leave_one_out(dataset)
    model = FAERecModel(model_cfg, dataset.n_items, semantic, seed=train_cfg.seed)
    state = AdamState()
    metrics: list[dict] = []
    start_epoch = 0
    best_n10, best_epoch, bad_epochs = -1.0, -1, 0
    best_arrays = model.params.arrays()

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None or not (out / "last.frec").exists():
            raise ConfigError("resume requested but no last.frec checkpoint exists")
        params, state, meta = split_checkpoint(read_frec(out / "last.frec"))
        model.params.load_arrays(params)
        start_epoch = int(meta["epochs_done"])
        best_n10, best_epoch, bad_epochs = meta["best_n10"], int(meta["best_epoch"]), int(meta["bad_epochs"])
        if (out / "best.frec").exists():
            best_arrays, _, _ = split_checkpoint(read_frec(out / "best.frec"))
        if (out / "metrics.csv").exists():
            metrics = read_metrics_csv(out / "metrics.csv")[:start_epoch]

    trainable = [i for i, p in enumerate(loo.train) if len(p) >= 2]
    if not trainable:
        raise ConfigError("no user has a training prefix with at least two items")

    for epoch in range(start_epoch, train_cfg.epochs):
        if bad_epochs >= train_cfg.patience:
            break
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(trainable)
        sums = np.zeros(3)
        n_batches = 0
        w = 0.0
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            users = order[start : start + train_cfg.batch_size]
            rng = np.random.default_rng([train_cfg.seed, epoch, b])
            batch = make_batch([loo.train[u] for u in users], dataset.n_items, rng, model_cfg.max_len)
            model.params.zero_grad()
            loss, parts = total_loss(batch, model, dataset.popularity, epoch, train_cfg, align_cfg)
            loss.backward()
            adam_step(model.params, state, train_cfg)
            sums += (parts.rec, parts.ila, parts.fla)
            n_batches += 1
            w = parts.w

        report = evaluate(model, dataset, "valid", ks=(10,), exclude_seen=exclude_seen, loo=loo)
        row = {
            "epoch": epoch,
            "rec_loss": sums[0] / n_batches,
            "ila_loss": sums[1] / n_batches,
            "fla_loss": sums[2] / n_batches,
            "w_t": w,
            "valid_HR10": report.overall.hr[10],
            "valid_N10": report.overall.ndcg[10],
        }
        metrics.append(row)
        log.info("epoch %d rec=%.4f ila=%.4f fla=%.4f w=%.3f HR@10=%.4f N@10=%.4f", *[row[c] for c in METRIC_COLUMNS])

        if row["valid_N10"] > best_n10:
            best_n10, best_epoch, bad_epochs = row["valid_N10"], epoch, 0
            best_arrays = model.params.arrays()
            if out is not None:
                write_frec(out / "best.frec", best_arrays)
        else:
            bad_epochs += 1
        if out is not None:
            meta = {"epochs_done": epoch + 1, "best_n10": best_n10, "best_epoch": best_epoch, "bad_epochs": bad_epochs}
            write_frec(out / "last.frec", checkpoint_arrays(model, state, meta))
            write_metrics_csv(out / "metrics.csv", metrics)
        if on_epoch is not None:
            on_epoch(row)

    if out is not None and not (out / "best.frec").exists():
        write_frec(out / "best.frec", best_arrays)
    if out is not None and not (out / "metrics.csv").exists():
        write_metrics_csv(out / "metrics.csv", metrics)
    model.params.load_arrays(best_arrays)
    return TrainResult(
        model=model,
        metrics=metrics,
        best_epoch=best_epoch,
        best_valid_n10=best_n10,
        epochs_run=len(metrics),
    )
