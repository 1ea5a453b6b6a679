"""Item representation and scoring model combining all building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, matmul, no_grad, take
from .encoder import encode_attn_states, init_attn_encoder
from .errors import ConfigError, ConsistencyError, DimensionError
from .fusion import fuse_infer, fuse_train, gate, init_gate
from .params import ParameterStore
from .semantic import SemanticStore, fit_pca, init_projection, pca_project, project_llm

FUSION_KINDS = ("gate", "equal", "id_only")
ID_INITS = ("pca", "normal")
ENCODER_KINDS = ("attn", "last")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    max_len: int = 50
    fusion: str = "gate"  # "equal" is the no-gating ablation, "id_only" the plain ID baseline
    id_init: str = "pca"
    id_init_std: float = 0.1
    encoder: str = "attn"
    blocks: int = 2
    d_ff: int = 0  # 0 means 4 * d
    proj_hidden: int = 0  # 0 means ceil(d_llm / 2)

    def __post_init__(self):
        if self.d < 1 or self.max_len < 1 or self.blocks < 0:
            raise ConfigError("model.d, model.max_len must be positive and encoder.blocks >= 0")
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"model.fusion must be one of {FUSION_KINDS}")
        if self.id_init not in ID_INITS:
            raise ConfigError(f"model.id_init must be one of {ID_INITS}")
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder.kind must be one of {ENCODER_KINDS}")

    @property
    def uses_semantic(self) -> bool:
        return self.fusion != "id_only"

    @property
    def ff_width(self) -> int:
        return self.d_ff or 4 * self.d


class FAERecModel:
    """Holds the parameters and produces item tables, user states and scores.

    Internally item id ``i`` occupies row ``i + 1`` of every padded table; row 0
    is the all-zero padding row.
    """

    def __init__(self, cfg: ModelConfig, n_items: int, semantic: SemanticStore | None, seed: int = 0):
        if cfg.uses_semantic:
            if semantic is None:
                raise ConfigError(f"fusion={cfg.fusion!r} needs semantic embeddings")
            if semantic.n_items != n_items:
                raise ConsistencyError(
                    f"semantic store has {semantic.n_items} rows but the catalog has {n_items} items"
                )
        self.cfg = cfg
        self.n_items = n_items
        self.semantic = semantic if cfg.uses_semantic else None
        self.params = ParameterStore()
        rng = np.random.default_rng(seed)

        if cfg.id_init == "pca":
            if semantic is None:
                raise ConfigError("model.id_init=pca needs semantic embeddings")
            if cfg.d > min(semantic.n_items, semantic.d_llm):
                raise DimensionError(f"model.d={cfg.d} exceeds what PCA of the semantic store can provide")
            init = pca_project(fit_pca(semantic, cfg.d), semantic)
        else:
            init = rng.normal(0.0, cfg.id_init_std, (n_items, cfg.d))
        self.params.add("item.id", init)
        if cfg.uses_semantic:
            init_projection(self.params, semantic.d_llm, cfg.d, rng, cfg.proj_hidden or None)
        if cfg.fusion == "gate":
            init_gate(self.params, cfg.d, rng)
        if cfg.encoder == "attn":
            init_attn_encoder(self.params, cfg.d, cfg.max_len, cfg.blocks, cfg.ff_width, rng)

    # -- item side -----------------------------------------------------------
    def id_embeddings(self, item_ids=None) -> Tensor:
        table = self.params["item.id"]
        return table if item_ids is None else take(table, np.asarray(item_ids))

    def llm_embeddings(self, item_ids=None) -> Tensor:
        ids = np.arange(self.n_items) if item_ids is None else np.asarray(item_ids)
        return project_llm(self.params, self.semantic, ids)

    def item_table(self, train: bool) -> Tensor:
        """Fused item vectors for the whole catalog, padding row first."""
        e_id = self.id_embeddings()
        if self.cfg.fusion == "id_only":
            fused = e_id
        else:
            e_llm = self.llm_embeddings()
            if train and self.cfg.fusion == "gate":
                fused = fuse_train(gate(self.params, e_id, e_llm), e_id, e_llm)
            else:
                fused = fuse_infer(e_id, e_llm)
        return concat([Tensor(np.zeros((1, self.cfg.d))), fused], axis=0)

    # -- sequence side -------------------------------------------------------
    def encode_states(self, table: Tensor, padded_ids: np.ndarray) -> Tensor:
        """States at every position for left-padded rows of internal ids (0 = pad)."""
        if padded_ids.shape[1] > self.cfg.max_len:
            raise DimensionError(f"sequence length {padded_ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        f = take(table, padded_ids)
        if self.cfg.encoder == "last":
            return f
        return encode_attn_states(self.params, f, padded_ids > 0)

    def user_states(self, histories, batch_size: int = 1024) -> np.ndarray:
        """Final state per history (dense item ids, oldest first), as an array."""
        with no_grad():
            table = self.item_table(train=False)
            out = np.zeros((len(histories), self.cfg.d))
            for start in range(0, len(histories), batch_size):
                chunk = histories[start : start + batch_size]
                padded = pad_left(chunk, self.cfg.max_len)
                out[start : start + len(chunk)] = self.encode_states(table, padded).data[:, -1]
        return out

    def item_vectors(self) -> np.ndarray:
        with no_grad():
            return self.item_table(train=False).data[1:]

    def score(self, histories) -> np.ndarray:
        """(n_histories, n_items) dot-product scores with inference-time fusion."""
        return self.user_states(histories) @ self.item_vectors().T


def pad_left(histories, max_len: int | None = None) -> np.ndarray:
    """Left-pad dense-id sequences into internal ids (id + 1, pad 0).

    Histories longer than ``max_len`` keep their most recent items.
    """
    length = max((len(h) for h in histories), default=1)
    if max_len is not None:
        length = min(length, max_len)
    length = max(length, 1)
    out = np.zeros((len(histories), length), dtype=np.int64)
    for row, h in enumerate(histories):
        h = np.asarray(h, dtype=np.int64)[-length:]
        if len(h):
            out[row, length - len(h):] = h + 1
    return out
