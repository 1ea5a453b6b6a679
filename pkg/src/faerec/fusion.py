"""Dimension-wise gated fusion of ID and semantic item embeddings."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, concat, matmul, sigmoid
from .errors import DimensionError
from .params import ParameterStore


def init_gate(params: ParameterStore, d: int, rng: np.random.Generator) -> None:
    """Register gate weights so that the initial gate is exactly 0.5 everywhere.

    The second layer and both biases start at zero. The first layer gets small
    random weights; were it zero too, the hidden activations would stay zero
    and only ``gate.b2`` could ever move.
    """
    params.add("gate.W1", rng.normal(0.0, 1.0 / math.sqrt(2 * d), (2 * d, 2 * d)))
    params.add("gate.b1", np.zeros(2 * d))
    params.add("gate.W2", np.zeros((d, 2 * d)))
    params.add("gate.b2", np.zeros(d))


def gate(params, e_id: Tensor, e_llm: Tensor) -> Tensor:
    """sigmoid(W2 (W1 [e_id ; e_llm] + b1) + b2), applied row-wise.

    There is deliberately no activation between the two affine maps.
    """
    if e_id.shape != e_llm.shape:
        raise DimensionError(f"gate: ID shape {e_id.shape} != LLM shape {e_llm.shape}")
    d = e_id.shape[-1]
    w1, w2 = params["gate.W1"], params["gate.W2"]
    if w1.shape != (2 * d, 2 * d) or w2.shape != (d, 2 * d):
        raise DimensionError(f"gate: weights {w1.shape}, {w2.shape} do not fit embedding size {d}")
    x = concat([e_id, e_llm], axis=-1)
    hidden = matmul(x, w1.T) + params["gate.b1"]
    return sigmoid(matmul(hidden, w2.T) + params["gate.b2"])


def fuse_train(g: Tensor, e_id: Tensor, e_llm: Tensor) -> Tensor:
    if not (g.shape == e_id.shape == e_llm.shape):
        raise DimensionError(f"fuse_train: shapes {g.shape}, {e_id.shape}, {e_llm.shape} differ")
    return g * e_id + (1.0 - g) * e_llm


def fuse_infer(e_id: Tensor, e_llm: Tensor) -> Tensor:
    if e_id.shape != e_llm.shape:
        raise DimensionError(f"fuse_infer: shapes {e_id.shape} and {e_llm.shape} differ")
    return 0.5 * e_id + 0.5 * e_llm
