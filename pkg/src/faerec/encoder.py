"""Sequence encoders producing the user state from fused item embeddings.

Sequences are left-padded. ``mask`` marks real items with True. Padded
positions never act as attention keys, so a sequence's states do not depend
on how much padding precedes it.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, matmul, relu, softmax, sqrt
from .errors import ContractError, DimensionError
from .params import ParameterStore

LN_EPS = 1e-8
INIT_STD = 0.02


def init_attn_encoder(params: ParameterStore, d: int, max_len: int, n_blocks: int, d_ff: int,
                      rng: np.random.Generator) -> None:
    params.add("enc.pos", rng.normal(0.0, INIT_STD, (max_len, d)))
    for b in range(n_blocks):
        p = f"enc.{b}."
        for name in ("Wq", "Wk", "Wv", "Wo"):
            params.add(p + name, rng.normal(0.0, INIT_STD, (d, d)))
        params.add(p + "ln1.scale", np.ones(d))
        params.add(p + "ln1.offset", np.zeros(d))
        params.add(p + "ff.W1", rng.normal(0.0, INIT_STD, (d, d_ff)))
        params.add(p + "ff.b1", np.zeros(d_ff))
        params.add(p + "ff.W2", rng.normal(0.0, INIT_STD, (d_ff, d)))
        params.add(p + "ff.b2", np.zeros(d))
        params.add(p + "ln2.scale", np.ones(d))
        params.add(p + "ln2.offset", np.zeros(d))


def n_blocks_in(params) -> int:
    b = 0
    while f"enc.{b}.Wq" in params:
        b += 1
    return b


def layer_norm(x: Tensor, scale: Tensor | None = None, offset: Tensor | None = None) -> Tensor:
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / sqrt(var + LN_EPS)
    if scale is not None:
        out = out * scale
    if offset is not None:
        out = out + offset
    return out


def attention_mask(mask: np.ndarray) -> np.ndarray:
    """(B, L, L) boolean: query i may attend key j iff j <= i and j is real.

    Padded queries attend to themselves so that every softmax row is defined.
    """
    b, length = mask.shape
    causal = np.tril(np.ones((length, length), dtype=bool))
    eye = np.eye(length, dtype=bool)
    return causal[None] & (mask[:, None, :] | eye[None])


def _prepare(f: Tensor, mask) -> tuple[Tensor, np.ndarray, bool]:
    single = f.ndim == 2
    if single:
        f = f.reshape(1, *f.shape)
    if f.ndim != 3:
        raise DimensionError(f"encoder input must be L x d or B x L x d, got {f.shape}")
    if mask is None:
        mask = np.ones(f.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None]
    if mask.shape != f.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} does not match sequence shape {f.shape[:2]}")
    return f, mask, single


def encode_attn_states(params, f: Tensor, mask=None) -> Tensor:
    """Hidden states at every position, shape (B, L, d) (or (L, d) for one sequence)."""
    f, mask, single = _prepare(f, mask)
    pos = params["enc.pos"]
    length, d = f.shape[1], f.shape[2]
    if length > pos.shape[0]:
        raise DimensionError(f"sequence length {length} exceeds max_len {pos.shape[0]}")
    if length < 1:
        raise DimensionError("empty sequence")
    # left padding: the last position always uses the last positional row
    x = f + pos[pos.shape[0] - length:]
    allowed = attention_mask(mask)
    inv_sqrt_d = 1.0 / math.sqrt(d)
    for b in range(n_blocks_in(params)):
        p = f"enc.{b}."
        q = matmul(x, params[p + "Wq"])
        k = matmul(x, params[p + "Wk"])
        v = matmul(x, params[p + "Wv"])
        weights = softmax(matmul(q, k.swap_last()) * inv_sqrt_d, axis=-1, mask=allowed)
        attn = matmul(matmul(weights, v), params[p + "Wo"])
        x = layer_norm(x + attn, params[p + "ln1.scale"], params[p + "ln1.offset"])
        ff = matmul(relu(matmul(x, params[p + "ff.W1"]) + params[p + "ff.b1"]), params[p + "ff.W2"])
        x = layer_norm(x + ff + params[p + "ff.b2"], params[p + "ln2.scale"], params[p + "ln2.offset"])
    return x[0] if single else x


def _last_real(mask: np.ndarray) -> np.ndarray:
    if not np.all(mask.any(axis=1)):
        raise ContractError("a sequence has no real (non-padded) positions")
    return mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)


def encode_attn(params, f: Tensor, mask=None) -> Tensor:
    """User state: final hidden state at the last real position."""
    f3, mask3, single = _prepare(f, mask)
    states = encode_attn_states(params, f3, mask3)
    out = states[np.arange(states.shape[0]), _last_real(mask3)]
    return out[0] if single else out


def encode_last(f: Tensor, mask=None) -> Tensor:
    """The last real row of each sequence, unchanged."""
    f3, mask3, single = _prepare(f, mask)
    if f3.shape[1] == 0:
        raise ContractError("empty sequence")
    out = f3[np.arange(f3.shape[0]), _last_real(mask3)]
    return out[0] if single else out
