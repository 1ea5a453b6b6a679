"""Frozen semantic item vectors, their PCA reduction and the trainable projection.

FEMB layout (little-endian): magic ``b"FEMB"``, u32 version (1), u32
n_items, u32 d_llm, then ``n_items * d_llm`` float32 values, row ``i`` being
the item with dense id ``i``.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, matmul, tanh
from .errors import ConsistencyError, DimensionError, FormatError, ParseError
from .params import ParameterStore

log = logging.getLogger(__name__)

FEMB_MAGIC = b"FEMB"
FEMB_VERSION = 1
SYNTH_NOISE = 0.1


class SemanticStore:
    """Read-only ``n_items x d_llm`` matrix of semantic item vectors."""

    def __init__(self, vectors):
        arr = np.array(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DimensionError(f"semantic vectors must be a non-empty matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FormatError("semantic vectors contain non-finite values")
        arr.flags.writeable = False
        self._vectors = arr

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def n_items(self) -> int:
        return self._vectors.shape[0]

    @property
    def d_llm(self) -> int:
        return self._vectors.shape[1]

    def rows(self, item_ids) -> Tensor:
        """Constant tensor of the requested rows; never receives gradients."""
        ids = np.asarray(item_ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_items):
            raise IndexError(f"item id out of range for {self.n_items} semantic rows")
        return Tensor(self._vectors[ids])

    def reindex(self, order: Sequence[int]) -> "SemanticStore":
        """New store whose row ``i`` is this store's row ``order[i]``."""
        return SemanticStore(self._vectors[np.asarray(order)])


def write_semantic(path: str | Path, store: SemanticStore) -> None:
    buf = io.BytesIO()
    buf.write(FEMB_MAGIC)
    buf.write(struct.pack("<III", FEMB_VERSION, store.n_items, store.d_llm))
    buf.write(store.vectors.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_semantic(path: str | Path, n_items: int | None = None) -> SemanticStore:
    blob = Path(path).read_bytes()
    if blob[:4] != FEMB_MAGIC:
        raise FormatError(f"{path}: not a FEMB file (magic {blob[:4]!r})")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated FEMB header")
    version, n, d = struct.unpack_from("<III", blob, 4)
    if version != FEMB_VERSION:
        raise FormatError(f"{path}: unsupported FEMB version {version}")
    if len(blob) != 16 + 4 * n * d:
        raise FormatError(f"{path}: expected {n}x{d} float32 values, file size {len(blob)} disagrees")
    if n_items is not None and n != n_items:
        raise ConsistencyError(f"{path}: embeddings cover {n} items but the dataset has {n_items}")
    vectors = np.frombuffer(blob, dtype="<f4", count=n * d, offset=16).reshape(n, d)
    return SemanticStore(vectors.astype(np.float64))


def semantic_from_tsv(path: str | Path, item_keys: Sequence[str]) -> SemanticStore:
    """Parse ``item_key<TAB>f1,...,fd`` lines and order rows by ``item_keys``."""
    rows: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            key, sep, values = line.partition("\t")
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError:
                raise ParseError(f"bad vector for item {key!r}", lineno) from None
            if not sep or not key:
                raise ParseError("expected 'item_key<TAB>f1,...,fd'", lineno)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"item {key!r} has {len(vec)} values, expected {dim}", lineno)
            rows[key] = vec
    missing = [k for k in item_keys if k not in rows]
    if missing:
        raise ConsistencyError(f"{len(missing)} dataset item(s) lack embeddings, e.g. {missing[0]!r}")
    return SemanticStore(np.stack([rows[k] for k in item_keys]))


def synth_semantic(n_items: int, d_llm: int, n_clusters: int, seed: int) -> SemanticStore:
    """Cluster-structured unit vectors standing in for language-model embeddings.

    Item ``i`` belongs to cluster ``i % n_clusters`` and is the normalized sum
    of a random unit centroid and N(0, 0.1^2) noise.
    """
    if not 1 <= n_clusters <= n_items:
        raise ValueError(f"n_clusters must be in [1, n_items={n_items}], got {n_clusters}")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((n_clusters, d_llm))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    vectors = centroids[np.arange(n_items) % n_clusters] + SYNTH_NOISE * rng.standard_normal((n_items, d_llm))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return SemanticStore(vectors)


# -- PCA -------------------------------------------------------------------

@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # d_llm x d, orthonormal columns
    variances: np.ndarray

    @property
    def d(self) -> int:
        return self.components.shape[1]


def _top_eigenvectors(m: np.ndarray, k: int, tol: float, max_iter: int, seed: int):
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    n = m.shape[0]
    rng = np.random.default_rng(seed)
    work = m.copy()
    scale = max(float(np.trace(m)), np.finfo(float).tiny)
    vecs = np.zeros((n, k))
    vals = np.zeros(k)
    for j in range(k):
        v = rng.standard_normal(n)
        prev = vecs[:, :j]
        v -= prev @ (prev.T @ v)
        v /= np.linalg.norm(v)
        lam = 0.0
        for it in range(max_iter):
            w = work @ v
            w -= prev @ (prev.T @ w)
            norm = np.linalg.norm(w)
            if norm <= 1e-14 * scale:
                # remaining spectrum is numerically zero; keep any orthogonal direction
                lam = 0.0
                break
            v_new = w / norm
            lam = float(v_new @ work @ v_new)
            residual = np.linalg.norm(work @ v_new - lam * v_new)
            v = v_new
            if residual <= tol * scale:
                break
        else:
            log.debug("power iteration for component %d stopped after %d steps", j, max_iter)
        vecs[:, j] = v
        vals[j] = lam
        work -= lam * np.outer(v, v)
    return vals, vecs


def _fix_signs(components: np.ndarray) -> np.ndarray:
    out = components.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            out[:, j] = -col
    return out


def fit_pca(
    store: SemanticStore | np.ndarray,
    d: int,
    tol: float = 1e-13,
    max_iter: int = 20000,
    seed: int = 0,
) -> PcaBasis:
    """Top-``d`` principal directions of the centered rows.

    Each column is sign-fixed so that its largest-magnitude entry is positive.
    """
    x = store.vectors if isinstance(store, SemanticStore) else np.asarray(store, dtype=np.float64)
    n, dim = x.shape
    if not 1 <= d <= min(n, dim):
        raise DimensionError(f"PCA dimension {d} must be in [1, min(n_items={n}, d_llm={dim})]")
    mean = x.mean(axis=0)
    xc = x - mean
    if n < dim:
        # eigenvectors of the smaller Gram matrix map back through xc^T
        vals, u = _top_eigenvectors(xc @ xc.T / n, d, tol, max_iter, seed)
        comps = xc.T @ u
        norms = np.linalg.norm(comps, axis=0)
        for j in range(d):
            if norms[j] > 1e-12 * max(norms.max(), 1.0):
                comps[:, j] /= norms[j]
            else:
                comps[:, j] = 0.0
        comps = _complete_orthonormal(comps, norms > 1e-12 * max(norms.max(), 1.0), seed)
    else:
        vals, comps = _top_eigenvectors(xc.T @ xc / n, d, tol, max_iter, seed)
    return PcaBasis(mean=mean, components=_fix_signs(comps), variances=np.maximum(vals, 0.0))


def _complete_orthonormal(comps: np.ndarray, valid: np.ndarray, seed: int) -> np.ndarray:
    """Replace zero columns with unit vectors orthogonal to all others."""
    if valid.all():
        return comps
    rng = np.random.default_rng(seed + 1)
    out = comps.copy()
    for j in np.flatnonzero(~valid):
        basis = out[:, [i for i in range(out.shape[1]) if i != j and (valid[i] or i < j)]]
        v = rng.standard_normal(out.shape[0])
        v -= basis @ (basis.T @ v)
        out[:, j] = v / np.linalg.norm(v)
    return out


def pca_project(basis: PcaBasis, store: SemanticStore | np.ndarray) -> np.ndarray:
    x = store.vectors if isinstance(store, SemanticStore) else np.asarray(store, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.mean.shape[0]:
        raise DimensionError(
            f"cannot project shape {x.shape} with a basis fitted on dimension {basis.mean.shape[0]}"
        )
    return (x - basis.mean) @ basis.components


# -- projection network ----------------------------------------------------

def projection_hidden(d_llm: int) -> int:
    return math.ceil(d_llm / 2)


def init_projection(params: ParameterStore, d_llm: int, d: int, rng: np.random.Generator,
                    hidden: int | None = None) -> None:
    h = hidden or projection_hidden(d_llm)
    params.add("proj.W1", rng.normal(0.0, 1.0 / math.sqrt(d_llm), (d_llm, h)))
    params.add("proj.b1", np.zeros(h))
    params.add("proj.W2", rng.normal(0.0, 1.0 / math.sqrt(h), (h, d)))
    params.add("proj.b2", np.zeros(d))


def project_llm(params: Mapping[str, Tensor] | ParameterStore, store: SemanticStore, item_ids) -> Tensor:
    """Two affine layers with tanh between them, mapping d_llm to d."""
    x = store.rows(item_ids)
    hidden = tanh(matmul(x, params["proj.W1"]) + params["proj.b1"])
    return matmul(hidden, params["proj.W2"]) + params["proj.b2"]
