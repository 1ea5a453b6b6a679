import numpy as np
import pytest

from faerec.autodiff import Tensor
from faerec.errors import ConsistencyError, DimensionError, FormatError
from faerec.params import ParameterStore
from faerec.semantic import (
    SemanticStore, fit_pca, init_projection, load_semantic, pca_project, project_llm,
    projection_hidden, semantic_from_tsv, synth_semantic, write_semantic,
)

from conftest import grad_rel_error


def align_signs(a, b):
    """Flip columns of ``a`` to agree in sign with ``b``."""
    s = np.sign(np.sum(a * b, axis=0))
    s[s == 0] = 1
    return a * s


# -- FEMB ------------------------------------------------------------------

def test_femb_round_trip(tmp_path):
    store = SemanticStore(np.arange(12, dtype=float).reshape(3, 4) / 7)
    path = tmp_path / "e.femb"
    write_semantic(path, store)
    back = load_semantic(path, n_items=3)
    assert back.vectors.shape == (3, 4)
    np.testing.assert_allclose(back.vectors, store.vectors, rtol=1e-7)
    write_semantic(tmp_path / "b.femb", back)
    assert (tmp_path / "b.femb").read_bytes() == path.read_bytes()


def test_femb_errors(tmp_path):
    path = tmp_path / "e.femb"
    write_semantic(path, SemanticStore(np.ones((3, 4))))
    with pytest.raises(ConsistencyError):
        load_semantic(path, n_items=4)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_semantic(path)
    path.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(FormatError):
        load_semantic(path)


def test_store_is_read_only():
    store = SemanticStore(np.ones((2, 3)))
    with pytest.raises(ValueError):
        store.vectors[0, 0] = 5.0
    assert not store.rows([0, 1]).requires_grad


def test_from_tsv_orders_by_dataset(tmp_path):
    path = tmp_path / "v.tsv"
    path.write_text("b\t1,2\na\t3,4\n", encoding="utf-8")
    np.testing.assert_array_equal(semantic_from_tsv(path, ["a", "b"]).vectors, [[3, 4], [1, 2]])
    with pytest.raises(ConsistencyError):
        semantic_from_tsv(path, ["a", "c"])


# -- synthetic vectors -----------------------------------------------------

def test_synth_deterministic_unit_rows():
    a = synth_semantic(30, 16, 4, seed=3).vectors
    b = synth_semantic(30, 16, 4, seed=3).vectors
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(a, synth_semantic(30, 16, 4, seed=4).vectors)


def test_synth_single_cluster_is_tight():
    # per-coordinate noise 0.1 gives expected cosine about 1 / (1 + 0.01 * d_llm)
    v = synth_semantic(40, 16, 1, seed=0).vectors
    assert (v @ v.T).min() > 0.5
    v = synth_semantic(40, 64, 1, seed=0).vectors
    off = (v @ v.T)[~np.eye(40, dtype=bool)]
    assert off.mean() == pytest.approx(1 / 1.64, abs=0.05)


def test_synth_clusters_round_robin():
    v = synth_semantic(16, 32, 4, seed=1).vectors
    cos = v @ v.T
    same = np.equal.outer(np.arange(16) % 4, np.arange(16) % 4)
    assert cos[same].min() > cos[~same].max()


def test_synth_bad_clusters():
    with pytest.raises(ValueError):
        synth_semantic(3, 4, 5, seed=0)


# -- PCA -------------------------------------------------------------------

def test_pca_line():
    x = np.outer(np.linspace(-2, 3, 9), [1.0, 1.0])
    comp = fit_pca(x, 1).components[:, 0]
    np.testing.assert_allclose(comp, np.array([1, 1]) / np.sqrt(2), atol=1e-10)


def test_pca_axis_aligned():
    # mean-zero points with covariance diag(4, 1)
    x = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) * np.sqrt(2)
    basis = fit_pca(x, 2)
    np.testing.assert_allclose(np.abs(basis.components), np.eye(2), atol=1e-10)
    np.testing.assert_allclose(basis.variances, [4.0, 1.0], atol=1e-10)


def test_pca_exact_rank_reconstruction(rng):
    x = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 10)) + rng.normal(size=10)
    basis = fit_pca(x, 3)
    z = pca_project(basis, x)
    np.testing.assert_allclose(z @ basis.components.T + basis.mean, x, atol=1e-6)
    np.testing.assert_allclose(basis.components.T @ basis.components, np.eye(3), atol=1e-8)


def test_pca_mean_row_projects_to_zero(rng):
    x = rng.normal(size=(12, 5))
    basis = fit_pca(x, 2)
    np.testing.assert_allclose(pca_project(basis, basis.mean[None, :]), 0.0, atol=1e-12)


@pytest.mark.parametrize("n,dim,d", [(40, 12, 5), (10, 30, 6)])
def test_pca_matches_eigh(rng, n, dim, d):
    x = rng.normal(size=(n, dim)) * np.linspace(3, 0.5, dim)
    basis = fit_pca(x, d)
    xc = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(xc.T @ xc / n)
    ref = vecs[:, ::-1][:, :d]
    got = pca_project(basis, x)
    want = xc @ ref
    np.testing.assert_allclose(align_signs(got, want), want, atol=1e-6)
    np.testing.assert_allclose(basis.variances, vals[::-1][:d], atol=1e-8)


def test_pca_errors(rng):
    x = rng.normal(size=(5, 4))
    with pytest.raises(DimensionError):
        fit_pca(x, 5)
    with pytest.raises(DimensionError):
        pca_project(fit_pca(x, 2), rng.normal(size=(3, 3)))


# -- projection network ----------------------------------------------------

def test_projection_constant_output():
    store = synth_semantic(5, 6, 2, seed=0)
    params = {"proj.W1": Tensor(np.zeros((6, 3))), "proj.b1": Tensor(np.zeros(3)),
              "proj.W2": Tensor(np.zeros((3, 3))), "proj.b2": Tensor(np.zeros(3))}
    np.testing.assert_array_equal(project_llm(params, store, [0, 4]).data, 0.0)
    params["proj.W2"] = Tensor(np.eye(3))
    params["proj.b2"] = Tensor([0.5, -1.0, 2.0])
    out = project_llm(params, store, [0, 1, 2, 3, 4]).data
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0, 2.0], (5, 1)))


def test_projection_bad_id():
    store = synth_semantic(4, 6, 2, seed=0)
    params = ParameterStore()
    init_projection(params, 6, 3, np.random.default_rng(0))
    with pytest.raises(IndexError):
        project_llm(params, store, [4])


def test_projection_gradient():
    store = synth_semantic(6, 8, 2, seed=0)
    params = ParameterStore()
    init_projection(params, 8, 8, np.random.default_rng(0))
    assert params["proj.W1"].shape == (8, projection_hidden(8))
    ids = np.array([0, 2, 3, 5])
    err = grad_rel_error(lambda: project_llm(params, store, ids).square().sum(), [t for _, t in params.items()])
    assert err <= 1e-4
