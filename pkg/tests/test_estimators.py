import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bnnlatent.analysis import clustering_matrix
from bnnlatent.anchors import LLEConfig, lle_embed
from bnnlatent.estimators import AnchoredDecoderSampler, LocallyLinearEmbedding, PosteriorSpectralClustering


def curve(n=40):
    t = np.linspace(0.0, 3.0, n)
    return t, np.c_[np.cos(t), np.sin(t), 0.3 * t]


class TestLocallyLinearEmbedding:
    def test_params(self):
        est = LocallyLinearEmbedding(n_components=1, n_neighbors=4)
        assert est.get_params() == {"n_components": 1, "n_neighbors": 4, "ridge": 1e-3}
        assert clone(est).set_params(ridge=0.1).ridge == 0.1

    def test_fit_transform_matches_function(self):
        _, Y = curve()
        emb = LocallyLinearEmbedding(n_components=1).fit_transform(Y)
        np.testing.assert_array_equal(emb, lle_embed(Y, LLEConfig(5, 1e-3, 1)))

    def test_transform_training_points(self):
        # a training point's neighbours include itself at distance zero,
        # so the barycentric map lands close to its own embedding
        _, Y = curve()
        est = LocallyLinearEmbedding(n_components=1).fit(Y)
        np.testing.assert_allclose(est.transform(Y[5:8]), est.embedding_[5:8], atol=1e-2)

    def test_transform_new_point_between_neighbours(self):
        t, Y = curve()
        est = LocallyLinearEmbedding(n_components=1).fit(Y)
        mid = np.array([[np.cos(1.5), np.sin(1.5), 0.45]])
        i = np.searchsorted(t, 1.5)
        lo, hi = sorted(est.embedding_[[i - 1, i], 0])
        assert lo - 0.05 <= est.transform(mid)[0, 0] <= hi + 0.05

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            LocallyLinearEmbedding().transform(np.zeros((1, 3)))

    def test_validation(self):
        est = LocallyLinearEmbedding().fit(curve()[1])
        with pytest.raises(ValueError):
            est.transform(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            LocallyLinearEmbedding().fit(np.array([[np.nan, 1.0, 2.0]] * 10))


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(25, 3))
    Y = P / np.linalg.norm(P, axis=1, keepdims=True)
    est = AnchoredDecoderSampler(hidden=3, n_ref=6, chains=2, warmup=150, iters=20, random_state=1)
    return est.fit(Y), Y


class TestAnchoredDecoderSampler:
    def test_params(self):
        est = AnchoredDecoderSampler(n_ref=0, random_state=3)
        params = est.get_params()
        assert params["n_ref"] == 0 and params["random_state"] == 3
        assert clone(est).get_params() == params

    def test_fitted_attributes(self, fitted):
        est, Y = fitted
        assert est.latent_draws_.shape == (2, 20, 25, 2)
        assert est.embedding_.shape == (25, 2)
        assert est.anchors_.n_ref == 6
        # anchored rows never move
        np.testing.assert_array_equal(est.latent_draws_[:, :, est.anchors_.indices], np.broadcast_to(est.anchors_.values, (2, 20, 6, 2)))
        np.testing.assert_array_equal(est.transform(Y), est.embedding_)

    def test_transform_rejects_new_data(self, fitted):
        est, Y = fitted
        with pytest.raises(NotImplementedError):
            est.transform(Y[:5])

    def test_diagnostics(self, fitted):
        est, _ = fitted
        series, pairs = est.distance_traces(n_pairs=3)
        assert series.shape == (2, 20, 3)
        assert not set(pairs.ravel()) & set(est.anchors_.indices.tolist())
        assert est.split_rhat(n_pairs=3).shape == (3,)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            AnchoredDecoderSampler().transform(np.zeros((3, 3)))


class TestPosteriorSpectralClustering:
    def test_blobs(self):
        rng = np.random.default_rng(2)
        truth = np.r_[np.zeros(15, int), np.ones(15, int)]
        draws = rng.normal(size=(6, 30, 2)) * 0.5 + np.where(truth[:, None] == 1, 10.0, 0.0) * [1.0, 0.0]
        est = PosteriorSpectralClustering(n_clusters=2).fit(draws)
        np.testing.assert_array_equal(clustering_matrix(est.labels_), clustering_matrix(truth))
        np.testing.assert_array_equal(est.coclustering_, clustering_matrix(truth))
        assert est.partitions_.shape == (6, 30)
        assert est.dahl_index_ == 0
        assert est.get_params()["n_clusters"] == 2

    def test_thin(self):
        draws = np.random.default_rng(3).normal(size=(6, 10, 2))
        assert PosteriorSpectralClustering(thin=2).fit(draws).partitions_.shape == (3, 10)

    def test_fit_predict(self):
        X = np.random.default_rng(4).normal(size=(12, 2))
        assert PosteriorSpectralClustering().fit_predict(X).shape == (12,)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            PosteriorSpectralClustering().fit(np.zeros(5))
