import hashlib

import numpy as np
import pytest

import latent_align as la
from latent_align.factorization import LatentModel, fit_nmf, nnls_project, normalize_rows

from oracles import nnls_enumerate


def _rand_nonneg(rng, n, d):
    return rng.uniform(0.0, 2.0, size=(n, d))


class TestFitNMF:
    def test_exact_product_recovered_to_tolerance(self):
        # frozen regression: rank-3 exact product, residual observed ~1e-5 scale
        rng = np.random.default_rng(11)
        W0 = rng.uniform(0.1, 2.0, size=(40, 3))
        H0 = rng.uniform(0.1, 2.0, size=(3, 12))
        X = W0 @ H0
        model = fit_nmf(X, k=3, seed=5, max_iters=2000, tol=0.0)
        assert model.fit_loss / np.sum(X**2) < 1e-3

    def test_loss_history_non_increasing(self):
        rng = np.random.default_rng(2)
        X = _rand_nonneg(rng, 30, 8)
        model = fit_nmf(X, k=4, seed=1, max_iters=200, tol=0.0)
        hist = np.array(model.loss_history)
        assert np.all(hist[1:] <= hist[:-1] * (1 + 1e-12) + 1e-12)

    def test_zero_row_stays_zero_in_w(self):
        rng = np.random.default_rng(3)
        X = _rand_nonneg(rng, 10, 6)
        X[4, :] = 0.0
        model = fit_nmf(X, k=3, seed=9, max_iters=50, tol=0.0)
        assert np.all(model.W[4, :] == 0.0)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        X = _rand_nonneg(rng, 25, 7)
        m1 = fit_nmf(X, k=3, seed=42, max_iters=100, tol=1e-10)
        m2 = fit_nmf(X, k=3, seed=42, max_iters=100, tol=1e-10)
        assert np.array_equal(m1.W, m2.W) and np.array_equal(m1.H, m2.H)

    def test_h_rows_l1_normalized(self):
        rng = np.random.default_rng(5)
        model = fit_nmf(_rand_nonneg(rng, 30, 9), k=4, seed=0, max_iters=150, tol=0.0)
        np.testing.assert_allclose(model.H.sum(axis=1), 1.0, atol=1e-9)

    def test_rescaling_preserves_product(self):
        rng = np.random.default_rng(6)
        W = rng.uniform(0.01, 1.0, size=(12, 4))
        H = rng.uniform(0.01, 1.0, size=(4, 7))
        scale = H.sum(axis=1)
        H2 = H / scale[:, None]
        W2 = W * scale[None, :]
        np.testing.assert_allclose(W2 @ H2, W @ H, atol=1e-10)

    def test_rejects_bad_rank_and_zero_matrix(self):
        X = np.ones((4, 3))
        with pytest.raises(ValueError, match="k"):
            fit_nmf(X, k=5, seed=0)
        with pytest.raises(ValueError, match="zero"):
            fit_nmf(np.zeros((4, 3)), k=2, seed=0)

    def test_fit_loss_matches_product(self):
        rng = np.random.default_rng(7)
        X = _rand_nonneg(rng, 20, 6)
        model = fit_nmf(X, k=3, seed=2, max_iters=100, tol=0.0)
        assert abs(model.fit_loss - np.sum((X - model.W @ model.H) ** 2)) < 1e-9 * np.sum(X**2)

    def test_returned_arrays_read_only(self):
        rng = np.random.default_rng(8)
        model = fit_nmf(_rand_nonneg(rng, 10, 5), k=2, seed=0, max_iters=20)
        with pytest.raises(ValueError):
            model.H[0, 0] = 1.0


class TestNNLSProject:
    def test_exact_representability(self):
        rng = np.random.default_rng(0)
        H = rng.uniform(0.1, 1.0, size=(3, 6))
        w0 = rng.uniform(0.0, 2.0, size=3)
        w = nnls_project(w0 @ H, H)
        assert np.linalg.norm(w @ H - w0 @ H) <= 1e-6

    def test_zero_input_gives_zero(self):
        rng = np.random.default_rng(1)
        H = rng.uniform(0.1, 1.0, size=(4, 5))
        assert np.array_equal(nnls_project(np.zeros(5), H), np.zeros(4))

    def test_matches_enumeration_oracle(self):
        # 50 seeded instances, k=3, d=6
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            H = rng.uniform(0.05, 1.0, size=(3, 6))
            x = rng.uniform(0.0, 2.0, size=6) - 0.5 * rng.uniform(size=6)
            x = np.clip(x, 0.0, None)
            w = nnls_project(x, H)
            w_ref = nnls_enumerate(x, H)
            assert np.max(np.abs(w - w_ref)) < 1e-6, f"seed {seed}"

    def test_kkt_conditions(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            H = rng.uniform(0.05, 1.0, size=(5, 9))
            x = rng.uniform(0.0, 3.0, size=9)
            w = nnls_project(x, H)
            g = 2.0 * (w @ H - x) @ H.T
            assert np.all(g >= -1e-6)
            assert np.max(np.abs(w * g)) <= 1e-6

    def test_beats_random_candidates(self):
        rng = np.random.default_rng(77)
        H = rng.uniform(0.05, 1.0, size=(4, 8))
        x = rng.uniform(0.0, 2.0, size=8)
        w = nnls_project(x, H)
        best = np.sum((w @ H - x) ** 2)
        for _ in range(100):
            cand = rng.uniform(0.0, 2.0, size=4)
            assert best <= np.sum((cand @ H - x) ** 2) + 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            nnls_project(np.ones(4), np.ones((2, 5)))


class TestNormalizeRows:
    def test_simple_rows(self):
        out = normalize_rows(np.array([[2.0, 2.0], [1.0, 3.0]]))
        np.testing.assert_allclose(out.codes, [[0.5, 0.5], [0.25, 0.75]])
        assert not out.zero_mask.any()

    def test_zero_row_uniform_and_masked(self):
        out = normalize_rows(np.array([[0.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_allclose(out.codes[0], [0.5, 0.5])
        assert out.zero_mask.tolist() == [True, False]

    def test_row_sums(self):
        rng = np.random.default_rng(3)
        out = normalize_rows(rng.uniform(0.0, 5.0, size=(50, 6)))
        np.testing.assert_allclose(out.codes.sum(axis=1), 1.0, atol=1e-9)


class TestSerializationAndImmutability:
    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        model = fit_nmf(rng.uniform(0.0, 2.0, size=(15, 6)), k=3, seed=4, max_iters=80)
        model.to_json(tmp_path / "m.json")
        loaded = LatentModel.from_json(tmp_path / "m.json")
        np.testing.assert_allclose(loaded.W, model.W)
        np.testing.assert_allclose(loaded.H, model.H)
        assert loaded.k == model.k and loaded.seed == model.seed

    def test_invariants_rechecked_on_load(self, tmp_path):
        rng = np.random.default_rng(10)
        model = fit_nmf(rng.uniform(0.0, 2.0, size=(10, 5)), k=2, seed=4, max_iters=40)
        doc = model.to_dict()
        doc["H"][0][0] = -0.5
        with pytest.raises(ValueError, match="nonnegative"):
            LatentModel.from_dict(doc)

    def test_basis_untouched_by_full_pipeline(self, fixture_arts, fixture_dataset):
        cfg_k, seed = fixture_arts.latent.k, fixture_arts.latent.seed
        fresh = fit_nmf(fixture_dataset.X, k=cfg_k, seed=seed, max_iters=500, tol=1e-9)
        before = hashlib.sha256(fresh.H.tobytes()).hexdigest()
        after = hashlib.sha256(fixture_arts.latent.H.tobytes()).hexdigest()
        assert before == after
