import json

import numpy as np
import pytest

from margin_lab import dataset as ds, nngp
from margin_lab.numerics import make_rng, split_rng


def normalized_rows(n, d, seed):
    rows = make_rng(seed).standard_normal((n, d))
    return rows * (np.sqrt(d) / np.linalg.norm(rows, axis=1))[:, None]


@pytest.fixture(scope="module")
def digit_rows():
    train = ds.load_split(ds.default_data_dir(), "train")
    task = ds.make_task(train, ds.TaskSpec(subset=200, classes="even-odd", seed=17))
    return task.inputs, task.labels


class TestArccosStep:
    def test_fixed_points(self):
        assert nngp.arccos_step(1.0) == 1.0
        assert nngp.arccos_step(0.0) == 1.0 / np.pi
        assert nngp.arccos_step(-1.0) == 0.0

    def test_clamps_out_of_range(self):
        assert nngp.arccos_step(1.0 + 1e-12) == 1.0
        assert nngp.arccos_step(-1.0 - 1e-12) == 0.0

    def test_monotone_on_grid(self):
        t = np.linspace(-1, 1, 201)
        h = nngp.arccos_step(t)
        assert np.all(np.diff(h) > 0.0)


class TestKernel:
    def test_self_kernel_is_sigma_power(self):
        x = normalized_rows(1, 16, 1)[0]
        for L in (1, 3, 5):
            for sigma in (0.5, 1.0, 2.0):
                assert nngp.kernel(x, x, L, sigma) == pytest.approx(
                    sigma ** (2 * L), rel=1e-12)

    def test_depth_one_is_linear_kernel(self):
        rows = normalized_rows(2, 16, 2)
        x, xp = rows[0], rows[1]
        assert nngp.kernel(x, xp, 1, 1.0) == pytest.approx(
            float(x @ xp) / 16.0, rel=1e-12)

    def test_matches_iterated_scalar_oracle(self):
        rows = normalized_rows(2, 32, 3)
        x, xp = rows[0], rows[1]
        t = float(x @ xp) / 32.0
        for _ in range(4):  # depth 5 composes h four times
            t = (np.sqrt(1 - t * t) + t * (np.pi - np.arccos(t))) / np.pi
        sigma = 1.3
        assert nngp.kernel(x, xp, 5, sigma) == pytest.approx(
            sigma ** 10 * t, rel=1e-12)

    def test_symmetry(self):
        rows = normalized_rows(2, 16, 4)
        assert nngp.kernel(rows[0], rows[1], 4, 1.0) == nngp.kernel(
            rows[1], rows[0], 4, 1.0)

    def test_depth_below_one_rejected(self):
        rows = normalized_rows(2, 8, 5)
        with pytest.raises(ValueError, match="depth"):
            nngp.kernel(rows[0], rows[1], 0, 1.0)


class TestFit:
    def test_single_point_interpolates(self):
        X = normalized_rows(1, 16, 6)
        model = nngp.fit(X, np.array([1.0]), depth=3, gamma=2.5)
        post = nngp.posterior_at(model, X[0])
        assert post.mean == pytest.approx(2.5, rel=1e-9)
        assert post.variance <= 1e-8

    def test_duplicated_row_still_fits(self):
        X = normalized_rows(5, 16, 7)
        X[3] = X[0]
        Y = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
        model = nngp.fit(X, Y, depth=3)
        assert np.all(np.isfinite(model.solve_y))

    def test_gram_psd_on_digits(self, digit_rows):
        X, _ = digit_rows
        K = nngp.gram(X[:50], depth=5)
        eigs = np.linalg.eigvalsh(K)
        assert eigs.min() >= -1e-8

    def test_rejects_unnormalized_inputs(self):
        X = make_rng(8).standard_normal((4, 16))
        with pytest.raises(ValueError, match="normalized"):
            nngp.fit(X, np.array([1.0, -1.0, 1.0, -1.0]), depth=2)

    def test_rejects_non_sign_labels(self):
        X = normalized_rows(3, 8, 9)
        with pytest.raises(ValueError, match="labels"):
            nngp.fit(X, np.array([1.0, 0.0, -1.0]), depth=2)


class TestPosterior:
    def test_interpolation_at_training_points(self, digit_rows):
        X, y = digit_rows
        X, y = X[:80], y[:80]
        model = nngp.fit(X, y, depth=5, sigma=1.0, gamma=3.0)
        c1, c2 = nngp.posterior_batch(model, X)
        assert np.max(np.abs(3.0 * c1 - 3.0 * y)) < 1e-6
        assert np.max(c2) <= 1e-8

    def test_gamma_scales_mean_only(self, digit_rows):
        X, y = digit_rows
        model1 = nngp.fit(X[:60], y[:60], depth=4, gamma=1.0)
        model2 = nngp.fit(X[:60], y[:60], depth=4, gamma=2.0)
        x = X[150]
        p1, p2 = nngp.posterior_at(model1, x), nngp.posterior_at(model2, x)
        assert p2.mean == pytest.approx(2.0 * p1.mean, rel=1e-12)
        assert p2.variance == pytest.approx(p1.variance, rel=1e-12)

    def test_sigma_scales_variance_only(self, digit_rows):
        X, y = digit_rows
        L = 4
        model1 = nngp.fit(X[:60], y[:60], depth=L, sigma=1.0)
        model2 = nngp.fit(X[:60], y[:60], depth=L, sigma=2.0)
        x = X[150]
        p1, p2 = nngp.posterior_at(model1, x), nngp.posterior_at(model2, x)
        assert p2.c1 == pytest.approx(p1.c1, rel=1e-12)
        assert p2.variance == pytest.approx(2.0 ** (2 * L) * p1.variance,
                                            rel=1e-12)


class TestEnsemble:
    def test_large_m_concentrates_on_mean_sign(self, digit_rows):
        X, y = digit_rows
        model = nngp.fit(X[:100], y[:100], depth=5, gamma=1.0)
        Xt = X[100:160]
        c1, _ = nngp.posterior_batch(model, Xt)
        draws = nngp.ensemble_draws(model, Xt, m=10**12, rng=make_rng(10))
        assert np.array_equal(np.sign(draws), np.sign(c1))

    def test_large_margin_concentrates_too(self, digit_rows):
        X, y = digit_rows
        model = nngp.fit(X[:100], y[:100], depth=5, gamma=1e12)
        Xt = X[100:160]
        c1, _ = nngp.posterior_batch(model, Xt)
        draws = nngp.ensemble_draws(model, Xt, m=1, rng=make_rng(11))
        assert np.array_equal(np.sign(draws), np.sign(c1))

    def test_equal_normalized_margin_identical_predictions(self, digit_rows):
        X, y = digit_rows
        Xt = X[100:180]
        L = 3
        # gamma/sigma^L equal: (1, 1) vs (8, 2) since 8 / 2^3 = 1
        m1 = nngp.fit(X[:100], y[:100], depth=L, gamma=1.0, sigma=1.0)
        m2 = nngp.fit(X[:100], y[:100], depth=L, gamma=8.0, sigma=2.0)
        d1 = nngp.ensemble_draws(m1, Xt, m=7, rng=split_rng(5, 1))
        d2 = nngp.ensemble_draws(m2, Xt, m=7, rng=split_rng(5, 1))
        assert np.array_equal(np.sign(d1), np.sign(d2))

    def test_accuracy_monotone_in_normalized_margin(self, digit_rows):
        X, y = digit_rows
        model = nngp.fit(X[:120], y[:120], depth=5)
        Xt, yt = X[120:], y[120:]
        c1, c2 = nngp.posterior_batch(model, Xt)
        accs = []
        for margin in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
            scored = 0.0
            for seed in range(30):
                draws = margin * c1 + np.sqrt(c2) * split_rng(
                    seed, 3).standard_normal(c1.shape[0])
                scored += float(((draws > 0) == (yt > 0)).mean())
            accs.append(scored / 30)
        assert all(b >= a - 0.01 for a, b in zip(accs, accs[1:]))
        assert accs[-1] > accs[0] + 0.1

    def test_m_below_one_rejected(self, digit_rows):
        X, y = digit_rows
        model = nngp.fit(X[:30], y[:30], depth=2)
        with pytest.raises(ValueError):
            nngp.ensemble_draws(model, X[:5], m=0, rng=make_rng(0))


class TestDumps:
    def test_model_dump_schema(self, digit_rows, tmp_path):
        X, y = digit_rows
        model = nngp.fit(X[:40], y[:40], depth=3, sigma=1.5, gamma=0.5)
        path = tmp_path / "model.json"
        nngp.dump_model(model, path)
        payload = json.loads(path.read_text())
        assert payload["n"] == 40 and payload["depth"] == 3
        assert len(payload["gram_inv_y"]) == 40
        assert payload["normalized_margin"] == pytest.approx(0.5 / 1.5 ** 3)

    def test_predictions_csv_schema(self, digit_rows, tmp_path):
        X, y = digit_rows
        model = nngp.fit(X[:40], y[:40], depth=3)
        c1, c2 = nngp.posterior_batch(model, X[40:50])
        draws = nngp.ensemble_draws(model, X[40:50], m=4, rng=make_rng(1),
                                    coeffs=(c1, c2))
        path = tmp_path / "pred.csv"
        nngp.write_predictions_csv(path, c1, c2, 4, draws)
        lines = path.read_text().splitlines()
        assert lines[0] == "test_index,C1,C2,m,draw,sign"
        assert len(lines) == 11
