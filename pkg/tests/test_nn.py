import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from ddbcjr.channel import ChannelConfig, _simulate, build_reduced_trellis, random_symbols, state_labels
from ddbcjr.errors import InvalidInputError, InvalidParameterError
from ddbcjr.nn import (GmmMarginal, LabeledDataset, NnParams, classifier_log_posterior, fit_marginal,
                       loss_and_grads, nn_detect, nn_likelihood, nn_log_likelihood, train_classifier)


def numeric_grads(nn, y, labels, h=1e-5):
    out = []
    for p in nn.arrays():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_and_grads(nn, y, labels)[0]
            p[idx] = old - h
            down = loss_and_grads(nn, y, labels)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    return max(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12)
               for a, n in zip(analytic, numeric))


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    nn = NnParams.init(4, rng)
    y = rng.normal(0, 1.5, 10)
    labels = rng.integers(0, 4, 10)
    _, grads = loss_and_grads(nn, y, labels)
    assert max_relative_error(grads, numeric_grads(nn, y, labels)) < 1e-4


def test_architecture():
    nn = NnParams.init(8, np.random.default_rng(0))
    assert [w.shape for w in nn.weights] == [(1, 100), (100, 50), (50, 8)]
    assert [b.shape for b in nn.biases] == [(100,), (50,), (8,)]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.integers(1, 10))
def test_classifier_outputs_distribution(ys, q):
    post = np.exp(classifier_log_posterior(NnParams.init(q, np.random.default_rng(q)), ys))
    assert np.all(post >= 0)
    np.testing.assert_allclose(post.sum(axis=1), 1, atol=1e-9)


def test_separable_clusters():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 2000)
    y = np.where(labels == 1, 10.0, -10.0)
    _, losses = train_classifier(LabeledDataset(y, labels, 2), 2, seed=1, iterations=2000)
    assert losses[-100:].mean() < 0.01


def test_uninformative_input_reaches_entropy():
    rng = np.random.default_rng(0)
    q = 4
    data = LabeledDataset(rng.normal(size=50_000), rng.integers(0, q, 50_000), q)
    nn, losses = train_classifier(data, q, seed=2, iterations=3000)
    assert abs(losses[-500:].mean() - math.log(q)) < 0.05
    full = -classifier_log_posterior(nn, data.y)[np.arange(50_000), data.labels].mean()
    assert abs(full - math.log(q)) < 0.05


def test_training_deterministic_and_improves():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 2, 5000)
    y = 2.0 * labels - 1 + 0.7 * rng.standard_normal(5000)
    data = LabeledDataset(y, labels, 2)
    a, la = train_classifier(data, 2, seed=5, iterations=500)
    b, lb = train_classifier(data, 2, seed=5, iterations=500)
    for p, q in zip(a.arrays(), b.arrays()):
        assert p.tobytes() == q.tobytes()
    # same seed: the short run is a prefix of the long one
    early, _ = train_classifier(data, 2, seed=5, iterations=100)
    assert loss_and_grads(a, y, labels)[0] < loss_and_grads(early, y, labels)[0]
    assert all(np.all(np.isfinite(p)) for p in a.arrays())


def test_missing_state_warns():
    with pytest.warns(UserWarning, match="never appear"):
        train_classifier(LabeledDataset([0.0, 1.0], [0, 0], 3), 3, seed=0, iterations=2)


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        LabeledDataset([0.0, 1.0], [0, 5], 2)
    with pytest.raises(InvalidInputError):
        LabeledDataset([], [], 2)


class TestGmm:
    def test_single_component_closed_form(self):
        y = np.random.default_rng(0).normal(2.0, 0.5, 1000)
        gmm = fit_marginal(y, 1, seed=0)
        assert gmm.means[0] == pytest.approx(y.mean(), abs=1e-12)
        assert gmm.variances[0] == pytest.approx(y.var(), rel=1e-10)

    def test_two_component_recovery(self):
        rng = np.random.default_rng(1)
        y = rng.choice([-1.0, 1.0], 20_000) + 0.1 * rng.standard_normal(20_000)
        gmm = fit_marginal(y, 2, seed=0)
        order = np.argsort(gmm.means)
        np.testing.assert_allclose(gmm.means[order], [-1, 1], atol=0.02)
        np.testing.assert_allclose(gmm.weights, 0.5, atol=0.02)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(2)
        y = np.concatenate([rng.normal(-1, 0.3, 3000), rng.normal(1.5, 1.0, 2000)])
        gmm = fit_marginal(y, 3, seed=0)
        s = np.sqrt(gmm.variances.max())
        lo, hi = gmm.means.min() - 10 * s, gmm.means.max() + 10 * s
        total, _ = quad(lambda v: gmm.pdf(v)[0], lo, hi, points=list(gmm.means), limit=200)
        assert abs(total - 1) < 1e-6

    def test_loglik_non_decreasing(self):
        y = np.random.default_rng(3).standard_t(3, 5000)
        gmm, hist = fit_marginal(y, 4, seed=0, return_history=True)
        assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[1:]))
        assert np.all(gmm.variances >= 1e-6)
        assert abs(gmm.weights.sum() - 1) < 1e-10

    def test_rejects_bad_component_count(self):
        with pytest.raises(InvalidParameterError):
            fit_marginal(np.zeros(100), 0, seed=0)
        with pytest.raises(InvalidInputError):
            fit_marginal(np.zeros(15), 2, seed=0)

    def test_json_round_trip(self):
        gmm = GmmMarginal(np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.5, 0.1]))
        back = GmmMarginal.from_dict(json.loads(json.dumps(gmm.to_dict())))
        np.testing.assert_array_equal(back.logpdf([0.0, 1.0]), gmm.logpdf([0.0, 1.0]))


class TestBayesInversion:
    nn = NnParams.init(4, np.random.default_rng(0))
    gmm = GmmMarginal(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), np.array([0.3, 0.3]))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.lists(st.floats(0.01, 1), min_size=4, max_size=4))
    def test_marginal_identity(self, y, weights):
        prior = np.array(weights) / np.sum(weights)
        lik = nn_likelihood(y, self.nn, self.gmm, prior)
        assert np.dot(lik, prior) == pytest.approx(self.gmm.pdf(y)[0], rel=1e-12)

    def test_uniform_outputs(self):
        nn = NnParams.init(3, np.random.default_rng(0))
        nn.weights[-1][:] = 0.0
        nn.biases[-1][:] = 0.0
        lik = nn_likelihood(0.4, nn, self.gmm, np.full(3, 1 / 3))
        np.testing.assert_allclose(lik, self.gmm.pdf(0.4)[0], rtol=1e-12)

    def test_zero_prior_rejected(self):
        with pytest.raises(InvalidParameterError):
            nn_log_likelihood([0.0], self.nn, self.gmm, [0.5, 0.5, 0.0, 0.0])

    def test_state_count_mismatch(self):
        trellis = build_reduced_trellis(ChannelConfig.create(), 1, 1)
        with pytest.raises(InvalidParameterError):
            nn_detect(trellis, self.nn, self.gmm, [0.0, 1.0])

    def test_json_round_trip(self):
        back = NnParams.from_dict(json.loads(json.dumps(self.nn.to_dict())))
        y = np.linspace(-3, 3, 7)
        np.testing.assert_array_equal(classifier_log_posterior(back, y),
                                      classifier_log_posterior(self.nn, y))


def test_awgn_likelihood_matches_gaussian():
    var = 0.25
    cfg = ChannelConfig.create(memory=1, levels=1, total_power=var)
    rng = np.random.default_rng(4)
    x = random_symbols(cfg.constellation, 100_000, rng)
    rx, path, _ = _simulate(cfg, x, rng)
    nn, _ = train_classifier(LabeledDataset(rx, path, 2), 2, seed=0)
    gmm = fit_marginal(rx, 2, seed=0)
    sd = math.sqrt(var)
    for state, mu in enumerate(cfg.alphabet):
        grid = np.linspace(mu - 3 * sd, mu + 3 * sd, 601)
        est = nn_log_likelihood(grid, nn, gmm, [0.5, 0.5])[:, state]
        rel = np.abs(np.exp(est) / norm.pdf(grid, mu, sd) - 1)
        inner = np.abs(grid - mu) <= 2 * sd
        assert np.mean(rel[inner] < 0.10) >= 0.99
        # at 3 sigma toward the other symbol the true posterior is ~2% and
        # the minibatch optimizer leaves a few tenths of a nat of error
        assert np.all(rel < 0.40)


def test_reduced_state_density_heavy_tailed():
    cfg = ChannelConfig.create(memory=1, levels=2, impulsive_index=0.8, background_ratio=0.01,
                               correlation=0.98, total_power=10 ** -0.5)
    rng = np.random.default_rng(6)
    x = random_symbols(cfg.constellation, 100_000, rng)
    rx, _, levels = _simulate(cfg, x, rng)
    labels = state_labels(x, levels, cfg.alphabet, 1, 1, 2)
    nn, _ = train_classifier(LabeledDataset(rx, labels, 2), 2, seed=0, iterations=8000)
    gmm = fit_marginal(rx, 4, seed=0)
    grid = np.linspace(-12, 12, 24_001)
    dens = np.exp(nn_log_likelihood(grid, nn, gmm, [0.5, 0.5])[:, 1])
    w = dens / dens.sum()
    mean = np.dot(w, grid)
    var = np.dot(w, (grid - mean) ** 2)
    kurt = np.dot(w, (grid - mean) ** 4) / var**2 - 3
    assert kurt > 0
    # beyond 3 of its own standard deviations it carries well over a Gaussian's share
    far = np.abs(grid - mean) > 3 * math.sqrt(var)
    assert w[far].sum() > 2 * 2 * norm.sf(3)
