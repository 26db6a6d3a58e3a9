"""Supervised likelihood estimation for BCJR detection (BCJR-NN).

A small classifier maps a received sample to a posterior over trellis
states, a Gaussian mixture estimates the marginal density of the samples,
and Bayes' rule turns the two into per-state likelihoods.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

from .channel import MODEL_FORMAT_VERSION, TrellisSpec
from .errors import DivergenceError, InvalidInputError, InvalidParameterError
from .trellis import SoftSymbolOutput, forward_backward_loglik, symbol_posteriors

log = logging.getLogger(__name__)

HIDDEN = (100, 50)
LEARNING_RATE = 0.01
ITERATIONS = 20_000
BATCH_SIZE = 256


@dataclass(frozen=True)
class LabeledDataset:
    y: np.ndarray
    labels: np.ndarray
    num_states: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if y.ndim != 1 or y.shape != labels.shape or y.size == 0:
            raise InvalidInputError("need matching non-empty sample and label vectors")
        if labels.min() < 0 or labels.max() >= self.num_states:
            raise InvalidInputError(f"labels must lie in [0, {self.num_states})")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "labels", labels)


@dataclass(eq=False)
class NnParams:
    """Weights of the 1 -> 100 (sigmoid) -> 50 (ReLU) -> Q (softmax) classifier."""

    weights: list
    biases: list

    @property
    def num_states(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, num_states: int, rng: np.random.Generator) -> "NnParams":
        sizes = (1, *HIDDEN, num_states)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    def copy(self) -> "NnParams":
        return NnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list:
        return [*self.weights, *self.biases]

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "nn",
            "activations": ["sigmoid", "relu", "softmax"],
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NnParams":
        if data.get("format_version") != MODEL_FORMAT_VERSION or data.get("kind") != "nn":
            raise InvalidInputError("not a version-1 NN model document")
        weights = [np.array(w, dtype=float).reshape(s) for w, s in zip(data["weights"], data["shapes"])]
        return cls(weights, [np.array(b, dtype=float) for b in data["biases"]])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(nn: NnParams, y: np.ndarray):
    W1, W2, W3 = nn.weights
    b1, b2, b3 = nn.biases
    h1 = _sigmoid(y[:, None] @ W1 + b1)
    z2 = h1 @ W2 + b2
    h2 = np.maximum(z2, 0.0)
    logits = h2 @ W3 + b3
    return h1, z2, h2, logits


def classifier_log_posterior(nn: NnParams, y) -> np.ndarray:
    """``log p(s | y)`` for every sample, shape (len(y), Q)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return log_softmax(_forward(nn, y)[-1], axis=1)


def loss_and_grads(nn: NnParams, y: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradients, ordered like ``nn.arrays()``."""
    W1, W2, W3 = nn.weights
    h1, z2, h2, logits = _forward(nn, y)
    logp = log_softmax(logits, axis=1)
    n = len(y)
    loss = -logp[np.arange(n), labels].mean()

    d_logits = np.exp(logp)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    dW3 = h2.T @ d_logits
    db3 = d_logits.sum(axis=0)
    d_z2 = (d_logits @ W3.T) * (z2 > 0)
    dW2 = h1.T @ d_z2
    db2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ W2.T) * h1 * (1.0 - h1)
    dW1 = y[None, :] @ d_z1
    db1 = d_z1.sum(axis=0)
    return loss, [dW1, dW2, dW3, db1, db2, db3]


class Adam:
    def __init__(self, params: list, lr=LEARNING_RATE, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_classifier(data: LabeledDataset, num_states: int, seed: int,
                     iterations: int = ITERATIONS, batch_size: int = BATCH_SIZE,
                     lr: float = LEARNING_RATE) -> tuple[NnParams, np.ndarray]:
    """Minibatch Adam on the average cross-entropy; returns per-iteration batch losses."""
    if num_states != data.num_states:
        raise InvalidParameterError(f"dataset has {data.num_states} states, asked for {num_states}")
    missing = np.setdiff1d(np.arange(num_states), data.labels)
    if missing.size:
        warnings.warn(f"states {missing.tolist()} never appear in the training labels")
    rng = np.random.default_rng(seed)
    nn = NnParams.init(num_states, rng)
    opt = Adam(nn.arrays(), lr=lr)
    losses = np.empty(iterations)
    n = len(data.y)
    for it in range(iterations):
        batch = rng.integers(0, n, size=batch_size)
        loss, grads = loss_and_grads(nn, data.y[batch], data.labels[batch])
        if not np.isfinite(loss):
            raise DivergenceError(it, float(loss))
        losses[it] = loss
        opt.step(grads)
    log.debug("classifier trained: final batch loss %.4f", losses[-1])
    return nn, losses


@dataclass(eq=False)
class GmmMarginal:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def logpdf(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        comp = (np.log(self.weights)[None, :]
                - 0.5 * np.log(2 * np.pi * self.variances)[None, :]
                - 0.5 * (y[:, None] - self.means[None, :]) ** 2 / self.variances[None, :])
        return logsumexp(comp, axis=1)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmmMarginal":
        if data.get("format_version") != MODEL_FORMAT_VERSION or data.get("kind") != "gmm":
            raise InvalidInputError("not a version-1 GMM document")
        return cls(*(np.array(data[k], dtype=float) for k in ("weights", "means", "variances")))


def fit_marginal(rx, num_components: int, seed: int, max_iter: int = 300, tol: float = 1e-10,
                 variance_floor: float = 1e-6, return_history: bool = False):
    """EM fit of a 1-D Gaussian mixture.

    Components start at evenly spaced quantiles of the data (with a small
    seeded jitter) and share the sample variance.
    """
    if num_components < 1:
        raise InvalidParameterError(f"need at least one mixture component, got {num_components}")
    y = np.asarray(rx, dtype=float)
    k = num_components
    if y.size < 10 * k:
        raise InvalidInputError(f"{y.size} samples are too few for {k} components")
    rng = np.random.default_rng(seed)
    spread = y.std()
    means = np.quantile(y, (np.arange(k) + 0.5) / k) + 1e-3 * spread * rng.standard_normal(k)
    variances = np.full(k, max(y.var(), variance_floor))
    weights = np.full(k, 1.0 / k)
    history = []
    for _ in range(max_iter):
        comp = (np.log(weights)[None, :] - 0.5 * np.log(2 * np.pi * variances)[None, :]
                - 0.5 * (y[:, None] - means[None, :]) ** 2 / variances[None, :])
        norm = logsumexp(comp, axis=1)
        ll = norm.sum()
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-12
        weights = np.maximum(nk / y.size, 1e-300)
        weights /= weights.sum()
        means = np.where(alive, resp.T @ y / np.where(alive, nk, 1.0), means)
        var = (resp * (y[:, None] - means[None, :]) ** 2).sum(axis=0) / np.where(alive, nk, 1.0)
        variances = np.maximum(np.where(alive, var, variances), variance_floor)
        if history and ll - history[-1] < tol * abs(history[-1]):
            history.append(ll)
            break
        history.append(ll)
    gmm = GmmMarginal(weights, means, variances)
    return (gmm, np.array(history)) if return_history else gmm


def nn_log_likelihood(rx, nn: NnParams, gmm: GmmMarginal, state_prior) -> np.ndarray:
    """``log p(y | s) = log p(s | y) + log p(y) - log p(s)`` as a T x Q matrix."""
    prior = np.asarray(state_prior, dtype=float)
    if prior.shape != (nn.num_states,):
        raise InvalidParameterError(f"prior has shape {prior.shape}, expected ({nn.num_states},)")
    if np.any(prior <= 0):
        raise InvalidParameterError("state prior must be strictly positive")
    return classifier_log_posterior(nn, rx) + gmm.logpdf(rx)[:, None] - np.log(prior)[None, :]


def nn_likelihood(y, nn: NnParams, gmm: GmmMarginal, state_prior) -> np.ndarray:
    """Per-state likelihood of a single received value (vector of length Q)."""
    return np.exp(nn_log_likelihood(np.atleast_1d(y), nn, gmm, state_prior))[0]


def nn_detect(trellis: TrellisSpec, nn: NnParams, gmm: GmmMarginal, rx_test,
              state_prior=None) -> SoftSymbolOutput:
    """BCJR with transitions from ``trellis`` and NN/GMM likelihoods.

    ``state_prior`` (default: the trellis starting law) is the marginal used
    in the Bayes inversion.
    """
    if trellis.num_states != nn.num_states:
        raise InvalidParameterError(
            f"trellis has {trellis.num_states} states but the classifier {nn.num_states}")
    prior = trellis.initial_dist if state_prior is None else state_prior
    log_lik = nn_log_likelihood(rx_test, nn, gmm, prior)
    grid = forward_backward_loglik(trellis.transitions, trellis.initial_dist, log_lik, pairs=True)
    return symbol_posteriors(grid, trellis)
