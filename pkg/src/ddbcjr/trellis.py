"""Forward-backward (BCJR) inference over a finite-state trellis.

The recursions run in the probability domain with per-step normalization.
Emission log-likelihoods are shifted by their per-step maximum before
exponentiation, and every divisor is accumulated in ``loglik`` so the
sequence likelihood stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .channel import TrellisSpec
from .errors import ContractViolationError, DegenerateLikelihoodError, InvalidParameterError

VARIANCE_FLOOR = 1e-12
_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    state_post: np.ndarray
    loglik: float
    loglik_backward: float
    pair_post: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SoftSymbolOutput:
    posteriors: np.ndarray
    alphabet: tuple

    @property
    def llr(self) -> np.ndarray:
        """``log p(x=+1 | y) / p(x=-1 | y)`` for a binary alphabet."""
        if len(self.alphabet) != 2:
            raise InvalidParameterError("LLRs are defined for binary alphabets only")
        p = np.maximum(self.posteriors, 1e-300)
        return np.log(p[:, 1]) - np.log(p[:, 0])


def gaussian_loglik(rx, means, variances) -> np.ndarray:
    """``log N(y_t; mu_s, var_s)`` as a T x Q matrix."""
    rx = np.asarray(rx, dtype=float)
    var = np.maximum(np.asarray(variances, dtype=float), VARIANCE_FLOOR)
    diff = rx[:, None] - np.asarray(means, dtype=float)[None, :]
    return -0.5 * (_LOG_2PI + np.log(var)[None, :] + diff**2 / var[None, :])


def forward_backward(trellis: TrellisSpec, rx, pairs: bool = False) -> PosteriorGrid:
    rx = np.asarray(rx, dtype=float)
    if rx.ndim != 1 or rx.size == 0:
        raise InvalidParameterError("need a non-empty 1-D observation sequence")
    if not np.all(np.isfinite(rx)):
        raise InvalidParameterError("observations must be finite")
    return forward_backward_loglik(
        trellis.transitions, trellis.initial_dist,
        gaussian_loglik(rx, trellis.means, trellis.variances), pairs=pairs,
    )


def _scaled_likelihoods(log_lik: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = log_lik.max(axis=1)
    bad = ~np.isfinite(shift)
    if np.any(bad):
        raise DegenerateLikelihoodError(int(np.argmax(bad)))
    return np.exp(log_lik - shift[:, None]), shift


def forward_backward_loglik(transitions, initial_dist, log_lik, pairs: bool = False) -> PosteriorGrid:
    """Posteriors from a transition matrix and a T x Q emission log-likelihood matrix."""
    A = np.ascontiguousarray(transitions, dtype=float)
    pi = np.ascontiguousarray(initial_dist, dtype=float)
    log_lik = np.asarray(log_lik, dtype=float)
    if log_lik.ndim != 2 or log_lik.shape[1] != A.shape[0] or log_lik.shape[0] == 0:
        raise InvalidParameterError(
            f"log-likelihood matrix shape {log_lik.shape} does not fit {A.shape[0]} states")
    B, shift = _scaled_likelihoods(log_lik)
    alpha, c = _kernels.forward(A, pi, B)
    dead = np.flatnonzero(~(c > 0) | ~np.isfinite(c))
    if dead.size:
        raise DegenerateLikelihoodError(int(dead[0]))
    beta, d = _kernels.backward(A, B)
    if not np.all(d > 0):
        raise DegenerateLikelihoodError(int(np.flatnonzero(~(d > 0))[-1]) + 1)

    post = alpha * beta
    post /= post.sum(axis=1, keepdims=True)
    total_shift = shift.sum()
    loglik = float(np.log(c).sum() + total_shift)
    loglik_bwd = float(np.log(np.dot(pi * B[0], beta[0])) + np.log(d).sum() + total_shift)
    xi = _kernels.pair_posteriors(A, B, alpha, beta) if pairs else None
    return PosteriorGrid(post, loglik, loglik_bwd, xi)


def symbol_posteriors(grid: PosteriorGrid, trellis: TrellisSpec) -> SoftSymbolOutput:
    """Per-symbol posteriors by summing pair posteriors over each symbol's transitions."""
    if grid.pair_post is None:
        raise ContractViolationError("symbol_posteriors needs a grid computed with pairs=True")
    symbol_map = trellis.symbol_map
    T = grid.state_post.shape[0]
    post = np.zeros((T, len(symbol_map)))
    for k, edges in enumerate(symbol_map):
        if edges.size:
            post[1:, k] = grid.pair_post[1:, edges[:, 0], edges[:, 1]].sum(axis=1)
        post[0, k] = grid.state_post[0, trellis.state_symbols == k].sum()
    post /= post.sum(axis=1, keepdims=True)
    return SoftSymbolOutput(post, tuple(trellis.alphabet))


def map_detect(soft: SoftSymbolOutput) -> np.ndarray:
    """Symbol-wise MAP decisions; ties go to the smallest symbol."""
    return np.asarray(soft.alphabet)[np.argmax(soft.posteriors, axis=1)]


def detect(trellis: TrellisSpec, rx) -> SoftSymbolOutput:
    return symbol_posteriors(forward_backward(trellis, rx, pairs=True), trellis)


def stationary_distribution(transitions, tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """Stationary law by power iteration from the uniform vector.

    A periodic chain never settles under plain iteration, so after a short
    budget the lazy chain ``(P + I) / 2`` (same stationary laws) is iterated.
    """
    P = np.asarray(transitions, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidParameterError("transition matrix must be square")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-8):
        raise InvalidParameterError("transition matrix must be row-stochastic")
    q = P.shape[0]
    for M, budget in ((P, 10_000), ((P + np.eye(q)) / 2, max_iter)):
        pi = np.full(q, 1.0 / q)
        for _ in range(budget):
            nxt = pi @ M
            nxt /= nxt.sum()
            if np.abs(nxt - pi).sum() < tol:
                return nxt
            pi = nxt
    return pi
