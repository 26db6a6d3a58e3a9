"""Unsupervised Baum-Welch learning of Gaussian-emission trellises (BCJR-HMM)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .channel import TrellisSpec
from .errors import DegenerateLikelihoodError, InvalidInputError, InvalidParameterError
from .trellis import VARIANCE_FLOOR, SoftSymbolOutput, detect, stationary_distribution

log = logging.getLogger(__name__)

MIN_RESPONSIBILITY = 1e-12


@dataclass(frozen=True)
class BaumWelchConfig:
    num_states: int
    max_iters: int = 1500
    loglik_tol: float = 1e-9
    patience: int = 10
    num_restarts: int = 3
    seed: int = 0
    variance_floor: float = 1e-6

    def __post_init__(self):
        if self.num_states < 1:
            raise InvalidParameterError("num_states must be >= 1")
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be >= 1")
        if self.num_restarts < 1:
            raise InvalidParameterError("num_restarts must be >= 1")
        if not self.variance_floor > 0:
            raise InvalidParameterError("variance_floor must be positive")


@dataclass(frozen=True)
class StateAlignment:
    permutation: np.ndarray
    assignment_cost: float


def em_update(A, pi, means, variances, rx, variance_floor):
    """One Baum-Welch iteration.

    Returns the log-likelihood of the *input* parameters and the updated
    ``(A, pi, means, variances)``. States (or transition rows) whose expected
    count falls below 1e-12 keep their previous parameters.
    """
    loglik, gamma, xi_sum, dead = _kernels.em_statistics(
        A, pi, means, variances, rx, VARIANCE_FLOOR)
    if dead >= 0:
        raise DegenerateLikelihoodError(int(dead))
    new_means, new_var, _ = _kernels.weighted_moments(
        gamma, rx, means, variances, MIN_RESPONSIBILITY)
    new_var = np.maximum(new_var, variance_floor)
    out = xi_sum.sum(axis=1)
    new_A = A.copy()
    rows = out >= MIN_RESPONSIBILITY
    new_A[rows] = xi_sum[rows] / out[rows, None]
    new_pi = gamma[0] / gamma[0].sum()
    return loglik, (new_A, new_pi, new_means, new_var)


def sequence_loglik(trellis: TrellisSpec, rx) -> float:
    rx = np.asarray(rx, dtype=float)
    loglik, _, _, dead = _kernels.em_statistics(
        trellis.transitions, trellis.initial_dist, trellis.means, trellis.variances, rx,
        VARIANCE_FLOOR)
    if dead >= 0:
        raise DegenerateLikelihoodError(int(dead))
    return loglik


def _initial_params(rx, q, rng):
    # means near evenly spaced quantiles: uniform draws on [min, max] tend to
    # park a broad state between symbol clusters, which no labeling can fix
    means = np.quantile(rx, (np.arange(q) + 0.5) / q) + 0.05 * rx.std() * rng.standard_normal(q)
    variances = np.full(q, max(rx.var() / q, 1e-12))
    A = np.full((q, q), 1.0 / q) + 0.1 * rng.dirichlet(np.ones(q), size=q)
    A /= A.sum(axis=1, keepdims=True)
    return A, np.full(q, 1.0 / q), means, variances


def _run_restart(rx, cfg: BaumWelchConfig, restart: int):
    rng = np.random.default_rng([cfg.seed, restart])
    params = _initial_params(rx, cfg.num_states, rng)
    history = []
    stalled = 0
    for _ in range(cfg.max_iters):
        ll, new = em_update(*params, rx, cfg.variance_floor)
        if history:
            gain = (ll - history[-1]) / max(abs(history[-1]), 1e-300)
            stalled = stalled + 1 if gain < cfg.loglik_tol else 0
        history.append(ll)
        params = new
        if stalled >= cfg.patience:
            break
    A, pi, means, var = params
    # loglik of the parameters actually returned
    history.append(sequence_loglik(TrellisSpec(A, means, var, pi), rx))
    return params, np.array(history)


def baum_welch_restarts(rx, cfg: BaumWelchConfig) -> list[tuple[TrellisSpec, np.ndarray]]:
    """Every restart's learned trellis and log-likelihood history."""
    rx = np.asarray(rx, dtype=float)
    if rx.ndim != 1 or rx.size == 0:
        raise InvalidInputError("Baum-Welch needs a non-empty observation sequence")
    if not np.all(np.isfinite(rx)):
        raise InvalidInputError("observations must be finite")
    out = []
    for k in range(cfg.num_restarts):
        (A, pi, means, var), hist = _run_restart(rx, cfg, k)
        log.debug("restart %d: %d iterations, loglik %.6f", k, len(hist) - 1, hist[-1])
        out.append((TrellisSpec(A, means, var, pi), hist))
    return out


def baum_welch(rx, cfg: BaumWelchConfig) -> tuple[TrellisSpec, np.ndarray]:
    """Best-of-restarts maximum-likelihood HMM for ``rx``."""
    runs = baum_welch_restarts(rx, cfg)
    return max(runs, key=lambda run: run[1][-1])


def align_states(learned: TrellisSpec, reference: TrellisSpec) -> StateAlignment:
    """Match learned states to reference states by emission parameters.

    Cost of pairing is ``(mu_i - mu_k)^2 + (log var_i - log var_k)^2``,
    minimized over bijections with the Hungarian method.
    """
    if learned.num_states != reference.num_states:
        raise InvalidParameterError(
            f"cannot align {learned.num_states} learned states to {reference.num_states}")
    cost = ((learned.means[:, None] - reference.means[None, :]) ** 2
            + (np.log(learned.variances)[:, None] - np.log(reference.variances)[None, :]) ** 2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(learned.num_states, dtype=np.int64)
    perm[rows] = cols
    return StateAlignment(perm, float(cost[rows, cols].sum()))


def label_learned(learned: TrellisSpec, reference: TrellisSpec) -> TrellisSpec:
    """Relabel learned states into the reference ordering and borrow its symbol labels.

    Transitions and emissions stay learned. The starting distribution is the
    learned chain's stationary law, which suits sequences that begin at an
    arbitrary point of the chain.
    """
    perm = align_states(learned, reference).permutation
    aligned = learned.relabeled(perm, reference.state_symbols)
    return TrellisSpec(aligned.transitions, aligned.means, aligned.variances,
                       stationary_distribution(aligned.transitions),
                       aligned.state_symbols, reference.alphabet)


def hmm_detect(rx_train, rx_test, cfg: BaumWelchConfig, reference: TrellisSpec) -> SoftSymbolOutput:
    learned, _ = baum_welch(rx_train, cfg)
    return detect(label_learned(learned, reference), rx_test)
