"""ISI channel with Markov-Middleton impulsive noise, and its joint-state trellis.

State indexing
--------------
An ISI state holds the last ``L`` symbols ``(x_t, x_{t-1}, ..., x_{t-L+1})``.
With ``a_k`` the alphabet index of ``x_{t-k}`` the ISI index is
``sum_k a_k * M**k``, so the symbol driving a transition into a state is
``isi_index % M``. Joint states follow the Kronecker ordering
``joint = isi_index * N + noise_level``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

BPSK = (-1.0, 1.0)
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class IsiProfile:
    memory: int
    decay_rate: float
    taps: np.ndarray
    tap_deviation: float = 0.0


@dataclass(frozen=True)
class MarkovMiddletonParams:
    levels: int
    impulsive_index: float
    background_ratio: float
    total_power: float
    correlation: float

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidParameterError(f"need at least one noise level, got {self.levels}")
        for name in ("impulsive_index", "background_ratio", "total_power"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
        if not 0.0 <= self.correlation <= 1.0:
            raise InvalidParameterError(f"correlation must lie in [0, 1], got {self.correlation}")


@dataclass(frozen=True)
class ChannelConfig:
    isi: IsiProfile
    noise: MarkovMiddletonParams
    constellation: tuple = BPSK

    def __post_init__(self):
        pts = np.asarray(self.constellation, dtype=float)
        if pts.size < 2:
            raise InvalidParameterError("constellation needs at least two symbols")
        if np.any(np.diff(pts) <= 0):
            raise InvalidParameterError("constellation must be strictly increasing")
        if abs(pts.mean()) > 1e-12 or abs(np.mean(pts**2) - 1.0) > 1e-12:
            raise InvalidParameterError("constellation must have zero mean and unit power")

    @classmethod
    def create(cls, memory=1, decay_rate=1.0, tap_deviation=0.0, levels=1,
               impulsive_index=0.8, background_ratio=0.01, total_power=1.0,
               correlation=0.98, constellation=BPSK) -> "ChannelConfig":
        return cls(
            build_isi_profile(memory, decay_rate, tap_deviation),
            MarkovMiddletonParams(levels, impulsive_index, background_ratio,
                                  total_power, correlation),
            tuple(constellation),
        )

    @property
    def alphabet(self) -> np.ndarray:
        return np.asarray(self.constellation, dtype=float)

    @property
    def num_states(self) -> int:
        return self.noise.levels * len(self.constellation) ** self.isi.memory

    def with_total_power(self, total_power: float) -> "ChannelConfig":
        noise = self.noise
        return ChannelConfig(
            self.isi,
            MarkovMiddletonParams(noise.levels, noise.impulsive_index,
                                  noise.background_ratio, total_power, noise.correlation),
            self.constellation,
        )

    def with_changes(self, memory=None, levels=None, tap_deviation=None) -> "ChannelConfig":
        """Copy with a different ISI memory, noise level count or tap deviation."""
        isi = self.isi
        noise = self.noise
        if memory is not None or tap_deviation is not None:
            isi = build_isi_profile(
                isi.memory if memory is None else memory,
                isi.decay_rate,
                isi.tap_deviation if tap_deviation is None else tap_deviation,
            )
        if levels is not None:
            noise = MarkovMiddletonParams(levels, noise.impulsive_index,
                                          noise.background_ratio, noise.total_power,
                                          noise.correlation)
        return ChannelConfig(isi, noise, self.constellation)


@dataclass(frozen=True, eq=False)
class TrellisSpec:
    """Finite-state Gaussian-emission model shared by detection and learning.

    ``state_symbols[s]`` is the alphabet index of the symbol that drives any
    transition into ``s``; it may be ``None`` for an unlabeled learned model.
    """

    transitions: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    initial_dist: np.ndarray
    state_symbols: np.ndarray | None = None
    alphabet: tuple = BPSK

    def __post_init__(self):
        A = np.asarray(self.transitions, dtype=float)
        q = A.shape[0]
        if A.shape != (q, q) or q < 1:
            raise InvalidParameterError(f"transition matrix must be square, got {A.shape}")
        if np.any(A < 0) or np.any(A > 1) or np.any(np.abs(A.sum(axis=1) - 1) > 1e-10):
            raise InvalidParameterError("transition matrix must be row-stochastic")
        means = np.asarray(self.means, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        pi = np.asarray(self.initial_dist, dtype=float)
        if means.shape != (q,) or var.shape != (q,) or pi.shape != (q,):
            raise InvalidParameterError("emission and initial vectors must have length Q")
        if np.any(var <= 0):
            raise InvalidParameterError("emission variances must be positive")
        if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-10:
            raise InvalidParameterError("initial distribution must sum to 1")
        object.__setattr__(self, "transitions", A)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "initial_dist", pi)
        if self.state_symbols is not None:
            sym = np.asarray(self.state_symbols, dtype=np.int64)
            if sym.shape != (q,) or np.any(sym < 0) or np.any(sym >= len(self.alphabet)):
                raise InvalidParameterError("state_symbols must index the alphabet")
            object.__setattr__(self, "state_symbols", sym)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def symbol_map(self) -> list[np.ndarray]:
        """For each alphabet symbol, the (prev, next) pairs whose transition it drives."""
        if self.state_symbols is None:
            raise InvalidParameterError("trellis has no state-to-symbol labels")
        prev, nxt = np.nonzero(self.transitions)
        pairs = np.stack([prev, nxt], axis=1)
        return [pairs[self.state_symbols[nxt] == k] for k in range(len(self.alphabet))]

    def relabeled(self, perm: np.ndarray, state_symbols=None) -> "TrellisSpec":
        """Move state ``i`` to index ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return TrellisSpec(
            self.transitions[np.ix_(inv, inv)],
            self.means[inv],
            self.variances[inv],
            self.initial_dist[inv],
            state_symbols,
            self.alphabet,
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "trellis",
            "num_states": self.num_states,
            "alphabet": list(self.alphabet),
            "transitions": self.transitions.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "state_symbols": None if self.state_symbols is None else self.state_symbols.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrellisSpec":
        if data.get("format_version") != MODEL_FORMAT_VERSION or data.get("kind") != "trellis":
            raise InvalidInputError("not a version-1 trellis model document")
        return cls(
            np.array(data["transitions"], dtype=float),
            np.array(data["means"], dtype=float),
            np.array(data["variances"], dtype=float),
            np.array(data["initial_dist"], dtype=float),
            data.get("state_symbols"),
            tuple(data.get("alphabet", BPSK)),
        )


@dataclass
class Frame:
    """One transmission; ``rx[k]`` and ``state_path[k]`` belong to ``tx_symbols[k]``."""

    info_bits: np.ndarray
    coded_bits: np.ndarray
    tx_symbols: np.ndarray
    rx: np.ndarray
    state_path: np.ndarray
    noise_path: np.ndarray = field(default=None, repr=False)


def build_isi_profile(memory: int, decay_rate: float, tap_deviation: float = 0.0) -> IsiProfile:
    if int(memory) != memory or memory < 1:
        raise InvalidParameterError(f"ISI memory must be a positive integer, got {memory}")
    if not math.isfinite(decay_rate):
        raise InvalidParameterError(f"decay rate must be finite, got {decay_rate}")
    if not (math.isfinite(tap_deviation) and tap_deviation >= 0):
        raise InvalidParameterError(f"tap deviation must be nonnegative, got {tap_deviation}")
    profile = np.exp(-decay_rate * np.arange(memory))
    taps = profile / np.sqrt(np.sum(profile**2))
    taps.setflags(write=False)
    return IsiProfile(int(memory), float(decay_rate), taps, float(tap_deviation))


def middleton_levels(params: MarkovMiddletonParams) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy probabilities and variances of the noise levels.

    Occupancies are the Poisson(A) weights truncated to ``N`` levels. A
    single level carries the whole power ``sigma^2`` (pure background noise).
    """
    n = params.levels
    a = params.impulsive_index
    j = np.arange(n)
    log_w = -a + j * math.log(a) - np.array([math.lgamma(k + 1) for k in j])
    w = np.exp(log_w - log_w.max())
    p = w / w.sum()
    if n == 1:
        return p, np.array([params.total_power])
    gamma = params.background_ratio
    var = params.total_power * (j / a + gamma) / (1 + gamma)
    return p, var


def noise_transition_matrix(params: MarkovMiddletonParams) -> np.ndarray:
    p, _ = middleton_levels(params)
    r = params.correlation
    P = np.tile((1 - r) * p, (params.levels, 1))
    P[np.diag_indices(params.levels)] += r
    return P


def isi_state_table(memory: int, alphabet: np.ndarray) -> np.ndarray:
    """Symbol values of each ISI state: row ``i`` is ``(x_t, ..., x_{t-L+1})``."""
    m = len(alphabet)
    idx = np.arange(m**memory)
    digits = (idx[:, None] // m ** np.arange(memory)[None, :]) % m
    return alphabet[digits]


def _isi_transitions(memory: int, m: int) -> np.ndarray:
    q = m**memory
    P = np.zeros((q, q))
    prev = np.arange(q)
    for a in range(m):
        P[prev, (a + m * prev) % q] = 1.0 / m
    return P


def build_joint_trellis(config: ChannelConfig) -> TrellisSpec:
    return _trellis(config.isi.taps, config.noise, config.alphabet)


def build_reduced_trellis(config: ChannelConfig, assumed_L: int, assumed_N: int) -> TrellisSpec:
    """Detector trellis for an assumed ISI memory and noise level count."""
    if assumed_L < 1 or assumed_N < 1:
        raise InvalidParameterError("assumed memory and level count must be >= 1")
    return build_joint_trellis(config.with_changes(memory=assumed_L, levels=assumed_N))


def _trellis(taps, noise: MarkovMiddletonParams, alphabet) -> TrellisSpec:
    m = len(alphabet)
    memory = len(taps)
    isi_means = isi_state_table(memory, alphabet) @ taps
    P_isi = _isi_transitions(memory, m)
    p, var = middleton_levels(noise)
    P_noise = noise_transition_matrix(noise)
    n = noise.levels
    return TrellisSpec(
        transitions=np.kron(P_isi, P_noise),
        means=np.repeat(isi_means, n),
        variances=np.tile(var, m**memory),
        initial_dist=np.kron(np.full(m**memory, 1.0 / m**memory), p),
        state_symbols=np.repeat(np.arange(m**memory) % m, n),
        alphabet=tuple(float(a) for a in alphabet),
    )


def symbol_indices(symbols, alphabet) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=float)
    alphabet = np.asarray(alphabet, dtype=float)
    idx = np.clip(np.searchsorted(alphabet, symbols), 0, len(alphabet) - 1)
    if not np.array_equal(alphabet[idx], symbols):
        bad = symbols[alphabet[idx] != symbols][0]
        raise InvalidInputError(f"symbol {bad!r} is not in the constellation")
    return idx


def isi_state_path(symbol_idx: np.ndarray, memory: int, m: int) -> np.ndarray:
    """ISI state index for every position that has ``memory - 1`` predecessors."""
    n = len(symbol_idx) - memory + 1
    out = np.zeros(n, dtype=np.int64)
    for k in range(memory):
        out += symbol_idx[memory - 1 - k: memory - 1 - k + n] * m**k
    return out


def sample_noise_levels(params: MarkovMiddletonParams, length: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Level path of the noise chain, started from its stationary law.

    The transition law is ``r * I + (1 - r) * 1 p^T``: each step either keeps
    the level (probability r) or redraws it from ``p``.
    """
    p, _ = middleton_levels(params)
    fresh = rng.choice(params.levels, size=length, p=p)
    redraw = rng.random(length) >= params.correlation
    redraw[0] = True
    last = np.maximum.accumulate(np.where(redraw, np.arange(length), 0))
    return fresh[last]


def simulate_frame(config: ChannelConfig, tx_symbols, rng_seed) -> tuple[np.ndarray, np.ndarray]:
    """Pass symbols through the channel.

    ``tx_symbols`` must start with the ``L - 1`` guard symbols; outputs are
    produced only where a full ISI state exists, so both returned arrays have
    length ``len(tx_symbols) - L + 1``.
    """
    rx, state_path, _ = _simulate(config, tx_symbols, rng_seed)
    return rx, state_path


def _simulate(config: ChannelConfig, tx_symbols, rng_seed):
    memory = config.isi.memory
    alphabet = config.alphabet
    x = np.asarray(tx_symbols, dtype=float)
    idx = symbol_indices(x, alphabet)
    n = len(x) - memory + 1
    if n < 1:
        raise InvalidInputError(f"need at least {memory} symbols including the guard band")
    rng = np.random.default_rng(rng_seed)

    # window[k, l] = x_{t-l} for output k
    window = np.lib.stride_tricks.sliding_window_view(x, memory)[:, ::-1]
    taps = np.broadcast_to(config.isi.taps, (n, memory))
    if config.isi.tap_deviation > 0:
        taps = taps + rng.normal(0.0, math.sqrt(config.isi.tap_deviation), size=(n, memory))
    clean = np.einsum("kl,kl->k", taps, window)

    levels = sample_noise_levels(config.noise, n, rng)
    _, var = middleton_levels(config.noise)
    rx = clean + rng.standard_normal(n) * np.sqrt(var[levels])

    isi = isi_state_path(idx, memory, len(alphabet))
    return rx, isi * config.noise.levels + levels, levels


def state_labels(tx_symbols, noise_path, alphabet, assumed_L: int, assumed_N: int,
                 true_N: int) -> np.ndarray:
    """Joint-state labels of a detector trellis for a simulated sequence.

    ``tx_symbols`` carries ``assumed_L - 1`` leading guard symbols and
    ``noise_path`` has one level per labeled position. With ``assumed_N == 1``
    only the ISI coordinate is labeled.
    """
    idx = symbol_indices(tx_symbols, alphabet)
    isi = isi_state_path(idx, assumed_L, len(alphabet))
    if assumed_N == 1:
        return isi
    if assumed_N != true_N:
        raise InvalidParameterError(
            f"cannot label {assumed_N} noise levels from a {true_N}-level channel")
    return isi * assumed_N + np.asarray(noise_path)


def noise_db_to_power(db: float, convention: str = "inverse_variance") -> float:
    """Noise power sigma^2 for an SNR/SINR in dB.

    ``inverse_variance``: SNR = 1 / sigma^2. ``es_n0``: SNR = Es / N0 with
    sigma^2 = N0 / 2.
    """
    snr = 10.0 ** (db / 10.0)
    if convention == "inverse_variance":
        return 1.0 / snr
    if convention == "es_n0":
        return 1.0 / (2.0 * snr)
    raise InvalidParameterError(f"unknown SNR convention {convention!r}")


def random_symbols(alphabet: Sequence[float], length: int, rng: np.random.Generator) -> np.ndarray:
    return np.asarray(alphabet, dtype=float)[rng.integers(0, len(alphabet), size=length)]
