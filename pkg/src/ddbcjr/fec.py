"""Rate-1/2 (171, 133) convolutional code, random interleaving, soft Viterbi decoding.

LLR convention: positive values favor bit 0. Coded bit 0 is sent as the
symbol +1 and bit 1 as -1, so a detector LLR ``log p(+1)/p(-1)`` can be fed
to the decoder unchanged.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError


@dataclass(frozen=True)
class ConvCodeSpec:
    generators: tuple = (0o171, 0o133)
    constraint_length: int = 7

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def num_states(self) -> int:
        return 1 << self.memory

    @property
    def rate_inverse(self) -> int:
        return len(self.generators)

    def tap_vectors(self) -> np.ndarray:
        """Row ``g`` holds generator ``g`` as taps on delays 0..K-1."""
        k = self.constraint_length
        return np.array([[(g >> (k - 1 - d)) & 1 for d in range(k)] for g in self.generators],
                        dtype=np.uint8)

    def trellis_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """``next_state[s, b]`` and packed output label ``outputs[s, b]``.

        The state holds the previous K-1 inputs with the newest at the top bit.
        """
        S, m = self.num_states, self.memory
        next_state = np.zeros((S, 2), dtype=np.int64)
        outputs = np.zeros((S, 2), dtype=np.int64)
        for s in range(S):
            for b in range(2):
                reg = (b << m) | s
                label = 0
                for g in self.generators:
                    label = (label << 1) | (bin(reg & g).count("1") & 1)
                next_state[s, b] = reg >> 1
                outputs[s, b] = label
        return next_state, outputs


NASA_K7 = ConvCodeSpec()


def coded_length(num_info_bits: int, spec: ConvCodeSpec = NASA_K7) -> int:
    return spec.rate_inverse * (num_info_bits + spec.memory)


def info_length(num_coded_bits: int, spec: ConvCodeSpec = NASA_K7) -> int:
    """Largest info block whose terminated codeword fits in ``num_coded_bits``."""
    return num_coded_bits // spec.rate_inverse - spec.memory


def conv_encode(info_bits, spec: ConvCodeSpec = NASA_K7) -> np.ndarray:
    """Zero-tail terminated encoding; output bits are interlaced per generator."""
    u = np.concatenate([np.asarray(info_bits, dtype=np.int64), np.zeros(spec.memory, np.int64)])
    taps = spec.tap_vectors().astype(np.int64)
    out = np.empty((len(u), len(taps)), dtype=np.uint8)
    for g, tap in enumerate(taps):
        out[:, g] = np.convolve(u, tap)[: len(u)] & 1
    return out.ravel()


def soft_decode(llrs, spec: ConvCodeSpec = NASA_K7) -> np.ndarray:
    """Maximum-likelihood info bits for a zero-tail terminated codeword."""
    llrs = np.asarray(llrs, dtype=float)
    n = spec.rate_inverse
    if llrs.ndim != 1 or len(llrs) % n or len(llrs) // n <= spec.memory:
        raise InvalidInputError(f"LLR length {llrs.shape} is not a terminated codeword length")
    steps = len(llrs) // n
    lam = llrs.reshape(steps, n)
    # reward of label o: sum_g (1 - 2 c_g) * llr_g
    labels = np.arange(1 << n)
    signs = 1 - 2 * ((labels[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1)
    metrics = lam @ signs.T.astype(float)
    next_state, outputs = spec.trellis_tables()
    bits = _kernels.viterbi_decode(np.ascontiguousarray(metrics), next_state, outputs, steps)
    return bits[: steps - spec.memory]


def free_distance(spec: ConvCodeSpec = NASA_K7, max_depth: int = 64) -> int:
    """Minimum output weight of a path leaving and re-entering the zero state.

    Dijkstra over (state, depth) with depth capped at ``max_depth`` steps.
    """
    next_state, outputs = spec.trellis_tables()
    weight = np.vectorize(lambda o: bin(o).count("1"))(outputs)
    start = int(next_state[0, 1])
    heap = [(int(weight[0, 1]), 1, start)]
    best = {}
    while heap:
        w, depth, s = heapq.heappop(heap)
        if s == 0:
            return w
        if best.get(s, np.inf) <= w or depth >= max_depth:
            continue
        best[s] = w
        for b in range(2):
            heapq.heappush(heap, (w + int(weight[s, b]), depth + 1, int(next_state[s, b])))
    raise RuntimeError("no path back to the zero state within the depth bound")


def is_catastrophic(spec: ConvCodeSpec = NASA_K7) -> bool:
    """True when a zero-output cycle exists away from the zero state."""
    next_state, outputs = spec.trellis_tables()
    S = spec.num_states
    succ = {s: [int(next_state[s, b]) for b in range(2)
                if outputs[s, b] == 0 and next_state[s, b] != 0] for s in range(1, S)}
    color = dict.fromkeys(range(1, S), 0)

    def visit(s):
        color[s] = 1
        for n in succ[s]:
            if color[n] == 1 or (color[n] == 0 and visit(n)):
                return True
        color[s] = 2
        return False

    return any(color[s] == 0 and visit(s) for s in range(1, S))


@dataclass(frozen=True, eq=False)
class Interleaver:
    permutation: np.ndarray
    seed: int | None = None

    @classmethod
    def random(cls, length: int, seed: int) -> "Interleaver":
        return cls(np.random.default_rng(seed).permutation(length), seed)

    @classmethod
    def identity(cls, length: int) -> "Interleaver":
        return cls(np.arange(length))

    def __len__(self):
        return len(self.permutation)


def interleave(bits, ilv: Interleaver) -> np.ndarray:
    bits = np.asarray(bits)
    if len(bits) != len(ilv):
        raise InvalidInputError(f"length {len(bits)} does not match interleaver size {len(ilv)}")
    return bits[ilv.permutation]


def deinterleave(values, ilv: Interleaver) -> np.ndarray:
    values = np.asarray(values)
    if len(values) != len(ilv):
        raise InvalidInputError(f"length {len(values)} does not match interleaver size {len(ilv)}")
    out = np.empty_like(values)
    out[ilv.permutation] = values
    return out


def bits_to_symbols(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)
