"""Monte Carlo error-rate sweeps over channel-model and data-driven BCJR detectors.

Every random draw is derived from the experiment seed through
``numpy.random.SeedSequence`` keyed by (purpose, sweep point, detector or
trial), so results do not depend on how tasks are spread over workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (ChannelConfig, TrellisSpec, _simulate, build_reduced_trellis,
                      isi_state_table, noise_db_to_power, random_symbols, state_labels)
from .errors import InvalidParameterError
from .fec import (NASA_K7, Interleaver, bits_to_symbols, coded_length, conv_encode,
                  deinterleave, info_length, interleave, soft_decode)
from .hmm import BaumWelchConfig, baum_welch, label_learned
from .nn import LabeledDataset, fit_marginal, nn_detect, train_classifier
from .trellis import (detect, forward_backward_loglik, map_detect,
                      stationary_distribution, symbol_posteriors)

log = logging.getLogger(__name__)

DETECTOR_KINDS = ("model", "hmm", "nn", "hybrid")
CSV_COLUMNS = ("detector", "db", "trials", "frames", "symbol_errors", "bit_errors", "ser", "ber",
               "stderr_ser", "stderr_ber", "symbols", "bits", "note")

_TRAIN, _TEST = 1, 2


@dataclass(frozen=True)
class DetectorConfig:
    name: str
    kind: str
    assumed_L: int | None = None
    assumed_N: int | None = None
    seed: int = 0
    # model: per-use random tap error in the detector's own state means
    csi_tap_deviation: float = 0.0
    # hmm / nn: where training data comes from
    train_source: str = "channel"
    train_tap_deviation: float | None = None
    train_length: int | None = None
    max_iters: int = 1500
    num_restarts: int = 3
    variance_floor: float = 1e-6
    iterations: int = 20_000
    batch_size: int = 256
    gmm_components: int | None = None
    nn_from: str | None = None
    hmm_from: str | None = None

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise InvalidParameterError(f"detector {self.name!r}: unknown kind {self.kind!r}")
        if self.train_source not in ("channel", "model"):
            raise InvalidParameterError(f"detector {self.name!r}: bad train_source")
        if self.kind == "hybrid" and not (self.nn_from and self.hmm_from):
            raise InvalidParameterError(f"hybrid detector {self.name!r} needs nn_from and hmm_from")


@dataclass(frozen=True)
class ExperimentConfig:
    sweep_db: tuple
    detectors: tuple
    channel: dict = field(default_factory=dict)
    frame_length: int = 100_000
    trials: int = 20
    coded: bool = True
    interleave: bool = True
    interleaver_seed: int = 1
    snr_convention: str = "inverse_variance"
    seed: int = 0
    train_length: int | None = None
    name: str = "experiment"
    output: str | None = None

    def __post_init__(self):
        if not self.sweep_db:
            raise InvalidParameterError("sweep must contain at least one point")
        names = [d.name for d in self.detectors]
        if len(set(names)) != len(names):
            raise InvalidParameterError("detector names must be unique")
        for d in self.detectors:
            if d.kind == "hybrid":
                for ref, kind in ((d.nn_from, "nn"), (d.hmm_from, "hmm")):
                    idx = names.index(ref) if ref in names else None
                    if idx is None or self.detectors[idx].kind != kind or idx > names.index(d.name):
                        raise InvalidParameterError(
                            f"hybrid {d.name!r}: {ref!r} must name an earlier {kind} detector")
        memory = self.channel_config(1.0).isi.memory
        if self.frame_length < 10 * memory:
            raise InvalidParameterError("frame_length must be at least 10 * L")
        if self.coded and info_length(self.frame_length) < 1:
            raise InvalidParameterError("frame too short for the convolutional code")
        noise_db_to_power(0.0, self.snr_convention)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(DetectorConfig)}
        dets = []
        for d in data.pop("detectors"):
            extra = set(d) - known
            if extra:
                raise InvalidParameterError(f"unknown detector fields {sorted(extra)}")
            dets.append(DetectorConfig(**d))
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise InvalidParameterError(f"unknown config fields {sorted(extra)}")
        return cls(sweep_db=tuple(data.pop("sweep_db")), detectors=tuple(dets), **data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sweep_db"] = list(self.sweep_db)
        out["detectors"] = [asdict(d) for d in self.detectors]
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def channel_config(self, total_power: float) -> ChannelConfig:
        return ChannelConfig.create(total_power=total_power, **self.channel)

    def noise_power(self, db: float) -> float:
        return noise_db_to_power(db, self.snr_convention)

    @property
    def num_info_bits(self) -> int:
        return info_length(self.frame_length) if self.coded else self.frame_length

    @property
    def num_symbols(self) -> int:
        return coded_length(self.num_info_bits) if self.coded else self.frame_length


@dataclass
class PointResult:
    detector: str
    db: float
    trials: int
    frames: int = 0
    symbols: int = 0
    symbol_errors: int = 0
    bits: int = 0
    bit_errors: int = 0

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols if self.symbols else float("nan")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else float("nan")

    @property
    def stderr_ser(self) -> float:
        return binomial_stderr(self.symbol_errors, self.symbols)

    @property
    def stderr_ber(self) -> float:
        return binomial_stderr(self.bit_errors, self.bits)


@dataclass
class SweepResult:
    points: list
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def get(self, detector: str, db: float) -> PointResult:
        for p in self.points:
            if p.detector == detector and p.db == db:
                return p
        raise KeyError((detector, db))


def binomial_stderr(errors: int, total: int) -> float:
    if total == 0:
        return float("nan")
    p = errors / total
    return math.sqrt(p * (1 - p) / total)


# ---------------------------------------------------------------- detectors


@dataclass(eq=False)
class ModelDetector:
    trellis: TrellisSpec
    taps: np.ndarray
    csi_tap_deviation: float = 0.0

    def soft(self, rx, rng):
        if self.csi_tap_deviation == 0:
            return detect(self.trellis, rx)
        # state means recomputed every use with randomly perturbed taps
        n_levels = self.trellis.num_states // len(self.trellis.alphabet) ** len(self.taps)
        table = np.repeat(isi_state_table(len(self.taps), np.asarray(self.trellis.alphabet)),
                          n_levels, axis=0)
        taps = self.taps + rng.normal(0, math.sqrt(self.csi_tap_deviation), (len(rx), len(self.taps)))
        means = taps @ table.T
        var = np.maximum(self.trellis.variances, 1e-12)
        log_lik = -0.5 * (np.log(2 * np.pi * var)[None, :] + (rx[:, None] - means) ** 2 / var[None, :])
        grid = forward_backward_loglik(self.trellis.transitions, self.trellis.initial_dist,
                                       log_lik, pairs=True)
        return symbol_posteriors(grid, self.trellis)


@dataclass(eq=False)
class HmmDetector:
    trellis: TrellisSpec
    learned: TrellisSpec
    loglik_history: np.ndarray

    def soft(self, rx, rng):
        return detect(self.trellis, rx)


@dataclass(eq=False)
class NnDetector:
    trellis: TrellisSpec
    nn: object
    gmm: object
    state_prior: np.ndarray

    def soft(self, rx, rng):
        return nn_detect(self.trellis, self.nn, self.gmm, rx, self.state_prior)


# ----------------------------------------------------------------- training


def _seed(cfg: ExperimentConfig, purpose: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, purpose, *keys])


def _assumed(cfg: ExperimentConfig, det: DetectorConfig) -> tuple[int, int]:
    memory = cfg.channel.get("memory", 1)
    levels = cfg.channel.get("levels", 1)
    return det.assumed_L or memory, det.assumed_N or levels


def training_data(cfg: ExperimentConfig, det: DetectorConfig, db: float, seed) -> tuple:
    """Received training samples and their detector-trellis labels."""
    true = cfg.channel_config(cfg.noise_power(db))
    L_d, N_d = _assumed(cfg, det)
    if det.train_source == "model":
        true = true.with_changes(memory=L_d, levels=N_d)
    if det.train_tap_deviation is not None:
        true = true.with_changes(tap_deviation=det.train_tap_deviation)
    length = det.train_length or cfg.train_length or cfg.frame_length
    rng = np.random.default_rng(seed)
    guard = max(true.isi.memory, L_d) - 1
    data = random_symbols(true.constellation, length, rng)
    tx = np.concatenate([np.full(guard, true.alphabet[-1]), data])
    rx, _, levels = _simulate(true, tx[guard - true.isi.memory + 1:], rng)
    labels = state_labels(tx[guard - L_d + 1:], levels, true.alphabet, L_d, N_d, true.noise.levels)
    return rx, labels


def train_detector(cfg: ExperimentConfig, index: int, point: int, trained: dict):
    """Fit one detector for one sweep point; ``trained`` holds earlier detectors of that point."""
    det = cfg.detectors[index]
    db = cfg.sweep_db[point]
    true = cfg.channel_config(cfg.noise_power(db))
    L_d, N_d = _assumed(cfg, det)
    reference = build_reduced_trellis(true, L_d, N_d)
    seed = _seed(cfg, _TRAIN, point, index, det.seed)

    if det.kind == "model":
        taps = true.with_changes(memory=L_d).isi.taps
        return ModelDetector(reference, taps, det.csi_tap_deviation)
    if det.kind == "hybrid":
        nn_det, hmm_det = trained[det.nn_from], trained[det.hmm_from]
        if nn_det.trellis.num_states != hmm_det.trellis.num_states:
            raise InvalidParameterError(f"hybrid {det.name!r}: NN and HMM state counts differ")
        return NnDetector(hmm_det.trellis, nn_det.nn, nn_det.gmm, nn_det.state_prior)

    data_seed, model_seed = seed.spawn(2)
    rx, labels = training_data(cfg, det, db, data_seed)
    q = reference.num_states
    model_seed = int(model_seed.generate_state(1)[0])
    if det.kind == "hmm":
        bw = BaumWelchConfig(q, max_iters=det.max_iters, num_restarts=det.num_restarts,
                             seed=model_seed, variance_floor=det.variance_floor)
        learned, history = baum_welch(rx, bw)
        return HmmDetector(label_learned(learned, reference), learned, history)
    nn, _ = train_classifier(LabeledDataset(rx, labels, q), q, model_seed,
                             iterations=det.iterations, batch_size=det.batch_size)
    gmm = fit_marginal(rx, det.gmm_components or q, model_seed)
    return NnDetector(reference, nn, gmm, reference.initial_dist)


def _train_point(args):
    cfg, point = args
    trained, failures, elapsed = {}, [], {}
    for index, det in enumerate(cfg.detectors):
        t0 = time.perf_counter()
        try:
            trained[det.name] = train_detector(cfg, index, point, trained)
        except Exception as exc:  # noqa: BLE001 - reported per detector
            log.warning("training %s at %s dB failed: %s", det.name, cfg.sweep_db[point], exc)
            failures.append(_failure(det.name, cfg.sweep_db[point], "train", exc))
        elapsed[det.name] = time.perf_counter() - t0
    return trained, failures, elapsed


# ------------------------------------------------------------------ testing


def _failure(detector, db, stage, exc) -> dict:
    return {"detector": detector, "db": db, "stage": stage,
            "error": type(exc).__name__, "message": str(exc)}


def simulate_test_frame(cfg: ExperimentConfig, point: int, trial: int):
    """Info bits, transmitted symbols and received samples of one test frame."""
    db = cfg.sweep_db[point]
    true = cfg.channel_config(cfg.noise_power(db))
    seq = _seed(cfg, _TEST, point, trial)
    bit_rng, chan_seed, det_seed = (np.random.default_rng(s) for s in seq.spawn(3))
    if cfg.coded:
        info = bit_rng.integers(0, 2, cfg.num_info_bits, dtype=np.uint8)
        coded = conv_encode(info)
        if cfg.interleave:
            coded = interleave(coded, _interleaver(cfg))
    else:
        info = bit_rng.integers(0, 2, cfg.frame_length, dtype=np.uint8)
        coded = info
    symbols = bits_to_symbols(coded)
    tx = np.concatenate([np.full(true.isi.memory - 1, true.alphabet[-1]), symbols])
    rx, _, _ = _simulate(true, tx, chan_seed)
    return info, coded, symbols, rx, det_seed


def _interleaver(cfg: ExperimentConfig) -> Interleaver:
    return Interleaver.random(cfg.num_symbols, cfg.interleaver_seed)


def _test_trial(args):
    cfg, point, trial, trained = args
    info, coded, symbols, rx, det_rng = simulate_test_frame(cfg, point, trial)
    counts, failures = {}, []
    for det in cfg.detectors:
        if det.name not in trained:
            continue
        try:
            soft = trained[det.name].soft(rx, det_rng)
            sym_err = int(np.count_nonzero(map_detect(soft) != symbols))
            if cfg.coded:
                llr = soft.llr
                if cfg.interleave:
                    llr = deinterleave(llr, _interleaver(cfg))
                bit_err = int(np.count_nonzero(soft_decode(llr, NASA_K7) != info))
            else:
                bit_err = sym_err
            counts[det.name] = (len(symbols), sym_err, len(info), bit_err)
        except Exception as exc:  # noqa: BLE001 - reported per detector
            failures.append(_failure(det.name, cfg.sweep_db[point], f"trial {trial}", exc))
    return counts, failures


def _map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Train every detector per sweep point, then run paired test frames.

    All detectors see the same test frames, which makes their error counts
    directly comparable.
    """
    t_start = time.perf_counter()
    n_points = len(cfg.sweep_db)
    train_out = _map(_train_point, [(cfg, p) for p in range(n_points)], jobs)
    failures = [f for _, fails, _ in train_out for f in fails]

    tasks = [(cfg, p, k, train_out[p][0]) for p in range(n_points) for k in range(cfg.trials)]
    test_out = _map(_test_trial, tasks, jobs)

    points = []
    for p, db in enumerate(cfg.sweep_db):
        trained = train_out[p][0]
        failed = {f["detector"] for f in train_out[p][1]}
        rows = {d.name: PointResult(d.name, db, cfg.trials) for d in cfg.detectors
                if d.name not in failed}
        for k in range(cfg.trials):
            counts, fails = test_out[p * cfg.trials + k]
            failures.extend(fails)
            for name, (n_sym, e_sym, n_bits, e_bits) in counts.items():
                row = rows[name]
                row.frames += 1
                row.symbols += n_sym
                row.symbol_errors += e_sym
                row.bits += n_bits
                row.bit_errors += e_bits
        points.extend(rows[d.name] for d in cfg.detectors if d.name in rows and d.name in trained)

    meta = {
        "name": cfg.name,
        "config_sha256": cfg.digest(),
        "version": __version__,
        "numpy": np.__version__,
        "seed": cfg.seed,
        "interleaver_seed": cfg.interleaver_seed,
        "jobs": jobs,
        "train_seconds": {str(cfg.sweep_db[p]): train_out[p][2] for p in range(n_points)},
        "wall_seconds": time.perf_counter() - t_start,
    }
    result = SweepResult(points, failures, meta)
    result.models = {cfg.sweep_db[p]: train_out[p][0] for p in range(n_points)}
    return result


# ------------------------------------------------------------------ reports


def report_model(trellis: TrellisSpec) -> dict:
    """Means, variances, transitions and steady state of a trellis, rounded like a table."""
    pi = stationary_distribution(trellis.transitions)
    return {
        "num_states": trellis.num_states,
        "means": np.round(trellis.means, 2).tolist(),
        "variances": [float(f"{v:.2g}") for v in trellis.variances],
        "transitions": np.round(trellis.transitions, 2).tolist(),
        "stationary": np.round(pi, 3).tolist(),
    }


def format_report(report: dict) -> str:
    q = report["num_states"]
    head = "".join(f"{'s' + str(j + 1):>8}" for j in range(q))
    lines = [f"{'':>6}{head}",
             f"{'mu':>6}" + "".join(f"{m:>8.2f}" for m in report["means"]),
             f"{'var':>6}" + "".join(f"{v:>8.2g}" for v in report["variances"])]
    for i, row in enumerate(report["transitions"]):
        lines.append(f"{'s' + str(i + 1):>6}" + "".join(f"{v:>8.2f}" for v in row))
    lines.append(f"{'pi':>6}" + "".join(f"{v:>8.3f}" for v in report["stationary"]))
    return "\n".join(lines)


def emit_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for p in result.points:
                note = ""
                if p.bits and p.bit_errors == 0:
                    note = f"zero errors; 95% upper bound on ber 3/n = {3 / p.bits!r}"
                writer.writerow([p.detector, repr(float(p.db)), p.trials, p.frames,
                                 p.symbol_errors, p.bit_errors, repr(p.ser), repr(p.ber),
                                 repr(p.stderr_ser), repr(p.stderr_ber), p.symbols, p.bits, note])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> SweepResult:
    points = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            points.append(PointResult(row["detector"], float(row["db"]), int(row["trials"]),
                                      int(row["frames"]), int(row["symbols"]),
                                      int(row["symbol_errors"]), int(row["bits"]),
                                      int(row["bit_errors"])))
    return SweepResult(points)
