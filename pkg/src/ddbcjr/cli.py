"""Command line entry point: ``ddbcjr run`` and ``ddbcjr report-model``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .channel import MODEL_FORMAT_VERSION, TrellisSpec
from .errors import InvalidInputError
from .harness import (ExperimentConfig, HmmDetector, ModelDetector, NnDetector, emit_csv,
                      format_report, report_model, run_sweep)

log = logging.getLogger("ddbcjr")

EXIT_OK, EXIT_FAILURES, EXIT_USAGE = 0, 1, 2


def _diagnostic(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def model_document(detector) -> dict:
    """JSON document for one trained detector."""
    if isinstance(detector, HmmDetector):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": "hmm",
                "trellis": detector.trellis.to_dict(), "learned": detector.learned.to_dict(),
                "loglik_history": detector.loglik_history.tolist()}
    if isinstance(detector, NnDetector):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": "nn_detector",
                "trellis": detector.trellis.to_dict(), "nn": detector.nn.to_dict(),
                "gmm": detector.gmm.to_dict(), "state_prior": detector.state_prior.tolist()}
    if isinstance(detector, ModelDetector):
        return {"format_version": MODEL_FORMAT_VERSION, "kind": "model",
                "trellis": detector.trellis.to_dict(), "taps": detector.taps.tolist(),
                "csi_tap_deviation": detector.csi_tap_deviation}
    raise TypeError(f"no model document for {type(detector).__name__}")


def load_trellis(path) -> TrellisSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path} is not a model document")
    if doc.get("kind") != "trellis" and "trellis" in doc:
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"{path}: unsupported format version {doc.get('format_version')}")
        doc = doc["trellis"]
    return TrellisSpec.from_dict(doc)


def _write_models(result, directory: Path) -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for db, trained in result.models.items():
        for name, detector in trained.items():
            path = directory / f"{name}_{db:g}dB.json"
            path.write_text(json.dumps(model_document(detector)))
            written.append(str(path))
    return written


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        _diagnostic("config", f"invalid config {args.config}: {exc}")
        return EXIT_USAGE
    if args.seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed_override)
    out = Path(args.out or cfg.output or f"{cfg.name}.csv")
    result = run_sweep(cfg, jobs=args.jobs)
    try:
        emit_csv(result, out)
        meta = dict(result.metadata, config=cfg.to_dict(), failures=result.failures,
                    csv=str(out))
        if args.models_dir:
            meta["models"] = _write_models(result, Path(args.models_dir))
        meta_path = Path(args.metadata) if args.metadata else out.with_suffix(".meta.json")
        meta_path.write_text(json.dumps(meta, indent=2))
    except OSError as exc:
        _diagnostic("io", str(exc))
        return EXIT_USAGE
    for f in result.failures:
        _diagnostic("detector", f["message"], **{k: v for k, v in f.items() if k != "message"})
    return EXIT_FAILURES if result.failures else EXIT_OK


def cmd_report(args) -> int:
    try:
        trellis = load_trellis(args.model)
    except (InvalidInputError, ValueError, KeyError, TypeError) as exc:
        _diagnostic("model", str(exc), path=args.model)
        return EXIT_USAGE
    report = report_model(trellis)
    print(json.dumps(report) if args.json else format_report(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddbcjr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo sweep described by a JSON config")
    run.add_argument("config")
    run.add_argument("--out", help="CSV path (default: config 'output' or <name>.csv)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--seed-override", type=int, help="replace the config's master seed")
    run.add_argument("--models-dir", help="write every trained detector as JSON here")
    run.add_argument("--metadata", help="run metadata path (default: <out>.meta.json)")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report-model", help="print means, variances, transitions and steady state")
    rep.add_argument("model")
    rep.add_argument("--json", action="store_true")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        _diagnostic("usage", "--jobs must be at least 1")
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
