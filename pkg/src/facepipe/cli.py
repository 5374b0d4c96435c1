"""Command line entry point: ``facepipe <stage> --config <file>``.

Every stage writes under the config's run directory. Later stages reuse
earlier outputs (feature dumps, the model file) when they exist and
recompute them otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, gabor, pipeline
from .errors import FacePipeError
from .preprocess import save_image

log = logging.getLogger("facepipe")


def _config(args) -> pipeline.ExperimentConfig:
    overrides = {}
    if args.no_register:
        overrides["register"] = False
    if args.literal_frequencies:
        overrides["gabor_literal_frequencies"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    return pipeline.load_config(args.config, **overrides)


def _prepare(config):
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config.to_text())
    return run_dir


def _split(config):
    return pipeline.split(pipeline.ingest(config.dataset_root, config.protocol), config)


def cmd_preprocess(config) -> Path:
    run_dir = _prepare(config)
    out = run_dir / "preprocessed"
    train, test = _split(config)
    for entry in train + test:
        dest = out / entry.subject_id / (Path(entry.image_id).stem + ".pgm")
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_image(pipeline.load_preprocessed(entry, config), dest)
    log.info("wrote %d images to %s", len(train) + len(test), out)
    return out


def cmd_extract(config) -> Path:
    run_dir = _prepare(config)
    train, test = _split(config)
    bank = gabor.default_bank(config.bank_config)
    meta = {"rho": config.rho, "n_kernels": len(bank)}
    for name, part in (("train", train), ("test", test)):
        X = pipeline.extract_all(part, config, bank)
        gabor.write_feature_dump(run_dir / f"{name}_features.bin", X, [e.key for e in part], meta)
    log.info("features: %d train, %d test", len(train), len(test))
    return run_dir


def _features(config, name):
    path = config.run_dir() / f"{name}_features.bin"
    if not path.exists():
        cmd_extract(config)
    X, meta = gabor.read_feature_dump(path)
    return X, [key.split("/", 1)[0] for key in meta["ids"]]


def cmd_train(config) -> Path:
    run_dir = _prepare(config)
    X, ids = _features(config, "train")
    model = pipeline.fit_and_train(config, X, ids)
    path = run_dir / "model.bin"
    pipeline.save_model(model, path)
    log.info("model for %d subjects written to %s", len(model.subjects), path)
    return path


def cmd_evaluate(config) -> Path:
    run_dir = _prepare(config)
    path = run_dir / "model.bin"
    if not path.exists():
        cmd_train(config)
    model = pipeline.load_model(path)
    X, ids = _features(config, "test")
    scores = pipeline.score_probes(model, X, ids)
    report = evaluation.make_report(config.method, config.protocol, scores)
    evaluation.emit_report(report, run_dir)
    _print_report(report)
    return run_dir


def cmd_run(config) -> Path:
    report = pipeline.run_experiment(config)
    _print_report(report)
    return config.run_dir()


def _print_report(report):
    print(
        f"{report.label}: EER {report.eer:.4f}%  FRR {report.frr_at_eer:.4f}%  "
        f"FAR {report.far_at_eer:.4f}%  recognition {report.recognition_rate:.4f}%"
    )


COMMANDS = {
    "preprocess": cmd_preprocess,
    "extract": cmd_extract,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facepipe", description="Multiview face verification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--no-register", action="store_true", help="images are already cropped; skip eye registration")
        p.add_argument("--literal-frequencies", action="store_true", help="use pi/2^i directly as cycles per pixel")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output-dir", default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        out = COMMANDS[args.command](config)
    except (FacePipeError, OSError) as exc:
        line = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(line), file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
