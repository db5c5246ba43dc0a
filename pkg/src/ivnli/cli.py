"""Command-line entry point: ``ivnli {train,eval,predict,grid,synth,adapt}``.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bundle import BundleError, load_bundle, persist_bundle, persist_gmm
from .frontend import FrontendError, extract_features, load_wav
from .gmm import map_adapt
from .kvconfig import ConfigError
from .pipeline import (
    ManifestError,
    Manifest,
    PipelineConfig,
    PipelineError,
    evaluate_pipeline,
    grid_search,
    predict_one,
    train_pipeline,
)
from .synth import SynthSpec, generate_corpus

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivnli", description="i-vector native language identification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, bundle=False, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="CSV with header path,label,split")
        p.add_argument("--config", help="key=value pipeline config file")
        if bundle:
            p.add_argument("--bundle", required=True, help="model bundle directory")
        p.add_argument("--jobs", type=int, default=1, help="feature-extraction threads")

    p = sub.add_parser("train", help="train a model bundle from the train split")
    common(p)
    p.add_argument("--out", required=True, help="bundle directory to write")

    p = sub.add_parser("eval", help="evaluate a bundle on one split")
    common(p, bundle=True)
    p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
    p.add_argument("--out", help="write report.txt and report.csv here")

    p = sub.add_parser("predict", help="classify one WAV file")
    p.add_argument("--bundle", required=True)
    p.add_argument("wav")

    p = sub.add_parser("grid", help="sweep Gaussian count x T rank")
    common(p)
    p.add_argument("--k-values", type=_int_list, required=True, help="e.g. 128,256,512")
    p.add_argument("--r-values", type=_int_list, required=True, help="e.g. 100,200,300")
    p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
    p.add_argument("--out", help="write grid.txt and grid.csv here")

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--classes", type=int, default=11)
    p.add_argument("--train", type=int, default=10, help="train utterances per class")
    p.add_argument("--dev", type=int, default=3)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--duration", type=float, default=3.0, help="seconds")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("adapt", help="MAP-adapt the bundle UBM means to some WAV files")
    p.add_argument("--bundle", required=True)
    p.add_argument("--relevance", type=float, default=16.0)
    p.add_argument("--out", required=True, help="directory for the adapted GMM")
    p.add_argument("wav", nargs="+")
    return parser


def _config(args) -> PipelineConfig:
    return PipelineConfig.from_file(args.config) if args.config else PipelineConfig()


def _write_outputs(out: str | None, stem: str, text: str, csv: str) -> None:
    if out is None:
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.txt").write_text(text, encoding="utf-8")
    (out_dir / f"{stem}.csv").write_text(csv, encoding="utf-8")


def run(args) -> int:
    if args.command == "synth":
        try:
            spec = SynthSpec(
                n_classes=args.classes, n_train=args.train, n_dev=args.dev, n_test=args.test,
                duration_s=args.duration, noise_level=args.noise, seed=args.seed,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        manifest = generate_corpus(spec, args.out)
        print(f"wrote {len(manifest.entries)} utterances and {Path(args.out) / 'manifest.csv'}")
        return 0

    if args.command == "predict":
        bundle = load_bundle(args.bundle)
        label, scores = predict_one(bundle, args.wav)
        print(label)
        for lab, s in zip(bundle.labels, scores):
            print(f"{lab}\t{s:.6f}")
        return 0

    if args.command == "adapt":
        if not args.relevance > 0:
            raise UsageError(f"--relevance must be positive, got {args.relevance}")
        bundle = load_bundle(args.bundle)
        frames = [extract_features(load_wav(w), bundle.config.frontend).frames for w in args.wav]
        adapted = map_adapt(bundle.ubm, np.vstack(frames), relevance=args.relevance)
        persist_gmm(adapted, args.out, relevance=args.relevance, n_files=len(frames))
        shift = np.linalg.norm(adapted.means - bundle.ubm.means, axis=1)
        print(f"adapted GMM written to {args.out}; mean shift per component max {shift.max():.4f}")
        return 0

    config = _config(args)
    manifest = Manifest.read(args.manifest)
    if args.command == "train":
        bundle = train_pipeline(manifest, config, n_jobs=args.jobs)
        persist_bundle(bundle, args.out)
        print(f"bundle written to {args.out} ({len(bundle.labels)} classes)")
    elif args.command == "eval":
        bundle = load_bundle(args.bundle)
        report = evaluate_pipeline(bundle, manifest, args.split, n_jobs=args.jobs)
        sys.stdout.write(report.to_text())
        _write_outputs(args.out, "report", report.to_text(), report.to_csv())
    elif args.command == "grid":
        result = grid_search(manifest, config, args.k_values, args.r_values, args.split, n_jobs=args.jobs)
        sys.stdout.write(result.to_text())
        _write_outputs(args.out, "grid", result.to_text(), result.to_csv())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (UsageError, ConfigError) as exc:
        print(f"ivnli: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ManifestError, BundleError, FrontendError, OSError, ValueError, ArithmeticError) as exc:
        print(f"ivnli: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
