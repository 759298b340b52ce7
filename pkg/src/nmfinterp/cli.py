"""Command-line entry point.

Every run writes the resolved arguments next to its output (``config.json`` in
output directories, ``<output>.config.json`` beside output files) and
``nmfinterp replay <config>`` re-executes them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioError, load_wav, save_wav
from .checkpoint import (
    features_from_meta,
    load_classifier,
    load_dictionary,
    load_system,
    save_classifier,
    save_dictionary,
    save_system,
)
from .container import ContainerError
from .data import FeatureConfig, ManifestError, load_manifest, load_samples
from .interpret import InterpretError, interpret_sample
from .metrics import (
    MetricError,
    faithfulness,
    fidelity_report,
    nmf_baseline_classify,
    random_baseline_faithfulness,
    task_report,
)
from .models import ClassifierConfig, InterpreterSystem, ModelError, TappedClassifier
from .nmf import NmfConfig, NmfError, learn_dictionary_class_noise, learn_dictionary_flat
from .synth import SynthError, SynthSpec, default_recipes, generate
from .training import LossWeights, TrainConfig, TrainingError, predict_classifier, predict_system
from .training import train_bydesign, train_classifier, train_posthoc

log = logging.getLogger("nmfinterp")

KNOWN_ERRORS = (
    AudioError, ContainerError, InterpretError, ManifestError, MetricError, ModelError, NmfError,
    SynthError, TrainingError, FileNotFoundError, KeyError,
)
METRICS = ("fidelity", "faithfulness", "auprc", "f1", "accuracy", "nmf-baseline")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config echo


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def _write_config(target: Path, command: str, args: argparse.Namespace) -> None:
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "command", "verbose")}
    payload = {"command": command, "args": resolved, "version": __version__}
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sidecar(out: Path) -> Path:
    return out.with_name(out.name + ".config.json")


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise CliError(f"{what} {path} does not exist")


def _prepare_output_file(out: Path) -> None:
    if not out.parent.is_dir():
        raise CliError(f"output directory {out.parent} does not exist")


def _fresh_log(out: Path) -> Path:
    path = out.with_name(out.name + ".train.jsonl")
    path.unlink(missing_ok=True)
    return path


def _abs(p: str) -> Path:
    return Path(p).expanduser().resolve()


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args) -> None:
    spec = SynthSpec(
        default_recipes(args.classes), per_class=args.per_class, duration_s=args.duration, snr_db=args.snr,
        multilabel=args.multilabel, mix_prob=args.mix_prob, seed=args.seed,
    )
    manifest = generate(spec, args.out)
    _write_config(args.out / "config.json", "synth-data", args)
    print(f"wrote {len(manifest.entries)} clips and {args.out / 'manifest.csv'}")


def _features(args) -> FeatureConfig:
    return FeatureConfig(mel_bands=args.mel_bands)


def cmd_learn_dict(args) -> None:
    manifest = load_manifest(args.manifest)
    _prepare_output_file(args.out)
    train = load_samples(manifest, "train", FeatureConfig())
    specs = [s.spec for s in train]
    if args.strategy == "flat":
        if args.k is None:
            raise CliError("--k is required for the flat strategy")
        W = learn_dictionary_flat(specs, NmfConfig(args.k, args.mu, args.iters, seed=args.seed), args.chunk)
    else:
        k = manifest.n_classes * args.per_class_k
        if args.k is not None and args.k != k:
            raise CliError(f"--k {args.k} disagrees with {manifest.n_classes} classes x --per-class-k {args.per_class_k} = {k}")
        labels = np.stack([s.label for s in train])
        cfg = NmfConfig(args.noise_k, args.mu, args.iters, seed=args.seed)
        W = learn_dictionary_class_noise(
            specs, labels, manifest.class_names, args.noise_k, args.per_class_k, args.cap, cfg, args.chunk
        )
    save_dictionary(args.out, W, strategy=args.strategy, n_bins=W.n_bins, class_table=manifest.class_names)
    _write_config(_sidecar(args.out), "learn-dict", args)
    print(f"dictionary with K={W.k} atoms written to {args.out}")


def _task_meta(manifest, features: FeatureConfig) -> dict:
    return {
        "class_table": manifest.class_names,
        "task_kind": manifest.task_kind,
        "features": {"fft_size": features.fft_size, "hop": features.hop, "mel_bands": features.mel_bands},
    }


def cmd_train_classifier(args) -> None:
    manifest = load_manifest(args.manifest)
    _prepare_output_file(args.out)
    features = _features(args)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.seed, manifest.task_kind, "posthoc")
    clf = TappedClassifier(ClassifierConfig(features.mel_bands, manifest.n_classes, multilabel=manifest.multilabel), args.seed)
    train = load_samples(manifest, "train", features)
    report = train_classifier(clf, train, cfg, _fresh_log(args.out))
    save_classifier(args.out, clf, **_task_meta(manifest, features))
    _write_config(_sidecar(args.out), "train-classifier", args)
    print(f"classifier written to {args.out} (final loss {report.totals[-1]:.4f})")


def _check_classes(meta: dict, manifest, what: str) -> None:
    if meta.get("class_table") != manifest.class_names:
        raise CliError(f"{what} was trained on classes {meta.get('class_table')}, manifest has {manifest.class_names}")


def _check_k(model_k: int, dict_k: int) -> None:
    if model_k != dict_k:
        raise CliError(f"K mismatch: model has K={model_k}, dictionary has K={dict_k}")


def cmd_train_posthoc(args) -> None:
    clf, clf_meta = load_classifier(args.classifier)
    W, _ = load_dictionary(args.dict)
    manifest = load_manifest(args.manifest)
    _check_classes(clf_meta, manifest, "classifier")
    _prepare_output_file(args.out)
    features = features_from_meta(clf_meta)
    system = InterpreterSystem.build(clf.config, W.k, args.seed, args.pooling, classifier=clf)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.seed, manifest.task_kind, "posthoc")
    train = load_samples(manifest, "train", features)
    report = train_posthoc(clf, system.psi, system.theta, W, train, LossWeights(args.alpha, args.beta), cfg, _fresh_log(args.out))
    save_system(args.out, system, "posthoc", **_task_meta(manifest, features))
    _write_config(_sidecar(args.out), "train-posthoc", args)
    print(f"interpreter written to {args.out} (final loss {report.totals[-1]:.4f})")


def cmd_train_bydesign(args) -> None:
    W, _ = load_dictionary(args.dict)
    manifest = load_manifest(args.manifest)
    _prepare_output_file(args.out)
    features = _features(args)
    variant = "bydesign_nopred" if args.variant == "nopred" else "bydesign"
    clf_cfg = ClassifierConfig(features.mel_bands, manifest.n_classes, multilabel=manifest.multilabel)
    system = InterpreterSystem.build(clf_cfg, W.k, args.seed, args.pooling)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.seed, manifest.task_kind, variant)
    train = load_samples(manifest, "train", features)
    weights = LossWeights(args.alpha, args.beta, args.gamma)
    report = train_bydesign(system, W, train, weights, cfg, _fresh_log(args.out))
    save_system(args.out, system, "bydesign", variant=variant, **_task_meta(manifest, features))
    _write_config(_sidecar(args.out), "train-bydesign", args)
    print(f"model written to {args.out} (final loss {report.totals[-1]:.4f})")


def _load_pair(args):
    system, meta = load_system(args.model)
    W, _ = load_dictionary(args.dict)
    _check_k(system.k, W.k)
    return system, meta, W


def cmd_interpret(args) -> None:
    system, meta, W = _load_pair(args)
    _require_file(args.input, "input")
    waveform = load_wav(args.input)
    classes = meta.get("class_table", [])
    class_index = None
    if args.class_name is not None:
        if args.class_name not in classes:
            raise CliError(f"unknown class {args.class_name!r}; model classes are {classes}")
        class_index = classes.index(args.class_name)
    bundle = interpret_sample(system, W, waveform, class_index, args.tau, features_from_meta(meta), args.input.stem)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_wav(bundle.x_int, args.out_dir / "x_int.wav")
    for k, audio in bundle.per_component_audio.items():
        save_wav(audio, args.out_dir / f"component_{k}.wav")
    with open(args.out_dir / "relevance.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "class"] + [f"r{k + 1}" for k in range(W.k)])
        c = bundle.relevance.class_index
        writer.writerow([args.input.stem, classes[c] if c < len(classes) else c] + [repr(float(v)) for v in bundle.relevance.values])
    _write_config(args.out_dir / "config.json", "interpret", args)
    print(f"class {c}: selected components {bundle.selected}; files in {args.out_dir}")


def _evaluate(args, system, meta, W) -> dict:
    manifest = load_manifest(args.manifest)
    _check_classes(meta, manifest, "model")
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown:
        raise CliError(f"unknown metrics {unknown}; choose from {list(METRICS)}")
    exclude = []
    for name in args.exclude_class:
        if name not in manifest.class_table:
            raise CliError(f"--exclude-class {name!r} is not a class of the manifest")
        exclude.append(manifest.class_table[name])
    features = features_from_meta(meta)
    test = load_samples(manifest, "test", features)
    mels = np.stack([s.mel.values for s in test])
    labels = np.stack([s.label for s in test])
    out = predict_system(system, mels)
    report: dict = {"n_test": len(test), "task_kind": manifest.task_kind, "role": meta.get("role")}
    if "fidelity" in metrics:
        report["fidelity"] = fidelity_report(out.classifier_probs, out.interp_probs, manifest.task_kind, exclude)
    if "accuracy" in metrics or "auprc" in metrics or "f1" in metrics:
        for who, probs in (("classifier", out.classifier_probs), ("interpreter", out.interp_probs)):
            full = task_report(probs, labels, manifest.task_kind, exclude)
            if manifest.task_kind == "multi-class":
                full.update(task_report(probs, labels, "multi-label", exclude))
            keep = {"accuracy": "accuracy" in metrics, "macro_auprc": "auprc" in metrics,
                    "micro_auprc": "auprc" in metrics, "weighted_f1": "f1" in metrics}
            report[f"{who}_performance"] = {k: v for k, v in full.items() if keep.get(k)}
    if "faithfulness" in metrics:
        ff = faithfulness(system, W, test, args.tau, features)
        rb = random_baseline_faithfulness(system, W, test, args.tau, args.seed, features)
        report["faithfulness"] = {
            "tau": args.tau,
            "ff_median": ff.ff_median,
            "random_baseline_ff_median": rb.ff_median,
            "mean_removed": float(np.mean([r.n_removed for r in ff.records])) if ff.records else 0.0,
        }
        if args.records is not None:
            with open(args.records, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["sample_id", "class", "ff", "n_removed"])
                for r in ff.records:
                    writer.writerow([r.sample_id, r.class_index, repr(r.ff), r.n_removed])
    if "nmf-baseline" in metrics:
        train = load_samples(manifest, "train", features)
        report["nmf_baseline"] = nmf_baseline_classify(train, test, W, NmfConfig(W.k, seed=args.seed), manifest.task_kind, args.seed)
    return report


def cmd_evaluate(args) -> None:
    system, meta, W = _load_pair(args)
    _prepare_output_file(args.out)
    report = _evaluate(args, system, meta, W)
    args.out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_config(_sidecar(args.out), "evaluate", args)
    print(f"report written to {args.out}")


def cmd_gradcheck(args) -> None:
    from .gradsuite import run_suite, summarize

    results = run_suite(args.seed)
    for name, r in results.items():
        print(f"{name:24s} max_rel_error={r.max_rel_error:.3e} checked={r.checked} skipped_kinks={r.skipped_nonsmooth}")
    worst, ok = summarize(results)
    print(f"worst relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise CliError(f"gradient check failed (worst relative error {worst:.3e})")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nmfinterp", description="Interpret audio classifiers with NMF dictionary activations.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", help="generate a synthetic dataset")
    s.add_argument("--out", type=_abs, required=True)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--snr", type=float, default=20.0, help="background noise level in dB; 'inf' for none")
    s.add_argument("--multilabel", action="store_true")
    s.add_argument("--mix-prob", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("learn-dict", help="learn a sparse NMF dictionary on the training split")
    s.add_argument("--manifest", type=_abs, required=True)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--mu", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--chunk", type=int, default=5)
    s.add_argument("--strategy", choices=("flat", "class-noise"), default="flat")
    s.add_argument("--noise-k", type=int, default=10)
    s.add_argument("--per-class-k", type=int, default=10)
    s.add_argument("--cap", type=int, default=700)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=_abs, required=True)
    s.set_defaults(func=cmd_learn_dict)

    def training_flags(s, epochs, lr=2e-4):
        s.add_argument("--manifest", type=_abs, required=True)
        s.add_argument("--epochs", type=int, default=epochs)
        s.add_argument("--lr", type=float, default=lr)
        s.add_argument("--batch-size", type=int, default=8)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", type=_abs, required=True)

    s = sub.add_parser("train-classifier", help="train the classifier to be explained")
    training_flags(s, 30)
    s.add_argument("--mel-bands", type=int, default=128)
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("train-posthoc", help="train an interpreter for a fixed classifier")
    s.add_argument("--classifier", type=_abs, required=True)
    s.add_argument("--dict", type=_abs, required=True)
    training_flags(s, 30)
    s.add_argument("--alpha", type=float, default=10.0)
    s.add_argument("--beta", type=float, default=0.8)
    s.add_argument("--pooling", choices=("attention", "max"), default="attention")
    s.set_defaults(func=cmd_train_posthoc)

    s = sub.add_parser("train-bydesign", help="jointly train classifier and interpreter")
    s.add_argument("--dict", type=_abs, required=True)
    training_flags(s, 50)
    s.add_argument("--alpha", type=float, default=3.0)
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--variant", choices=("default", "nopred"), default="default")
    s.add_argument("--pooling", choices=("attention", "max"), default="attention")
    s.add_argument("--mel-bands", type=int, default=128)
    s.set_defaults(func=cmd_train_bydesign)

    s = sub.add_parser("interpret", help="explain one clip and write listenable interpretations")
    s.add_argument("--model", type=_abs, required=True)
    s.add_argument("--dict", type=_abs, required=True)
    s.add_argument("--input", type=_abs, required=True)
    s.add_argument("--class", dest="class_name", default=None)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--out-dir", type=_abs, required=True)
    s.set_defaults(func=cmd_interpret)

    s = sub.add_parser("evaluate", help="fidelity, faithfulness and classification metrics on the test split")
    s.add_argument("--model", type=_abs, required=True)
    s.add_argument("--dict", type=_abs, required=True)
    s.add_argument("--manifest", type=_abs, required=True)
    s.add_argument("--metrics", default="fidelity,faithfulness,auprc,f1")
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--exclude-class", action="append", default=[])
    s.add_argument("--records", type=_abs, default=None, help="optional CSV of per-sample faithfulness")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=_abs, required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the autodiff core")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("replay", help="re-run the command recorded in a config.json")
    s.add_argument("config", type=_abs)
    s.add_argument("--out", type=_abs, default=None, help="write to this output instead of the recorded one")
    s.set_defaults(func=None)
    return p


def _replay_argv(config: Path, out: Path | None) -> list[str]:
    _require_file(config, "config")
    try:
        payload = json.loads(config.read_text())
        command, recorded = payload["command"], dict(payload["args"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(f"{config} is not a run config ({exc})") from exc
    if command == "replay":
        raise CliError("cannot replay a replay")
    if out is not None:
        key = "out_dir" if "out_dir" in recorded else "out"
        if key not in recorded:
            raise CliError(f"command {command} has no output to redirect")
        recorded[key] = str(out)
    argv = [command]
    for key, value in recorded.items():
        flag = "--" + key.replace("_", "-")
        if key == "class_name":
            flag = "--class"
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            for item in value:
                argv += [flag, str(item)]
        else:
            argv += [flag, str(value)]
    return argv


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            args = parser.parse_args(_replay_argv(args.config, args.out))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KNOWN_ERRORS as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
