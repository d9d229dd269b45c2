"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .checkpoint import CheckpointError, load_model, save_model
from .config import RunConfig, load_config_file, parse_modalities
from .data import CorpusError, extractor_audio_featurizer, generate_synthetic_corpus, load_corpus, save_corpus
from .extractor import TripletExtractor, make_blob_patches
from .gradsuite import run_suite
from .metrics import emit_report
from .model import ConfigError, DialogModel
from .train import evaluate, train_dialog_model, train_extractor, write_training_outputs

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved for numerical failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat JSON key/value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--modalities", help="comma list drawn from t,a,v")
    p.add_argument("--fusion", choices=("attention", "concat"))
    p.add_argument("--encoders", type=int, metavar="N", help="encoder depth for every modality")
    p.add_argument("--fusion-layers", type=int, metavar="M", dest="fusion_layers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusionerc", description="Multimodal dialog emotion classifier toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic dialog corpus or labelled patch set")
    _common(p)
    p.add_argument("--kind", choices=("dialogs", "patches"), default="dialogs")

    p = sub.add_parser("train-extractor", help="train the triplet extractor on a patch set")
    _common(p)

    p = sub.add_parser("train-model", help="train the dialog classifier on a corpus")
    _common(p)
    p.add_argument("--audio-extractor", type=Path, help="extractor checkpoint used to featurize WAV paths")

    for name, text in (("evaluate", "score a checkpoint on a corpus"),
                       ("report", "write summary and CSV reports for a checkpoint")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--audio-extractor", type=Path)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable block")
    _common(p)
    p.add_argument("--cases", type=int, default=20, help="random cases per operation and loss")
    p.add_argument("--module-cases", type=int, default=3, dest="module_cases")
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def resolve_config(args) -> tuple[RunConfig, set]:
    """Defaults, then the config file, then explicit flags. Returns the config and the keys set explicitly."""
    values: Dict[str, object] = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    if args.seed is not None:
        values["seed"] = args.seed
    if args.modalities is not None:
        values["modalities"] = list(parse_modalities(args.modalities))
    if args.fusion is not None:
        values["fusion"] = args.fusion
    if args.encoders is not None:
        values.update(n_t=args.encoders, n_a=args.encoders, n_v=args.encoders)
    if args.fusion_layers is not None:
        values["m"] = args.fusion_layers
    return RunConfig().update(values), set(values)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required for this command")
    return value


def _featurizer(path: Optional[Path]):
    if path is None:
        return None
    model = load_model(path)
    if not isinstance(model, TripletExtractor):
        raise CheckpointError(f"{path}: not an extractor checkpoint")
    return extractor_audio_featurizer(model)


def _say(msg: str) -> None:
    print(msg, flush=True)


def cmd_gen_synth(args, cfg: RunConfig, explicit: set) -> int:
    out = _require(args.out, "--out")
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "patches":
        x, y = make_blob_patches(cfg.n_per_class, cfg.n_classes, cfg.input_shape, separation=1.0, seed=cfg.seed)
        path = out / "patches.npz"
        np.savez(path, inputs=x, labels=y)
        _say(f"wrote {len(y)} patches of shape {tuple(cfg.input_shape)} to {path}")
    else:
        corpus = generate_synthetic_corpus(cfg.n_dialogs, cfg.k, cfg.dims(), cfg.n_classes, cfg.separation,
                                           cfg.cross_modal_only, cfg.seed)
        path = out / "corpus.jsonl"
        save_corpus(corpus, path)
        _say(f"wrote {len(corpus)} dialogs ({corpus.n_utterances} utterances) to {path}")
    return EXIT_OK


def cmd_train_extractor(args, cfg: RunConfig, explicit: set) -> int:
    out = _require(args.out, "--out")
    if args.corpus is not None:
        try:
            with np.load(args.corpus) as data:
                x, y = data["inputs"], data["labels"]
        except (OSError, KeyError, ValueError) as exc:
            raise CorpusError(f"{args.corpus}: expected an .npz with 'inputs' and 'labels' ({exc})") from None
        if "input_shape" not in explicit:
            cfg = cfg.update({"input_shape": list(x.shape[1:])})
    else:
        x, y = make_blob_patches(cfg.n_per_class, cfg.n_classes, cfg.input_shape, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "extractor_log.jsonl").open("w") as log:
        model, history, summary = train_extractor(
            x, y, cfg.extractor_config(), cfg.extractor_loss_config(), cfg.extractor_train_config(),
            log=lambda e: log.write(e.to_json() + "\n"))
    save_model(out / "extractor.ckpt", model, {"steps": len(history), **summary})
    _say(f"final loss {history[-1].loss:.6f}")
    for key, value in summary.items():
        _say(f"{key} {value:.6f}")
    _say(f"wrote {out / 'extractor.ckpt'}")
    return EXIT_OK


def cmd_train_model(args, cfg: RunConfig, explicit: set) -> int:
    corpus_path = _require(args.corpus, "--corpus")
    out = _require(args.out, "--out")
    corpus = load_corpus(corpus_path, audio_featurizer=_featurizer(args.audio_extractor))
    # corpus shape fills any dimension the user did not pin down
    derived = {}
    if corpus.dims is not None:
        for key, d in zip(("d_t", "d_a", "d_v"), corpus.dims):
            if key not in explicit:
                derived[key] = d
    if corpus.n_classes is not None and "n_classes" not in explicit:
        derived["n_classes"] = corpus.n_classes
    cfg = cfg.update(derived)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    out.mkdir(parents=True, exist_ok=True)

    def log(e):
        val = "" if e.val_accuracy is None else f" val_loss {e.val_loss:.6f} val_acc {e.val_accuracy:.4f}"
        _say(f"epoch {e.epoch:4d} loss {e.train_loss:.6f} acc {e.train_accuracy:.4f}{val}")

    result = train_dialog_model(model_cfg, corpus, train_cfg, log=log)
    write_training_outputs(result, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _say(f"best epoch {result.best_epoch}; checkpoints in {out}")
    return EXIT_OK


def _load_dialog_model(path: Path) -> DialogModel:
    model = load_model(path)
    if not isinstance(model, DialogModel):
        raise CheckpointError(f"{path}: not a dialog model checkpoint")
    return model


def _score(args):
    model = _load_dialog_model(args.checkpoint)
    corpus = load_corpus(_require(args.corpus, "--corpus"), n_classes=model.cfg.n_classes,
                         audio_featurizer=_featurizer(args.audio_extractor))
    report = evaluate(model, corpus)
    if not np.isfinite([report.accuracy, report.weighted_f1]).all():
        raise FloatingPointError("evaluation produced non-finite metrics")
    return report


def cmd_evaluate(args, cfg: RunConfig, explicit: set) -> int:
    report = _score(args)
    _say(f"accuracy {report.accuracy:.6f}")
    _say(f"weighted_f1 {report.weighted_f1:.6f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, explicit: set) -> int:
    report = _score(args)
    paths = emit_report(report, _require(args.out, "--out"), extra={"checkpoint": str(args.checkpoint)})
    for path in paths.values():
        _say(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig, explicit: set) -> int:
    entries = run_suite(cases=args.cases, module_cases=args.module_cases, seed=cfg.seed)
    failed = [e for e in entries if not e.passed(args.tol)]
    for e in entries:
        status = "ok" if e.passed(args.tol) else "FAIL"
        _say(f"{e.group:8s} {e.name:16s} cases {e.cases:3d}  max rel err {e.max_rel_error:.3e}  {status}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rows = [{"group": e.group, "name": e.name, "cases": e.cases, "max_rel_error": e.max_rel_error}
                for e in entries]
        (args.out / "gradcheck.json").write_text(json.dumps(rows, indent=2) + "\n")
    _say(f"{len(entries) - len(failed)}/{len(entries)} passed at tolerance {args.tol:g}")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train-extractor": cmd_train_extractor,
    "train-model": cmd_train_model,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg, explicit = resolve_config(args)
        # non-finite values are detected explicitly and mapped to the numeric exit code
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args, cfg, explicit)
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, CorpusError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
