"""Command-line entry point: generate / train / evaluate / stats / predict.

Every run writes an effective-config echo into the output directory so a
rerun with the same flags and seed reproduces the artifacts byte for byte.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .docmodel import Corpus, KeyIntent, Nature, SchemaError, load_corpus
from .dualnet import (
    ModelConfig, ModelParams, instances_from_documents, predict, train,
)
from .evalkit import (
    cohen_kappa, component_stats, evaluate_documents, hamming_loss,
    parser_mode_evaluate, run_ablation,
)
from .synthform import (
    GeneratorConfig, PlacementError, corpus_manifest, generate_corpus,
)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _default_seed() -> int:
    return int(os.environ.get("FORMPOINT_SEED", "0"))


def _echo_config(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": command, "version": __version__, **payload}
    with (out_dir / "config-echo").open("w", encoding="utf-8") as fh:
        json.dump(echo, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _profile_overrides(args) -> dict:
    overrides = {}
    for flag, key in (("bbox_jitter", "bbox_jitter"),
                      ("rotation", "rotation"),
                      ("char_noise", "char_noise_rate"),
                      ("value_drop", "value_drop_rate"),
                      ("flip_alignment", "flip_alignment_rate")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    return overrides


def _generator_config(args) -> GeneratorConfig:
    if args.config:
        config = GeneratorConfig.from_file(args.config)
    else:
        config = GeneratorConfig()
    config = replace(config, train=args.train, val=args.val,
                     test_digital=args.digital, test_printed=args.printed,
                     test_handwritten=args.handwritten)
    overrides = _profile_overrides(args)
    if overrides:
        profiles = {nature: replace(profile, **overrides)
                    for nature, profile in config.profiles.items()}
        config = replace(config, profiles=profiles)
    return config


def cmd_generate(args) -> int:
    out = Path(args.out)
    config = _generator_config(args)
    corpus = generate_corpus(config, seed=args.seed)
    corpus_dir = out / "corpus"
    corpus.save(corpus_dir)
    manifest = corpus_manifest(config, args.seed)
    with (corpus_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _echo_config(out, "generate", {"seed": args.seed, "manifest": manifest})
    total = sum(manifest["counts"].values())
    print(f"generated {total} documents under {corpus_dir}")
    return 0


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig()
    overrides = {}
    for name in ("d_model", "dual_layers", "attn_heads", "epochs",
                 "batch_size", "entity_encoder_depth", "token_encoder_depth",
                 "xy_m", "xy_n", "scorer_hidden"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "learning_rate", None) is not None:
        overrides["learning_rate"] = args.learning_rate
    if getattr(args, "early_stop", None) is not None:
        overrides["early_stop_train_f1"] = args.early_stop
    if getattr(args, "pe", None) is not None:
        overrides["pe_variant"] = args.pe
    if getattr(args, "aspects", None) is not None:
        overrides["aspect_flags"] = tuple(args.aspects)
    overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides)


def _load_corpus_dir(path) -> Corpus:
    path = Path(path)
    if path.is_dir():
        return Corpus.load(path)
    return Corpus(splits={"train": load_corpus(path)})


def cmd_train(args) -> int:
    out = Path(args.out)
    cfg = _model_config(args)
    corpus = _load_corpus_dir(args.corpus)
    params, history = train(corpus, cfg)
    params_path = out / "params" / "model.fpnt"
    params.save(params_path)
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    with (reports_dir / "training-log.txt").open("w", encoding="utf-8") as fh:
        for line in history.lines():
            fh.write(line + "\n")
    val_docs = corpus.splits.get("val", [])
    if val_docs:
        report = evaluate_documents(params, val_docs, cfg, split="val")
        with (reports_dir / "val-report.txt").open("w", encoding="utf-8") as fh:
            for line in report.lines("train"):
                fh.write(line + "\n")
    _echo_config(out, "train", {"seed": args.seed, "corpus": str(args.corpus),
                                "model": cfg.to_dict()})
    final = history.final()
    print(f"saved {params_path} (hash {params.content_hash()[:12]})")
    print(f"final train_f1={final.train_f1:.4f} val_f1={final.val_f1:.4f}")
    return 0


def _parse_aspect_grid(raw: str) -> list:
    return [tuple(cell) if cell.lower() != "none" else ()
            for cell in raw.split(",") if cell != ""]


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    corpus = _load_corpus_dir(args.corpus)
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    if args.ablation or args.pe_grid:
        cfg = _model_config(args)
        aspect_grid = (_parse_aspect_grid(args.ablation)
                       if args.ablation else [cfg.aspect_flags])
        pe_grid = args.pe_grid.split(",") if args.pe_grid else [cfg.pe_variant]
        matrix = run_ablation(corpus, cfg, aspect_grid, pe_grid)
        with (reports_dir / "ablation.txt").open("w", encoding="utf-8") as fh:
            for line in matrix.lines():
                fh.write(line + "\n")
        with (reports_dir / "ablation-table.txt").open("w",
                                                       encoding="utf-8") as fh:
            fh.write(matrix.table() + "\n")
        _echo_config(out, "evaluate", {
            "seed": args.seed, "corpus": str(args.corpus),
            "ablation": args.ablation or "", "pe_grid": args.pe_grid or ""})
        print(matrix.table())
        return 0

    params = ModelParams.load(args.params)
    cfg = params.config
    splits = [s for s in corpus.split_names() if s.startswith("test")] \
        or corpus.split_names()
    for split in splits:
        docs = corpus.splits[split]
        if not docs:
            continue
        nature = docs[0].page.nature.value
        if args.parser_mode:
            acc, per_intent = parser_mode_evaluate(
                params, docs, args.merge_rate, args.split_rate,
                seed=args.seed, threshold=args.iou)
            path = reports_dir / f"parser-{split}.txt"
            with path.open("w", encoding="utf-8") as fh:
                fh.write(f"parser\t{split}\toverall\taccuracy\t{acc:.6f}\n")
                for intent in sorted(per_intent):
                    fh.write(f"parser\t{split}\t{intent}\taccuracy"
                             f"\t{per_intent[intent]:.6f}\n")
            print(f"{split} ({nature}): parser-mode accuracy {acc:.4f}")
        else:
            report = evaluate_documents(params, docs, cfg, split=split,
                                        nature=nature)
            with (reports_dir / f"eval-{split}.txt").open(
                    "w", encoding="utf-8") as fh:
                for line in report.lines("evaluate"):
                    fh.write(line + "\n")
            print(f"{split} ({nature}): weighted F1 "
                  f"{report.weighted_f1:.4f} acc {report.accuracy:.4f}")
    _echo_config(out, "evaluate", {
        "seed": args.seed, "corpus": str(args.corpus),
        "params": str(args.params), "parser_mode": bool(args.parser_mode),
        "iou": args.iou})
    return 0


def cmd_stats(args) -> int:
    out = Path(args.out)
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    if args.agreement:
        labels = []
        for path in args.agreement:
            docs = load_corpus(path)
            labels.append([seg.label for doc in docs
                           for seg in doc.page.segments])
        if len(labels[0]) != len(labels[1]):
            print("error: the two annotation files disagree on segment count",
                  file=sys.stderr)
            return RUNTIME_ERROR
        kappa = cohen_kappa(labels[0], labels[1])
        hamming = hamming_loss(labels[0], labels[1])
        with (reports_dir / "agreement.txt").open("w", encoding="utf-8") as fh:
            fh.write(f"agreement\tall\toverall\tcohen_kappa\t{kappa:.6f}\n")
            fh.write(f"agreement\tall\toverall\thamming_loss\t{hamming:.6f}\n")
        print(f"cohen kappa {kappa:.4f}, hamming loss {hamming:.4f}")
        _echo_config(out, "stats", {"agreement": [str(p) for p in args.agreement]})
        return 0
    corpus = _load_corpus_dir(args.corpus)
    report = component_stats(corpus)
    with (reports_dir / "stats.txt").open("w", encoding="utf-8") as fh:
        for line in report.lines():
            fh.write(line + "\n")
    _echo_config(out, "stats", {"corpus": str(args.corpus)})
    for line in report.lines():
        print(line)
    return 0


def cmd_predict(args) -> int:
    intent_names = [i.value for i in KeyIntent]
    params = ModelParams.load(args.params)
    docs = load_corpus(args.document)
    if not docs:
        print("error: document file holds no documents", file=sys.stderr)
        return RUNTIME_ERROR
    doc = docs[args.index]
    key_text = args.key
    if key_text in intent_names:
        intent = KeyIntent(key_text)
        for link in doc.links:
            if link.intent is intent:
                key_text = doc.page.segment(link.key_segment).text
                break
        else:
            print(f"error: document has no key for intent {args.key!r}",
                  file=sys.stderr)
            return RUNTIME_ERROR
    result = predict(key_text, doc.page, params)
    if result is None:
        print("NO_VALUE")
    else:
        seg = doc.page.segment(result)
        box = seg.bbox
        print(f"segment {result}\tbbox [{box.x:.1f}, {box.y:.1f}, "
              f"{box.w:.1f}, {box.h:.1f}]\ttext {seg.text!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formpoint",
        description="Synthetic form corpus generation, pointer-model "
                    "training and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=_default_seed())
    gen.add_argument("--config", help="generator config JSON file")
    gen.add_argument("--train", type=int, default=70)
    gen.add_argument("--val", type=int, default=10)
    gen.add_argument("--digital", type=int, default=20)
    gen.add_argument("--printed", type=int, default=20)
    gen.add_argument("--handwritten", type=int, default=20)
    for flag in ("--bbox-jitter", "--rotation", "--char-noise",
                 "--value-drop", "--flip-alignment"):
        gen.add_argument(flag, type=float, default=None,
                         help="override this rate on every profile")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train the pointer model")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=_default_seed())
    tr.add_argument("--d-model", dest="d_model", type=int, default=None)
    tr.add_argument("--dual-layers", dest="dual_layers", type=int, default=None)
    tr.add_argument("--attn-heads", dest="attn_heads", type=int, default=None)
    tr.add_argument("--entity-depth", dest="entity_encoder_depth", type=int,
                    default=None)
    tr.add_argument("--token-depth", dest="token_encoder_depth", type=int,
                    default=None)
    tr.add_argument("--xy-m", dest="xy_m", type=int, default=None)
    tr.add_argument("--xy-n", dest="xy_n", type=int, default=None)
    tr.add_argument("--scorer-hidden", dest="scorer_hidden", type=int,
                    default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float,
                    default=None)
    tr.add_argument("--early-stop", dest="early_stop", type=float, default=None,
                    help="stop when train weighted F1 reaches this value")
    tr.add_argument("--pe", choices=["xy", "linear", "none"], default=None)
    tr.add_argument("--aspects", default=None,
                    help="subset of VTPDG, e.g. VTP")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="score a trained model")
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--params")
    ev.add_argument("--out", required=True)
    ev.add_argument("--seed", type=int, default=_default_seed())
    ev.add_argument("--parser-mode", action="store_true")
    ev.add_argument("--iou", type=float, default=0.5)
    ev.add_argument("--merge-rate", dest="merge_rate", type=float, default=0.3)
    ev.add_argument("--split-rate", dest="split_rate", type=float, default=0.3)
    ev.add_argument("--ablation", default=None,
                    help="comma list of aspect sets, e.g. V,VT,VTP,VTPDG")
    ev.add_argument("--pe-grid", dest="pe_grid", default=None,
                    help="comma list from {none,linear,xy}")
    for name, flag in (("d_model", "--d-model"), ("dual_layers", "--dual-layers"),
                       ("attn_heads", "--attn-heads"), ("epochs", "--epochs"),
                       ("batch_size", "--batch-size"), ("xy_m", "--xy-m"),
                       ("xy_n", "--xy-n")):
        ev.add_argument(flag, dest=name, type=int, default=None)
    ev.add_argument("--learning-rate", dest="learning_rate", type=float,
                    default=None)
    ev.add_argument("--early-stop", dest="early_stop", type=float, default=None)
    ev.add_argument("--pe", choices=["xy", "linear", "none"], default=None)
    ev.add_argument("--aspects", default=None)
    ev.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("stats", help="corpus statistics and agreement")
    st.add_argument("--corpus")
    st.add_argument("--out", required=True)
    st.add_argument("--agreement", nargs=2, metavar="FILE",
                    help="two annotation files to compare")
    st.set_defaults(func=cmd_stats)

    pr = sub.add_parser("predict", help="answer one key against a document")
    pr.add_argument("--params", required=True)
    pr.add_argument("--document", required=True,
                    help="annotation file holding the page")
    pr.add_argument("--index", type=int, default=0,
                    help="document index within the file")
    pr.add_argument("--key", required=True,
                    help="key text, or one of the 12 intent names")
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "stats" \
            and not args.agreement and not args.corpus:
        parser.error("stats needs --corpus or --agreement")
    if getattr(args, "command", None) == "evaluate" \
            and not args.params and not (args.ablation or args.pe_grid):
        parser.error("evaluate needs --params unless running --ablation/--pe-grid")
    if getattr(args, "command", None) == "predict" \
            and args.key not in [i.value for i in KeyIntent] \
            and len(args.key.split()) == 1 and args.key.islower():
        parser.error(f"unknown key intent {args.key!r}; intents: "
                     + ", ".join(i.value for i in KeyIntent))
    try:
        return args.func(args)
    except (SchemaError, PlacementError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
