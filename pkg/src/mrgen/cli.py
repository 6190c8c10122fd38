"""Command-line entry point: stats | train | generate | evaluate | delex-inventory.

Every command is file-in/file-out with explicit paths and no network access.
Exit codes: 0 success, 2 usage or validation failure, 3 runtime failure.
Settings merge a flat key=value config file with long-form flags (flags win),
and train echoes the fully resolved configuration into its output directory.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

from . import metrics as M
from .compute import NonFiniteError
from .data import (compute_stats, load_e2e, load_webnlg, subsample,
                   value_inclusion_ratio, vocab_texts)
from .delex import build_inventory, relexicalize, sim_delexicalize
from .errors import MrgenError, ValidationError
from .model import ModelConfig, generate, generate_batch, load_model, save_model
from .mr import SCHEMAS, parse_mr
from .tokenizer import Vocabulary, schema_specials, train_vocab
from .train import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _load_corpus(path, schema: str, split: str):
    if schema == "webnlg":
        return load_webnlg(path, split)
    return load_e2e(path, split)


def cmd_stats(args) -> int:
    corpus = _load_corpus(args.data, args.schema, args.split)
    stats = compute_stats(corpus)
    report = stats.as_dict()
    report["value_not_included_ratio"] = value_inclusion_ratio(corpus)
    for key, value in report.items():
        print(f"{key}={value:.4f}" if isinstance(value, float) else f"{key}={value}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    return EXIT_OK


def _resolved_train_settings(args) -> dict:
    settings = {
        "schema": "e2e", "split": "train", "fraction": "1.0", "seeds": "0",
        "epochs": "5", "batch_size": "32", "lr": "3e-4", "weight_decay": "0.01",
        "vocab_size": "8000", "vocab_mode": "bpe", "layers": "4", "heads": "4",
        "hidden": "256", "max_positions": "192", "pretrain_lm": "false",
        "pretrain_epochs": "2", "max_len": "96",
    }
    if args.config:
        settings.update(_load_config_file(args.config))
    for key in list(settings):
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = str(flag)
    settings["data"] = args.data
    if getattr(args, "eval_data", None):
        settings["eval_data"] = args.eval_data
    return settings


def _echo_config(settings: dict, out_dir: Path) -> None:
    with open(out_dir / "config.txt", "w", encoding="utf-8") as f:
        for key in sorted(settings):
            f.write(f"{key}={settings[key]}\n")


def cmd_train(args) -> int:
    settings = _resolved_train_settings(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(settings, out_dir)

    schema = settings["schema"]
    corpus = _load_corpus(settings["data"], schema, settings["split"])
    fraction = float(settings["fraction"])
    seeds = [int(s) for s in str(settings["seeds"]).split(",") if s != ""]
    pretrain = settings["pretrain_lm"].lower() in ("true", "1", "yes")

    resume_dir = getattr(args, "resume", None)
    if resume_dir and len(seeds) != 1:
        raise ValidationError("--resume applies to a single-seed run")

    per_seed_scores: list[dict] = []
    for seed in seeds:
        run_dir = out_dir / f"seed_{seed}"
        run_dir.mkdir(exist_ok=True)
        sample = subsample(corpus, fraction, seed) if fraction < 1.0 else corpus
        params = None
        if resume_dir:
            # continue from an existing checkpoint with its own vocabulary
            resume_dir = Path(resume_dir)
            vocab = Vocabulary.load(resume_dir / "vocab.txt")
            params = load_model(resume_dir / "model.bin",
                                resume_dir / "model_card.json", vocab)
            for t in params.tensors.values():
                t.requires_grad = True
            model_config = params.config
        else:
            vocab = train_vocab(vocab_texts(sample), int(settings["vocab_size"]),
                                settings["vocab_mode"],
                                specials=schema_specials(SCHEMAS[schema]))
            model_config = ModelConfig(
                layers=int(settings["layers"]), heads=int(settings["heads"]),
                hidden=int(settings["hidden"]),
                max_positions=int(settings["max_positions"]), vocab_size=vocab.size,
            )
        vocab.save(run_dir / "vocab.txt")
        train_config = TrainConfig(
            epochs=int(settings["epochs"]), batch_size=int(settings["batch_size"]),
            lr=float(settings["lr"]), weight_decay=float(settings["weight_decay"]),
            seed=seed, pretrain_lm=pretrain,
            pretrain_epochs=int(settings["pretrain_epochs"]),
        )
        result = train(sample, vocab, model_config, train_config,
                       log_path=run_dir / "train_log.txt", params=params)
        save_model(run_dir / "model.bin", run_dir / "model_card.json",
                   result.params, vocab)
        if result.aborted:
            print(f"training aborted on non-finite loss; "
                  f"last good checkpoint: {run_dir / 'model.bin'}", file=sys.stderr)
            return EXIT_RUNTIME
        summary = {"seed": seed, "final_loss": result.final_loss()}
        if settings.get("eval_data"):
            report = _evaluate_checkpoint(result.params, vocab, settings, schema)
            summary.update(report.as_dict())
        per_seed_scores.append(summary)
        print(f"seed {seed}: final_loss={summary['final_loss']:.4f}")

    _write_sweep_summary(per_seed_scores, out_dir)
    return EXIT_OK


def _evaluate_checkpoint(params, vocab, settings, schema) -> M.MetricReport:
    eval_corpus = _load_corpus(settings["eval_data"], schema, "dev")
    max_len = int(settings["max_len"])
    results = generate_batch([s.mr for s in eval_corpus.samples], params, vocab,
                             max_len=max_len)
    instances = [
        M.EvalInstance(result.utterance, sample.references)
        for result, sample in zip(results, eval_corpus.samples)
    ]
    return M.evaluate(instances)


def _write_sweep_summary(per_seed: list[dict], out_dir: Path) -> None:
    keys = [k for k in per_seed[0] if k != "seed"]
    lines = []
    for key in keys:
        values = [row[key] for row in per_seed]
        mean = statistics.fmean(values)
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        lines.append(f"{key}: mean={mean:.4f} std={std:.4f} n={len(values)}")
    summary_path = out_dir / "summary.txt"
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(per_seed, f, indent=2)
        f.write("\n")
    for line in lines:
        print(line)


def cmd_generate(args) -> int:
    run_dir = Path(args.checkpoint)
    vocab = Vocabulary.load(run_dir / "vocab.txt")
    params = load_model(run_dir / "model.bin", run_dir / "model_card.json", vocab)
    schema = SCHEMAS[args.schema]

    if args.mr:
        mr_texts = [args.mr]
    elif args.mr_file:
        with open(args.mr_file, encoding="utf-8") as f:
            mr_texts = [line.rstrip("\n") for line in f if line.strip()]
    else:
        raise ValidationError("generate needs --mr or --mr-file")

    inventory = None
    if args.delex:
        if not args.train_data:
            raise ValidationError("--delex requires --train-data to build the inventory")
        inventory = build_inventory(_load_corpus(args.train_data, args.schema, "train"))

    mrs = [parse_mr(text, schema) for text in mr_texts]
    sub_lines: list[str] = []
    submaps = [None] * len(mrs)
    if inventory is not None:
        delexed = []
        for i, mr in enumerate(mrs):
            mr, submap = sim_delexicalize(mr, inventory)
            delexed.append(mr)
            submaps[i] = submap
            for entry in submap.entries:
                sub_lines.append(f"{entry.slot}\t{entry.original}\t{entry.replacement}")
        mrs = delexed
    if len(mrs) == 1:
        results = [generate(mrs[0], params, vocab, max_len=args.max_len)]
    else:
        results = generate_batch(mrs, params, vocab, max_len=args.max_len)
    utterances = [
        relexicalize(result.utterance, submap) if submap else result.utterance
        for result, submap in zip(results, submaps)
    ]

    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("\n".join(utterances) + "\n")
        if args.delex:
            with open(str(args.out) + ".subs.tsv", "w", encoding="utf-8") as f:
                if sub_lines:
                    f.write("\n".join(sub_lines) + "\n")
    else:
        for utterance in utterances:
            print(utterance)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    instances = M.instances_from_files(args.hypotheses, args.references)
    report = M.evaluate(instances)
    for line in report.lines():
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report.as_dict(), f, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_delex_inventory(args) -> int:
    corpus = _load_corpus(args.data, args.schema, "train")
    inventory = build_inventory(corpus)
    inventory.save(args.out)
    for slot in inventory.slots:
        print(f"{slot}: {len(inventory.values(slot))} values")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrgen")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics and inclusion ratios")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", choices=("e2e", "webnlg"), default="e2e")
    p.add_argument("--split", choices=("train", "dev", "test"), default="train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model or a seed sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--schema", choices=("e2e", "webnlg"))
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--fraction", type=float)
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--vocab-mode", dest="vocab_mode", choices=("bpe", "word"))
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-positions", dest="max_positions", type=int)
    p.add_argument("--pretrain-lm", dest="pretrain_lm", action="store_const", const="true")
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--resume", help="checkpoint directory to continue training from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="greedy generation from MRs")
    p.add_argument("--checkpoint", required=True, help="directory from `mrgen train`")
    p.add_argument("--schema", choices=("e2e", "webnlg"), default="e2e")
    p.add_argument("--mr")
    p.add_argument("--mr-file", dest="mr_file")
    p.add_argument("--out")
    p.add_argument("--max-len", dest="max_len", type=int, default=96)
    p.add_argument("--delex", action="store_true")
    p.add_argument("--train-data", dest="train_data")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("delex-inventory", help="persist the per-slot value inventory")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", choices=("e2e", "webnlg"), default="e2e")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_delex_inventory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValidationError, MrgenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
