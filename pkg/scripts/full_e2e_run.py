"""Full-dataset training run: 5 epochs from scratch, then the dev-set metrics.

Usage:
    python -m scripts.full_e2e_run [E2E_DIR] [OUT_DIR]

E2E_DIR must contain trainset.csv, devset.csv, testset_w_refs.csv (the
original challenge release; this tool never downloads anything). Writes the
checkpoint, generated dev hypotheses, metric report, and a markdown run
report under OUT_DIR. Budget: roughly 1-2 hours on a desktop CPU.
"""

import json
import platform
import sys
import time
from pathlib import Path

from mrgen.data import compute_stats, load_e2e, value_inclusion_ratio, vocab_texts
from mrgen.metrics import EvalInstance, evaluate
from mrgen.model import ModelConfig, generate_batch, save_model
from mrgen.mr import E2E_SCHEMA
from mrgen.tokenizer import schema_specials, train_vocab
from mrgen.train import TrainConfig, train


def run_full_pipeline(e2e_dir: Path, out_dir: Path) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_start = time.time()

    train_corpus = load_e2e(Path(e2e_dir) / "trainset.csv", "train")
    dev_corpus = load_e2e(Path(e2e_dir) / "devset.csv", "dev")
    stats = compute_stats(train_corpus)
    print(f"train: {stats.mr_count} MRs / {stats.reference_count} refs, "
          f"not-included {value_inclusion_ratio(train_corpus):.4f}")

    vocab = train_vocab(vocab_texts(train_corpus), 8000, "bpe",
                        specials=schema_specials(E2E_SCHEMA))
    vocab.save(out_dir / "vocab.txt")
    print(f"vocab: {vocab.size} tokens, {len(vocab.merges)} merges")

    config = ModelConfig.desk(vocab.size)
    train_config = TrainConfig(epochs=5, batch_size=32, lr=3e-4, seed=0)
    result = train(train_corpus, vocab, config, train_config,
                   log_path=out_dir / "train_log.txt")
    save_model(out_dir / "model.bin", out_dir / "model_card.json",
               result.params, vocab)
    print(f"training done: {len(result.records)} steps, "
          f"final loss {result.final_loss():.4f}")

    result.params.freeze()
    outs = generate_batch([s.mr for s in dev_corpus.samples], result.params,
                          vocab, max_len=120)
    with open(out_dir / "dev_hypotheses.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(o.utterance for o in outs) + "\n")
    instances = [EvalInstance(o.utterance, s.references)
                 for o, s in zip(outs, dev_corpus.samples)]
    report = evaluate(instances).as_dict()
    report["final_loss"] = result.final_loss()
    report["steps"] = len(result.records)
    report["wall_seconds"] = round(time.time() - t_start, 1)
    with open(out_dir / "dev_metrics.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")

    lines = [
        "# Full E2E training run",
        "",
        f"- host: {platform.platform()}, python {platform.python_version()}",
        f"- corpus: {stats.mr_count} train MRs / {stats.reference_count} references",
        f"- model: {config.layers} layers / {config.heads} heads / h={config.hidden}",
        f"- vocab: {vocab.size} (byte-level BPE)",
        f"- training: {train_config.epochs} epochs, batch {train_config.batch_size}, "
        f"lr {train_config.lr}, linear decay to zero",
        f"- steps: {report['steps']}, final loss {report['final_loss']:.4f}",
        f"- wall time: {report['wall_seconds']}s",
        "",
        "## Dev-set metrics (multi-reference)",
        "",
    ]
    lines += [f"- {k}: {report[k]:.4f}" for k in ("bleu", "nist", "meteor", "rouge_l", "cider")]
    lines += ["", f"BLEU >= 0.45 target: {'met' if report['bleu'] >= 0.45 else 'NOT met'}"]
    (out_dir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for k in ("bleu", "nist", "meteor", "rouge_l", "cider"):
        print(f"{k}: {report[k]:.4f}")
    return report


if __name__ == "__main__":
    e2e = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/e2e")
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("runs/full_e2e")
    report = run_full_pipeline(e2e, out)
    sys.exit(0 if report["bleu"] >= 0.45 else 1)
