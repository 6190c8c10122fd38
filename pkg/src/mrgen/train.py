"""Teacher-forced training with the condition-prefix-masked LM loss.

Supervision covers exactly the utterance tokens plus END, each predicted from
the previous position; outputs at condition positions (everything before the
START token is fed in) carry zero loss. Optimization is AdamW with a linear
learning-rate decay to zero and optional in-domain LM pretraining on the
references alone.
"""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import compute as C
from .data import Corpus, pairs_of
from .errors import MrgenError, ValidationError
from .model import ModelConfig, ModelParams, forward, logits
from .mr import MeaningRepresentation, serialize_condition
from .tokenizer import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    # From-scratch default; FINETUNE_LR below suits a pretrained backbone
    # but is far too small for scratch training.
    lr: float = 3e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pretrain_lm: bool = False
    pretrain_epochs: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")


FINETUNE_LR = 2e-5  # for fine-tuning a pretrained backbone, not scratch runs


@dataclass
class Batch:
    inputs: np.ndarray   # (B, T) int64
    targets: np.ndarray  # (B, T) int64
    mask: np.ndarray     # (B, T) float, 1 on supervised positions
    boundaries: list[int]  # index of START in each input row
    skipped: int = 0


def sequence_ids(mr: MeaningRepresentation | None, reference: str,
                 vocab: Vocabulary) -> tuple[list[int], int]:
    """Full token sequence [condition.., START, utterance.., END] and the
    condition length (START included). ``mr=None`` gives the condition-free
    LM-pretraining form, a bare START prefix."""
    cond = serialize_condition(mr, vocab) if mr is not None else [vocab.start_id]
    if not reference.strip():
        raise ValidationError("cannot build a training sequence from an empty reference")
    utt = vocab.encode(reference)
    return cond + utt + [vocab.end_id], len(cond)


def build_batch(samples: list[tuple[MeaningRepresentation | None, str]],
                vocab: Vocabulary, max_positions: int) -> Batch:
    """Pad, shift, and mask a list of (MR, reference) pairs.

    Position t of the inputs predicts position t of the targets (the sequence
    shifted by one). With condition length c, positions 0..c-2 are masked;
    the supervised span runs from the START position (predicting the first
    utterance token) through the last utterance token (predicting END) - an
    utterance of n tokens yields exactly n+1 supervised positions. Sequences
    longer than the position limit are skipped with a warning.
    """
    rows: list[tuple[list[int], int]] = []
    skipped = 0
    for mr, ref in samples:
        seq, cond_len = sequence_ids(mr, ref, vocab)
        if len(seq) - 1 > max_positions:
            log.warning("skipping sample: sequence of %d tokens exceeds %d positions",
                        len(seq) - 1, max_positions)
            skipped += 1
            continue
        rows.append((seq, cond_len))
    if not rows:
        raise MrgenError("no sample in the batch fits the position limit")
    t_max = max(len(seq) - 1 for seq, _ in rows)
    b = len(rows)
    inputs = np.zeros((b, t_max), dtype=np.int64)
    targets = np.zeros((b, t_max), dtype=np.int64)
    mask = np.zeros((b, t_max), dtype=C.default_dtype())
    boundaries = []
    for r, (seq, cond_len) in enumerate(rows):
        n = len(seq) - 1
        inputs[r, :n] = seq[:-1]
        targets[r, :n] = seq[1:]
        mask[r, cond_len - 1: n] = 1.0
        boundaries.append(cond_len - 1)
    return Batch(inputs, targets, mask, boundaries, skipped)


def batch_loss(batch: Batch, params: ModelParams) -> C.Tensor:
    """Mean negative log-likelihood over the supervised positions."""
    hidden = forward(params, batch.inputs)
    return C.cross_entropy(logits(params, hidden), batch.targets, batch.mask)


def lr_at(step: int, total_steps: int, initial: float) -> float:
    """Linear decay from the initial rate to zero over the run."""
    if step < 0:
        raise ValidationError(f"step must be >= 0, got {step}")
    if step >= total_steps:
        return 0.0
    return initial * (1.0 - step / total_steps)


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    The decay is applied directly to the weights, scaled by the current
    learning rate, before the moment-based update - it never flows through
    the gradient moments.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named_params: list[tuple[str, C.Tensor]], lr: float, step: int) -> None:
        if step < 1:
            raise ValidationError(f"optimizer step count starts at 1, got {step}")
        cfg = self.config
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** step
        bc2 = 1.0 - b2 ** step
        for name, p in named_params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if cfg.weight_decay:
                p.data -= p.data * p.data.dtype.type(lr * cfg.weight_decay)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= p.data.dtype.type(lr) * update.astype(p.data.dtype)


def adamw_step(params: ModelParams, optimizer: AdamW, step: int, lr: float) -> None:
    optimizer.step(params.trainable(), lr, step)


@dataclass
class TrainResult:
    params: ModelParams
    records: list[dict] = field(default_factory=list)  # step, epoch, lr, loss
    aborted: bool = False

    def final_loss(self) -> float:
        return self.records[-1]["loss"] if self.records else math.nan


def train(corpus: Corpus, vocab: Vocabulary, model_config: ModelConfig,
          config: TrainConfig, log_path=None, params: ModelParams | None = None,
          stop_below: float | None = None) -> TrainResult:
    """Run the full training loop and return the final parameters.

    Shuffling, initialization, and optimizer state are all derived from the
    seed, so two runs with equal inputs produce identical loss curves and
    weights. ``stop_below`` ends the run early once a step loss falls under
    the threshold (used by memorization checks). A non-finite loss aborts the
    run and returns the last epoch-boundary snapshot.
    """
    if params is None:
        params = ModelParams.init(model_config, config.seed)
    records: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(record: dict):
        records.append(record)
        if log_file:
            log_file.write(
                f"step={record['step']} epoch={record['epoch']} "
                f"lr={record['lr']:.8f} loss={record['loss']:.6f}\n"
            )

    phases: list[tuple[str, int, bool]] = []
    if config.pretrain_lm:
        phases.append(("pretrain", config.pretrain_epochs, True))
    phases.append(("train", config.epochs, False))

    pairs = pairs_of(corpus)
    if not pairs:
        raise ValidationError("cannot train on an empty corpus")
    last_good = copy.deepcopy(params.tensors)
    aborted = False
    step = 0
    try:
        for phase_index, (phase, epochs, condition_free) in enumerate(phases):
            optimizer = AdamW(config)
            n_batches = math.ceil(len(pairs) / config.batch_size)
            total_steps = epochs * n_batches
            phase_step = 0
            for epoch in range(epochs):
                # Stable across processes (no reliance on string hashing).
                rng = random.Random(config.seed * 1_000_003 + phase_index * 97_001 + epoch)
                order = list(range(len(pairs)))
                for i in range(len(order) - 1, 0, -1):
                    j = rng.randrange(i + 1)
                    order[i], order[j] = order[j], order[i]
                for start in range(0, len(order), config.batch_size):
                    chunk = [pairs[i] for i in order[start:start + config.batch_size]]
                    if condition_free:
                        chunk = [(None, ref) for _mr, ref in chunk]
                    batch = build_batch(chunk, vocab, model_config.max_positions)
                    lr = lr_at(phase_step, total_steps, config.lr)
                    params.zero_grads()
                    with C.GradTape():
                        loss = batch_loss(batch, params)
                        C.backward(loss)
                    step += 1
                    phase_step += 1
                    adamw_step(params, optimizer, phase_step, lr)
                    loss_val = float(loss.data)
                    emit({"step": step, "epoch": epoch, "phase": phase,
                          "lr": lr, "loss": loss_val})
                    if stop_below is not None and loss_val < stop_below and phase == "train":
                        return TrainResult(params, records)
                # snapshot cadence keeps abort recovery cheap on many-epoch runs
                if epoch % max(1, epochs // 8) == 0 or epoch == epochs - 1:
                    last_good = copy.deepcopy(params.tensors)
    except C.NonFiniteError as exc:
        log.error("aborting training on non-finite loss: %s", exc)
        params = ModelParams(model_config, last_good)
        aborted = True
    finally:
        if log_file:
            log_file.close()
    return TrainResult(params, records, aborted=aborted)
