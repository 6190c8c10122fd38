"""Causal transformer decoder with greedy self-feeding generation.

Pre-layer-norm blocks, learned position embeddings, and a distinct (untied)
output projection matrix. Decoding is pure greedy argmax with ties broken by
lowest token id; generation starts after the serialized condition + START and
stops at END or the length cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import compute as C
from .errors import MrgenError, ValidationError
from .mr import MeaningRepresentation, serialize_condition
from .tokenizer import Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    hidden: int = 256
    max_positions: int = 192
    vocab_size: int = 0

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValidationError(
                f"hidden size {self.hidden} not divisible by {self.heads} heads"
            )

    @classmethod
    def desk(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Default desk-scale config: trains on a CPU in minutes."""
        base = dict(layers=4, heads=4, hidden=256, max_positions=192)
        base.update(overrides)
        return cls(vocab_size=vocab_size, **base)

    @classmethod
    def gpt2_small(cls, vocab_size: int) -> "ModelConfig":
        """The 12-layer/12-head/768 shape (117M params); impractical on CPU."""
        return cls(layers=12, heads=12, hidden=768, max_positions=1024,
                   vocab_size=vocab_size)


class ModelParams:
    """All trainable state, as named tensors."""

    def __init__(self, config: ModelConfig, tensors: dict[str, C.Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        if config.vocab_size < 1:
            raise ValidationError("vocab_size must be set before initializing params")
        rng = np.random.default_rng(seed)
        h, v, p = config.hidden, config.vocab_size, config.max_positions
        dtype = C.default_dtype()

        def normal(*shape):
            return C.Tensor(rng.normal(0.0, 0.02, size=shape).astype(dtype),
                            requires_grad=True)

        def zeros(*shape):
            return C.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        def ones(*shape):
            return C.Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

        t: dict[str, C.Tensor] = {"tok_emb": normal(v, h), "pos_emb": normal(p, h)}
        for i in range(config.layers):
            t[f"l{i}.ln1_g"], t[f"l{i}.ln1_b"] = ones(h), zeros(h)
            for proj in ("q", "k", "v", "o"):
                t[f"l{i}.w{proj}"], t[f"l{i}.b{proj}"] = normal(h, h), zeros(h)
            t[f"l{i}.ln2_g"], t[f"l{i}.ln2_b"] = ones(h), zeros(h)
            t[f"l{i}.w_fc"], t[f"l{i}.b_fc"] = normal(h, 4 * h), zeros(4 * h)
            t[f"l{i}.w_out"], t[f"l{i}.b_out"] = normal(4 * h, h), zeros(h)
        t["lnf_g"], t["lnf_b"] = ones(h), zeros(h)
        # The output projection is its own randomly initialized matrix, not
        # tied to the token embedding.
        t["proj"] = normal(h, v)
        return cls(config, t)

    def __getitem__(self, name: str) -> C.Tensor:
        return self.tensors[name]

    def trainable(self) -> list[tuple[str, C.Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if t.requires_grad]

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def freeze(self):
        for t in self.tensors.values():
            t.requires_grad = False


def _causal_bias(t_len: int, dtype) -> C.Tensor:
    bias = np.triu(np.full((t_len, t_len), -1e9, dtype=dtype), k=1)
    return C.Tensor(bias.reshape(1, 1, t_len, t_len))


def forward(params: ModelParams, ids) -> C.Tensor:
    """Hidden states for a (batch of) id sequence(s).

    Returns one row per position; row j depends only on ids[0..j] through the
    causal attention mask. Accepts (T,) or (B, T) int arrays.
    """
    ids = np.asarray(ids)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    cfg = params.config
    b, t = ids.shape
    if t > cfg.max_positions:
        raise MrgenError(f"sequence length {t} exceeds max positions {cfg.max_positions}")
    if t == 0:
        raise MrgenError("cannot run forward on an empty sequence")
    h, heads = cfg.hidden, cfg.heads
    hd = h // heads

    tok = C.embedding_lookup(params["tok_emb"], ids)
    pos = C.embedding_lookup(params["pos_emb"], np.arange(t))
    x = C.add(tok, pos)
    bias = _causal_bias(t, x.data.dtype)

    for i in range(cfg.layers):
        ln1 = C.layer_norm(x, params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"])

        def head_split(v):
            return C.transpose(C.reshape(v, (b, t, heads, hd)), (0, 2, 1, 3))

        q = head_split(C.add(C.matmul(ln1, params[f"l{i}.wq"]), params[f"l{i}.bq"]))
        k = head_split(C.add(C.matmul(ln1, params[f"l{i}.wk"]), params[f"l{i}.bk"]))
        v = head_split(C.add(C.matmul(ln1, params[f"l{i}.wv"]), params[f"l{i}.bv"]))
        # scaling q instead of the T x T score matrix saves a large temp
        scores = C.matmul(C.scale(q, 1.0 / np.sqrt(hd)), C.transpose(k, (0, 1, 3, 2)))
        attn = C.softmax(C.add(scores, bias))
        ctx = C.reshape(C.transpose(C.matmul(attn, v), (0, 2, 1, 3)), (b, t, h))
        proj = C.add(C.matmul(ctx, params[f"l{i}.wo"]), params[f"l{i}.bo"])
        x = C.add(x, proj)

        ln2 = C.layer_norm(x, params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"])
        mid = C.gelu(C.add(C.matmul(ln2, params[f"l{i}.w_fc"]), params[f"l{i}.b_fc"]))
        ff = C.add(C.matmul(mid, params[f"l{i}.w_out"]), params[f"l{i}.b_out"])
        x = C.add(x, ff)

    out = C.layer_norm(x, params["lnf_g"], params["lnf_b"])
    if squeeze:
        out = C.reshape(out, (t, h))
    return out


def logits(params: ModelParams, hidden: C.Tensor) -> C.Tensor:
    return C.matmul(hidden, params["proj"])


def next_token(o_k: np.ndarray, params: ModelParams) -> int:
    """Greedy token choice: argmax of the output projection; ties -> lowest id."""
    scores = o_k @ params["proj"].data
    return int(np.argmax(scores))


@dataclass
class GenerationResult:
    utterance: str
    terminated: bool
    token_ids: list[int]


def generate_batch(mrs, params: ModelParams, vocab: Vocabulary,
                   max_len: int = 96, batch_size: int = 64) -> list["GenerationResult"]:
    """Greedy generation for many MRs, stepped in lockstep.

    MRs are bucketed by condition length so each bucket shares one id matrix;
    rows that emit END keep receiving filler END ids (rows are independent
    under the causal mask, so this cannot affect the others). Per-row results
    equal what the single-MR path computes up to BLAS kernel-choice noise.
    """
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    conditions = [serialize_condition(mr, vocab) for mr in mrs]
    results: list[GenerationResult | None] = [None] * len(mrs)
    by_len: dict[int, list[int]] = {}
    for i, cond in enumerate(conditions):
        if len(cond) >= params.config.max_positions:
            raise MrgenError("condition alone exceeds the model's position limit")
        by_len.setdefault(len(cond), []).append(i)
    for length in sorted(by_len):
        bucket = by_len[length]
        for start in range(0, len(bucket), batch_size):
            rows = bucket[start:start + batch_size]
            ids = np.array([conditions[i] for i in rows], dtype=np.int64)
            produced: list[list[int]] = [[] for _ in rows]
            done = [False] * len(rows)
            terminated = [False] * len(rows)
            while not all(done) and ids.shape[1] < params.config.max_positions:
                hidden = forward(params, ids)
                scores = hidden.data[:, -1, :] @ params["proj"].data
                toks = scores.argmax(axis=1)
                col = np.empty((len(rows), 1), dtype=np.int64)
                for r in range(len(rows)):
                    tok = int(toks[r])
                    if done[r]:
                        col[r, 0] = vocab.end_id
                        continue
                    if tok == vocab.end_id:
                        done[r] = True
                        terminated[r] = True
                        col[r, 0] = vocab.end_id
                        continue
                    produced[r].append(tok)
                    col[r, 0] = tok
                    if len(produced[r]) >= max_len:
                        done[r] = True
                ids = np.concatenate([ids, col], axis=1)
            for r, i in enumerate(rows):
                results[i] = GenerationResult(vocab.decode(produced[r]),
                                              terminated[r], produced[r])
    return results  # type: ignore[return-value]


def generate(mr: MeaningRepresentation, params: ModelParams, vocab: Vocabulary,
             max_len: int = 96) -> GenerationResult:
    """Greedy self-feeding generation for one MR.

    The decoded utterance excludes the condition, START, and END. Hitting
    ``max_len`` (or the position limit) without END is reported via the
    ``terminated`` flag rather than an error.
    """
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    ids = serialize_condition(mr, vocab)
    if len(ids) >= params.config.max_positions:
        raise MrgenError("condition alone exceeds the model's position limit")
    produced: list[int] = []
    terminated = False
    while len(produced) < max_len:
        hidden = forward(params, np.asarray(ids, dtype=np.int64))
        tok = next_token(hidden.data[-1], params)
        if tok == vocab.end_id:
            terminated = True
            break
        produced.append(tok)
        ids.append(tok)
        if len(ids) >= params.config.max_positions:
            break
    return GenerationResult(vocab.decode(produced), terminated, produced)


# -- persistence --------------------------------------------------------------


def save_model(ckpt_path, card_path, params: ModelParams, vocab: Vocabulary) -> None:
    """Write the binary checkpoint plus a model card binding it to a vocab."""
    C.save_tensors(ckpt_path, params.tensors)
    card = {
        "layers": params.config.layers,
        "heads": params.config.heads,
        "hidden": params.config.hidden,
        "max_positions": params.config.max_positions,
        "vocab_size": params.config.vocab_size,
        "vocab_hash": vocab.content_hash(),
    }
    with open(card_path, "w", encoding="utf-8") as f:
        json.dump(card, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(ckpt_path, card_path, vocab: Vocabulary) -> ModelParams:
    """Reload a checkpoint, refusing a vocabulary that doesn't match the card."""
    with open(card_path, encoding="utf-8") as f:
        card = json.load(f)
    if card["vocab_hash"] != vocab.content_hash():
        raise MrgenError(
            "vocabulary hash does not match the checkpoint's model card; "
            "refusing to generate with a mismatched vocab/checkpoint pair"
        )
    config = ModelConfig(
        layers=card["layers"], heads=card["heads"], hidden=card["hidden"],
        max_positions=card["max_positions"], vocab_size=card["vocab_size"],
    )
    tensors = C.load_tensors(ckpt_path)
    return ModelParams(config, tensors)
