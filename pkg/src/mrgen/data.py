"""Corpus loading, grouping, statistics, and subsampling.

E2E files are two-column delimited text (``mr,ref`` header, double-quote
quoting, UTF-8); rows sharing an identical MR string are grouped into one
sample with multiple references. The WebNLG adapter reads a pre-flattened
tab-separated file (one sample per line: category, triple count, the triples,
then one or more references).
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass

from .errors import ParseError, ValidationError
from .mr import E2E_SCHEMA, WEBNLG_SCHEMA, MeaningRepresentation, Schema, canonical_order, parse_mr, render_mr

SPLITS = ("train", "dev", "test")


@dataclass
class CorpusSample:
    """One MR with all of its human references."""

    mr: MeaningRepresentation
    references: list[str]
    mr_text: str

    def __post_init__(self):
        if not self.references:
            raise ValidationError(f"sample {self.mr_text!r} has no references")
        for ref in self.references:
            if not ref.strip():
                raise ValidationError(f"sample {self.mr_text!r} has an empty reference")


@dataclass
class Corpus:
    split: str
    samples: list[CorpusSample]
    schema: Schema = E2E_SCHEMA

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for s in self.samples:
            if s.mr_text in seen:
                raise ValidationError(f"duplicate MR group {s.mr_text!r} in {self.split} corpus")
            seen.add(s.mr_text)

    def reference_count(self) -> int:
        return sum(len(s.references) for s in self.samples)


@dataclass
class CorpusStats:
    mr_count: int
    reference_count: int
    slots_per_mr: float
    tokens_per_ref: float

    def as_dict(self) -> dict:
        return {
            "mr_count": self.mr_count,
            "reference_count": self.reference_count,
            "slots_per_mr": self.slots_per_mr,
            "tokens_per_ref": self.tokens_per_ref,
        }


def load_e2e(path, split: str) -> Corpus:
    """Load an E2E csv file, grouping references by identical MR string."""
    groups: dict[str, list[str]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected an 'mr,ref' header") from None
        if [h.strip().lower() for h in header[:2]] != ["mr", "ref"]:
            raise ParseError(f"{path}: expected header 'mr,ref', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            mr_text, ref = row
            groups.setdefault(mr_text, []).append(ref)
    samples = [
        CorpusSample(parse_mr(mr_text, E2E_SCHEMA), refs, mr_text)
        for mr_text, refs in groups.items()
    ]
    return Corpus(split, samples, E2E_SCHEMA)


def load_webnlg(path, split: str = "train") -> Corpus:
    """Load a flattened WebNLG file (tab-separated, one sample per line).

    Line format: category, triple count k, then 3k triple fields in
    (subject, property, object) order, then one or more references.
    """
    groups: dict[str, tuple[MeaningRepresentation, list[str]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise ParseError(f"{path}:{lineno}: expected category and triple count")
            category = fields[0]
            try:
                k = int(fields[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad triple count {fields[1]!r}") from None
            if k < 1:
                raise ValidationError(f"{path}:{lineno}: sample has no triples")
            if len(fields) < 2 + 3 * k + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {3 * k} triple fields plus references, "
                    f"got {len(fields) - 2} trailing fields"
                )
            pairs = [("category", category)]
            for t in range(k):
                s, p, o = fields[2 + 3 * t: 2 + 3 * t + 3]
                if not s or not p or not o:
                    raise ParseError(f"{path}:{lineno}: triple {t + 1} has a missing field")
                pairs.extend([("subject", s), ("property", p), ("object", o)])
            refs = [r for r in fields[2 + 3 * k:] if r]
            if not refs:
                raise ParseError(f"{path}:{lineno}: sample has no references")
            mr = canonical_order(MeaningRepresentation(tuple(pairs), WEBNLG_SCHEMA))
            key = render_mr(mr)
            if key in groups:
                groups[key][1].extend(refs)
            else:
                groups[key] = (mr, refs)
    samples = [CorpusSample(mr, refs, key) for key, (mr, refs) in groups.items()]
    return Corpus(split, samples, WEBNLG_SCHEMA)


def compute_stats(corpus: Corpus) -> CorpusStats:
    """Exact counts plus per-pair means: slots averaged over all
    (MR, reference) pairs, tokens counted by whitespace splitting."""
    if not corpus.samples:
        raise ValidationError("cannot compute statistics of an empty corpus")
    n_refs = 0
    slot_total = 0
    token_total = 0
    for s in corpus.samples:
        for ref in s.references:
            n_refs += 1
            slot_total += len(s.mr.pairs)
            token_total += len(ref.split())
    return CorpusStats(
        mr_count=len(corpus.samples),
        reference_count=n_refs,
        slots_per_mr=slot_total / n_refs,
        tokens_per_ref=token_total / n_refs,
    )


def value_inclusion_ratio(corpus: Corpus) -> float:
    """Fraction of (slot, value, reference) triples whose value does NOT
    occur as a case-insensitive substring of the reference.

    Boolean slots (familyFriendly) are excluded from both numerator and
    denominator.
    """
    if not corpus.samples:
        raise ValidationError("cannot compute inclusion ratio of an empty corpus")
    total = 0
    missing = 0
    boolean = corpus.schema.boolean_slots
    for s in corpus.samples:
        pairs = [(slot, v) for slot, v in s.mr.pairs if slot not in boolean]
        for ref in s.references:
            low = ref.lower()
            for _slot, value in pairs:
                total += 1
                if value.lower() not in low:
                    missing += 1
    return missing / total if total else 0.0


def subsample(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Draw round(fraction * groups) MR groups without replacement.

    Deterministic given the seed; selected groups keep their original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    n = len(corpus.samples)
    k = round(fraction * n)
    if k >= n:
        return Corpus(corpus.split, list(corpus.samples), corpus.schema)
    rng = random.Random(seed)
    indices = list(range(n))
    for i in range(n - 1, 0, -1):  # Fisher-Yates, stable across platforms
        j = rng.randrange(i + 1)
        indices[i], indices[j] = indices[j], indices[i]
    chosen = sorted(indices[:k])
    return Corpus(corpus.split, [corpus.samples[i] for i in chosen], corpus.schema)


def pairs_of(corpus: Corpus) -> list[tuple[MeaningRepresentation, str]]:
    """Flatten a corpus into (MR, single reference) training pairs."""
    return [(s.mr, ref) for s in corpus.samples for ref in s.references]


def vocab_texts(corpus: Corpus) -> list[str]:
    """Everything the tokenizer trains on: references plus all value strings."""
    texts: list[str] = []
    for s in corpus.samples:
        texts.extend(s.references)
        texts.extend(v for _slot, v in s.mr.pairs)
    return texts
