"""Multi-reference automatic evaluation: BLEU, NIST, meteor-lite, ROUGE-L,
CIDEr-D, and the slot-realization checker.

All five metrics share one frozen tokenization - lowercase, with every
non-alphanumeric character split off as its own token - so cross-metric
comparisons are internally consistent. meteor-lite is METEOR restricted to
the exact and stem matching stages (no synonym or paraphrase tables), with
the METEOR 1.5 English parameters.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

from .errors import ValidationError
from .mr import MeaningRepresentation
from .stemming import porter_stem

log = logging.getLogger(__name__)

METEOR_ALPHA = 0.85
METEOR_BETA = 0.2
METEOR_GAMMA = 0.6
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
_ALIGN_BEAM = 64


def metric_tokenize(text: str) -> list[str]:
    """Lowercase and split punctuation/symbols into separate tokens."""
    out: list[str] = []
    buf: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if buf:
                out.append("".join(buf))
                buf = []
        elif ch.isalnum():
            buf.append(ch)
        else:
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
    if buf:
        out.append("".join(buf))
    return out


@dataclass
class EvalInstance:
    hypothesis: str
    references: list[str]

    def __post_init__(self):
        if not self.references:
            raise ValidationError("an evaluation instance needs at least one reference")


@dataclass
class MetricReport:
    bleu: float
    nist: float
    meteor: float
    rouge_l: float
    cider: float

    def as_dict(self) -> dict:
        return {"bleu": self.bleu, "nist": self.nist, "meteor": self.meteor,
                "rouge_l": self.rouge_l, "cider": self.cider}

    def lines(self) -> list[str]:
        return [f"{name}={value:.4f}" for name, value in self.as_dict().items()]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _require(instances: list[EvalInstance]):
    if not instances:
        raise ValidationError("cannot evaluate an empty instance list")


# -- BLEU ---------------------------------------------------------------------


def bleu(instances: list[EvalInstance], max_n: int = 4) -> float:
    """Corpus-level BLEU-4.

    Clipped modified n-gram precision pooled over the corpus, geometric mean
    over n, brevity penalty from closest-reference lengths (ties to the
    shorter reference). No smoothing: any n with zero matches gives 0.0.
    """
    _require(instances)
    correct = [0] * max_n
    guess = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for inst in instances:
        hyp = metric_tokenize(inst.hypothesis)
        refs = [metric_tokenize(r) for r in inst.references]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            max_ref: Counter = Counter()
            for r in refs:
                for gram, c in _ngrams(r, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            guess[n - 1] += max(0, len(hyp) - n + 1)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
    if hyp_len == 0 or any(c == 0 for c in correct) or any(g == 0 for g in guess):
        return 0.0
    log_precision = sum(math.log(c / g) for c, g in zip(correct, guess)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_precision)


# -- NIST ---------------------------------------------------------------------


def nist(instances: list[EvalInstance], max_n: int = 5) -> float:
    """NIST-5: information-weighted n-gram co-occurrence.

    Information weights come from n-gram frequencies over the whole reference
    corpus: info(w1..wn) = log2(count(w1..wn-1) / count(w1..wn)), with the
    total reference word count as the unigram numerator. Matched counts are
    clipped at the maximum single-reference count, and the NIST brevity
    factor exp(beta * ln^2(min(1, Lsys/Lref))) is applied to the sum over n.
    """
    _require(instances)
    ref_counts: Counter = Counter()
    total_ref_words = 0
    for inst in instances:
        for r in inst.references:
            toks = metric_tokenize(r)
            total_ref_words += len(toks)
            for n in range(1, max_n + 1):
                ref_counts.update(_ngrams(toks, n))

    def info(gram: tuple) -> float:
        denom = ref_counts[gram]
        numer = total_ref_words if len(gram) == 1 else ref_counts[gram[:-1]]
        if denom == 0 or numer == 0:
            return 0.0
        return max(0.0, math.log2(numer / denom))

    numerators = [0.0] * max_n
    denominators = [0] * max_n
    sys_len = 0
    ref_len = 0.0
    for inst in instances:
        hyp = metric_tokenize(inst.hypothesis)
        refs = [metric_tokenize(r) for r in inst.references]
        sys_len += len(hyp)
        ref_len += sum(len(r) for r in refs) / len(refs)
        for n in range(1, max_n + 1):
            denominators[n - 1] += max(0, len(hyp) - n + 1)
            hyp_counts = _ngrams(hyp, n)
            per_ref = [_ngrams(r, n) for r in refs]
            for gram, c in hyp_counts.items():
                matched = min(c, max(rc[gram] for rc in per_ref))
                if matched:
                    numerators[n - 1] += matched * info(gram)
    score = sum(num / den for num, den in zip(numerators, denominators) if den > 0)
    if sys_len == 0 or ref_len == 0:
        return 0.0
    beta = math.log(0.5) / math.log(1.5) ** 2
    ratio = min(1.0, sys_len / ref_len)
    return score * math.exp(beta * math.log(ratio) ** 2)


# -- meteor-lite --------------------------------------------------------------


def _align(hyp: list[str], ref: list[str]) -> tuple[int, int]:
    """(matches, chunks) for the best hyp/ref unigram alignment.

    Words may link when they are equal or share a Porter stem. Beam search
    over hypothesis positions keeps the alignments with the most matches,
    breaking ties toward fewer chunks then smaller reference positions, so
    the result is deterministic.
    """
    hyp_stems = [porter_stem(w) for w in hyp]
    ref_stems = [porter_stem(w) for w in ref]
    candidates: list[list[int]] = []
    for i, (w, s) in enumerate(zip(hyp, hyp_stems)):
        candidates.append(
            [j for j, (rw, rs) in enumerate(zip(ref, ref_stems)) if w == rw or s == rs]
        )
    # state: (-matches, chunks, last_ref_pos_or_-2, used ref positions)
    states: list[tuple[int, int, int, frozenset]] = [(0, 0, -2, frozenset())]
    for i in range(len(hyp)):
        nxt: dict[tuple[int, int, frozenset], None] = {}
        expanded: list[tuple[int, int, int, frozenset]] = []
        for neg_m, chunks, last, used in states:
            expanded.append((neg_m, chunks, -2, used))  # leave hyp[i] unmatched
            for j in candidates[i]:
                if j in used:
                    continue
                new_chunks = chunks + (0 if j == last + 1 and last >= 0 else 1)
                expanded.append((neg_m - 1, new_chunks, j, used | {j}))
        expanded.sort(key=lambda s: (s[0], s[1], s[2], tuple(sorted(s[3]))))
        dedup: list[tuple[int, int, int, frozenset]] = []
        seen = set()
        for st in expanded:
            key = (st[2], st[3])
            if key not in seen:
                seen.add(key)
                dedup.append(st)
            if len(dedup) == _ALIGN_BEAM:
                break
        states = dedup
    best = min(states, key=lambda s: (s[0], s[1]))
    return -best[0], best[1]


def meteor_pair(hyp_tokens: list[str], ref_tokens: list[str]) -> float:
    if not hyp_tokens or not ref_tokens:
        return 0.0
    matches, chunks = _align(hyp_tokens, ref_tokens)
    if matches == 0:
        return 0.0
    precision = matches / len(hyp_tokens)
    recall = matches / len(ref_tokens)
    f_mean = precision * recall / (METEOR_ALPHA * precision
                                   + (1.0 - METEOR_ALPHA) * recall)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


def meteor_lite(instances: list[EvalInstance]) -> float:
    """Exact+stem METEOR with 1.5 English parameters; per instance the best
    reference counts, and the corpus score is the instance mean."""
    _require(instances)
    total = 0.0
    for inst in instances:
        hyp = metric_tokenize(inst.hypothesis)
        total += max(meteor_pair(hyp, metric_tokenize(r)) for r in inst.references)
    return total / len(instances)


# -- ROUGE-L ------------------------------------------------------------------


def _lcs_len(a: list[str], b: list[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] >= prev[j] else prev[j]
        prev = cur
    return prev[len(b)]


def rouge_l(instances: list[EvalInstance]) -> float:
    """LCS F-measure with beta=1.2, best precision and best recall taken
    independently over the references (the official script's convention),
    averaged over instances."""
    _require(instances)
    total = 0.0
    for inst in instances:
        hyp = metric_tokenize(inst.hypothesis)
        best_p = 0.0
        best_r = 0.0
        for r in inst.references:
            ref = metric_tokenize(r)
            if not hyp or not ref:
                continue
            lcs = _lcs_len(hyp, ref)
            best_p = max(best_p, lcs / len(hyp))
            best_r = max(best_r, lcs / len(ref))
        if best_p > 0 and best_r > 0:
            b2 = ROUGE_BETA ** 2
            total += (1 + b2) * best_p * best_r / (best_r + b2 * best_p)
    return total / len(instances)


# -- CIDEr-D ------------------------------------------------------------------


def cider(instances: list[EvalInstance], max_n: int = 4) -> float:
    """CIDEr-D: tf-idf n-gram cosine with clipping, a length-difference
    gaussian penalty (sigma=6), averaged over n and references, scaled by 10.

    The idf table counts, per n-gram, the number of instances whose reference
    set contains it; with a single instance every idf is log(1)=0 and the
    score is 0 by construction.
    """
    _require(instances)
    if len(instances) < 2:
        log.warning("cider idf is degenerate with fewer than 2 instances")
    doc_freq: Counter = Counter()
    ref_grams: list[list[list[Counter]]] = []
    for inst in instances:
        per_ref = []
        seen: set = set()
        for r in inst.references:
            toks = metric_tokenize(r)
            counts = [_ngrams(toks, n) for n in range(1, max_n + 1)]
            per_ref.append(counts)
            for c in counts:
                seen.update(c)
        for gram in seen:
            doc_freq[gram] += 1
        ref_grams.append(per_ref)
    log_n_docs = math.log(len(instances))

    def vectorize(counts: list[Counter]):
        vecs = []
        norms = []
        for n in range(max_n):
            vec = {g: c * (log_n_docs - math.log(max(1.0, doc_freq[g])))
                   for g, c in counts[n].items()}
            vecs.append(vec)
            norms.append(math.sqrt(sum(v * v for v in vec.values())))
        length = sum(counts[1].values())  # the official scorer's length proxy
        return vecs, norms, length

    total = 0.0
    for inst, per_ref in zip(instances, ref_grams):
        hyp_toks = metric_tokenize(inst.hypothesis)
        hyp_counts = [_ngrams(hyp_toks, n) for n in range(1, max_n + 1)]
        h_vecs, h_norms, h_len = vectorize(hyp_counts)
        score = 0.0
        for ref_counts in per_ref:
            r_vecs, r_norms, r_len = vectorize(ref_counts)
            gauss = math.exp(-((h_len - r_len) ** 2) / (2.0 * CIDER_SIGMA ** 2))
            for n in range(max_n):
                val = sum(min(hv, r_vecs[n].get(g, 0.0)) * r_vecs[n].get(g, 0.0)
                          for g, hv in h_vecs[n].items())
                if h_norms[n] != 0 and r_norms[n] != 0:
                    val /= h_norms[n] * r_norms[n]
                score += val * gauss / max_n
        total += 10.0 * score / len(per_ref)
    return total / len(instances)


# -- slot realization ---------------------------------------------------------


def slot_inclusion(mr: MeaningRepresentation, utterance: str) -> dict[str, bool]:
    """Which values appear verbatim (case-insensitive) in the utterance.

    Boolean slots are excluded from the report, mirroring the corpus-level
    inclusion ratio.
    """
    low = utterance.lower()
    return {
        slot: value.lower() in low
        for slot, value in mr.pairs
        if slot not in mr.schema.boolean_slots
    }


def evaluate(instances: list[EvalInstance]) -> MetricReport:
    return MetricReport(
        bleu=bleu(instances),
        nist=nist(instances),
        meteor=meteor_lite(instances),
        rouge_l=rouge_l(instances),
        cider=cider(instances),
    )


# -- file formats ---------------------------------------------------------


def read_hypotheses(path) -> list[str]:
    """One utterance per line."""
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_reference_blocks(path) -> list[list[str]]:
    """Reference blocks separated by blank lines, in hypothesis order."""
    blocks: list[list[str]] = []
    current: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.strip():
                current.append(line)
            elif current:
                blocks.append(current)
                current = []
    if current:
        blocks.append(current)
    return blocks


def instances_from_files(hyp_path, ref_path) -> list[EvalInstance]:
    hyps = read_hypotheses(hyp_path)
    blocks = read_reference_blocks(ref_path)
    if len(hyps) != len(blocks):
        raise ValidationError(
            f"{len(hyps)} hypotheses but {len(blocks)} reference blocks"
        )
    return [EvalInstance(h, b) for h, b in zip(hyps, blocks)]
