"""Zero-shot handling of unseen values.

Before generation, each value not seen in training is swapped for the most
similar same-slot training value (sim-delexicalization); afterwards the
replacements in the generated text are swapped back (relexicalization).
Boolean slots pass through, and for the name/near slots candidates must agree
with the unseen value on having a leading "the".
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .data import Corpus
from .errors import ValidationError
from .mr import MeaningRepresentation

log = logging.getLogger(__name__)

THE_PREFIX_SLOTS = frozenset({"name", "near"})


@dataclass
class ValueInventory:
    """Distinct training values per slot, sorted for determinism."""

    by_slot: dict[str, list[str]]

    @property
    def slots(self) -> list[str]:
        return sorted(self.by_slot)

    def values(self, slot: str) -> list[str]:
        return self.by_slot.get(slot, [])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for slot in self.slots:
                for value in self.by_slot[slot]:
                    f.write(f"{slot}\t{value}\n")

    @classmethod
    def load(cls, path) -> "ValueInventory":
        by_slot: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                slot, value = line.split("\t", 1)
                by_slot.setdefault(slot, []).append(value)
        return cls(by_slot)


@dataclass
class Substitution:
    slot: str
    original: str
    replacement: str


@dataclass
class SubstitutionMap:
    entries: list[Substitution] = field(default_factory=list)

    def __bool__(self):
        return bool(self.entries)


def build_inventory(corpus: Corpus) -> ValueInventory:
    """Collect per-slot value lists from the training MRs.

    Boolean slots (familyFriendly's yes/no) are excluded: they have no
    meaningful notion of an unseen value.
    """
    by_slot: dict[str, set[str]] = {}
    boolean = corpus.schema.boolean_slots
    for sample in corpus.samples:
        for slot, value in sample.mr.pairs:
            if slot in boolean:
                continue
            by_slot.setdefault(slot, set()).add(value)
    return ValueInventory({slot: sorted(vals) for slot, vals in by_slot.items()})


def _char_trigrams(s: str) -> set[str]:
    padded = "\x02" + s + "\x03"
    return {padded[i:i + 3] for i in range(len(padded) - 2)}


def similarity(a: str, b: str) -> float:
    """String similarity in [0, 1]: character-trigram Jaccard and
    whitespace-token-overlap F1, equally weighted. Symmetric; 1.0 iff the
    lowercased strings are equal."""
    if not a or not b:
        raise ValidationError("similarity is undefined for empty strings")
    la, lb = a.lower(), b.lower()
    ta, tb = _char_trigrams(la), _char_trigrams(lb)
    jaccard = len(ta & tb) / len(ta | tb)
    wa, wb = la.split(), lb.split()
    common = 0
    pool = list(wb)
    for w in wa:
        if w in pool:
            pool.remove(w)
            common += 1
    if common:
        p, r = common / len(wa), common / len(wb)
        f1 = 2 * p * r / (p + r)
    else:
        f1 = 0.0
    return 0.5 * jaccard + 0.5 * f1


def _has_the_prefix(value: str) -> bool:
    return value.lower().startswith("the ")


def pick_replacement(slot: str, value: str, inventory: ValueInventory) -> str:
    """Most similar same-slot training value, honoring the the-prefix rule.

    For name/near, candidates are first narrowed to those agreeing with the
    unseen value on a leading "the"; an empty filtered set falls back to the
    full list. Ties break lexicographically.
    """
    candidates = inventory.values(slot)
    if not candidates:
        raise ValidationError(f"no training values recorded for slot {slot!r}")
    if slot in THE_PREFIX_SLOTS:
        wanted = _has_the_prefix(value)
        filtered = [c for c in candidates if _has_the_prefix(c) == wanted]
        if filtered:
            candidates = filtered
        else:
            log.warning("no %r candidate matches the-prefix of %r; using full list",
                        slot, value)
    best = candidates[0]
    best_score = similarity(value, best)
    for cand in candidates[1:]:
        score = similarity(value, cand)
        if score > best_score or (score == best_score and cand < best):
            best, best_score = cand, score
    return best


def sim_delexicalize(mr: MeaningRepresentation,
                     inventory: ValueInventory) -> tuple[MeaningRepresentation, SubstitutionMap]:
    """Replace each unseen value with its most similar seen value.

    Seen values and boolean slots pass through untouched and produce no map
    entry. A value string that repeats across slots reuses its first
    replacement so the substitution map keys stay distinct.
    """
    boolean = mr.schema.boolean_slots
    chosen: dict[str, str] = {}
    new_pairs: list[tuple[str, str]] = []
    entries: list[Substitution] = []
    for slot, value in mr.pairs:
        if slot in boolean or value in inventory.values(slot):
            new_pairs.append((slot, value))
            continue
        if value in chosen:
            replacement = chosen[value]
        else:
            replacement = pick_replacement(slot, value, inventory)
            chosen[value] = replacement
            entries.append(Substitution(slot, value, replacement))
        new_pairs.append((slot, replacement))
    return MeaningRepresentation(tuple(new_pairs), mr.schema), SubstitutionMap(entries)


def relexicalize(utterance: str, substitutions: SubstitutionMap) -> str:
    """Swap replacement strings back to their originals.

    Longer replacements win at the same position, and the output is never
    rescanned, so substitutions cannot cascade. Replacements absent from the
    utterance (the model may paraphrase) are simply left alone.
    """
    if not substitutions.entries:
        return utterance
    mapping: dict[str, str] = {}
    for e in substitutions.entries:  # first entry wins if replacements collide
        mapping.setdefault(e.replacement, e.original)
    ordered = sorted(mapping, key=lambda r: (-len(r), r))
    pattern = re.compile("|".join(re.escape(r) for r in ordered))
    return pattern.sub(lambda m: mapping[m.group(0)], utterance)
