"""Meaning representations: parsing, canonical slot order, condition serialization.

An MR is an ordered list of (slot, value) pairs. Slots come from a fixed
schema; values are free strings kept verbatim. The serialized condition is
the token sequence fed to the decoder before the utterance: each slot as a
single special token followed by its value as regular tokens, closed by the
START special token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ParseError, SchemaError, ValidationError


@dataclass(frozen=True)
class Schema:
    """A slot inventory with a canonical order.

    ``repeatable`` slots may appear more than once in an MR (WebNLG triples);
    ``grouped`` schemas keep non-leading pairs in their given order instead of
    sorting them, so triples stay contiguous.
    """

    name: str
    slots: tuple[str, ...]
    repeatable: bool = False
    grouped: bool = False
    boolean_slots: frozenset[str] = field(default_factory=frozenset)

    def index(self, slot: str) -> int:
        try:
            return self.slots.index(slot)
        except ValueError:
            raise SchemaError(f"unknown slot {slot!r} for schema {self.name!r}") from None

    def sort_key(self, slot: str) -> int:
        if self.grouped:
            # Only the leading slot is pulled to the front; the rest keep
            # their original (triple) order.
            return 0 if slot == self.slots[0] else 1
        return self.index(slot)


E2E_SCHEMA = Schema(
    name="e2e",
    slots=("name", "eatType", "food", "priceRange", "customer rating",
           "area", "familyFriendly", "near"),
    boolean_slots=frozenset({"familyFriendly"}),
)

WEBNLG_SCHEMA = Schema(
    name="webnlg",
    slots=("category", "subject", "property", "object"),
    repeatable=True,
    grouped=True,
)

SCHEMAS = {s.name: s for s in (E2E_SCHEMA, WEBNLG_SCHEMA)}


@dataclass(frozen=True)
class MeaningRepresentation:
    """An ordered, non-empty list of (slot, value) pairs under one schema."""

    pairs: tuple[tuple[str, str], ...]
    schema: Schema = E2E_SCHEMA

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("meaning representation must have at least one pair")
        seen = set()
        for slot, _value in self.pairs:
            self.schema.index(slot)
            if not self.schema.repeatable:
                if slot in seen:
                    raise ValidationError(f"duplicate slot {slot!r} in {self.schema.name} MR")
                seen.add(slot)

    def slots(self) -> list[str]:
        return [slot for slot, _ in self.pairs]

    def value(self, slot: str) -> str | None:
        for s, v in self.pairs:
            if s == slot:
                return v
        return None

    def is_canonical(self) -> bool:
        keys = [self.schema.sort_key(slot) for slot, _ in self.pairs]
        return keys == sorted(keys)


_PAIR_RE = re.compile(r"\s*([^\[\],]+)\[([^\[\]]*)\]\s*")


def parse_mr(text: str, schema: Schema = E2E_SCHEMA) -> MeaningRepresentation:
    """Parse a flat ``slot[value], slot[value]`` string into a canonical MR.

    Values are taken verbatim (internal spaces and casing preserved); pairs
    are then re-sorted into the schema's canonical slot order.
    """
    if text.count("[") != text.count("]"):
        raise ParseError(f"unbalanced brackets in MR: {text!r}")
    pairs: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        m = _PAIR_RE.match(text, pos)
        if not m:
            raise ParseError(f"cannot parse MR near offset {pos}: {text!r}")
        pairs.append((m.group(1).strip(), m.group(2)))
        pos = m.end()
        if pos < len(text):
            if text[pos] != ",":
                raise ParseError(f"expected ',' between pairs at offset {pos}: {text!r}")
            pos += 1
    if not pairs:
        raise ParseError(f"empty MR string: {text!r}")
    return canonical_order(MeaningRepresentation(tuple(pairs), schema))


def canonical_order(mr: MeaningRepresentation) -> MeaningRepresentation:
    """Stable-sort pairs into the schema's canonical order.

    Absent slots are simply omitted. For grouped schemas (WebNLG) only the
    leading slot is moved to the front; repeated triples keep their original
    relative order.
    """
    ordered = sorted(mr.pairs, key=lambda p: mr.schema.sort_key(p[0]))
    return MeaningRepresentation(tuple(ordered), mr.schema)


def render_mr(mr: MeaningRepresentation) -> str:
    """Inverse of parse_mr: the exact E2E-file textual form."""
    return ", ".join(f"{slot}[{value}]" for slot, value in mr.pairs)


def slot_token(slot: str) -> str:
    """Special-token spelling for a slot, e.g. ``<customer rating>``."""
    return f"<{slot}>"


def serialize_condition(mr: MeaningRepresentation, vocab) -> list[int]:
    """Token ids for the condition prefix: slot tokens, value tokens, START.

    Each pair contributes its slot's single special-token id followed by the
    value encoded as regular tokens; the START special token closes the
    sequence. No separators are inserted between pairs.
    """
    if not mr.is_canonical():
        raise ValidationError("MR must be in canonical slot order before serialization")
    ids: list[int] = []
    for slot, value in mr.pairs:
        ids.append(vocab.special_id(slot_token(slot)))
        ids.extend(vocab.encode(value))
    ids.append(vocab.start_id)
    return ids
