"""Deterministic synthetic restaurant corpus in the E2E format.

Stands in for the real dataset where it is not available: same schema, same
file format, templated references with enough paraphrase variety that slot
values sometimes appear as synonyms rather than verbatim (so the inclusion
ratio is meaningfully below 1). Everything derives from the seed.
"""

from __future__ import annotations

import random
from pathlib import Path

from .data import Corpus, CorpusSample
from .mr import E2E_SCHEMA, MeaningRepresentation, render_mr

SLOT_VALUES: dict[str, list[str]] = {
    "name": ["Giraffe", "Blue Spice", "The Mill", "The Rice Boat", "Wildwood",
             "Green Man", "The Wrestlers", "Cocum", "Strada", "The Punter"],
    "eatType": ["pub", "restaurant", "coffee shop"],
    "food": ["Fast food", "English", "Italian", "Japanese", "French", "Indian", "Chinese"],
    "priceRange": ["cheap", "moderate", "high", "less than £20", "£20-25", "more than £30"],
    "customer rating": ["low", "average", "high", "1 out of 5", "3 out of 5", "5 out of 5"],
    "area": ["riverside", "city centre"],
    "familyFriendly": ["yes", "no"],
    "near": ["Café Sicilia", "The Bakers", "Raja Indian Cuisine",
             "Express by Holiday Inn", "The Sorrento", "Burger King"],
}

_PRICE_SYNONYMS = {
    "cheap": "low priced", "moderate": "moderately priced", "high": "expensive",
    "less than £20": "below £20", "£20-25": "around £20", "more than £30": "over £30",
}
_RATING_SYNONYMS = {
    "low": "poor", "average": "decent", "high": "excellent",
    "1 out of 5": "very low", "3 out of 5": "average", "5 out of 5": "top",
}
_FF_PHRASES = {"yes": ["family friendly", "kid friendly", "children friendly"],
               "no": ["not family friendly", "adults only"]}


def _render_reference(mr: MeaningRepresentation, rng: random.Random) -> str:
    v = dict(mr.pairs)
    name = v.get("name", "It")
    parts: list[str] = []

    head = name
    if "eatType" in v:
        head += f" is a {v['eatType']}"
    else:
        head += " is a place"
    if "food" in v:
        if rng.random() < 0.8:
            head += f" serving {v['food']} food"
        else:
            head += f" that serves {v['food']} dishes"
    parts.append(head)

    if "area" in v:
        parts.append(rng.choice([f"in the {v['area']} area", f"located in the {v['area']}"]))
    if "near" in v:
        parts.append(f"near {v['near']}")
    sentence1 = " ".join(parts) + "."

    extras: list[str] = []
    if "priceRange" in v:
        value = v["priceRange"]
        if rng.random() < 0.3:
            extras.append(f"Prices are {_PRICE_SYNONYMS[value]}.")
        else:
            extras.append(rng.choice([f"The price range is {value}.",
                                      f"Prices are {value}."]))
    if "customer rating" in v:
        value = v["customer rating"]
        if rng.random() < 0.3:
            extras.append(f"Customers call it {_RATING_SYNONYMS[value]}.")
        else:
            extras.append(f"It has a {value} customer rating.")
    if "familyFriendly" in v:
        extras.append(f"It is {rng.choice(_FF_PHRASES[v['familyFriendly']])}.")

    rng.shuffle(extras)
    return " ".join([sentence1] + extras)


def synthetic_corpus(n_groups: int, seed: int, split: str = "train",
                     max_refs: int = 3) -> Corpus:
    """Build ``n_groups`` distinct MR groups with 1..max_refs references each."""
    rng = random.Random(seed)
    slots = list(E2E_SCHEMA.slots)
    samples: list[CorpusSample] = []
    seen: set[str] = set()
    while len(samples) < n_groups:
        k = rng.randint(3, len(slots))
        chosen = sorted(rng.sample(range(len(slots)), k))
        if 0 not in chosen:  # always realize a name
            chosen = [0] + chosen[:-1]
        pairs = tuple(
            (slots[i], rng.choice(SLOT_VALUES[slots[i]])) for i in chosen
        )
        mr = MeaningRepresentation(pairs, E2E_SCHEMA)
        key = render_mr(mr)
        if key in seen:
            continue
        seen.add(key)
        refs = [_render_reference(mr, rng) for _ in range(rng.randint(1, max_refs))]
        samples.append(CorpusSample(mr, refs, key))
    return Corpus(split, samples, E2E_SCHEMA)


def save_e2e_csv(corpus: Corpus, path) -> None:
    """Write a corpus back out in the two-column E2E file format."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_ALL)
        writer.writerow(["mr", "ref"])
        for sample in corpus.samples:
            for ref in sample.references:
                writer.writerow([sample.mr_text, ref])


def write_synthetic_dataset(directory, seed: int = 13,
                            sizes: tuple[int, int, int] = (400, 60, 60)) -> dict[str, Path]:
    """Write train/dev/test csv files; returns the path per split."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for split, size, offset in zip(("train", "dev", "test"), sizes, (0, 1, 2)):
        corpus = synthetic_corpus(size, seed + offset, split)
        path = directory / f"{split}.csv"
        save_e2e_csv(corpus, path)
        paths[split] = path
    return paths
