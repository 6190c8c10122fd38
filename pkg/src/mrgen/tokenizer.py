"""Vocabulary building and text <-> token-id codecs.

Two regular-token modes share one interface: byte-level BPE (default, lossless
on arbitrary UTF-8 via single-byte fallback tokens) and a word-level mode with
an explicit UNK (toy corpora and tests). Special tokens for slots, START and
END occupy a disjoint id range above the regular tokens and are never produced
by encoding text; they are injected structurally (condition serialization,
generation control) and render as their angle-bracket names when decoded.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import MrgenError, ValidationError

UNK_TOKEN = "<unk>"
START_TOKEN = "<START>"
END_TOKEN = "<END>"

_MIN_BPE_SIZE = 300  # 256 byte-fallback tokens plus headroom for merges


def _pretokenize(text: str) -> list[str]:
    """Split text into chunks that BPE merges never cross.

    Chunks are runs of letters, digits, or other symbols, optionally carrying
    one leading space; remaining whitespace runs stand alone. Concatenating
    the chunks reproduces the input exactly.
    """
    chunks: list[str] = []
    i, n = 0, len(text)
    while i < n:
        lead = ""
        if text[i] == " " and i + 1 < n and not text[i + 1].isspace():
            lead = " "
            i += 1
        c = text[i]
        j = i + 1
        if c.isspace():
            while j < n and text[j].isspace():
                j += 1
        elif c.isalpha():
            while j < n and text[j].isalpha():
                j += 1
        elif c.isdigit():
            while j < n and text[j].isdigit():
                j += 1
        else:
            while j < n and not (text[j].isspace() or text[j].isalpha() or text[j].isdigit()):
                j += 1
        chunks.append(lead + text[i:j])
        i = j
    return chunks


@dataclass
class Vocabulary:
    """Immutable-after-build token inventory.

    Regular token ids are ``0..len(regular)-1``; special token ids follow
    directly after, so the two id spaces are disjoint by construction.
    """

    mode: str
    regular: list[bytes]
    specials: list[str]
    merges: list[tuple[bytes, bytes]]
    _regular_index: dict[bytes, int] = field(repr=False, default_factory=dict)
    _special_index: dict[str, int] = field(repr=False, default_factory=dict)
    _merge_rank: dict[tuple[bytes, bytes], int] = field(repr=False, default_factory=dict)
    _chunk_cache: dict[str, tuple[int, ...]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self._regular_index = {tok: i for i, tok in enumerate(self.regular)}
        base = len(self.regular)
        self._special_index = {name: base + i for i, name in enumerate(self.specials)}
        self._merge_rank = {pair: r for r, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.regular) + len(self.specials)

    @property
    def start_id(self) -> int:
        return self.special_id(START_TOKEN)

    @property
    def end_id(self) -> int:
        return self.special_id(END_TOKEN)

    def special_id(self, name: str) -> int:
        try:
            return self._special_index[name]
        except KeyError:
            raise MrgenError(f"special token {name!r} not in vocabulary") from None

    def is_special(self, token_id: int) -> bool:
        return len(self.regular) <= token_id < self.size

    def special_name(self, token_id: int) -> str:
        return self.specials[token_id - len(self.regular)]

    # -- encoding -----------------------------------------------------------

    def encode(self, text: str) -> list[int]:
        """Regular-token ids for ``text``. Deterministic; lossless in bpe mode."""
        if text == "":
            return []
        if self.mode == "word":
            unk = self._regular_index[UNK_TOKEN.encode("utf-8")]
            return [self._regular_index.get(w.encode("utf-8"), unk) for w in text.split()]
        out: list[int] = []
        for chunk in _pretokenize(text):
            cached = self._chunk_cache.get(chunk)
            if cached is None:
                cached = tuple(self._encode_chunk(chunk))
                self._chunk_cache[chunk] = cached
            out.extend(cached)
        return out

    def _encode_chunk(self, chunk: str) -> list[int]:
        parts = [bytes([b]) for b in chunk.encode("utf-8")]
        while len(parts) > 1:
            best_rank = None
            for i in range(len(parts) - 1):
                rank = self._merge_rank.get((parts[i], parts[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
            if best_rank is None:
                break
            a, b = self.merges[best_rank]
            merged: list[bytes] = []
            i = 0
            while i < len(parts):
                if i < len(parts) - 1 and parts[i] == a and parts[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        return [self._regular_index[p] for p in parts]

    def decode(self, ids: list[int]) -> str:
        """Inverse of encode on its image; specials render as their names."""
        pieces: list[str] = []
        run: list[bytes] = []

        def flush():
            if run:
                pieces.append(b"".join(run).decode("utf-8", errors="replace"))
                run.clear()

        for token_id in ids:
            if 0 <= token_id < len(self.regular):
                if self.mode == "word":
                    if run:
                        run.append(b" ")
                    run.append(self.regular[token_id])
                else:
                    run.append(self.regular[token_id])
            elif self.is_special(token_id):
                flush()
                pieces.append(self.special_name(token_id))
            else:
                raise MrgenError(f"token id {token_id} out of range (vocab size {self.size})")
        flush()
        return "".join(pieces)

    # -- persistence --------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "# mrgen vocabulary v1",
            f"mode={self.mode}",
            f"regular={len(self.regular)}",
            f"specials={len(self.specials)}",
            f"merges={len(self.merges)}",
        ]
        lines.extend(json.dumps(tok.decode("latin-1")) for tok in self.regular)
        lines.extend(self.specials)
        lines.extend(
            json.dumps([a.decode("latin-1"), b.decode("latin-1")]) for a, b in self.merges
        )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != "# mrgen vocabulary v1":
            raise MrgenError(f"not a vocabulary file: {path}")
        header = dict(line.split("=", 1) for line in lines[1:5])
        n_reg, n_spec, n_merge = (int(header[k]) for k in ("regular", "specials", "merges"))
        pos = 5
        regular = [json.loads(line).encode("latin-1") for line in lines[pos:pos + n_reg]]
        pos += n_reg
        specials = lines[pos:pos + n_spec]
        pos += n_spec
        merges = [
            tuple(part.encode("latin-1") for part in json.loads(line))
            for line in lines[pos:pos + n_merge]
        ]
        return cls(header["mode"], regular, specials, merges)


def train_vocab(texts: list[str], size: int, mode: str = "bpe",
                specials: list[str] | None = None) -> Vocabulary:
    """Learn a vocabulary from raw training strings.

    ``size`` bounds the regular-token count; bpe training stops early once no
    adjacent pair occurs at least twice. Special tokens are appended after the
    regular table and can never coincide with a learned regular token.
    """
    specials = list(specials) if specials else [START_TOKEN, END_TOKEN]
    if len(set(specials)) != len(specials):
        raise ValidationError("duplicate special token names")
    forbidden = {s.encode("utf-8") for s in specials}
    if mode == "word":
        words = sorted({w for t in texts for w in t.split()} - {UNK_TOKEN})
        regular = [w.encode("utf-8") for w in words if w.encode("utf-8") not in forbidden]
        regular.append(UNK_TOKEN.encode("utf-8"))
        return Vocabulary("word", regular, specials, [])
    if mode != "bpe":
        raise ValidationError(f"unknown vocabulary mode {mode!r}")
    if size < _MIN_BPE_SIZE:
        raise ValidationError(f"bpe vocabulary size must be >= {_MIN_BPE_SIZE}, got {size}")
    if not texts:
        raise ValidationError("cannot train a vocabulary on an empty corpus")

    chunk_freq: dict[str, int] = {}
    for t in texts:
        for chunk in _pretokenize(t):
            chunk_freq[chunk] = chunk_freq.get(chunk, 0) + 1
    # Work over chunk *types*; merges update only the types that contain the
    # merged pair, keeping training fast on repetitive corpora.
    reprs: dict[str, list[bytes]] = {
        c: [bytes([b]) for b in c.encode("utf-8")] for c in chunk_freq
    }
    pair_counts: dict[tuple[bytes, bytes], int] = {}
    pair_members: dict[tuple[bytes, bytes], set[str]] = {}
    for c, parts in reprs.items():
        f = chunk_freq[c]
        for i in range(len(parts) - 1):
            pair = (parts[i], parts[i + 1])
            pair_counts[pair] = pair_counts.get(pair, 0) + f
            pair_members.setdefault(pair, set()).add(c)

    regular = [bytes([b]) for b in range(256)]
    merges: list[tuple[bytes, bytes]] = []
    while len(regular) < size and pair_counts:
        (a, b), count = max(pair_counts.items(), key=lambda kv: (kv[1], kv[0]))
        if count < 2:
            break
        new_tok = a + b
        if new_tok in forbidden:
            # A regular token may never spell a special token's name.
            del pair_counts[(a, b)]
            continue
        merges.append((a, b))
        regular.append(new_tok)
        for c in sorted(pair_members.get((a, b), ())):
            parts = reprs[c]
            f = chunk_freq[c]
            for i in range(len(parts) - 1):
                pair = (parts[i], parts[i + 1])
                pair_counts[pair] -= f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                members = pair_members.get(pair)
                if members is not None:
                    members.discard(c)
            merged: list[bytes] = []
            i = 0
            while i < len(parts):
                if i < len(parts) - 1 and parts[i] == a and parts[i + 1] == b:
                    merged.append(new_tok)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            reprs[c] = merged
            for i in range(len(merged) - 1):
                pair = (merged[i], merged[i + 1])
                pair_counts[pair] = pair_counts.get(pair, 0) + f
                pair_members.setdefault(pair, set()).add(c)
    return Vocabulary("bpe", regular, specials, merges)


def schema_specials(schema) -> list[str]:
    """START, END, and one atomic token per schema slot."""
    from .mr import slot_token

    return [slot_token(s) for s in schema.slots] + [START_TOKEN, END_TOKEN]
