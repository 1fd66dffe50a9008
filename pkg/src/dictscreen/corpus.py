"""Labeled text ingestion, keyword dictionaries, and fixed-length encoding.

The keyword id space reserves id 0 for the empty-space token ``<pad>``,
which triples as padding, out-of-dictionary stand-in, and the replacement
value when a keyword is ablated from a document.
"""

from __future__ import annotations

import csv
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD_TOKEN = "<pad>"

_STRIP_CHARS = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation.

    Tokens that are entirely punctuation vanish.  Interior punctuation
    (apostrophes, hyphens) is kept.
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            out.append(tok)
    return out


def split_pretokenized(text: str, separator: str = " ") -> list[str]:
    """Split already-tokenized text on a declared separator, verbatim.

    No case folding or punctuation stripping; empty fields are dropped.
    Intended for languages where whitespace tokenization does not apply.
    """
    return [tok for tok in text.split(separator) if tok]


@dataclass(frozen=True)
class Dictionary:
    """Bidirectional keyword/id map; id 0 is always the pad token.

    ``entries[i]`` is the keyword with id ``i``; ids are dense.  ``size``
    counts keywords excluding the pad token.
    """

    entries: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    def __init__(self, keywords: Sequence[str]):
        entries = (PAD_TOKEN, *keywords)
        seen: dict[str, int] = {}
        for i, word in enumerate(entries):
            if i > 0 and (not word or word == PAD_TOKEN):
                raise ValueError(f"invalid keyword at id {i}: {word!r}")
            if "\n" in word:
                raise ValueError(f"keyword contains newline: {word!r}")
            if word in seen:
                raise ValueError(f"duplicate keyword: {word!r}")
            seen[word] = i
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "index", seen)

    @property
    def size(self) -> int:
        """Number of keywords, pad excluded."""
        return len(self.entries) - 1

    def id_of(self, keyword: str) -> int | None:
        return self.index.get(keyword)

    def keyword(self, keyword_id: int) -> str:
        return self.entries[keyword_id]

    def __contains__(self, keyword: str) -> bool:
        return keyword in self.index

    def save(self, path: Path | str) -> None:
        """Write one keyword per line; line number == keyword id."""
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Dictionary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != PAD_TOKEN:
            raise ValueError(f"{path}: line 0 must be the literal {PAD_TOKEN!r}")
        return cls(lines[1:])


def build_dictionary(
    token_streams: Iterable[Sequence[str]],
    min_count: int = 1,
    max_size: int | None = None,
) -> Dictionary:
    """Build a frequency-ordered dictionary from token sequences.

    Keeps tokens seen at least ``min_count`` times, most frequent first;
    ties fall back to first-occurrence order.  ``max_size`` caps the total
    entry count including the pad token.  Raw tokens equal to the pad
    literal are never admitted (they encode to pad like any OOV token).
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    if max_size is not None and max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    position = 0
    for stream in token_streams:
        for tok in stream:
            if tok == PAD_TOKEN:
                continue
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = position
                position += 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], first_seen[t]))
    if max_size is not None:
        kept = kept[: max_size - 1]
    return Dictionary(kept)


@dataclass(frozen=True)
class EncodedDocument:
    """Fixed-length id sequence with its label and non-pad token count."""

    ids: np.ndarray
    true_length: int
    label: int

    def __post_init__(self):
        self.ids.setflags(write=False)


def _make_doc(ids: np.ndarray, label: int) -> EncodedDocument:
    return EncodedDocument(ids=ids, true_length=int(np.count_nonzero(ids)), label=label)


def encode(
    tokens: Sequence[str], dictionary: Dictionary, T: int, label: int = 1
) -> EncodedDocument:
    """Map the first ``T`` tokens to ids, pad the remainder with id 0.

    Out-of-dictionary tokens map to the pad id in place; ``true_length``
    counts only positions holding real keyword ids.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    ids = np.zeros(T, dtype=np.int32)
    for t, tok in enumerate(tokens[:T]):
        ids[t] = dictionary.index.get(tok, 0)
    return _make_doc(ids, label)


def decode(doc: EncodedDocument, dictionary: Dictionary) -> list[str]:
    """Keywords for the non-pad ids of a document, in order."""
    return [dictionary.entries[i] for i in doc.ids if i != 0]


def ablate(doc: EncodedDocument, keyword_id: int) -> EncodedDocument:
    """Copy of ``doc`` with every occurrence of ``keyword_id`` blanked to pad.

    Ablating the pad id itself is rejected: it would be a no-op dressed up
    as a measurement.
    """
    if keyword_id == 0:
        raise ValueError("cannot ablate the pad token (id 0)")
    if keyword_id < 0:
        raise ValueError(f"keyword id must be positive, got {keyword_id}")
    ids = doc.ids.copy()
    ids[ids == keyword_id] = 0
    return _make_doc(ids, doc.label)


def reencode_screened(
    doc: EncodedDocument, kept: frozenset[int] | set[int], T: int
) -> EncodedDocument:
    """Drop ids outside ``kept``, compact survivors left, pad to length ``T``.

    Relative order of surviving positions is preserved.  ``kept`` must
    contain the pad id, so pad positions survive; the compaction is what
    shortens the effective sequence the reduced model sees.
    """
    if 0 not in kept:
        raise ValueError("kept set must contain the pad id 0")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    survivors = [i for i in doc.ids.tolist() if i in kept]
    ids = np.zeros(T, dtype=np.int32)
    ids[: min(len(survivors), T)] = survivors[:T]
    return _make_doc(ids, doc.label)


def build_inverted_index(docs: Sequence[EncodedDocument]) -> dict[int, list[int]]:
    """Posting list (ascending doc indices) per non-pad keyword id."""
    postings: dict[int, list[int]] = {}
    for i, doc in enumerate(docs):
        for keyword_id in np.unique(doc.ids):
            k = int(keyword_id)
            if k == 0:
                continue
            postings.setdefault(k, []).append(i)
    return postings


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of encoded documents plus their dictionary."""

    docs: tuple[EncodedDocument, ...]
    dictionary: Dictionary
    inverted_index: dict[int, list[int]] = field(repr=False, compare=False)

    @classmethod
    def build(cls, docs: Sequence[EncodedDocument], dictionary: Dictionary) -> "Corpus":
        for i, doc in enumerate(docs):
            if doc.ids.max(initial=0) > dictionary.size:
                raise ValueError(
                    f"document {i} holds id {int(doc.ids.max())} outside "
                    f"dictionary of size {dictionary.size}"
                )
        return cls(
            docs=tuple(docs),
            dictionary=dictionary,
            inverted_index=build_inverted_index(docs),
        )

    def __len__(self) -> int:
        return len(self.docs)

    def labels(self) -> list[int]:
        return [doc.label for doc in self.docs]

    def mean_true_length(self) -> float:
        if not self.docs:
            raise ValueError("empty corpus has no mean length")
        return sum(d.true_length for d in self.docs) / len(self.docs)

    def postings(self, keyword_id: int) -> list[int]:
        """Documents containing ``keyword_id``; empty if nowhere present."""
        return self.inverted_index.get(keyword_id, [])


def load_labeled_csv(
    path: Path | str,
    pretokenized: bool = False,
    separator: str = " ",
) -> list[tuple[int, list[str]]]:
    """Read ``(class_index, title, description)`` rows into (label, tokens).

    Title and description are joined with one space before tokenization.
    Class indices are 1-based.
    """
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            label = int(row[0])
            if label < 1:
                raise ValueError(f"{path}:{lineno}: class index must be >= 1")
            text = f"{row[1]} {row[2]}"
            tokens = split_pretokenized(text, separator) if pretokenized else tokenize(text)
            rows.append((label, tokens))
    return rows


def encode_corpus(
    rows: Sequence[tuple[int, Sequence[str]]], dictionary: Dictionary, T: int
) -> Corpus:
    docs = [encode(tokens, dictionary, T, label=label) for label, tokens in rows]
    return Corpus.build(docs, dictionary)


def screen_dictionary(
    dictionary: Dictionary, kept: frozenset[int] | set[int]
) -> tuple[Dictionary, dict[int, int]]:
    """Reduced dictionary over ``kept`` ids plus the old-id -> new-id map.

    Kept keywords stay in original id (frequency) order; ids are re-densified.
    """
    if 0 not in kept:
        raise ValueError("kept set must contain the pad id 0")
    old_ids = sorted(i for i in kept if i != 0)
    if old_ids and old_ids[-1] > dictionary.size:
        raise ValueError(f"kept id {old_ids[-1]} outside dictionary")
    reduced = Dictionary([dictionary.entries[i] for i in old_ids])
    id_map = {0: 0}
    for new_id, old_id in enumerate(old_ids, start=1):
        id_map[old_id] = new_id
    return reduced, id_map


def reencode_corpus(
    corpus: Corpus, kept: frozenset[int] | set[int], T: int | None = None
) -> Corpus:
    """Screen every document and remap ids onto the reduced dictionary."""
    length = T if T is not None else (len(corpus.docs[0].ids) if corpus.docs else 1)
    reduced, id_map = screen_dictionary(corpus.dictionary, kept)
    docs = []
    for doc in corpus.docs:
        screened = reencode_screened(doc, kept, length)
        ids = np.array([id_map[int(i)] for i in screened.ids], dtype=np.int32)
        docs.append(_make_doc(ids, doc.label))
    return Corpus.build(docs, reduced)
