"""Byte-level BPE tokenizer: training, vocabulary merging, encoding, and
segmentation-efficiency measurement against treebank gold tokens.

Tokens are byte strings. A vocabulary always carries the 256 single-byte
tokens when used for encoding, so every input string is encodable (byte
fallback). The leading-space convention of common subword tokenizers is
kept: by default one ASCII space is prepended before encoding and stripped
after decoding, and the space byte renders as the low-block marker
(U+2581) in vocabulary files.

File formats (fixed):
  vocab.json   UTF-8 JSON object, display token -> integer id.
  merges.txt   UTF-8 text, line k = k-th merge, "LEFT RIGHT" display form.

Token display: a token renders as its UTF-8 string with the space byte
shown as U+2581. Tokens that are not valid UTF-8, or whose text would be
ambiguous to read back (contains a literal U+2581, a control character, or
something shaped like a byte escape), render fully escaped as "<0xAB>"
sequences. parse_token inverts display_token exactly.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ComputeError, ConfigError, InputError, ParseError

SPACE_MARKER = "▁"

_BYTE_ESCAPE_RE = re.compile(r"<0x([0-9A-Fa-f]{2})>")

# Chunking for pre-tokenization: spaces attach to the following run of
# non-space characters; trailing spaces form their own chunk. Merges never
# cross chunk boundaries.
_CHUNK_RE = re.compile(r" *[^ ]+| +")


def display_token(token: bytes) -> str:
    """Render token bytes for vocab/merge files; inverse of parse_token."""
    try:
        text = token.decode("utf-8")
    except UnicodeDecodeError:
        return "".join(f"<0x{b:02X}>" for b in token)
    ambiguous = (
        SPACE_MARKER in text
        or _BYTE_ESCAPE_RE.search(text) is not None
        or any(c != " " and (ord(c) < 0x20 or ord(c) == 0x7F) for c in text)
    )
    if ambiguous:
        return "".join(f"<0x{b:02X}>" for b in token)
    return text.replace(" ", SPACE_MARKER)


def parse_token(display: str) -> bytes:
    """Read back a token rendered by display_token."""
    out = bytearray()
    i = 0
    while i < len(display):
        m = _BYTE_ESCAPE_RE.match(display, i)
        if m:
            out.append(int(m.group(1), 16))
            i = m.end()
        elif display[i] == SPACE_MARKER:
            out.append(0x20)
            i += 1
        else:
            out.extend(display[i].encode("utf-8"))
            i += 1
    return bytes(out)


class Vocabulary:
    """Ordered set of byte-string tokens with dense ids 0..size-1."""

    def __init__(self, tokens: Iterable[bytes]):
        self.tokens: list[bytes] = list(tokens)
        self.id_of: dict[bytes, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: bytes) -> bool:
        return token in self.id_of

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"<Vocabulary size={self.size}>"

    def has_byte_fallback(self) -> bool:
        return all(bytes([b]) in self.id_of for b in range(256))

    @classmethod
    def byte_alphabet(cls) -> "Vocabulary":
        return cls(bytes([b]) for b in range(256))

    def save(self, path: str | Path) -> None:
        table = {display_token(t): i for i, t in enumerate(self.tokens)}
        Path(path).write_text(
            json.dumps(table, ensure_ascii=False, indent=0) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        table = json.loads(Path(path).read_text(encoding="utf-8"))
        by_id = sorted(((i, disp) for disp, i in table.items()))
        if [i for i, _ in by_id] != list(range(len(by_id))):
            raise ParseError(f"vocabulary ids in {path} are not dense 0..n-1")
        return cls(parse_token(disp) for _, disp in by_id)


@dataclass(frozen=True)
class MergeTable:
    """Ordered BPE merge rules; earlier merges have priority."""

    merges: tuple[tuple[bytes, bytes], ...]

    def __len__(self) -> int:
        return len(self.merges)

    def save(self, path: str | Path) -> None:
        lines = [f"{display_token(l)} {display_token(r)}" for l, r in self.merges]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        merges = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise ParseError("merge line must be 'LEFT RIGHT'", line=lineno)
            merges.append((parse_token(parts[0]), parse_token(parts[1])))
        return cls(tuple(merges))


@dataclass(frozen=True)
class TreebankSentence:
    """One treebank sentence: raw text plus its gold segmentation."""

    surface: str
    gold_tokens: tuple[str, ...]


def pretokenize(text: str) -> list[str]:
    """Split text into merge-isolated chunks (spaces lead the next word)."""
    return _CHUNK_RE.findall(text)


class Tokenizer:
    """Encoder/decoder over a vocabulary + merge table with byte fallback."""

    def __init__(self, vocab: Vocabulary, merges: MergeTable, prefix_space: bool = True):
        if not vocab.has_byte_fallback():
            raise ConfigError("vocabulary lacks the 256 byte-fallback tokens")
        for left, right in merges.merges:
            if left + right not in vocab:
                raise ConfigError(
                    f"merge output {display_token(left + right)!r} missing from vocabulary"
                )
        self.vocab = vocab
        self.merges = merges
        self.prefix_space = prefix_space
        self._rank = {pair: i for i, pair in enumerate(merges.merges)}

    def _merge_chunk(self, piece: bytes) -> list[bytes]:
        parts = [bytes([b]) for b in piece]
        rank = self._rank
        while len(parts) > 1:
            best_rank = None
            for pair in zip(parts, parts[1:]):
                r = rank.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
            if best_rank is None:
                break
            left, right = self.merges.merges[best_rank]
            merged = left + right
            out = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == left and parts[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        return parts

    def encode(self, text: str) -> list[int]:
        if self.prefix_space:
            text = " " + text
        ids: list[int] = []
        for chunk in pretokenize(text):
            for token in self._merge_chunk(chunk.encode("utf-8")):
                ids.append(self.vocab.id_of[token])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        data = b"".join(self.vocab.tokens[i] for i in ids)
        text = data.decode("utf-8", errors="replace")
        if self.prefix_space and text.startswith(" "):
            text = text[1:]
        return text

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.vocab.save(directory / "vocab.json")
        self.merges.save(directory / "merges.txt")

    @classmethod
    def load(cls, directory: str | Path, prefix_space: bool = True) -> "Tokenizer":
        directory = Path(directory)
        return cls(
            Vocabulary.load(directory / "vocab.json"),
            MergeTable.load(directory / "merges.txt"),
            prefix_space=prefix_space,
        )


def train_bpe(
    corpus: Iterable[str], target_vocab_size: int, prefix_space: bool = True
) -> tuple[Vocabulary, MergeTable]:
    """Learn BPE merges by iterative most-frequent-pair replacement.

    Merges are ordered by descending pair frequency; ties break on the
    lexicographically smallest (left, right) byte pair so training is
    reproducible. Stops early when no adjacent pair remains.
    """
    if target_vocab_size < 256:
        raise ConfigError(
            f"target_vocab_size {target_vocab_size} below byte alphabet size 256"
        )
    docs = list(corpus)
    if not docs:
        raise InputError("training corpus is empty")

    # Chunks never span documents; identical chunks share one entry.
    chunk_freq: Counter[bytes] = Counter()
    for doc in docs:
        if prefix_space:
            doc = " " + doc
        for chunk in pretokenize(doc):
            chunk_freq[chunk.encode("utf-8")] += 1

    sequences: list[list[bytes]] = [[bytes([b]) for b in chunk] for chunk in chunk_freq]
    freqs = list(chunk_freq.values())

    tokens: list[bytes] = [bytes([b]) for b in range(256)]
    seen = set(tokens)
    merges: list[tuple[bytes, bytes]] = []

    while len(tokens) < target_vocab_size:
        pair_counts: Counter[tuple[bytes, bytes]] = Counter()
        for seq, freq in zip(sequences, freqs):
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] += freq
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merged = best[0] + best[1]
        if merged in seen:
            # A longer path reproduced an existing token; drop the pair so
            # the loop cannot stall (no new vocab entry, no new merge).
            del pair_counts[best]
            alive = {p for p in pair_counts if p[0] + p[1] not in seen}
            if not alive:
                break
            best = min(alive, key=lambda p: (-pair_counts[p], p))
            merged = best[0] + best[1]
        for k, seq in enumerate(sequences):
            if len(seq) < 2:
                continue
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == best[0] and seq[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            sequences[k] = out
        merges.append(best)
        tokens.append(merged)
        seen.add(merged)

    return Vocabulary(tokens), MergeTable(tuple(merges))


def merge_vocabs(base: Vocabulary, extension: Vocabulary) -> Vocabulary:
    """Union keeping base ids; unseen extension tokens append in order."""
    tokens = list(base.tokens)
    base_set = base.id_of
    tokens.extend(t for t in extension.tokens if t not in base_set)
    return Vocabulary(tokens)


def merge_tokenizers(base: Tokenizer, extension: Tokenizer) -> Tokenizer:
    """Merge vocabularies and concatenate merge tables (base rules first)."""
    vocab = merge_vocabs(base.vocab, extension.vocab)
    seen = set(base.merges.merges)
    merges = list(base.merges.merges)
    merges.extend(m for m in extension.merges.merges if m not in seen)
    return Tokenizer(vocab, MergeTable(tuple(merges)), prefix_space=base.prefix_space)


def read_conllu(path: str | Path) -> list[TreebankSentence]:
    """Parse a CoNLL-U file into sentences with gold FORM tokens.

    Comment lines are ignored except '# text =', which supplies the
    surface when present. Multi-word range rows (id "3-4") and empty-node
    rows (id "8.1") are skipped; their component rows are counted.
    """
    sentences: list[TreebankSentence] = []
    forms: list[str] = []
    text: str | None = None

    def flush():
        nonlocal forms, text
        if forms:
            surface = text if text is not None else "".join(forms)
            sentences.append(TreebankSentence(surface, tuple(forms)))
        forms = []
        text = None

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("text ="):
                    text = line.split("=", 1)[1].strip()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ParseError(f"expected 10 tab-separated columns, got {len(cols)}", line=lineno)
            token_id = cols[0]
            if "-" in token_id or "." in token_id:
                continue
            if not token_id.isdigit():
                raise ParseError(f"bad token id {token_id!r}", line=lineno)
            forms.append(cols[1])
    flush()
    return sentences


def efficiency(
    sentences: Sequence[TreebankSentence], tokenize: Callable[[str], Sequence[int]]
) -> float:
    """Corpus-level ratio of gold tokens to model tokens over all sentences."""
    if not sentences:
        raise InputError("no sentences given")
    gold = sum(len(s.gold_tokens) for s in sentences)
    model = sum(len(tokenize(s.surface)) for s in sentences)
    if model == 0:
        raise ComputeError("tokenizer produced zero tokens over the corpus")
    return gold / model


def char_tokenizer(text: str) -> list[int]:
    """Character-level baseline: one token per codepoint."""
    return [ord(c) for c in text]
