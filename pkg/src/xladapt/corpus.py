"""Corpus ingestion and the cleaning passes: script conversion,
punctuation width normalization, banned-word removal, special-content
removal (URLs, emails, emoji, control characters), and minimum-length
filtering; plus per-source dataset statistics.

Pass order is fixed: script_convert -> fullwidth -> banned ->
strip_or_drop -> min_length. Conversion runs first so banned-word
matching sees converted text. A removed document carries the reason of
the first pass that rejected it.

Normative content detectors (also documented in the README):
  URL    (?:[A-Za-z][A-Za-z0-9+.-]*://|www\\.)\\S+
  email  [A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\\.[A-Za-z]{2,}
  emoji  U+1F300-1F5FF, U+1F600-1F64F, U+1F680-1F6FF, U+1F900-1F9FF
  special symbols: C0/C1 control characters other than tab/newline/CR,
  and U+FFFD.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ConfigError, FormatError, ParseError
from .manifest import CorpusManifest

URL_RE = re.compile(r"(?:[A-Za-z][A-Za-z0-9+.-]*://|www\.)\S+")
EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")

EMOJI_RANGES = (
    (0x1F300, 0x1F5FF),  # symbols and pictographs
    (0x1F600, 0x1F64F),  # emoticons
    (0x1F680, 0x1F6FF),  # transport and map
    (0x1F900, 0x1F9FF),  # supplemental symbols
)

_KEEP_CONTROLS = {"\t", "\n", "\r"}

# Width conversion skips the four web-structural marks so that URL and
# email detection (which runs after it) still sees ":", "/", ".", "@".
# Documents carrying those constructs are removed or stripped anyway, so
# prose in the cleaned output never contains them half-width by accident.
FULLWIDTH_TABLE = {
    c: chr(ord(c) + 0xFEE0) for c in string.punctuation if c not in ":/.@"
}

DEFAULT_MIN_TOKENS = 10


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Decision:
    doc: Document
    keep: bool
    reason: str | None = None


@dataclass
class FilterReport:
    total_in: int = 0
    total_kept: int = 0
    removed: Counter = field(default_factory=Counter)
    modified: Counter = field(default_factory=Counter)

    def check(self) -> None:
        if sum(self.removed.values()) != self.total_in - self.total_kept:
            raise AssertionError("per-pass removal counts do not sum to total removals")


def read_jsonl(path: str | Path) -> list[Document]:
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            if "id" not in rec or "text" not in rec:
                raise FormatError(f"{path}: line {lineno}: record needs 'id' and 'text'")
            doc_id = str(rec["id"])
            if doc_id in seen:
                raise FormatError(f"{path}: line {lineno}: duplicate id {doc_id!r}")
            seen.add(doc_id)
            docs.append(Document(doc_id, rec["text"], rec.get("meta", {})))
    return docs


def write_jsonl(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(
                json.dumps(
                    {"id": d.id, "text": d.text, "meta": d.meta},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_banned_list(path: str | Path) -> list[str]:
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(line)
    return terms


def load_mapping_table(path: str | Path) -> dict[str, str]:
    table = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ParseError("mapping line must be 'from<TAB>to'", line=lineno)
        table[parts[0]] = parts[1]
    return table


def script_convert(doc: Document, table: dict[str, str]) -> Document:
    """Greedy longest-match replacement, left to right.

    Phrase entries beat overlapping single-character entries because the
    longest key matching at the current position always wins.
    """
    if not table:
        return doc
    max_len = max(len(k) for k in table)
    text = doc.text
    out = []
    i = 0
    while i < len(text):
        for width in range(min(max_len, len(text) - i), 0, -1):
            piece = text[i : i + width]
            if piece in table:
                out.append(table[piece])
                i += width
                break
        else:
            out.append(text[i])
            i += 1
    converted = "".join(out)
    if converted == text:
        return doc
    return Document(doc.id, converted, doc.meta)


def fullwidth(doc: Document) -> Document:
    """Replace half-width ASCII punctuation with full-width forms."""
    converted = doc.text.translate(str.maketrans(FULLWIDTH_TABLE))
    if converted == doc.text:
        return doc
    return Document(doc.id, converted, doc.meta)


def filter_banned(doc: Document, banned: Sequence[str]) -> Decision:
    """Remove the document if any banned term occurs as a substring."""
    if not banned:
        raise ConfigError("banned word list is empty")
    for term in banned:
        if term in doc.text:
            return Decision(doc, False, f"banned-word:{term}")
    return Decision(doc, True)


def _first_special(text: str) -> str | None:
    if URL_RE.search(text):
        return "url"
    if EMAIL_RE.search(text):
        return "email"
    for ch in text:
        cp = ord(ch)
        if any(lo <= cp <= hi for lo, hi in EMOJI_RANGES):
            return "emoji"
        if (ch not in _KEEP_CONTROLS and cp < 0x20) or 0x7F <= cp <= 0x9F or cp == 0xFFFD:
            return "special-symbol"
    return None


def strip_or_drop(doc: Document, strip: bool = False) -> Decision:
    """Handle URLs, emails, emoji, and special symbols.

    Default drops the whole document; strip mode deletes the offending
    spans and keeps the rest.
    """
    kind = _first_special(doc.text)
    if kind is None:
        return Decision(doc, True)
    if not strip:
        return Decision(doc, False, f"special-content:{kind}")
    text = URL_RE.sub("", doc.text)
    text = EMAIL_RE.sub("", text)
    cleaned = []
    for ch in text:
        cp = ord(ch)
        if any(lo <= cp <= hi for lo, hi in EMOJI_RANGES):
            continue
        if (ch not in _KEEP_CONTROLS and cp < 0x20) or 0x7F <= cp <= 0x9F or cp == 0xFFFD:
            continue
        cleaned.append(ch)
    return Decision(Document(doc.id, "".join(cleaned), doc.meta), True)


def min_length(
    doc: Document, tokenize: Callable[[str], Sequence], min_tokens: int = DEFAULT_MIN_TOKENS
) -> Decision:
    n = len(tokenize(doc.text))
    if n < min_tokens:
        return Decision(doc, False, f"too-short:{n}")
    return Decision(doc, True)


def clean_corpus(
    docs: Sequence[Document],
    tokenize: Callable[[str], Sequence],
    banned: Sequence[str] | None = None,
    table: dict[str, str] | None = None,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    strip: bool = False,
) -> tuple[list[Document], CorpusManifest, FilterReport]:
    """Run every pass in the fixed order over the corpus."""
    manifest = CorpusManifest()
    report = FilterReport(total_in=len(docs))
    kept: list[Document] = []
    for doc in docs:
        if table:
            converted = script_convert(doc, table)
            if converted is not doc:
                report.modified["script_convert"] += 1
            doc = converted
        widened = fullwidth(doc)
        if widened is not doc:
            report.modified["fullwidth"] += 1
        doc = widened
        if banned:
            decision = filter_banned(doc, banned)
            if not decision.keep:
                manifest.remove(doc.id, decision.reason)
                report.removed["banned"] += 1
                continue
        decision = strip_or_drop(doc, strip=strip)
        if not decision.keep:
            manifest.remove(doc.id, decision.reason)
            report.removed["strip_or_drop"] += 1
            continue
        if decision.doc is not doc:
            report.modified["strip_or_drop"] += 1
        doc = decision.doc
        decision = min_length(doc, tokenize, min_tokens)
        if not decision.keep:
            manifest.remove(doc.id, decision.reason)
            report.removed["min_length"] += 1
            continue
        manifest.keep(doc.id)
        kept.append(doc)
    report.total_kept = len(kept)
    report.check()
    return kept, manifest, report


def corpus_stats(items: Sequence, tokenize: Callable[[str], Sequence] | None = None) -> list[dict]:
    """Per-source table: count, proportion, average lengths, average turns.

    Accepts Documents (single-turn, text as instruction) or dialogue
    records shaped {"turns": [{"instruction", "output"}], "source"}.
    Lengths are characters unless a tokenizer callable is given.
    """
    measure = (lambda s: len(tokenize(s))) if tokenize else len
    per_source: dict[str, dict] = {}
    total = 0
    for item in items:
        if isinstance(item, Document):
            source = item.meta.get("source", "")
            turns = [{"instruction": item.text, "output": ""}]
        else:
            source = item.get("source", "")
            turns = item["turns"]
        acc = per_source.setdefault(
            source, {"count": 0, "turns": 0, "ilen": 0, "olen": 0}
        )
        acc["count"] += 1
        acc["turns"] += len(turns)
        acc["ilen"] += sum(measure(t["instruction"]) for t in turns)
        acc["olen"] += sum(measure(t.get("output", "")) for t in turns)
        total += 1
    rows = []
    for source in sorted(per_source):
        acc = per_source[source]
        rows.append(
            {
                "source": source,
                "count": acc["count"],
                "proportion": acc["count"] / total,
                "avg_instruction_len": acc["ilen"] / acc["turns"],
                "avg_output_len": acc["olen"] / acc["turns"],
                "avg_turns": acc["turns"] / acc["count"],
            }
        )
    return rows
