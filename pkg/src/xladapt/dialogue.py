"""Multi-turn dialogue rendering for supervised fine-tuning, loss masks
restricted to output spans, single-turn concatenation, and next-token
loss evaluation against an abstract predictor.

Template: one BOS opens the stream, then every segment (instruction or
output) is followed by EOS:

    BOS i1 EOS o1 EOS i2 EOS o2 EOS ...

The loss mask is true exactly on output tokens and the EOS closing each
output; instructions, their EOS, and BOS stay unmasked. The predictor
contract is a callable from a token-id prefix to a normalized probability
distribution over the vocabulary, which keeps every test model-free.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InputError, ModelContractError

DEFAULT_MAX_LEN = 2048

Predictor = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class Dialogue:
    """Ordered (instruction, output) turns; instructions must be non-empty."""

    turns: tuple[tuple[str, str], ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple((i, o) for i, o in self.turns))
        if not self.turns:
            raise InputError("dialogue has no turns")
        for n, (instruction, _) in enumerate(self.turns, 1):
            if not instruction:
                raise InputError(f"turn {n} has an empty instruction")


@dataclass(frozen=True)
class TokenizedSample:
    token_ids: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    # per turn: ((instr_start, instr_end), (out_start, out_end)), half-open,
    # content tokens only; the EOS after an output sits at out_end.
    turn_spans: tuple[tuple[tuple[int, int], tuple[int, int]], ...]

    def __post_init__(self):
        if len(self.token_ids) != len(self.loss_mask):
            raise InputError("token ids and loss mask lengths differ")


def render(dialogue: Dialogue, tokenizer, bos: int, eos: int) -> TokenizedSample:
    """Tokenize a dialogue into the template stream with its loss mask."""
    ids: list[int] = [bos]
    mask: list[bool] = [False]
    spans = []
    for instruction, output in dialogue.turns:
        i_start = len(ids)
        ids.extend(tokenizer.encode(instruction))
        i_end = len(ids)
        ids.append(eos)
        mask.extend([False] * (i_end - i_start + 1))
        o_start = len(ids)
        ids.extend(tokenizer.encode(output))
        o_end = len(ids)
        ids.append(eos)
        mask.extend([True] * (o_end - o_start + 1))
        spans.append(((i_start, i_end), (o_start, o_end)))
    return TokenizedSample(tuple(ids), tuple(mask), tuple(spans))


def concat_single_turn(dialogues: Sequence[Dialogue], group_size: int) -> list[Dialogue]:
    """Merge consecutive single-turn dialogues into multi-turn groups."""
    if group_size < 1:
        raise ConfigError(f"group_size must be >= 1, got {group_size}")
    for d in dialogues:
        if len(d.turns) != 1:
            raise InputError("concat_single_turn expects single-turn dialogues")
    out = []
    for i in range(0, len(dialogues), group_size):
        group = dialogues[i : i + group_size]
        out.append(Dialogue(tuple(t for d in group for t in d.turns), group[0].source))
    return out


def truncate(sample: TokenizedSample, max_len: int = DEFAULT_MAX_LEN, keep: str = "prefix") -> TokenizedSample:
    """Cut a sample to max_len tokens, clipping spans to stay in range."""
    n = len(sample.token_ids)
    if n <= max_len:
        return sample
    if keep == "prefix":
        clip = lambda s, e: (min(s, max_len), min(e, max_len))
        ids = sample.token_ids[:max_len]
        mask = sample.loss_mask[:max_len]
    elif keep == "tail":
        off = n - max_len
        clip = lambda s, e: (max(s - off, 0), max(e - off, 0))
        ids = sample.token_ids[off:]
        mask = sample.loss_mask[off:]
    else:
        raise ConfigError(f"keep must be 'prefix' or 'tail', got {keep!r}")
    spans = tuple((clip(*i_span), clip(*o_span)) for i_span, o_span in sample.turn_spans)
    return TokenizedSample(ids, mask, spans)


def _check_distribution(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    total = float(dist.sum())
    if abs(total - 1.0) > 1e-6:
        raise ModelContractError(f"predictor distribution sums to {total!r}, not 1")
    return dist


def clm_loss(token_ids: Sequence[int], predictor: Predictor) -> float:
    """Mean next-token negative log-likelihood from the second token on."""
    if len(token_ids) < 2:
        raise InputError("need at least 2 tokens for a next-token loss")
    total = 0.0
    count = 0
    for i in range(1, len(token_ids)):
        dist = _check_distribution(predictor(token_ids[:i]))
        with np.errstate(divide="ignore"):
            total += -float(np.log(dist[token_ids[i]]))
        count += 1
    return total / count


def sft_loss(sample: TokenizedSample, predictor: Predictor) -> float:
    """Mean negative log-likelihood over masked (output) positions only.

    The predictor is consulted only at masked positions, so its behavior
    on instruction positions cannot affect the value.
    """
    positions = [i for i, m in enumerate(sample.loss_mask) if m]
    if not positions:
        raise InputError("sample has an all-false loss mask")
    total = 0.0
    for i in positions:
        dist = _check_distribution(predictor(sample.token_ids[:i]))
        with np.errstate(divide="ignore"):
            total += -float(np.log(dist[sample.token_ids[i]]))
    return total / len(positions)


def load_dialogues(path: str | Path) -> list[Dialogue]:
    """Read JSONL records {"turns": [{"instruction", "output"}], "source"}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            if "turns" not in rec:
                raise FormatError(f"{path}: line {lineno}: record needs 'turns'")
            turns = tuple(
                (t.get("instruction", ""), t.get("output", "")) for t in rec["turns"]
            )
            out.append(Dialogue(turns, rec.get("source", "")))
    return out


def save_dialogues(dialogues: Sequence[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            rec = {
                "turns": [{"instruction": i, "output": o} for i, o in d.turns],
                "source": d.source,
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def save_rendered(
    samples: Sequence[TokenizedSample], path: str | Path, header: dict
) -> None:
    """Binary record stream: JSON header line, then per sample a u32
    token count, u32 token ids, and one mask byte per token."""
    with open(path, "wb") as fh:
        fh.write(json.dumps(dict(sorted(header.items())), ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for s in samples:
            n = len(s.token_ids)
            fh.write(struct.pack("<I", n))
            fh.write(struct.pack(f"<{n}I", *s.token_ids))
            fh.write(bytes(1 if m else 0 for m in s.loss_mask))


def load_rendered(path: str | Path) -> tuple[list[TokenizedSample], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    header = json.loads(raw[:nl].decode("utf-8"))
    samples = []
    pos = nl + 1
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise FormatError(f"{path}: truncated record length")
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + 5 * n > len(raw):
            raise FormatError(f"{path}: truncated record body")
        ids = struct.unpack_from(f"<{n}I", raw, pos)
        pos += 4 * n
        mask = tuple(b == 1 for b in raw[pos : pos + n])
        pos += n
        samples.append(TokenizedSample(ids, mask, ()))
    return samples, header
