"""Shared fixtures: a synthetic word-segmented treebank sized and shaped
like the Traditional Chinese UD subset, and small trained tokenizers.

The treebank generator draws word lengths from a distribution whose mean
(about 1.588 characters per word) matches published segmentation
statistics for that corpus, so the character-level efficiency ratio lands
where the real data puts it. Point XLADAPT_GSD_FILE at a real .conllu
file to run the efficiency check against actual treebank data instead.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from xladapt import tokenizer as tk

WORD_LENGTH_P = (0.4757, 0.47, 0.045, 0.0093)
N_SENTENCES = 4997


def write_synthetic_treebank(path: Path, n_sentences: int = N_SENTENCES, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    sent_lens = rng.integers(8, 30, size=n_sentences)
    total_words = int(sent_lens.sum())
    word_lens = rng.choice([1, 2, 3, 4], size=total_words, p=WORD_LENGTH_P)
    chars = rng.integers(0x4E00, 0x4E00 + 3000, size=int(word_lens.sum()))

    lines = []
    w = 0
    c = 0
    for s in range(n_sentences):
        words = []
        for _ in range(int(sent_lens[s])):
            n = int(word_lens[w])
            words.append("".join(chr(int(x)) for x in chars[c : c + n]))
            c += n
            w += 1
        lines.append(f"# sent_id = s{s}")
        lines.append(f"# text = {''.join(words)}")
        for i, word in enumerate(words, 1):
            head = 0 if i == 1 else 1
            lines.append(f"{i}\t{word}\t_\t_\t_\t_\t{head}\t_\t_\t_")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


@pytest.fixture(scope="session")
def gsd_conllu(tmp_path_factory) -> Path:
    real = os.environ.get("XLADAPT_GSD_FILE")
    if real:
        return Path(real)
    path = tmp_path_factory.mktemp("treebank") / "zh_synth.conllu"
    write_synthetic_treebank(path)
    return path


@pytest.fixture(scope="session")
def small_tokenizer() -> tk.Tokenizer:
    """BPE trained on a tiny mixed-script corpus; 300 tokens."""
    corpus = [
        "the cat sat on the mat",
        "the dog sat on the log",
        "物理學對於人類文明有顯著的貢獻",
        "通過創建新理論與發展新科技",
        "hello world hello tokens",
    ] * 3
    vocab, merges = tk.train_bpe(corpus, 300)
    return tk.Tokenizer(vocab, merges)


@pytest.fixture()
def byte_tokenizer() -> tk.Tokenizer:
    return tk.Tokenizer(tk.Vocabulary.byte_alphabet(), tk.MergeTable(()))
