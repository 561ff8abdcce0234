"""Corpus curation pipeline: cleaning passes, then fuzzy dedup, then
semantic dedup, with a digest manifest for reproducibility checks.

Every stage writes its outputs before the next stage starts, so a failed
stage leaves earlier outputs intact. The run manifest contains only
deterministic data (config hash, input and output digests); wall-clock
timings and the thread count live in a sidecar run log, so manifests of
reruns compare bit-identical regardless of parallelism.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from . import __version__, corpus, dedup, tokenizer
from .config import RunConfig
from .errors import InputError
from .manifest import RunManifest, sha256_file


def _byte_tokenizer() -> tokenizer.Tokenizer:
    return tokenizer.Tokenizer(
        tokenizer.Vocabulary.byte_alphabet(), tokenizer.MergeTable(()), prefix_space=True
    )


def run_pipeline(
    cfg: RunConfig,
    corpus_path: str | Path,
    out_dir: str | Path,
    banned_path: str | Path | None = None,
    table_path: str | Path | None = None,
    tokenizer_dir: str | Path | None = None,
    vectors_path: str | Path | None = None,
    ids_path: str | Path | None = None,
    threads: int | None = None,
) -> RunManifest:
    """Run clean -> fuzzy -> semantic over a JSONL corpus.

    The semantic stage needs an embedding vectors file with an id
    sidecar; without one it is skipped (and so recorded).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else (cfg.threads or 1)

    manifest = RunManifest(cfg.hash(), cfg.seed, __version__)
    log = {"stages": {}, "threads": threads}

    inputs = {"corpus": corpus_path, "banned": banned_path, "table": table_path,
              "vectors": vectors_path, "ids": ids_path}
    for name, path in inputs.items():
        if path is not None:
            manifest.inputs[name] = sha256_file(path)
    if tokenizer_dir is not None:
        manifest.inputs["tokenizer/vocab"] = sha256_file(Path(tokenizer_dir) / "vocab.json")
        manifest.inputs["tokenizer/merges"] = sha256_file(Path(tokenizer_dir) / "merges.txt")

    tok = (
        tokenizer.Tokenizer.load(tokenizer_dir, prefix_space=cfg.prefix_space)
        if tokenizer_dir is not None
        else _byte_tokenizer()
    )
    banned = corpus.load_banned_list(banned_path) if banned_path else None
    table = corpus.load_mapping_table(table_path) if table_path else None

    def finish_stage(name: str, started: float, outputs: dict[str, Path]) -> None:
        manifest.add_stage(name, {k: sha256_file(p) for k, p in outputs.items()})
        log["stages"][name] = {"seconds": time.monotonic() - started}

    # stage: clean
    t0 = time.monotonic()
    docs = corpus.read_jsonl(corpus_path)
    kept, clean_manifest, report = corpus.clean_corpus(
        docs, tok.encode, banned=banned, table=table,
        min_tokens=cfg.min_tokens, strip=cfg.strip_special,
    )
    clean_docs_path = out_dir / "clean.jsonl"
    clean_manifest_path = out_dir / "clean_manifest.jsonl"
    corpus.write_jsonl(kept, clean_docs_path)
    clean_manifest.save(clean_manifest_path)
    finish_stage("clean", t0, {"docs": clean_docs_path, "manifest": clean_manifest_path})

    # stage: fuzzy dedup
    t0 = time.monotonic()
    shingle_sets = [dedup.shingle_tokens(d.id, tok.encode(d.text)) for d in kept]
    fuzzy_manifest = dedup.fuzzy_dedup(
        shingle_sets, threshold=cfg.threshold,
        perms=cfg.perms, bands=cfg.bands, seed=cfg.seed, threads=threads,
    )
    survivors = set(fuzzy_manifest.kept_ids())
    fuzzy_docs = [d for d in kept if d.id in survivors]
    fuzzy_docs_path = out_dir / "fuzzy.jsonl"
    fuzzy_manifest_path = out_dir / "fuzzy_manifest.jsonl"
    corpus.write_jsonl(fuzzy_docs, fuzzy_docs_path)
    fuzzy_manifest.save(fuzzy_manifest_path)
    finish_stage("fuzzy", t0, {"docs": fuzzy_docs_path, "manifest": fuzzy_manifest_path})

    # stage: semantic dedup
    if vectors_path is not None:
        if ids_path is None:
            raise InputError("semantic stage needs --ids alongside --vectors")
        t0 = time.monotonic()
        points = dedup.load_points(vectors_path, ids_path)
        by_id = {p.doc_id: p for p in points}
        missing = [d.id for d in fuzzy_docs if d.id not in by_id]
        if missing:
            raise InputError(f"vectors file lacks embeddings for {len(missing)} documents")
        alive = [by_id[d.id] for d in fuzzy_docs]
        k = cfg.kmeans_k or max(1, len(alive) // 1000)
        sem_manifest = dedup.semantic_dedup(
            alive, k=k, seed=cfg.seed, epsilon=cfg.epsilon, convention=cfg.epsilon_convention
        )
        sem_survivors = set(sem_manifest.kept_ids())
        final_docs = [d for d in fuzzy_docs if d.id in sem_survivors]
        final_docs_path = out_dir / "final.jsonl"
        sem_manifest_path = out_dir / "semantic_manifest.jsonl"
        corpus.write_jsonl(final_docs, final_docs_path)
        sem_manifest.save(sem_manifest_path)
        finish_stage("semantic", t0, {"docs": final_docs_path, "manifest": sem_manifest_path})

    manifest_path = out_dir / "run_manifest.json"
    manifest.save(manifest_path)
    (out_dir / "run_log.json").write_text(
        json.dumps(log, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest
