"""Command-line front end.

Global flags (given before the subcommand) select the config file, seed,
and thread count; per-command flags override config values. Exit status:
0 success, 1 user error (bad input, bad flags, failed check), 2 internal
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, corpus, dedup, dialogue, embedding, judge, quantlora, tokenizer
from .config import load_config
from .errors import ConfigError, InputError, UserError, XLAdaptError
from .manifest import CorpusManifest
from .pipeline import run_pipeline


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are user errors, not exit 2
        raise ConfigError(message)


def _read_texts(path: str) -> list[str]:
    if path.endswith(".jsonl"):
        return [d.text for d in corpus.read_jsonl(path)]
    return Path(path).read_text(encoding="utf-8").splitlines()


def _load_tokenizer(args, cfg) -> tokenizer.Tokenizer:
    if getattr(args, "tokenizer", None):
        return tokenizer.Tokenizer.load(args.tokenizer, prefix_space=cfg.prefix_space)
    return tokenizer.Tokenizer(
        tokenizer.Vocabulary.byte_alphabet(), tokenizer.MergeTable(()),
        prefix_space=cfg.prefix_space,
    )


def _pick(value, fallback):
    return fallback if value is None else value


def cmd_tok(args, cfg) -> int:
    if args.action == "train":
        vocab, merges = tokenizer.train_bpe(
            _read_texts(args.corpus), _pick(args.vocab_size, cfg.vocab_size),
            prefix_space=cfg.prefix_space,
        )
        tokenizer.Tokenizer(vocab, merges, cfg.prefix_space).save(args.out)
        print(f"trained vocabulary of {vocab.size} tokens -> {args.out}")
    elif args.action == "merge":
        base = tokenizer.Tokenizer.load(args.base, prefix_space=cfg.prefix_space)
        ext = tokenizer.Tokenizer.load(args.extension, prefix_space=cfg.prefix_space)
        merged = tokenizer.merge_tokenizers(base, ext)
        merged.save(args.out)
        print(
            f"merged {base.vocab.size} + {ext.vocab.size} -> {merged.vocab.size} tokens"
        )
    elif args.action == "encode":
        tok = _load_tokenizer(args, cfg)
        text = args.text if args.text is not None else Path(args.file).read_text("utf-8")
        ids = tok.encode(text)
        if args.show_tokens:
            print(" ".join(tokenizer.display_token(tok.vocab.tokens[i]) for i in ids))
        else:
            print(" ".join(map(str, ids)))
    elif args.action == "decode":
        tok = _load_tokenizer(args, cfg)
        print(tok.decode([int(x) for x in args.ids.split()]))
    elif args.action == "efficiency":
        sentences = tokenizer.read_conllu(args.conllu)
        if args.char:
            encode = tokenizer.char_tokenizer
        else:
            encode = _load_tokenizer(args, cfg).encode
        print(f"{tokenizer.efficiency(sentences, encode):.4f}")
    return 0


def cmd_emb(args, cfg) -> int:
    if args.action == "resize":
        emb = embedding.EmbeddingMatrix.load(args.emb)
        out = embedding.resize(emb, args.rows, cfg.seed, _pick(args.init_std, cfg.init_std))
        out.save(args.out)
        print(f"resized {emb.rows}x{emb.dims} -> {out.rows}x{out.dims}")
    elif args.action == "ziptie":
        emb = embedding.EmbeddingMatrix.load(args.emb)
        base = tokenizer.Tokenizer.load(args.base_tokenizer, prefix_space=cfg.prefix_space)
        new_tokens = [
            tokenizer.parse_token(line)
            for line in Path(args.new_tokens).read_text("utf-8").splitlines()
            if line
        ]
        base_rows = base.vocab.size
        needed = base_rows + len(new_tokens)
        if emb.rows < needed:
            emb = embedding.resize(emb, needed, cfg.seed, cfg.init_std)
        plan = embedding.build_plan(
            [(base_rows + i, t) for i, t in enumerate(new_tokens)], base, base_rows
        )
        embedding.zip_tie_init(emb, plan).save(args.out)
        print(f"initialized {len(new_tokens)} rows -> {args.out}")
    return 0


def cmd_quant(args, cfg) -> int:
    if args.action == "pack":
        dense = embedding.EmbeddingMatrix.load(args.infile)
        q = quantlora.quantize(dense.data, _pick(args.block_size, cfg.block_size))
        q.save(args.out)
        print(f"packed {q.shape[0]}x{q.shape[1]} in {q.n_blocks} blocks")
    elif args.action == "unpack":
        q = quantlora.QuantizedBlockTensor.load(args.infile)
        embedding.EmbeddingMatrix(quantlora.double_dequant(q)).save(args.out)
        print(f"unpacked -> {args.out}")
    elif args.action == "check":
        dense = embedding.EmbeddingMatrix.load(args.dense)
        q = quantlora.QuantizedBlockTensor.load(args.quantized)
        restored = quantlora.double_dequant(q)
        if restored.shape != dense.data.shape:
            raise InputError("dense and quantized shapes differ")
        err = float(np.max(np.abs(dense.data - restored)))
        half_gap = quantlora.nf4_levels().half_max_gap()
        bound = float(np.max(q.c2_values())) * half_gap if q.n_blocks else 0.0
        tolerance = _pick(args.tolerance, bound)
        status = "PASS" if err <= tolerance else "FAIL"
        print(f"{status} max|err| = {err:.6g}, tolerance = {tolerance:.6g}")
        if status == "FAIL":
            raise InputError("round-trip error exceeds tolerance")
    return 0


def cmd_corpus(args, cfg) -> int:
    if args.action == "clean":
        docs = corpus.read_jsonl(args.infile)
        tok = _load_tokenizer(args, cfg)
        banned = corpus.load_banned_list(args.banned) if args.banned else None
        table = corpus.load_mapping_table(args.convert) if args.convert else None
        kept, manifest, report = corpus.clean_corpus(
            docs, tok.encode, banned=banned, table=table,
            min_tokens=_pick(args.min_tokens, cfg.min_tokens),
            strip=args.strip or cfg.strip_special,
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        corpus.write_jsonl(kept, out / "clean.jsonl")
        manifest.save(out / "clean_manifest.jsonl")
        print(f"kept {report.total_kept}/{report.total_in}; removals {dict(report.removed)}")
    elif args.action == "stats":
        records = _stats_records(args.infile)
        tok = _load_tokenizer(args, cfg) if args.tokenizer else None
        for row in corpus.corpus_stats(records, tok.encode if tok else None):
            print(
                f"{row['source'] or '(none)'}: n={row['count']} "
                f"prop={row['proportion']:.2%} "
                f"avg_instr={row['avg_instruction_len']:.1f} "
                f"avg_out={row['avg_output_len']:.1f} "
                f"avg_turns={row['avg_turns']:.2f}"
            )
    return 0


def _stats_records(path: str):
    import json

    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if "turns" in rec:
                    records.append(rec)
                else:
                    records.append(
                        corpus.Document(str(rec.get("id", len(records))), rec["text"],
                                        rec.get("meta", {}))
                    )
    return records


def cmd_dedup(args, cfg) -> int:
    if args.action == "fuzzy":
        docs = corpus.read_jsonl(args.infile)
        tok = _load_tokenizer(args, cfg)
        manifest = dedup.fuzzy_dedup(
            [(d.id, tok.encode(d.text)) for d in docs],
            threshold=_pick(args.threshold, cfg.threshold),
            perms=_pick(args.perms, cfg.perms),
            bands=_pick(args.bands, cfg.bands),
            seed=cfg.seed,
            threads=cfg.threads or 1,
        )
    else:
        points = dedup.load_points(args.vectors, args.ids)
        k = _pick(args.k, cfg.kmeans_k) or max(1, len(points) // 1000)
        manifest = dedup.semantic_dedup(
            points, k=k, seed=cfg.seed,
            epsilon=_pick(args.epsilon, cfg.epsilon),
            convention=_pick(args.convention, cfg.epsilon_convention),
        )
    manifest.save(args.out)
    print(f"kept {len(manifest.kept_ids())}, removed {len(manifest.removed_ids())}")
    return 0


def cmd_sft(args, cfg) -> int:
    if args.action == "render":
        dialogues = dialogue.load_dialogues(args.infile)
        tok = _load_tokenizer(args, cfg)
        max_len = _pick(args.max_len, cfg.context_len)
        samples = [
            dialogue.truncate(dialogue.render(d, tok, args.bos, args.eos), max_len,
                              keep=cfg.keep_side)
            for d in dialogues
        ]
        from .manifest import sha256_file

        header = {
            "bos": args.bos,
            "eos": args.eos,
            "max_len": max_len,
            "count": len(samples),
            "tokenizer_hash": sha256_file(Path(args.tokenizer) / "vocab.json")
            if args.tokenizer
            else "byte-level",
        }
        dialogue.save_rendered(samples, args.out, header)
        print(f"rendered {len(samples)} samples -> {args.out}")
    elif args.action == "concat":
        dialogues = dialogue.load_dialogues(args.infile)
        grouped = dialogue.concat_single_turn(dialogues, _pick(args.group, cfg.group_size))
        dialogue.save_dialogues(grouped, args.out)
        print(f"{len(dialogues)} singles -> {len(grouped)} dialogues")
    elif args.action == "stats":
        records = _stats_records(args.infile)
        tok = _load_tokenizer(args, cfg) if args.tokenizer else None
        for row in corpus.corpus_stats(records, tok.encode if tok else None):
            print(
                f"{row['source'] or '(none)'}: n={row['count']} "
                f"prop={row['proportion']:.2%} "
                f"avg_instr={row['avg_instruction_len']:.1f} "
                f"avg_out={row['avg_output_len']:.1f} "
                f"avg_turns={row['avg_turns']:.2f}"
            )
    return 0


def cmd_judge(args, cfg) -> int:
    records = judge.load_bench(args.bench)
    if args.expect_full_bench:
        judge.check_bench_shape(records)
    answers = judge.load_answers(args.answers)
    templates = {}
    for name in ("single", "multi", "reference"):
        path = Path(args.template_dir) / f"{name}.txt"
        if path.exists():
            templates[name] = path.read_text(encoding="utf-8")
    if not templates:
        raise InputError(f"no templates found in {args.template_dir}")
    if args.constant is not None:
        backend = judge.ConstantBackend(args.constant)
    elif args.backend:
        backend = judge.HttpJudgeBackend(args.backend, args.model)
    else:
        raise ConfigError("need --backend URL or --constant TEXT")
    verdicts, table = judge.run_eval(
        records, answers, backend, templates,
        out_path=args.out,
        pattern=_pick(args.pattern, cfg.score_pattern),
        threads=cfg.threads or 4,
        retries=cfg.retries,
        backoff=cfg.backoff,
    )
    print(table.as_text())
    if args.csv:
        table.save_csv(args.csv)
    return 0


def cmd_pipeline(args, cfg) -> int:
    manifest = run_pipeline(
        cfg, args.corpus, args.out,
        banned_path=args.banned, table_path=args.convert,
        tokenizer_dir=args.tokenizer, vectors_path=args.vectors, ids_path=args.ids,
        threads=cfg.threads or 1,
    )
    print(f"pipeline complete: {len(manifest.stages)} stages -> {args.out}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="xladapt", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="global random seed")
    p.add_argument("--threads", type=int, help="worker thread count")
    sub = p.add_subparsers(dest="command", required=True)

    tok = sub.add_parser("tok", help="tokenizer training and use")
    tok_sub = tok.add_subparsers(dest="action", required=True)
    t = tok_sub.add_parser("train")
    t.add_argument("--corpus", required=True)
    t.add_argument("--vocab-size", type=int, dest="vocab_size")
    t.add_argument("--out", required=True)
    t = tok_sub.add_parser("merge")
    t.add_argument("--base", required=True)
    t.add_argument("--extension", required=True)
    t.add_argument("--out", required=True)
    t = tok_sub.add_parser("encode")
    t.add_argument("--tokenizer")
    t.add_argument("--text")
    t.add_argument("--file")
    t.add_argument("--show-tokens", action="store_true", dest="show_tokens")
    t = tok_sub.add_parser("decode")
    t.add_argument("--tokenizer")
    t.add_argument("--ids", required=True)
    t = tok_sub.add_parser("efficiency")
    t.add_argument("--conllu", required=True)
    t.add_argument("--tokenizer")
    t.add_argument("--char", action="store_true")

    emb = sub.add_parser("emb", help="embedding files")
    emb_sub = emb.add_subparsers(dest="action", required=True)
    e = emb_sub.add_parser("resize")
    e.add_argument("--emb", required=True)
    e.add_argument("--rows", type=int, required=True)
    e.add_argument("--init-std", type=float, dest="init_std")
    e.add_argument("--out", required=True)
    e = emb_sub.add_parser("ziptie")
    e.add_argument("--emb", required=True)
    e.add_argument("--base-tokenizer", required=True, dest="base_tokenizer")
    e.add_argument("--new-tokens", required=True, dest="new_tokens")
    e.add_argument("--out", required=True)

    q = sub.add_parser("quant", help="4-bit tensor files")
    q_sub = q.add_subparsers(dest="action", required=True)
    qq = q_sub.add_parser("pack")
    qq.add_argument("--in", required=True, dest="infile")
    qq.add_argument("--block-size", type=int, dest="block_size")
    qq.add_argument("--out", required=True)
    qq = q_sub.add_parser("unpack")
    qq.add_argument("--in", required=True, dest="infile")
    qq.add_argument("--out", required=True)
    qq = q_sub.add_parser("check")
    qq.add_argument("--dense", required=True)
    qq.add_argument("--quantized", required=True)
    qq.add_argument("--tolerance", type=float)

    c = sub.add_parser("corpus", help="cleaning and statistics")
    c_sub = c.add_subparsers(dest="action", required=True)
    cc = c_sub.add_parser("clean")
    cc.add_argument("--in", required=True, dest="infile")
    cc.add_argument("--out", required=True)
    cc.add_argument("--banned")
    cc.add_argument("--convert")
    cc.add_argument("--min-tokens", type=int, dest="min_tokens")
    cc.add_argument("--strip", action="store_true")
    cc.add_argument("--tokenizer")
    cc = c_sub.add_parser("stats")
    cc.add_argument("--in", required=True, dest="infile")
    cc.add_argument("--tokenizer")

    d = sub.add_parser("dedup", help="near-duplicate removal")
    d_sub = d.add_subparsers(dest="action", required=True)
    dd = d_sub.add_parser("fuzzy")
    dd.add_argument("--in", required=True, dest="infile")
    dd.add_argument("--out", required=True)
    dd.add_argument("--threshold", type=float)
    dd.add_argument("--perms", type=int)
    dd.add_argument("--bands", type=int)
    dd.add_argument("--tokenizer")
    dd = d_sub.add_parser("semantic")
    dd.add_argument("--vectors", required=True)
    dd.add_argument("--ids", required=True)
    dd.add_argument("--out", required=True)
    dd.add_argument("--epsilon", type=float)
    dd.add_argument("--k", type=int)
    dd.add_argument("--convention", choices=["gap", "literal"])

    s = sub.add_parser("sft", help="dialogue rendering")
    s_sub = s.add_subparsers(dest="action", required=True)
    ss = s_sub.add_parser("render")
    ss.add_argument("--in", required=True, dest="infile")
    ss.add_argument("--tokenizer")
    ss.add_argument("--bos", type=int, required=True)
    ss.add_argument("--eos", type=int, required=True)
    ss.add_argument("--max-len", type=int, dest="max_len")
    ss.add_argument("--out", required=True)
    ss = s_sub.add_parser("concat")
    ss.add_argument("--in", required=True, dest="infile")
    ss.add_argument("--group", type=int)
    ss.add_argument("--out", required=True)
    ss = s_sub.add_parser("stats")
    ss.add_argument("--in", required=True, dest="infile")
    ss.add_argument("--tokenizer")

    j = sub.add_parser("judge", help="model-graded evaluation")
    j.add_argument("--bench", required=True)
    j.add_argument("--answers", required=True)
    j.add_argument("--template-dir", required=True, dest="template_dir")
    j.add_argument("--out", required=True)
    j.add_argument("--backend", help="judge endpoint URL")
    j.add_argument("--model", default="judge")
    j.add_argument("--constant", help="fixed reply text instead of a live backend")
    j.add_argument("--pattern")
    j.add_argument("--csv")
    j.add_argument("--expect-full-bench", action="store_true", dest="expect_full_bench")

    pl = sub.add_parser("pipeline", help="clean -> fuzzy -> semantic")
    pl.add_argument("--corpus", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--banned")
    pl.add_argument("--convert")
    pl.add_argument("--tokenizer")
    pl.add_argument("--vectors")
    pl.add_argument("--ids")

    return p


_HANDLERS = {
    "tok": cmd_tok,
    "emb": cmd_emb,
    "quant": cmd_quant,
    "corpus": cmd_corpus,
    "dedup": cmd_dedup,
    "sft": cmd_sft,
    "judge": cmd_judge,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, {"seed": args.seed, "threads": args.threads})
        return _HANDLERS[args.command](args, cfg)
    except UserError as exc:
        print(f"xladapt: error: {exc}", file=sys.stderr)
        return 1
    except XLAdaptError as exc:
        print(f"xladapt: internal error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"xladapt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
