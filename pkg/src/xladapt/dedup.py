"""Near-duplicate removal: MinHash signatures with banded LSH for fuzzy
matching, and k-means plus within-cluster cosine thresholding for
semantic duplicates.

Signature agreement (matching positions / permutations) estimates Jaccard
similarity; a document is removed when its estimate against an already
kept document reaches the threshold, so at least one member of every
duplicate group survives. Semantic dedup removes a point when an earlier
point in the same cluster is within the cosine threshold; the rule is a
pure pairwise predicate, so input order within a cluster does not matter.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EmbeddingMatrix
from .errors import ConfigError, FormatError, InputError
from .manifest import CorpusManifest

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

DEFAULT_PERMS = 256
DEFAULT_BANDS = 32
DEFAULT_THRESHOLD = 0.8
DEFAULT_EPSILON = 0.1


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Scramble 64-bit integers; decorrelates structured shingle ids."""
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class HashFamily:
    """Seeded multiply-add family over scrambled 64-bit inputs."""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def build(cls, perms: int = DEFAULT_PERMS, seed: int = 0) -> "HashFamily":
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 2**64, size=perms, dtype=np.uint64) | np.uint64(1)
        b = rng.integers(0, 2**64, size=perms, dtype=np.uint64)
        return cls(a, b)

    def __len__(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class ShingleSet:
    doc_id: str
    shingles: frozenset[int]


def shingle_tokens(doc_id: str, token_ids) -> ShingleSet:
    """Token-level 1-gram set representation of a document."""
    return ShingleSet(doc_id, frozenset(int(t) for t in token_ids))


@dataclass(frozen=True)
class MinHashSignature:
    doc_id: str
    sig: np.ndarray  # uint64, one per permutation


def minhash(shingles: ShingleSet, family: HashFamily) -> MinHashSignature:
    if not shingles.shingles:
        raise InputError(f"document {shingles.doc_id!r} has an empty shingle set")
    u = _splitmix64(np.fromiter(sorted(shingles.shingles), dtype=np.uint64))
    with np.errstate(over="ignore"):
        table = family.a[:, None] * u[None, :] + family.b[:, None]
    return MinHashSignature(shingles.doc_id, table.min(axis=1))


def estimate_jaccard(x: MinHashSignature, y: MinHashSignature) -> float:
    if x.sig.shape != y.sig.shape:
        raise ConfigError("signatures built with different permutation counts")
    return float(np.mean(x.sig == y.sig))


class LshIndex:
    """Banded buckets over signatures; single-writer build, read-safe after."""

    def __init__(self, bands: int = DEFAULT_BANDS, rows_per_band: int | None = None,
                 perms: int = DEFAULT_PERMS):
        if perms % bands != 0:
            raise ConfigError(f"{perms} permutations do not split into {bands} bands")
        self.bands = bands
        self.rows_per_band = rows_per_band or perms // bands
        if self.bands * self.rows_per_band != perms:
            raise ConfigError(
                f"bands {bands} x rows {self.rows_per_band} != signature length {perms}"
            )
        self.perms = perms
        self.buckets: list[dict[bytes, list[str]]] = [{} for _ in range(bands)]

    def _keys(self, sig: MinHashSignature):
        if sig.sig.shape[0] != self.perms:
            raise ConfigError(
                f"signature length {sig.sig.shape[0]} does not match index ({self.perms})"
            )
        r = self.rows_per_band
        for band in range(self.bands):
            yield band, sig.sig[band * r : (band + 1) * r].tobytes()

    def add(self, sig: MinHashSignature) -> None:
        for band, key in self._keys(sig):
            self.buckets[band].setdefault(key, []).append(sig.doc_id)


def lsh_candidates(index: LshIndex, sig: MinHashSignature) -> list[str]:
    """Doc ids sharing at least one band bucket, in first-seen order."""
    seen: dict[str, None] = {}
    for band, key in index._keys(sig):
        for doc_id in index.buckets[band].get(key, ()):
            if doc_id != sig.doc_id:
                seen.setdefault(doc_id)
    return list(seen)


def fuzzy_dedup(
    corpus,
    threshold: float = DEFAULT_THRESHOLD,
    perms: int = DEFAULT_PERMS,
    bands: int = DEFAULT_BANDS,
    seed: int = 0,
    threads: int = 1,
) -> CorpusManifest:
    """Remove later documents whose estimated Jaccard against a kept
    document reaches the threshold.

    corpus: iterable of ShingleSet or (doc_id, token_ids) pairs, in
    stable corpus order. Comparing only against kept documents makes the
    removal reason always point at a surviving document. Signatures are
    order-independent, so threads > 1 computes them in parallel without
    changing the result.
    """
    family = HashFamily.build(perms, seed)
    index = LshIndex(bands, perms=perms)
    manifest = CorpusManifest()
    kept_sigs: dict[str, MinHashSignature] = {}
    kept_order: dict[str, int] = {}

    items = [
        item if isinstance(item, ShingleSet) else shingle_tokens(item[0], item[1])
        for item in corpus
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sigs = list(pool.map(lambda s: minhash(s, family), items))
    else:
        sigs = [minhash(s, family) for s in items]

    for sh, sig in zip(items, sigs):
        best_id = None
        best_est = -1.0
        for cand in lsh_candidates(index, sig):
            est = estimate_jaccard(sig, kept_sigs[cand])
            if est >= threshold and (
                est > best_est or (est == best_est and kept_order[cand] < kept_order[best_id])
            ):
                best_id, best_est = cand, est
        if best_id is not None:
            manifest.remove(sh.doc_id, f"fuzzy-dup-of:{best_id}", score=best_est)
        else:
            manifest.keep(sh.doc_id)
            kept_order[sh.doc_id] = len(kept_sigs)
            kept_sigs[sh.doc_id] = sig
            index.add(sig)
    return manifest


@dataclass
class EmbeddingPoint:
    """Unit-normalized embedding vector for one document."""

    doc_id: str
    vector: np.ndarray
    order: int
    cluster_id: int | None = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0 or not np.isfinite(norm):
            raise InputError(f"document {self.doc_id!r} has a degenerate embedding vector")
        self.vector = v / norm


def load_points(emb_path: str | Path, ids_path: str | Path) -> list[EmbeddingPoint]:
    """Read vectors from an embedding file plus a JSONL id sidecar."""
    matrix = EmbeddingMatrix.load(emb_path)
    ids = []
    with open(ids_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "id" not in rec:
                raise FormatError(f"{ids_path}: line {lineno}: record needs 'id'")
            ids.append(str(rec["id"]))
    if len(ids) != matrix.rows:
        raise FormatError(
            f"id sidecar lists {len(ids)} rows but embedding file has {matrix.rows}"
        )
    return [EmbeddingPoint(doc_id, matrix.data[i], order=i) for i, doc_id in enumerate(ids)]


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    objective_history: list[float] = field(default_factory=list)


def kmeans(points: list[EmbeddingPoint], k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Deterministic Lloyd's iterations with maximin (farthest-point) init.

    Sets cluster_id on every point. Ties in assignment go to the lowest
    cluster index; an emptied cluster is reseeded to the point farthest
    from its current centroid, which cannot increase the objective.
    """
    n = len(points)
    if k < 1 or k > n:
        raise ConfigError(f"k = {k} outside 1..{n}")
    dims = {p.vector.shape[0] for p in points}
    if len(dims) != 1:
        raise ConfigError(f"points have mixed dimensions {sorted(dims)}")
    X = np.stack([p.vector for p in points])

    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    chosen = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    centroids = X[chosen].copy()

    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist, axis=1)
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
            else:
                worst = int(np.argmax(dist[np.arange(n), new_assign]))
                centroids[c] = X[worst]
                new_assign[worst] = c
                dist[worst] = 0.0  # cannot be chosen again by a later empty cluster
        history.append(float(np.sum((X - centroids[new_assign]) ** 2)))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
    for p, c in zip(points, assignments):
        p.cluster_id = int(c)
    return KMeansResult(assignments, centroids, history)


def semdedup(
    points: list[EmbeddingPoint],
    epsilon: float = DEFAULT_EPSILON,
    convention: str = "gap",
) -> CorpusManifest:
    """Within-cluster cosine dedup; earliest point of a duplicate pair wins.

    convention "gap": duplicates at cosine >= 1 - epsilon (the usual
    semantic-dedup reading). convention "literal": duplicates at
    cosine >= epsilon. A point is removed when any earlier same-cluster
    point qualifies; the reported pair is the most similar one.
    """
    if convention == "gap":
        cutoff = 1.0 - epsilon
    elif convention == "literal":
        cutoff = epsilon
    else:
        raise ConfigError(f"unknown epsilon convention {convention!r}")
    for p in points:
        if p.cluster_id is None:
            raise InputError(f"point {p.doc_id!r} has no cluster assignment")

    decisions: dict[int, tuple[str | None, float]] = {}
    clusters: dict[int, list[EmbeddingPoint]] = {}
    for p in points:
        clusters.setdefault(p.cluster_id, []).append(p)

    for members in clusters.values():
        members = sorted(members, key=lambda p: p.order)
        V = np.stack([p.vector for p in members])
        sims = V @ V.T
        for j in range(len(members)):
            dup_of, best = None, -np.inf
            for i in range(j):
                if sims[i, j] >= cutoff and sims[i, j] > best:
                    dup_of, best = members[i].doc_id, float(sims[i, j])
            decisions[members[j].order] = (dup_of, best)

    manifest = CorpusManifest()
    for p in sorted(points, key=lambda p: p.order):
        dup_of, score = decisions[p.order]
        if dup_of is None:
            manifest.keep(p.doc_id)
        else:
            manifest.remove(p.doc_id, f"semantic-dup-of:{dup_of}", score=score)
    return manifest


def semantic_dedup(
    points: list[EmbeddingPoint],
    k: int | None = None,
    seed: int = 0,
    epsilon: float = DEFAULT_EPSILON,
    convention: str = "gap",
) -> CorpusManifest:
    """Cluster then dedup; k defaults to one cluster per 1000 points."""
    if k is None:
        k = max(1, len(points) // 1000)
    kmeans(points, k, seed=seed)
    return semdedup(points, epsilon=epsilon, convention=convention)
