"""MinHash/LSH fuzzy dedup and k-means/cosine semantic dedup tests."""

from __future__ import annotations

import numpy as np
import pytest

from xladapt import dedup as dd
from xladapt.errors import ConfigError, FormatError, InputError


def make_set(doc_id, ids):
    return dd.shingle_tokens(doc_id, ids)


def overlap_pair(shared, unique_each, rng):
    """Two shingle sets with exact Jaccard shared/(shared + 2*unique_each)."""
    pool = rng.choice(10**6, size=shared + 2 * unique_each, replace=False)
    common = pool[:shared]
    a = np.concatenate([common, pool[shared : shared + unique_each]])
    b = np.concatenate([common, pool[shared + unique_each :]])
    return a, b


class TestMinHash:
    def test_empty_set_rejected(self):
        with pytest.raises(InputError):
            dd.minhash(make_set("a", []), dd.HashFamily.build(16))

    def test_family_is_seeded_and_odd(self):
        fam1 = dd.HashFamily.build(64, seed=3)
        fam2 = dd.HashFamily.build(64, seed=3)
        assert np.array_equal(fam1.a, fam2.a) and np.array_equal(fam1.b, fam2.b)
        assert np.all(fam1.a % 2 == 1)

    def test_identical_sets_identical_signatures(self):
        fam = dd.HashFamily.build(64)
        s1 = dd.minhash(make_set("a", [5, 9, 2]), fam)
        s2 = dd.minhash(make_set("b", [2, 5, 9]), fam)
        assert np.array_equal(s1.sig, s2.sig)
        assert dd.estimate_jaccard(s1, s2) == 1.0

    def test_signature_independent_of_token_multiplicity(self):
        fam = dd.HashFamily.build(64)
        s1 = dd.minhash(make_set("a", [5, 5, 9, 2, 2]), fam)
        s2 = dd.minhash(make_set("b", [5, 9, 2]), fam)
        assert np.array_equal(s1.sig, s2.sig)

    def test_mismatched_perm_counts_rejected(self):
        s1 = dd.minhash(make_set("a", [1, 2]), dd.HashFamily.build(32))
        s2 = dd.minhash(make_set("b", [1, 2]), dd.HashFamily.build(64))
        with pytest.raises(ConfigError):
            dd.estimate_jaccard(s1, s2)

    @pytest.mark.parametrize("shared,unique,expected", [(80, 10, 0.8), (50, 50, 1 / 3)])
    def test_estimate_tracks_exact_jaccard(self, shared, unique, expected):
        rng = np.random.default_rng(shared)
        a, b = overlap_pair(shared, unique, rng)
        fam = dd.HashFamily.build(256, seed=0)
        est = dd.estimate_jaccard(
            dd.minhash(make_set("a", a), fam), dd.minhash(make_set("b", b), fam)
        )
        # sd at 256 permutations is about 0.03; allow five of them.
        assert abs(est - expected) < 0.15


class TestLsh:
    def test_bands_must_divide_perms(self):
        with pytest.raises(ConfigError):
            dd.LshIndex(bands=3, perms=256)

    def test_wrong_signature_length_rejected(self):
        index = dd.LshIndex(bands=4, perms=32)
        sig = dd.minhash(make_set("a", [1]), dd.HashFamily.build(64))
        with pytest.raises(ConfigError):
            index.add(sig)

    def test_identical_docs_are_candidates(self):
        fam = dd.HashFamily.build(32)
        index = dd.LshIndex(bands=4, perms=32)
        s1 = dd.minhash(make_set("a", [1, 2, 3]), fam)
        s2 = dd.minhash(make_set("b", [1, 2, 3]), fam)
        index.add(s1)
        assert dd.lsh_candidates(index, s2) == ["a"]

    def test_self_excluded(self):
        fam = dd.HashFamily.build(32)
        index = dd.LshIndex(bands=4, perms=32)
        sig = dd.minhash(make_set("a", [1, 2, 3]), fam)
        index.add(sig)
        assert dd.lsh_candidates(index, sig) == []

    def test_disjoint_docs_rarely_collide(self):
        fam = dd.HashFamily.build(256)
        index = dd.LshIndex(bands=32, perms=256)
        rng = np.random.default_rng(1)
        index.add(dd.minhash(make_set("a", rng.choice(10**6, 200, replace=False)), fam))
        sig = dd.minhash(make_set("b", rng.choice(10**6, 200, replace=False)), fam)
        assert dd.lsh_candidates(index, sig) == []


class TestFuzzyDedup:
    def test_exact_duplicate_removed_first_kept(self):
        docs = [("a", [1, 2, 3]), ("b", [1, 2, 3]), ("c", [9, 10, 11])]
        manifest = dd.fuzzy_dedup(docs)
        assert manifest.kept_ids() == ["a", "c"]
        entry = manifest.entries[1]
        assert entry.reason == "fuzzy-dup-of:a"
        assert entry.score == 1.0

    def test_duplicates_compare_against_kept_survivor(self):
        docs = [("a", [1, 2, 3]), ("b", [1, 2, 3]), ("c", [1, 2, 3])]
        manifest = dd.fuzzy_dedup(docs)
        reasons = [e.reason for e in manifest.entries if e.action == "remove"]
        assert reasons == ["fuzzy-dup-of:a", "fuzzy-dup-of:a"]

    def test_distinct_docs_all_kept(self):
        rng = np.random.default_rng(2)
        docs = [(f"d{i}", rng.choice(10**6, 100, replace=False)) for i in range(20)]
        manifest = dd.fuzzy_dedup(docs)
        assert len(manifest.kept_ids()) == 20

    def test_threshold_respected(self):
        rng = np.random.default_rng(3)
        a, b = overlap_pair(50, 50, rng)  # exact Jaccard 1/3
        manifest = dd.fuzzy_dedup([("a", a), ("b", b)], threshold=0.8)
        assert manifest.kept_ids() == ["a", "b"]

    def test_thread_count_does_not_change_result(self):
        rng = np.random.default_rng(4)
        docs = []
        for i in range(30):
            base = rng.choice(10**6, 120, replace=False)
            docs.append((f"d{i}", base))
            if i % 3 == 0:
                docs.append((f"d{i}dup", base.copy()))
        m1 = dd.fuzzy_dedup(docs, threads=1)
        m4 = dd.fuzzy_dedup(docs, threads=4)
        assert [e.to_json() for e in m1.entries] == [e.to_json() for e in m4.entries]

    def test_accepts_shingle_sets(self):
        manifest = dd.fuzzy_dedup([make_set("a", [1, 2]), make_set("b", [1, 2])])
        assert manifest.removed_ids() == ["b"]


class TestEmbeddingPoints:
    def test_zero_vector_rejected(self):
        with pytest.raises(InputError):
            dd.EmbeddingPoint("a", np.zeros(4), order=0)

    def test_normalized_to_unit(self):
        p = dd.EmbeddingPoint("a", np.array([3.0, 4.0]), order=0)
        assert abs(np.linalg.norm(p.vector) - 1.0) < 1e-12

    def test_load_points_row_mismatch(self, tmp_path):
        from xladapt.embedding import EmbeddingMatrix

        EmbeddingMatrix(np.ones((3, 2), np.float32)).save(tmp_path / "v.bin")
        (tmp_path / "ids.jsonl").write_text('{"id":"a"}\n{"id":"b"}\n')
        with pytest.raises(FormatError):
            dd.load_points(tmp_path / "v.bin", tmp_path / "ids.jsonl")

    def test_load_points_round_trip(self, tmp_path):
        from xladapt.embedding import EmbeddingMatrix

        rng = np.random.default_rng(5)
        EmbeddingMatrix(rng.normal(size=(3, 4)).astype(np.float32)).save(tmp_path / "v.bin")
        (tmp_path / "ids.jsonl").write_text('{"id":"a"}\n{"id":"b"}\n{"id":"c"}\n')
        points = dd.load_points(tmp_path / "v.bin", tmp_path / "ids.jsonl")
        assert [p.doc_id for p in points] == ["a", "b", "c"]
        assert [p.order for p in points] == [0, 1, 2]


def blob_points(rng, centers, per_blob, noise=0.05):
    points = []
    order = 0
    for c, center in enumerate(centers):
        for _ in range(per_blob):
            v = center + rng.normal(0, noise, size=len(center))
            points.append(dd.EmbeddingPoint(f"p{order}", v, order=order))
            order += 1
    return points


class TestKMeans:
    CENTERS = [np.array([10.0, 0.0, 0.0]), np.array([0.0, 10.0, 0.0]), np.array([0.0, 0.0, 10.0])]

    def test_k_out_of_range(self):
        points = blob_points(np.random.default_rng(0), self.CENTERS, 2)
        with pytest.raises(ConfigError):
            dd.kmeans(points, 0)
        with pytest.raises(ConfigError):
            dd.kmeans(points, 7)

    def test_mixed_dimensions_rejected(self):
        points = [
            dd.EmbeddingPoint("a", np.ones(3), 0),
            dd.EmbeddingPoint("b", np.ones(4), 1),
        ]
        with pytest.raises(ConfigError):
            dd.kmeans(points, 1)

    def test_recovers_separated_blobs(self):
        rng = np.random.default_rng(6)
        points = blob_points(rng, self.CENTERS, 20)
        result = dd.kmeans(points, 3, seed=0)
        # Points of one blob share a label; labels of different blobs differ.
        labels = [{p.cluster_id for p in points[i * 20 : (i + 1) * 20]} for i in range(3)]
        assert all(len(s) == 1 for s in labels)
        assert len(set.union(*labels)) == 3
        assert result.assignments.shape == (60,)

    def test_objective_history_non_increasing(self):
        rng = np.random.default_rng(7)
        points = [
            dd.EmbeddingPoint(f"p{i}", rng.normal(size=8), order=i) for i in range(120)
        ]
        result = dd.kmeans(points, 10, seed=1)
        hist = result.objective_history
        assert len(hist) >= 1
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(8)
        vecs = [rng.normal(size=5) for _ in range(40)]
        p1 = [dd.EmbeddingPoint(f"p{i}", v, i) for i, v in enumerate(vecs)]
        p2 = [dd.EmbeddingPoint(f"p{i}", v, i) for i, v in enumerate(vecs)]
        r1 = dd.kmeans(p1, 4, seed=9)
        r2 = dd.kmeans(p2, 4, seed=9)
        assert np.array_equal(r1.assignments, r2.assignments)
        assert np.array_equal(r1.centroids, r2.centroids)


class TestSemDedup:
    def test_requires_cluster_assignment(self):
        p = dd.EmbeddingPoint("a", np.ones(3), 0)
        with pytest.raises(InputError):
            dd.semdedup([p])

    def test_near_duplicate_removed_earliest_kept(self):
        base = np.array([1.0, 0.02, 0.0])
        points = [
            dd.EmbeddingPoint("a", np.array([1.0, 0.0, 0.0]), 0, cluster_id=0),
            dd.EmbeddingPoint("b", base, 1, cluster_id=0),
            dd.EmbeddingPoint("c", np.array([0.0, 1.0, 0.0]), 2, cluster_id=0),
        ]
        manifest = dd.semdedup(points, epsilon=0.1)
        assert manifest.kept_ids() == ["a", "c"]
        removed = manifest.entries[1]
        assert removed.reason == "semantic-dup-of:a"
        assert removed.score > 0.99

    def test_cross_cluster_pairs_ignored(self):
        points = [
            dd.EmbeddingPoint("a", np.array([1.0, 0.0]), 0, cluster_id=0),
            dd.EmbeddingPoint("b", np.array([1.0, 0.0]), 1, cluster_id=1),
        ]
        manifest = dd.semdedup(points, epsilon=0.1)
        assert manifest.kept_ids() == ["a", "b"]

    def test_list_order_does_not_matter(self):
        rng = np.random.default_rng(10)
        points = []
        for i in range(40):
            v = rng.normal(size=6)
            points.append(dd.EmbeddingPoint(f"p{i}", v, order=i, cluster_id=i % 3))
            if i % 5 == 0:
                points.append(
                    dd.EmbeddingPoint(
                        f"p{i}x", v + rng.normal(0, 1e-3, 6), order=1000 + i, cluster_id=i % 3
                    )
                )
        forward = dd.semdedup(points, epsilon=0.05)
        shuffled = list(points)
        np.random.default_rng(0).shuffle(shuffled)
        assert [e.to_json() for e in dd.semdedup(shuffled, epsilon=0.05).entries] == [
            e.to_json() for e in forward.entries
        ]

    def test_epsilon_conventions(self):
        points = [
            dd.EmbeddingPoint("a", np.array([1.0, 0.0]), 0, cluster_id=0),
            dd.EmbeddingPoint("b", np.array([1.0, 1.0]), 1, cluster_id=0),  # cos = 0.707
        ]
        assert dd.semdedup(points, epsilon=0.1, convention="gap").kept_ids() == ["a", "b"]
        assert dd.semdedup(points, epsilon=0.1, convention="literal").kept_ids() == ["a"]
        with pytest.raises(ConfigError):
            dd.semdedup(points, epsilon=0.1, convention="sideways")

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        points = []
        for i in range(150):
            if i % 10 == 3:
                v = points[i - 1].vector + rng.normal(0, 0.01, 8)
            else:
                v = rng.normal(size=8)
            points.append(dd.EmbeddingPoint(f"p{i}", v, order=i))
        dd.kmeans(points, 4, seed=2)
        manifest = dd.semdedup(points, epsilon=0.1)
        cutoff = 0.9
        removed = set()
        for p in points:
            for q in points:
                if (
                    q.cluster_id == p.cluster_id
                    and q.order < p.order
                    and float(q.vector @ p.vector) >= cutoff
                ):
                    removed.add(p.doc_id)
                    break
        assert set(manifest.removed_ids()) == removed

    def test_semantic_dedup_defaults_k(self):
        rng = np.random.default_rng(12)
        points = [dd.EmbeddingPoint(f"p{i}", rng.normal(size=4), i) for i in range(50)]
        manifest = dd.semantic_dedup(points, seed=0)
        # 50 points form a single default cluster.
        assert all(p.cluster_id == 0 for p in points)
        manifest.verify_partition([p.doc_id for p in points])
