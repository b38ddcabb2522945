import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cooprag.embeddings import EmbeddingStore, LayeredEmbeddings
from cooprag.errors import BadBucketCount, DimMismatch, UnknownDocId, ValidationError
from cooprag.rala import (
    RerankConfig,
    Strategy,
    bucket_partition,
    contrast_layers,
    gap_weight,
    plain_maxsim,
    rerank,
    score,
    score_naive,
    score_optimized,
    score_token_contrast,
    select_candidate_layers,
    token_gap,
)
from cooprag.toy import ADVERSARIAL_IDS, adversarial_pair


def random_pair(rng, L=4, tq=3, td=5, d=6):
    u = LayeredEmbeddings(rng.standard_normal((L, tq, d)).astype(np.float32))
    doc = LayeredEmbeddings(rng.standard_normal((L, td, d)).astype(np.float32))
    return u, doc


class TestBuckets:
    def test_partition_is_contiguous_and_front_loaded(self):
        assert bucket_partition(12, 4) == [[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11]]
        assert bucket_partition(12, 3) == [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11]]
        assert bucket_partition(4, 3) == [[1], [2], [3]]

    @given(st.integers(3, 40), st.data())
    def test_partition_covers_premature_layers(self, L, data):
        B = data.draw(st.integers(1, L - 1))
        parts = bucket_partition(L, B)
        assert [l for p in parts for l in p] == list(range(1, L))
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)

    def test_bad_counts(self):
        with pytest.raises(BadBucketCount):
            bucket_partition(12, 12)
        with pytest.raises(BadBucketCount):
            select_candidate_layers(2, 1)
        with pytest.raises(BadBucketCount):
            RerankConfig(bucket_count=5)
        assert RerankConfig(bucket_count=11, allow_any_bucket_count=True).bucket_count == 11

    @given(st.integers(0, 10_000))
    def test_one_layer_per_bucket(self, seed):
        chosen = select_candidate_layers(12, 4, seed).layers
        for layer, bucket in zip(chosen, bucket_partition(12, 4)):
            assert layer in bucket


class TestScorersAgainstOracle:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([4, 6]))
    def test_all_scorers(self, seed, L):
        rng = np.random.default_rng(seed)
        u, d = random_pair(rng, L=L, tq=int(rng.integers(1, 5)), td=int(rng.integers(1, 7)))
        layers = select_candidate_layers(L, 2, seed).layers
        assert score_naive(u, d, layers) == pytest.approx(oracles.naive(u, d, layers), abs=1e-9)
        assert score_optimized(u, d, layers) == pytest.approx(oracles.gap_weighted(u, d, layers), abs=1e-9)
        assert plain_maxsim(u, d) == pytest.approx(oracles.maxsim(u, d), abs=1e-9)
        assert score_token_contrast(u, d) == pytest.approx(oracles.token_contrast(u, d), abs=1e-9)

    def test_token_gap_single_pair(self):
        q = np.array([1.0, 0.0])
        d_layers = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])  # cos 0, 0.707, 1
        assert token_gap(q, d_layers, [1]) == pytest.approx(1.0)
        assert token_gap(q, d_layers, [2]) == pytest.approx(1 - np.sqrt(0.5))
        assert token_gap(q, d_layers, [1, 2]) == pytest.approx(1.0)

    def test_gap_weight_can_be_negative(self):
        data = np.zeros((3, 1, 2), dtype=np.float32)
        data[:, 0] = [[1, 0], [1, 0], [0, 1]]  # final layer farther from query than premature
        u = LayeredEmbeddings(np.tile(np.array([1, 0], np.float32), (3, 1, 1)))
        assert gap_weight(u, LayeredEmbeddings(data), [1]) == pytest.approx(-1.0)

    def test_contrast_layer_ties_take_smallest(self):
        data = np.zeros((4, 1, 2), dtype=np.float32)
        data[-1, 0] = [1, 0]  # layers 1-3 all at distance 1
        assert contrast_layers(LayeredEmbeddings(data)).tolist() == [1]

    def test_scale_invariance(self, rng):
        u, d = random_pair(rng)
        scaled = LayeredEmbeddings(d.data * 7.5)
        for s in Strategy:
            assert score(s, u, d, [1, 2]) == pytest.approx(score(s, u, scaled, [1, 2]), abs=1e-6)

    def test_validation(self, rng):
        u, d = random_pair(rng)
        with pytest.raises(ValidationError):
            score_naive(u, d, [4])  # final layer is not a candidate
        with pytest.raises(ValidationError):
            score_naive(u, d, [1, 1])
        bad = LayeredEmbeddings(np.ones((4, 2, 3), np.float32))
        with pytest.raises(DimMismatch):
            plain_maxsim(u, bad)


class TestRerank:
    def test_adversarial_pair_orders(self, rng):
        u, pos, dis = adversarial_pair(rng)
        store = EmbeddingStore([(ADVERSARIAL_IDS[0], pos), (ADVERSARIAL_IDS[1], dis)])
        plain = rerank(list(ADVERSARIAL_IDS), u, store, RerankConfig(Strategy.PLAIN_MAXSIM, k=2))
        gap = rerank(list(ADVERSARIAL_IDS), u, store, RerankConfig(Strategy.GAP_WEIGHTED, k=2))
        assert plain[0].score == plain[1].score and plain[0].doc_id == "a_dis"
        assert gap[0].doc_id == "z_pos"

    def test_dedup_unknown_and_k(self, rng):
        u, d = random_pair(rng)
        store = EmbeddingStore([("a", d), ("b", random_pair(rng)[1])])
        ranked = rerank(["a", "b", "a"], u, store, RerankConfig(k=5, bucket_count=2))
        assert sorted(r.doc_id for r in ranked) == ["a", "b"]
        assert len(rerank(["a", "b"], u, store, RerankConfig(k=1, bucket_count=2))) == 1
        assert rerank([], u, store, RerankConfig(bucket_count=2)) == []
        with pytest.raises(UnknownDocId):
            rerank(["zz"], u, store, RerankConfig(bucket_count=2))
