import json
import math
import random

import numpy as np
import pytest

from corpus_builder import Chunk, EvalQuery, generate
from embedding_engine import FeatureExtractor, ModelParams, embed
from errors import ConfigError, DataIntegrityError, DegenerateInputError
from federated_engine import FedConfig, init_params
from retrieval_engine import (RankedList, build_index, evaluate, knn, load_report, metric_ap, metric_dcg,
                              metric_em, metric_hit, metric_mrr, metric_names, metric_prf, query_metrics)
from tensor_ops import as_vec


def ranked_of(ids, scores=None, k=None):
    scores = scores if scores is not None else [1.0 - 0.01 * i for i in range(len(ids))]
    return RankedList("q", tuple(zip(ids, scores)), k or len(ids))


@pytest.fixture
def indexed(tiny_spec):
    _, eval_queries, corpus = generate(tiny_spec)
    cfg = FedConfig(d_in=32, d_out=8, seed=3)
    params = init_params(cfg)
    extractor = FeatureExtractor(cfg.d_in)
    return build_index(params, extractor, corpus), params, extractor, eval_queries


class TestHandCases:

    def test_mrr(self):
        assert metric_mrr(ranked_of(["x", "y", "a"]), {"a"}) == pytest.approx(1 / 3)
        assert metric_mrr(ranked_of(["x", "y"]), {"a"}) == 0.0

    def test_dcg(self):
        dcg, idcg, ndcg = metric_dcg(ranked_of(["a", "x", "b"]), {"a", "b"}, 3)
        assert dcg == pytest.approx(1.5, abs=1e-15)
        assert idcg == pytest.approx(1 + 1 / math.log2(3), abs=1e-15)
        assert ndcg == pytest.approx(1.5 / idcg, abs=1e-15)

    def test_perfect_ndcg(self):
        assert metric_dcg(ranked_of(["a", "b", "x"]), {"a", "b"}, 3)[2] == 1.0

    def test_no_relevant_retrieved(self):
        assert metric_dcg(ranked_of(["x", "y"]), {"a"}, 2) == (0.0, 1.0, 0.0)

    def test_average_precision(self):
        assert metric_ap(ranked_of(["a", "x", "b"]), {"a", "b"}) == pytest.approx(5 / 6, abs=1e-15)

    def test_hit_and_exact_match(self):
        ranked = ranked_of(["x", "a", "y", "b"])
        assert metric_hit(ranked, {"a"}, 1) == 0
        assert metric_hit(ranked, {"a"}, 2) == 1
        assert metric_em(ranked, {"a", "b"}, 3) == 0
        assert metric_em(ranked, {"a", "b"}, 4) == 1
        with pytest.raises(ConfigError):
            metric_hit(ranked, {"a"}, 5)

    def test_precision_recall_accuracy_f1(self):
        ranked = ranked_of(["a", "x", "b"], [0.9, 0.5, 0.1])
        pre, rec, acc, f1 = metric_prf(ranked, {"a", "b", "c"}, 3, 0.3)
        assert pre == pytest.approx(2 / 3)
        assert rec == pytest.approx(2 / 3)
        assert acc == pytest.approx(2 / 3)
        assert f1 == pytest.approx(2 * 1.0 * (1 / 3) / (1 + 1 / 3))

    def test_empty_ranking(self):
        values = query_metrics(RankedList("q", (), 10), {"a"}, [1, 5, 10], 0.5)
        assert all(value == 0.0 for name, value in values.items() if name != "idcg")


def brute_force(ids, scores, golden, ks, theta):
    """Every metric recomputed from its definition"""
    relevant_ranks = [r for r in range(1, len(ids) + 1) if ids[r - 1] in golden]
    k_min, k_max = min(ks), max(ks)
    expected = {
        f"hit@{k_min}": float(any(r <= k_min for r in relevant_ranks)),
        f"hit@{k_max}": float(any(r <= k_max for r in relevant_ranks)),
        "em": float(all(g in ids[:k_max] for g in golden)),
        "mrr": 1.0 / relevant_ranks[0] if relevant_ranks else 0.0,
        "map": sum((i + 1) / r for i, r in enumerate(relevant_ranks)) / len(golden),
    }
    dcg = sum(1.0 / math.log2(r + 1) for r in relevant_ranks if r <= k_max)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(golden), k_max) + 1))
    expected.update(ndcg=dcg / idcg if idcg else 0.0, dcg=dcg, idcg=idcg)
    pre_1 = float(ids[0] in golden) if ids else 0.0
    rec_1 = pre_1 / len(golden)
    expected["f1"] = 2 * pre_1 * rec_1 / (pre_1 + rec_1) if pre_1 else 0.0
    for k in ks:
        expected[f"acc@{k}"] = len([s for s in scores[:k] if s > theta]) / k
        expected[f"rec@{k}"] = len([r for r in relevant_ranks if r <= k]) / len(golden)
        expected[f"pre@{k}"] = len([r for r in relevant_ranks if r <= k]) / k
    return expected


def test_metrics_match_brute_force():
    rng = random.Random(2024)
    pool = [f"chunk-{i:03d}" for i in range(30)]
    ks = [1, 5, 10]
    for _ in range(200):
        length = rng.randint(0, 10)
        ids = rng.sample(pool, length)
        scores = sorted((rng.uniform(-1, 1) for _ in ids), reverse=True)
        golden = set(rng.sample(pool, rng.randint(1, 4)))
        theta = rng.uniform(-1, 1)
        got = query_metrics(RankedList("q", tuple(zip(ids, scores)), 10), golden, ks, theta)
        expected = brute_force(ids, scores, golden, ks, theta)
        assert list(got) == metric_names(ks)
        for name, value in expected.items():
            assert got[name] == pytest.approx(value, abs=1e-12), name


def test_metric_bounds_and_mrr_vs_hit():
    rng = random.Random(5)
    pool = [f"c{i}" for i in range(20)]
    for _ in range(200):
        ids = rng.sample(pool, 10)
        ranked = ranked_of(ids)
        golden = set(rng.sample(pool, rng.randint(1, 3)))
        values = query_metrics(ranked, golden, [1, 5, 10], 0.5)
        for name, value in values.items():
            if name not in ("dcg", "idcg"):
                assert 0.0 <= value <= 1.0, name
        assert values["mrr"] <= values["hit@10"]


def test_accuracy_is_monotone_in_theta():
    rng = np.random.default_rng(8)
    scores = sorted(rng.uniform(-1, 1, size=10), reverse=True)
    ranked = ranked_of([f"c{i}" for i in range(10)], list(scores))
    accs = [metric_prf(ranked, {"c3"}, 10, theta)[2] for theta in np.linspace(-1, 1, 21)]
    assert all(a >= b for a, b in zip(accs, accs[1:]))
    with pytest.raises(ConfigError):
        metric_prf(ranked, {"c3"}, 10, 1.5)


class TestKnn:

    def test_matches_a_full_sort(self, np_rng):
        for _ in range(100):
            n, dim = int(np_rng.integers(1, 40)), int(np_rng.integers(1, 8))
            params = ModelParams(np.eye(dim))
            extractor = FeatureExtractor(dim)
            index = build_index(params, extractor, [Chunk(f"c{i:02d}", "x") for i in range(n)])
            embeddings = np_rng.normal(size=(n, dim))
            index = type(index)(index.ids, embeddings, np.sqrt((embeddings * embeddings).sum(axis=1)))
            q = as_vec(np_rng.normal(size=dim))
            k = int(np_rng.integers(1, n + 1))
            cosines = embeddings @ q / (np.linalg.norm(embeddings, axis=1) * np.linalg.norm(q))
            expected = [index.ids[i] for i in np.argsort(-cosines, kind="stable")[:k]]
            ranked = knn(index, q, k)
            assert ranked.ids == expected
            assert ranked.scores == sorted(ranked.scores, reverse=True)

    def test_k_larger_than_index(self):
        params = ModelParams(np.eye(2))
        index = build_index(params, FeatureExtractor(2), [Chunk("a", "x"), Chunk("b", "y")])
        assert len(knn(index, as_vec([1.0, 0.5]), 10).ranked) <= 2

    def test_identical_embeddings_tie_break_on_id(self):
        params = ModelParams(np.eye(8))
        extractor = FeatureExtractor(8)
        corpus = [Chunk("chunk-b", "c0001 c0002"), Chunk("chunk-a", "c0001 c0002"), Chunk("chunk-c", "c0009")]
        index = build_index(params, extractor, corpus)
        q = embed(params, extractor.featurize("c0001 c0002"))
        assert knn(index, q, 2).ids == ["chunk-a", "chunk-b"]

    def test_invalid_queries(self):
        params = ModelParams(np.eye(2))
        index = build_index(params, FeatureExtractor(2), [Chunk("a", "x")])
        with pytest.raises(ConfigError):
            knn(index, as_vec([1.0, 0.0]), 0)
        with pytest.raises(DegenerateInputError):
            knn(index, as_vec([0.0, 0.0]), 1)


class TestIndex:

    def test_zero_embeddings_are_excluded(self):
        params = ModelParams(np.eye(4))
        index = build_index(params, FeatureExtractor(4), [Chunk("a", "x"), Chunk("empty", "")])
        assert index.ids == ("a",)
        assert index.excluded == ("empty",)
        assert "empty" in index.known_ids

    def test_duplicate_ids_and_empty_corpus(self):
        params = ModelParams(np.eye(4))
        with pytest.raises(DataIntegrityError, match="dup"):
            build_index(params, FeatureExtractor(4), [Chunk("dup", "x"), Chunk("dup", "y")])
        with pytest.raises(ConfigError):
            build_index(params, FeatureExtractor(4), [])

    def test_rebuilding_gives_identical_bytes(self, tiny_spec, indexed):
        index, params, _, _ = indexed
        _, _, corpus = generate(tiny_spec)
        assert build_index(params, FeatureExtractor(32), corpus).to_bytes() == index.to_bytes()
        other = build_index(init_params(FedConfig(d_in=32, d_out=8, seed=4)), FeatureExtractor(32), corpus)
        assert other.to_bytes() != index.to_bytes()


class TestEvaluate:

    def test_report_keys_and_determinism(self, indexed):
        index, params, extractor, eval_queries = indexed
        first = evaluate(index, params, extractor, eval_queries)
        second = evaluate(index, params, extractor, eval_queries)
        assert list(first.values) == metric_names([1, 5, 10])
        assert first.to_json() == second.to_json()
        assert len(first.per_query) == len(eval_queries)

    def test_mean_of_per_query_values(self, indexed):
        index, params, extractor, eval_queries = indexed
        report = evaluate(index, params, extractor, eval_queries)
        for name, value in report.values.items():
            assert value == pytest.approx(np.mean([row[name] for row in report.per_query]), abs=1e-12)

    def test_percent_scaling_and_csv(self, indexed):
        index, params, extractor, eval_queries = indexed
        report = evaluate(index, params, extractor, eval_queries)
        scaled = json.loads(report.to_json(percent=True))
        for name, value in report.values.items():
            assert scaled[name] == pytest.approx(100.0 * value)
        lines = report.to_csv("fede4rag").splitlines()
        assert lines[0] == "run,metric,value"
        assert lines[1].startswith("fede4rag,hit@1,")
        assert len(lines) == len(report.values) + 1

    def test_label_accuracy_mode(self, indexed):
        index, params, extractor, eval_queries = indexed
        report = evaluate(index, params, extractor, eval_queries, acc_mode="label")
        assert report.values["acc@10"] == report.values["hit@10"]
        with pytest.raises(ConfigError):
            evaluate(index, params, extractor, eval_queries, acc_mode="bogus")

    def test_missing_golden_ids(self, indexed):
        index, params, extractor, _ = indexed
        queries = [EvalQuery("q0001", ("chunk-zzz", "chunk-yyy"))]
        with pytest.raises(DataIntegrityError, match="chunk-yyy, chunk-zzz"):
            evaluate(index, params, extractor, queries)

    def test_empty_query_scores_zero(self, indexed):
        index, params, extractor, eval_queries = indexed
        report = evaluate(index, params, extractor, [EvalQuery("", eval_queries[0].golden_ids)])
        assert report.values["hit@10"] == 0.0 and report.values["mrr"] == 0.0

    def test_empty_eval_set(self, indexed):
        index, params, extractor, _ = indexed
        with pytest.raises(ConfigError):
            evaluate(index, params, extractor, [])

    def test_load_report(self, indexed, tmp_path):
        index, params, extractor, eval_queries = indexed
        report = evaluate(index, params, extractor, eval_queries)
        path = tmp_path / "report.json"
        path.write_text(report.to_json(), encoding="utf-8")
        assert load_report(str(path)) == report.values
        path.write_text('{"a": {"b": 1}}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_report(str(path))
