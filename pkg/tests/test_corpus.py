import dataclasses
import json
import os
import random

import pytest

from corpus_builder import (CorpusSpec, TrainPair, _PairFactory, client_slice, generate, load_dataset,
                            load_eval, load_pairs, partition_report, save_dataset, save_pairs)
from errors import ConfigError, DataIntegrityError, ParseError, SchemaError


def _tokens(text):
    return text.split(" ")


def _token_index(token):
    return int(token[1:])


def test_generate_is_deterministic(tiny_spec, tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    save_dataset(str(first), *generate(tiny_spec))
    save_dataset(str(second), *generate(dataclasses.replace(tiny_spec)))
    for name in sorted(os.listdir(first)):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_partition_sizes_match_spec():
    spec = CorpusSpec(n_clients=5, pairs_per_client=[100, 100, 100, 200, 200], seed=3)
    pairs, _, _ = generate(spec)
    assert partition_report(pairs).counts_list() == [100, 100, 100, 200, 200]


def test_bijection_partners_are_planted(tiny_spec):
    pairs, eval_queries, corpus = generate(tiny_spec)
    bijection = _PairFactory(tiny_spec, random.Random(tiny_spec.seed)).bijection
    for pair in pairs:
        chunk_tokens = {_token_index(t) for t in _tokens(pair.chunk)}
        for token in _tokens(pair.query)[:tiny_spec.signal_tokens]:
            assert bijection[_token_index(token)] in chunk_tokens


def test_zero_overlap_plants_no_partners(tiny_spec):
    spec = dataclasses.replace(tiny_spec, overlap_fraction=0.0)
    pairs, _, _ = generate(spec)
    bijection = _PairFactory(spec, random.Random(spec.seed)).bijection
    for pair in pairs:
        partners = {bijection[_token_index(t)] for t in _tokens(pair.query)}
        assert partners.isdisjoint(_token_index(t) for t in _tokens(pair.chunk))


def test_query_and_chunk_surfaces_are_disjoint(tiny_spec):
    pairs, eval_queries, corpus = generate(tiny_spec)
    query_tokens = {t for p in pairs for t in _tokens(p.query)} | {t for q in eval_queries for t in _tokens(q.query)}
    chunk_tokens = {t for p in pairs for t in _tokens(p.chunk)} | {t for c in corpus for t in _tokens(c.text)}
    assert query_tokens.isdisjoint(chunk_tokens)
    assert all(t.startswith("q") for t in query_tokens)
    assert all(t.startswith("c") for t in chunk_tokens)


def test_eval_queries_are_held_out(tiny_spec):
    pairs, eval_queries, corpus = generate(tiny_spec)
    assert len(eval_queries) == tiny_spec.eval_queries
    assert {q.query for q in eval_queries}.isdisjoint(p.query for p in pairs)
    corpus_ids = {c.chunk_id for c in corpus}
    assert len(corpus) == tiny_spec.eval_queries + tiny_spec.distractor_chunks
    assert all(set(q.golden_ids) <= corpus_ids for q in eval_queries)
    assert corpus_ids.isdisjoint(p.chunk_id for p in pairs)


def test_client_slices():
    disjoint = CorpusSpec(n_clients=4, pairs_per_client=[1] * 4, query_vocab_size=16,
                          chunk_vocab_size=16, tokens_per_query=2, tokens_per_chunk=4,
                          client_slice_overlap=0.0)
    slices = [set(client_slice(disjoint, k)) for k in range(4)]
    assert slices[0] == {0, 1, 2, 3}
    for i in range(4):
        for j in range(i + 1, 4):
            assert slices[i].isdisjoint(slices[j])
    shared = dataclasses.replace(disjoint, client_slice_overlap=1.0)
    assert all(set(client_slice(shared, k)) == set(range(16)) for k in range(4))


def test_non_iid_clients_draw_from_their_slice(tiny_spec):
    pairs, _, _ = generate(tiny_spec)
    for pair in pairs:
        allowed = set(client_slice(tiny_spec, pair.client_id))
        assert {_token_index(t) for t in _tokens(pair.query)} <= allowed


@pytest.mark.parametrize("key,value", [
    ("overlap_fraction", 1.5),
    ("overlap_fraction", -0.1),
    ("n_clients", 0),
    ("client_slice_overlap", 2.0),
    ("distractor_chunks", -1),
])
def test_invalid_spec_names_the_key(key, value):
    with pytest.raises(ConfigError, match=key):
        CorpusSpec(**{key: value})


def test_pairs_per_client_length_checked():
    with pytest.raises(ConfigError, match="pairs_per_client"):
        CorpusSpec(n_clients=2, pairs_per_client=[10])


def test_pairs_round_trip(tmp_path):
    path = str(tmp_path / "pairs.jsonl")
    pair = TrainPair("q0001 q0002", "c0003 c0004", "chunk-000001", 2)
    save_pairs([pair], path)
    assert load_pairs(path) == [pair]
    line = (tmp_path / "pairs.jsonl").read_text(encoding="utf-8")
    assert list(json.loads(line)) == ["query", "chunk", "chunk_id", "client_id"]


def test_empty_file_loads_empty(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_pairs(str(path)) == []


def test_missing_field_is_a_schema_error(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text('{"query": "q0001", "chunk": "c0001", "client_id": 0}\n', encoding="utf-8")
    with pytest.raises(SchemaError) as info:
        load_pairs(str(path))
    assert info.value.line_no == 1
    assert info.value.field == "chunk_id"


def test_malformed_line_is_a_parse_error(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_text('{"query": "q0001", "chunk": "c0001", "chunk_id": "x", "client_id": 0}\n{oops\n',
                    encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_pairs(str(path))
    assert info.value.line_no == 2


def test_invalid_utf8_is_a_parse_error(tmp_path):
    path = tmp_path / "pairs.jsonl"
    path.write_bytes(b'{"query": "q0001", "chunk": "c0001", "chunk_id": "x", "client_id": 0}\n"q\xff"\n')
    with pytest.raises(ParseError) as info:
        load_pairs(str(path))
    assert info.value.line_no == 2


def test_partition_report_edges():
    assert partition_report([]).counts_list() == []
    single = [TrainPair("q0001", "c0001", f"chunk-{i}", 0) for i in range(4)]
    assert partition_report(single).counts_list() == [4]
    two = [TrainPair("q0001", "c0001", f"a{i}", 0) for i in range(3)]
    two += [TrainPair("q0002", "c0002", f"b{i}", 1) for i in range(5)]
    report = partition_report(two)
    assert report.counts_list() == [3, 5]
    assert report.total == 8


def test_dataset_directory_round_trip(tiny_spec, tmp_path):
    pairs, eval_queries, corpus = generate(tiny_spec)
    save_dataset(str(tmp_path), pairs, eval_queries, corpus)
    assert sorted(os.listdir(tmp_path)) == ["corpus.jsonl", "eval.jsonl", "pairs_client_0.jsonl",
                                            "pairs_client_1.jsonl", "pairs_client_2.jsonl"]
    assert load_dataset(str(tmp_path)) == (pairs, eval_queries, corpus)


def test_eval_with_unknown_golden_id(tmp_path):
    (tmp_path / "corpus.jsonl").write_text('{"chunk_id": "chunk-1", "text": "c0001"}\n', encoding="utf-8")
    (tmp_path / "eval.jsonl").write_text('{"query": "q0001", "golden_ids": ["chunk-9"]}\n', encoding="utf-8")
    with pytest.raises(DataIntegrityError, match="chunk-9"):
        load_eval(str(tmp_path / "eval.jsonl"), str(tmp_path / "corpus.jsonl"))
