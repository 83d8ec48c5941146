import itertools
import math
import random
from collections import Counter

import pytest

from errors import ConfigError, SchemaError
from text_metrics import (GEN_METRICS, TextPair, bleu, cer, chrf, evaluate_text, lcs_length, levenshtein,
                          load_answers, pair_metrics, rouge_l, rouge_n, tokenize, wer)


def test_tokenize():
    assert tokenize("Hello, World!  It's") == ["hello", "world", "it's"]
    assert tokenize(" ... ") == []


class TestRouge:

    def test_unigram_hand_values(self):
        p, r, f = rouge_n("the cat", "the cat sat", 1)
        assert p == 1.0
        assert r == pytest.approx(2 / 3)
        assert f == pytest.approx(0.8)

    def test_bigram(self):
        assert rouge_n("the cat sat", "the cat sat", 2) == (1.0, 1.0, 1.0)
        assert rouge_n("cat the", "the cat", 2) == (0.0, 0.0, 0.0)

    def test_clipped_counts(self):
        p, r, _ = rouge_n("the the the", "the cat", 1)
        assert p == pytest.approx(1 / 3)
        assert r == 0.5

    def test_longest_common_subsequence(self):
        for value in rouge_l("a c b", "a b c"):
            assert value == pytest.approx(2 / 3)

    def test_invalid_order(self):
        with pytest.raises(ConfigError):
            rouge_n("a", "a", 0)


def brute_force_lcs(a, b):
    for size in range(min(len(a), len(b)), 0, -1):
        subsequences = set(itertools.combinations(b, size))
        if any(combo in subsequences for combo in itertools.combinations(a, size)):
            return size
    return 0


def test_lcs_matches_brute_force():
    rng = random.Random(17)
    for _ in range(200):
        a = [rng.choice("abc") for _ in range(rng.randint(0, 6))]
        b = [rng.choice("abc") for _ in range(rng.randint(0, 6))]
        assert lcs_length(a, b) == brute_force_lcs(a, b)


class TestBleu:

    def test_brevity_penalty(self):
        assert bleu("the cat sat", "the cat sat down") == pytest.approx(math.exp(-1 / 3), abs=1e-12)

    def test_smoothed_higher_orders(self):
        assert bleu("the cat", "the dog") == pytest.approx(0.25 ** 0.25, abs=1e-12)

    def test_identical_and_disjoint(self):
        assert bleu("a b c d e", "a b c d e") == pytest.approx(1.0, abs=1e-15)
        assert bleu("x y", "a b") == 0.0
        assert bleu("", "a b") == 0.0

    def test_matches_add_one_formula(self):
        rng = random.Random(23)
        words = ["the", "cat", "sat", "on", "mat", "a"]
        for _ in range(300):
            candidate = " ".join(rng.choice(words) for _ in range(rng.randint(1, 9)))
            reference = " ".join(rng.choice(words) for _ in range(rng.randint(1, 9)))
            assert bleu(candidate, reference) == pytest.approx(add_one_bleu(candidate, reference), abs=1e-12)


def add_one_bleu(candidate, reference, max_n=4):
    cand, ref = tokenize(candidate), tokenize(reference)

    def grams(tokens, n):
        return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))

    logs = []
    for n in range(1, max_n + 1):
        clipped = sum((grams(cand, n) & grams(ref, n)).values())
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            if clipped == 0:
                return 0.0
            logs.append(math.log(clipped / total))
        else:
            logs.append(math.log((clipped + 1) / (total + 1)))
    brevity = math.exp(1 - len(ref) / len(cand)) if len(cand) < len(ref) else 1.0
    return brevity * math.exp(sum(logs) / max_n)


class TestChrf:

    def test_identical(self):
        assert chrf("same words here", "same words here") == pytest.approx(1.0)
        assert chrf("same words here", "same words here", word_n=2) == pytest.approx(1.0)

    def test_orders_empty_on_both_sides_are_skipped(self):
        assert chrf("ab", "ab") == pytest.approx(1.0)

    def test_orders_empty_on_one_side_score_zero(self):
        assert chrf("ab", "abc", n=3) == pytest.approx((chrf("ab", "abc", n=2) * 2 + 0.0) / 3)

    def test_disjoint(self):
        assert chrf("xyz", "abc") == 0.0


class TestEditDistance:

    def test_levenshtein(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("", "abc") == 3
        assert levenshtein(["a"], ["a"]) == 0

    def test_word_error_rate(self):
        assert wer("the dog sat", "the cat sat") == pytest.approx(1 / 3)
        assert wer("", "the cat sat") == 1.0

    def test_character_error_rate(self):
        assert cer("abd", "abc") == pytest.approx(1 / 3)
        assert cer("The,  cat", "the cat") == 0.0

    def test_empty_reference(self):
        with pytest.raises(ConfigError):
            wer("a", "")
        with pytest.raises(ConfigError):
            cer("a", "!!")


class TestPairs:

    def test_empty_candidate(self):
        values = pair_metrics(TextPair("0", "", "the cat sat"))
        assert values["wer"] == 1.0 and values["cer"] == 1.0
        assert all(values[name] == 0.0 for name in GEN_METRICS if name not in ("wer", "cer"))

    def test_identical_pair(self):
        values = pair_metrics(TextPair("0", "a quick brown fox jumps", "a quick brown fox jumps"))
        assert values["wer"] == 0.0 and values["cer"] == 0.0
        for name in GEN_METRICS:
            if name not in ("wer", "cer"):
                assert values[name] == pytest.approx(1.0), name

    def test_empty_reference_rejected(self):
        with pytest.raises(ConfigError):
            TextPair("0", "answer", "  ")

    def test_bounds(self):
        rng = random.Random(31)
        words = ["alpha", "beta", "gamma", "delta", "eps"]
        for _ in range(1000):
            candidate = " ".join(rng.choice(words) for _ in range(rng.randint(0, 8)))
            reference = " ".join(rng.choice(words) for _ in range(rng.randint(1, 8)))
            values = pair_metrics(TextPair("q", candidate, reference))
            assert list(values) == GEN_METRICS
            for name, value in values.items():
                if name in ("wer", "cer"):
                    assert value >= 0.0
                else:
                    assert 0.0 <= value <= 1.0 + 1e-12, name


class TestEvaluateText:

    def test_means_ignore_pair_order(self):
        rng = random.Random(4)
        pairs = [TextPair(str(i), f"tok{rng.randint(0, 3)} tok{rng.randint(0, 3)}", f"tok{i % 4} tok1")
                 for i in range(12)]
        forward = evaluate_text(pairs)
        backward = evaluate_text(list(reversed(pairs)))
        assert forward.values == backward.values
        assert list(forward.values) == GEN_METRICS

    def test_empty_candidates_are_reported(self):
        report = evaluate_text([TextPair("a", "", "ref text"), TextPair("b", "ref text", "ref text")])
        assert report.empty_candidates == ["a"]
        assert report.values["wer"] == pytest.approx(0.5)

    def test_percent_json(self):
        report = evaluate_text([TextPair("a", "the cat", "the cat sat")])
        assert '"r1_p": 100.0' in report.to_json(percent=True)

    def test_no_pairs(self):
        with pytest.raises(ConfigError):
            evaluate_text([])


class TestLoadAnswers:

    def test_round_trip(self, tmp_path):
        path = tmp_path / "answers.jsonl"
        path.write_text('{"query_id": "0", "candidate": "a b", "reference": "a c"}\n', encoding="utf-8")
        assert load_answers(str(path)) == [TextPair("0", "a b", "a c")]

    def test_missing_field(self, tmp_path):
        path = tmp_path / "answers.jsonl"
        path.write_text('{"query_id": "0", "reference": "a c"}\n', encoding="utf-8")
        with pytest.raises(SchemaError) as info:
            load_answers(str(path))
        assert info.value.field == "candidate"

    def test_empty_reference(self, tmp_path):
        path = tmp_path / "answers.jsonl"
        path.write_text('{"query_id": "0", "candidate": "a", "reference": "a"}\n'
                        '{"query_id": "1", "candidate": "a", "reference": ""}\n', encoding="utf-8")
        with pytest.raises(SchemaError) as info:
            load_answers(str(path))
        assert info.value.line_no == 2
