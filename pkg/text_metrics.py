"""
Text Metrics - generation quality of externally produced answers
N-gram overlap (ROUGE-1/2/L, BLEU, chrF, chrF++) and edit distance (WER, CER)
between a candidate answer and its reference answer.
"""
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

from rich.console import Console
from rich.table import Table
from sacrebleu.metrics import BLEU

from config import *
from errors import ConfigError, SchemaError
from jsonl_store import read_jsonl, require_field

console = Console()
logger = logging.getLogger(__name__)
logging.getLogger("sacrebleu").setLevel(logging.ERROR)

PUNCTUATION = ".,;:!?\"'"

GEN_METRICS = ["chrf", "chrf++", "r1_p", "r1_r", "r1_f", "r2_p", "r2_r", "r2_f",
               "rl_p", "rl_r", "rl_f", "bleu", "wer", "cer"]


@dataclass(frozen=True)
class TextPair:
    query_id: str
    candidate: str
    reference: str

    def __post_init__(self):
        if not tokenize(self.reference):
            raise ConfigError(f"pair {self.query_id!r}: reference is empty")


@dataclass
class GenReport:
    values: Dict[str, float]
    per_pair: List[Dict[str, float]] = field(default_factory=list, repr=False)
    empty_candidates: List[str] = field(default_factory=list)

    def to_json(self, percent: bool = False) -> str:
        scaled = {name: value * 100.0 if percent else value for name, value in self.values.items()}
        return json.dumps(scaled, indent=2) + "\n"

    def display(self, percent: bool = False):
        table = Table(title="📝 Generation Metrics")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green")
        for name, value in self.values.items():
            # Edit-distance rates are never percent-scaled on screen
            shown = value * 100.0 if percent and name not in ("wer", "cer") else value
            table.add_row(name, f"{shown:.4f}")
        console.print(table)
        if self.empty_candidates:
            console.print(f"[yellow]⚠️ {len(self.empty_candidates)} empty candidate(s) scored as zero[/yellow]")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation"""
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(PUNCTUATION)
        if token:
            tokens.append(token)
    return tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def _prf(overlap: int, cand_total: int, ref_total: int) -> Tuple[float, float, float]:
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def rouge_n(candidate: str, reference: str, n: int = 1) -> Tuple[float, float, float]:
    """(precision, recall, f1) of clipped n-gram overlap"""
    if n < 1:
        raise ConfigError(f"ROUGE order must be >= 1, got {n}")
    cand = _ngrams(tokenize(candidate), n)
    ref = _ngrams(tokenize(reference), n)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, 1):
            row.append(prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1]))
        prev = row
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> Tuple[float, float, float]:
    cand = tokenize(candidate)
    ref = tokenize(reference)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


@lru_cache(maxsize=None)
def _bleu_scorer(max_n: int) -> BLEU:
    # Text arrives pre-tokenized; add-k with k=1 only touches orders >= 2
    return BLEU(max_ngram_order=max_n, smooth_method="add-k", smooth_value=1,
                tokenize="none", effective_order=False)


def bleu(candidate: str, reference: str, max_n: int = BLEU_MAX_N) -> float:
    """Sentence BLEU; orders >= 2 use add-one smoothing

    p_1 = clipped / total, p_n = (clipped + 1) / (total + 1) for n >= 2,
    times the brevity penalty exp(1 - |ref| / |cand|) for short candidates.
    """
    if max_n < 1:
        raise ConfigError(f"BLEU max order must be >= 1, got {max_n}")
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    score = _bleu_scorer(max_n).sentence_score(" ".join(cand), [" ".join(tokenize(reference))])
    return score.score / 100.0


def _f_beta(cand: Counter, ref: Counter, beta: float) -> float:
    matches = sum((cand & ref).values())
    p = matches / sum(cand.values())
    r = matches / sum(ref.values())
    if p + r == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def chrf(candidate: str, reference: str, n: int = CHRF_CHAR_ORDER, word_n: int = 0,
         beta: float = CHRF_BETA) -> float:
    """Order-averaged character n-gram F_beta; word_n > 0 adds word orders (chrF++)"""
    if n < 1:
        raise ConfigError(f"chrF character order must be >= 1, got {n}")
    if word_n < 0:
        raise ConfigError(f"chrF word order must be >= 0, got {word_n}")
    cand_tokens = tokenize(candidate)
    ref_tokens = tokenize(reference)
    if not cand_tokens:
        return 0.0
    cand_chars = "".join(cand_tokens)
    ref_chars = "".join(ref_tokens)

    pairs = [(_char_ngrams(cand_chars, k), _char_ngrams(ref_chars, k)) for k in range(1, n + 1)]
    pairs += [(_ngrams(cand_tokens, k), _ngrams(ref_tokens, k)) for k in range(1, word_n + 1)]

    scores = []
    for cand, ref in pairs:
        if not cand and not ref:
            continue
        scores.append(_f_beta(cand, ref, beta) if cand and ref else 0.0)
    return sum(scores) / len(scores) if scores else 0.0


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        row = [i]
        for j, y in enumerate(b, 1):
            row.append(min(prev[j] + 1, row[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = row
    return prev[-1]


def wer(candidate: str, reference: str) -> float:
    ref = tokenize(reference)
    if not ref:
        raise ConfigError("WER needs a nonempty reference")
    return levenshtein(tokenize(candidate), ref) / len(ref)


def cer(candidate: str, reference: str) -> float:
    """Character edit rate over the normalized text (single spaces kept)"""
    ref = " ".join(tokenize(reference))
    if not ref:
        raise ConfigError("CER needs a nonempty reference")
    return levenshtein(" ".join(tokenize(candidate)), ref) / len(ref)


def pair_metrics(pair: TextPair) -> Dict[str, float]:
    c, r = pair.candidate, pair.reference
    r1 = rouge_n(c, r, 1)
    r2 = rouge_n(c, r, 2)
    rl = rouge_l(c, r)
    values = {
        "chrf": chrf(c, r),
        "chrf++": chrf(c, r, word_n=CHRF_WORD_ORDER),
        "r1_p": r1[0], "r1_r": r1[1], "r1_f": r1[2],
        "r2_p": r2[0], "r2_r": r2[1], "r2_f": r2[2],
        "rl_p": rl[0], "rl_r": rl[1], "rl_f": rl[2],
        "bleu": bleu(c, r),
        "wer": wer(c, r),
        "cer": cer(c, r),
    }
    return {name: values[name] for name in GEN_METRICS}


def evaluate_text(pairs: Sequence[TextPair]) -> GenReport:
    """Per-pair metrics and their arithmetic means"""
    if not pairs:
        raise ConfigError("no answer pairs to evaluate")
    per_pair = [pair_metrics(p) for p in pairs]
    empty = [p.query_id for p in pairs if not tokenize(p.candidate)]
    for query_id in empty:
        logger.warning("empty candidate for query %s", query_id)
    # fsum is exactly rounded, so the means do not depend on pair order
    values = {name: math.fsum(row[name] for row in per_pair) / len(per_pair) for name in GEN_METRICS}
    return GenReport(values, per_pair, empty)


def load_answers(path: str) -> List[TextPair]:
    """Answers JSONL: {"query_id", "candidate", "reference"} per line"""
    pairs = []
    for line_no, record in read_jsonl(path):
        query_id = require_field(record, "query_id", str, path, line_no)
        candidate = require_field(record, "candidate", str, path, line_no)
        reference = require_field(record, "reference", str, path, line_no)
        if not tokenize(reference):
            raise SchemaError(path, line_no, "reference", "empty")
        pairs.append(TextPair(query_id, candidate, reference))
    return pairs
