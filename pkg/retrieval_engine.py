"""
Retrieval Engine - exact cosine k-NN over embedded chunks and the upstream
metric suite (presence-based, order-sensitive and threshold-driven families)
"""
import io
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

from config import *
from corpus_builder import Chunk, EvalQuery
from embedding_engine import FeatureExtractor, ModelParams, embed, is_degenerate
from errors import ConfigError, DataIntegrityError, DegenerateInputError
from tensor_ops import Vec64, l2_norm

console = Console()
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VectorIndex:
    ids: Tuple[str, ...]
    embeddings: np.ndarray
    norms: np.ndarray
    excluded: Tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def known_ids(self) -> Set[str]:
        return set(self.ids) | set(self.excluded)

    def __len__(self):
        return len(self.ids)

    def to_bytes(self) -> bytes:
        return "\n".join(self.ids).encode('utf-8') + b"\0" + self.embeddings.tobytes()


@dataclass(frozen=True)
class RankedList:
    query_id: str
    ranked: Tuple[Tuple[str, float], ...]
    k: int

    @property
    def ids(self) -> List[str]:
        return [chunk_id for chunk_id, _ in self.ranked]

    @property
    def scores(self) -> List[float]:
        return [score for _, score in self.ranked]


@dataclass
class MetricReport:
    values: Dict[str, float]
    ks: List[int]
    per_query: List[Dict[str, float]] = field(default_factory=list, repr=False)

    def scaled(self, percent: bool = False) -> Dict[str, float]:
        return {name: value * 100.0 if percent else value for name, value in self.values.items()}

    def to_json(self, percent: bool = False) -> str:
        return json.dumps(self.scaled(percent), indent=2) + "\n"

    def to_csv(self, run_name: str, percent: bool = False) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["run", "metric", "value"])
        for name, value in self.scaled(percent).items():
            writer.writerow([run_name, name, repr(value)])
        return buffer.getvalue()

    def display(self, title: str = "Retrieval Metrics", percent: bool = False):
        table = Table(title=f"🔍 {title}")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green")
        for name, value in self.scaled(percent).items():
            table.add_row(name, f"{value:.2f}" if percent else f"{value:.4f}")
        console.print(table)


def build_index(params: ModelParams, extractor: FeatureExtractor, corpus: Sequence[Chunk]) -> VectorIndex:
    """Embed every chunk; zero embeddings are kept out of retrieval with a warning"""
    if not corpus:
        raise ConfigError("cannot index an empty corpus")
    seen = set()
    ids, rows, excluded = [], [], []
    for chunk in corpus:
        if chunk.chunk_id in seen:
            raise DataIntegrityError("duplicate chunk id in corpus", [chunk.chunk_id])
        seen.add(chunk.chunk_id)
        features = extractor.featurize(chunk.text)
        vector = embed(params, features) if not is_degenerate(features) else None
        if vector is None or not np.any(vector):
            logger.warning("chunk %s has a zero embedding and is excluded from retrieval", chunk.chunk_id)
            excluded.append(chunk.chunk_id)
            continue
        ids.append(chunk.chunk_id)
        rows.append(vector)

    embeddings = np.vstack(rows) if rows else np.zeros((0, params.d_out), dtype=np.float64)
    norms = np.sqrt((embeddings * embeddings).sum(axis=1))
    embeddings.setflags(write=False)
    norms.setflags(write=False)
    return VectorIndex(tuple(ids), embeddings, norms, tuple(excluded))


def knn(index: VectorIndex, query_embedding: Vec64, k: int, query_id: str = "") -> RankedList:
    """Exact top-k by descending cosine; ties go to the smaller chunk id"""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    query_norm = l2_norm(query_embedding)
    if query_norm == 0.0:
        raise DegenerateInputError("query embedding has zero norm")
    # Row-wise reductions give identical rows identical scores
    scores = (index.embeddings * query_embedding).sum(axis=1) / (index.norms * query_norm)
    order = sorted(range(len(index.ids)), key=lambda i: (-scores[i], index.ids[i]))[:k]
    return RankedList(query_id, tuple((index.ids[i], float(scores[i])) for i in order), k)


def _check_k(ranked: RankedList, k: int):
    if k < 1 or k > ranked.k:
        raise ConfigError(f"k={k} outside [1, {ranked.k}] for this ranked list")


def metric_hit(ranked: RankedList, golden: Set[str], k: int) -> int:
    _check_k(ranked, k)
    return int(any(chunk_id in golden for chunk_id in ranked.ids[:k]))


def metric_em(ranked: RankedList, golden: Set[str], k: int) -> int:
    """1 when every golden id is inside the top k"""
    _check_k(ranked, k)
    return int(set(golden) <= set(ranked.ids[:k]))


def metric_mrr(ranked: RankedList, golden: Set[str]) -> float:
    for rank, chunk_id in enumerate(ranked.ids, 1):
        if chunk_id in golden:
            return 1.0 / rank
    return 0.0


def metric_ap(ranked: RankedList, golden: Set[str]) -> float:
    if not golden:
        return 0.0
    found = 0
    total = 0.0
    for rank, chunk_id in enumerate(ranked.ids, 1):
        if chunk_id in golden:
            found += 1
            total += found / rank
    return total / len(golden)


def metric_dcg(ranked: RankedList, golden: Set[str], k: int) -> Tuple[float, float, float]:
    """Binary-gain (dcg, idcg, ndcg) at k with log2(i + 1) discounts"""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, chunk_id in enumerate(ranked.ids[:k], 1) if chunk_id in golden)
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(golden), k) + 1))
    ndcg = dcg / idcg if idcg > 0 else 0.0
    return dcg, idcg, ndcg


def metric_prf(ranked: RankedList, golden: Set[str], k: int, theta: float) -> Tuple[float, float, float, float]:
    """(precision@k, recall@k, accuracy@k, F1 of precision@1 and recall@1)"""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not -1.0 <= theta <= 1.0:
        raise ConfigError(f"theta must be in [-1, 1], got {theta}")
    hits_k = sum(1 for chunk_id in ranked.ids[:k] if chunk_id in golden)
    pre_k = hits_k / k
    rec_k = hits_k / len(golden) if golden else 0.0
    acc_k = sum(1 for score in ranked.scores[:k] if score > theta) / k

    hits_1 = sum(1 for chunk_id in ranked.ids[:1] if chunk_id in golden)
    pre_1 = float(hits_1)
    rec_1 = hits_1 / len(golden) if golden else 0.0
    f1 = 2 * pre_1 * rec_1 / (pre_1 + rec_1) if pre_1 + rec_1 > 0 else 0.0
    return pre_k, rec_k, acc_k, f1


def metric_names(ks: Sequence[int]) -> List[str]:
    ks = sorted(set(ks))
    names = [f"hit@{ks[0]}", f"hit@{ks[-1]}", "em", "mrr", "map", "ndcg", "dcg", "idcg", "f1"]
    names += [f"acc@{k}" for k in ks]
    names += [f"rec@{k}" for k in ks]
    names += [f"pre@{k}" for k in ks]
    return list(dict.fromkeys(names))


def query_metrics(ranked: RankedList, golden: Set[str], ks: Sequence[int], theta: float,
                  acc_mode: str = "threshold") -> Dict[str, float]:
    """Every report metric for one query"""
    ks = sorted(set(ks))
    k_max = ks[-1]
    dcg, idcg, ndcg = metric_dcg(ranked, golden, k_max)
    values = {
        f"hit@{ks[0]}": float(metric_hit(ranked, golden, ks[0])),
        f"hit@{k_max}": float(metric_hit(ranked, golden, k_max)),
        "em": float(metric_em(ranked, golden, k_max)),
        "mrr": metric_mrr(ranked, golden),
        "map": metric_ap(ranked, golden),
        "ndcg": ndcg,
        "dcg": dcg,
        "idcg": idcg,
    }
    per_k = {k: metric_prf(ranked, golden, k, theta) for k in ks}
    values["f1"] = per_k[ks[0]][3]
    for k in ks:
        acc = per_k[k][2] if acc_mode == "threshold" else float(metric_hit(ranked, golden, k))
        values[f"acc@{k}"] = acc
    for k in ks:
        values[f"rec@{k}"] = per_k[k][1]
    for k in ks:
        values[f"pre@{k}"] = per_k[k][0]
    return {name: values[name] for name in metric_names(ks)}


def evaluate(index: VectorIndex, params: ModelParams, extractor: FeatureExtractor,
             eval_set: Sequence[EvalQuery], ks: Sequence[int] = tuple(DEFAULT_KS),
             theta: float = DEFAULT_THETA, acc_mode: str = "threshold") -> MetricReport:
    """Per-query metrics averaged over the eval set, in input order"""
    if not eval_set:
        raise ConfigError("eval set is empty")
    if not ks or min(ks) < 1:
        raise ConfigError(f"ks must be positive integers, got {list(ks)}")
    if acc_mode not in ACC_MODES:
        raise ConfigError(f"acc_mode must be one of {ACC_MODES}, got {acc_mode!r}")

    known = index.known_ids
    missing = [g for q in eval_set for g in q.golden_ids if g not in known]
    if missing:
        raise DataIntegrityError("golden ids absent from the index", missing)

    ks = sorted(set(ks))
    per_query = []
    for position, query in enumerate(eval_set):
        query_id = str(position)
        features = extractor.featurize(query.query)
        embedding = embed(params, features) if not is_degenerate(features) else None
        if embedding is None or l2_norm(embedding) == 0.0:
            logger.warning("eval query %s embeds to zero; scored as an empty ranking", query_id)
            ranked = RankedList(query_id, (), ks[-1])
        else:
            ranked = knn(index, embedding, ks[-1], query_id)
        per_query.append(query_metrics(ranked, set(query.golden_ids), ks, theta, acc_mode))

    names = metric_names(ks)
    values = {name: math.fsum(row[name] for row in per_query) / len(per_query) for name in names}
    return MetricReport(values, list(ks), per_query)


def load_report(path: str) -> Dict[str, float]:
    from jsonl_store import read_json

    data = read_json(path)
    if not isinstance(data, dict) or not all(isinstance(v, (int, float)) for v in data.values()):
        raise ConfigError(f"{path} is not a flat metric report")
    return {name: float(value) for name, value in data.items()}
