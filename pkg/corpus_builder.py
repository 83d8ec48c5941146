"""
Synthetic Query-Chunk Corpus Builder
Generates seeded training pairs, held-out eval queries and a retrieval corpus
whose queries and chunks share no surface tokens: a hidden bijection links
each query token to one chunk token, so retrieval quality reflects learned
alignment rather than lexical overlap.
"""
import glob
import logging
import math
import os
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from rich.console import Console
from rich.table import Table

from config import *
from errors import ConfigError, DataIntegrityError, SchemaError
from jsonl_store import read_jsonl, require_field, write_jsonl

console = Console()
logger = logging.getLogger(__name__)

MAX_SEED = (1 << 64) - 1
HELD_OUT_ATTEMPTS_PER_QUERY = 1000


@dataclass(frozen=True)
class TrainPair:
    query: str
    chunk: str
    chunk_id: str
    client_id: int


@dataclass(frozen=True)
class EvalQuery:
    query: str
    golden_ids: Tuple[str, ...]


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str


@dataclass
class CorpusSpec:
    n_clients: int = DEFAULT_N_CLIENTS
    pairs_per_client: List[int] = field(default_factory=lambda: list(DEFAULT_PAIRS_PER_CLIENT))
    query_vocab_size: int = DEFAULT_VOCAB_SIZE
    chunk_vocab_size: int = DEFAULT_VOCAB_SIZE
    tokens_per_chunk: int = DEFAULT_TOKENS_PER_CHUNK
    tokens_per_query: int = DEFAULT_TOKENS_PER_QUERY
    overlap_fraction: float = DEFAULT_OVERLAP_FRACTION
    distractor_chunks: int = DEFAULT_DISTRACTOR_CHUNKS
    seed: int = DEFAULT_SEED
    eval_queries: int = DEFAULT_EVAL_QUERIES
    client_slice_overlap: float = DEFAULT_CLIENT_SLICE_OVERLAP

    def __post_init__(self):
        self.validate()

    @property
    def signal_tokens(self) -> int:
        """Query tokens whose bijective partner is planted in the golden chunk"""
        return math.ceil(round(self.overlap_fraction * self.tokens_per_query, 9))

    def validate(self):
        """Raise ConfigError naming the first offending key"""
        def fail(key, detail):
            raise ConfigError(f"corpus.{key}: {detail}")

        for key in ('n_clients', 'query_vocab_size', 'chunk_vocab_size',
                    'tokens_per_chunk', 'tokens_per_query', 'distractor_chunks',
                    'seed', 'eval_queries'):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int):
                fail(key, f"expected an integer, got {value!r}")

        if self.n_clients < 1:
            fail('n_clients', "must be >= 1")
        if len(self.pairs_per_client) != self.n_clients:
            fail('pairs_per_client', f"needs {self.n_clients} entries, got {len(self.pairs_per_client)}")
        if any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in self.pairs_per_client):
            fail('pairs_per_client', "every entry must be an integer >= 1")
        if self.query_vocab_size != self.chunk_vocab_size:
            fail('chunk_vocab_size', "must equal query_vocab_size (bijection)")
        if self.query_vocab_size < 1:
            fail('query_vocab_size', "must be >= 1")
        if not 1 <= self.tokens_per_query <= self.query_vocab_size:
            fail('tokens_per_query', "must be in [1, query_vocab_size]")
        if not 1 <= self.tokens_per_chunk <= self.chunk_vocab_size:
            fail('tokens_per_chunk', "must be in [1, chunk_vocab_size]")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            fail('overlap_fraction', f"must be in [0, 1], got {self.overlap_fraction}")
        if not 0.0 <= self.client_slice_overlap <= 1.0:
            fail('client_slice_overlap', f"must be in [0, 1], got {self.client_slice_overlap}")
        if self.distractor_chunks < 0:
            fail('distractor_chunks', "must be >= 0")
        if self.eval_queries < 0:
            fail('eval_queries', "must be >= 0")
        if not 0 <= self.seed <= MAX_SEED:
            fail('seed', "must be a 64-bit unsigned integer")
        if self.signal_tokens > self.tokens_per_chunk:
            fail('tokens_per_chunk', "too small to hold the planted partner tokens")
        filler = self.tokens_per_chunk - self.signal_tokens
        if filler > self.chunk_vocab_size - self.tokens_per_query:
            fail('tokens_per_chunk', "not enough non-partner chunk tokens for filler")
        smallest_block = self.query_vocab_size // self.n_clients
        if smallest_block < self.tokens_per_query:
            fail('n_clients', "client vocabulary slices are smaller than tokens_per_query")


@dataclass
class PartitionReport:
    counts: Dict[int, int] = field(default_factory=dict)
    vocab_histograms: Dict[int, Counter] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def counts_list(self) -> List[int]:
        return [self.counts[k] for k in sorted(self.counts)]

    def display(self):
        table = Table(title="Client Partition")
        table.add_column("Client", style="cyan")
        table.add_column("Pairs", style="green")
        table.add_column("Distinct query tokens", style="green")
        for client_id in sorted(self.counts):
            table.add_row(str(client_id), str(self.counts[client_id]),
                          str(len(self.vocab_histograms[client_id])))
        console.print(table)


def _token_width(vocab_size: int) -> int:
    return max(4, len(str(vocab_size - 1)))


def query_token(index: int, width: int) -> str:
    return f"q{index:0{width}d}"


def chunk_token(index: int, width: int) -> str:
    return f"c{index:0{width}d}"


def chunk_id_for(index: int) -> str:
    return f"chunk-{index:06d}"


def client_slice(spec: CorpusSpec, client_id: int) -> List[int]:
    """Query-vocabulary indices a client draws from

    Client k owns the contiguous block [k*V/n, (k+1)*V/n) and borrows
    round(client_slice_overlap * (V - block)) further tokens cyclically after it.
    """
    vocab = spec.query_vocab_size
    start = client_id * vocab // spec.n_clients
    end = (client_id + 1) * vocab // spec.n_clients
    extra = int(round(spec.client_slice_overlap * (vocab - (end - start))))
    return list(range(start, end)) + [(end + i) % vocab for i in range(extra)]


class _PairFactory:
    """Builds query/chunk texts against one drawn bijection"""

    def __init__(self, spec: CorpusSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.width = _token_width(spec.query_vocab_size)
        self.bijection = list(range(spec.chunk_vocab_size))
        rng.shuffle(self.bijection)

    def query_tokens(self, population: List[int]) -> List[int]:
        return self.rng.sample(population, self.spec.tokens_per_query)

    def query_text(self, tokens: List[int]) -> str:
        return " ".join(query_token(t, self.width) for t in tokens)

    def golden_chunk_text(self, tokens: List[int]) -> str:
        signal = [self.bijection[t] for t in tokens[:self.spec.signal_tokens]]
        forbidden = {self.bijection[t] for t in tokens}
        candidates = [c for c in range(self.spec.chunk_vocab_size) if c not in forbidden]
        filler = self.rng.sample(candidates, self.spec.tokens_per_chunk - len(signal))
        chunk = signal + filler
        self.rng.shuffle(chunk)
        return " ".join(chunk_token(c, self.width) for c in chunk)

    def distractor_text(self) -> str:
        chunk = self.rng.sample(range(self.spec.chunk_vocab_size), self.spec.tokens_per_chunk)
        return " ".join(chunk_token(c, self.width) for c in chunk)


def generate(spec: CorpusSpec) -> Tuple[List[TrainPair], List[EvalQuery], List[Chunk]]:
    """Generate training pairs, held-out eval queries and the retrieval corpus

    Pure function of spec: the same spec always yields the same records.
    """
    spec.validate()
    rng = random.Random(spec.seed)
    factory = _PairFactory(spec, rng)

    pairs: List[TrainPair] = []
    next_chunk = 0
    for client_id, n_pairs in enumerate(spec.pairs_per_client):
        population = client_slice(spec, client_id)
        for _ in range(n_pairs):
            tokens = factory.query_tokens(population)
            pairs.append(TrainPair(
                query=factory.query_text(tokens),
                chunk=factory.golden_chunk_text(tokens),
                chunk_id=chunk_id_for(next_chunk),
                client_id=client_id,
            ))
            next_chunk += 1

    seen = {pair.query for pair in pairs}
    everything = list(range(spec.query_vocab_size))
    eval_texts: List[Tuple[str, str]] = []
    attempts = 0
    while len(eval_texts) < spec.eval_queries:
        attempts += 1
        if attempts > HELD_OUT_ATTEMPTS_PER_QUERY * max(1, spec.eval_queries):
            raise ConfigError("corpus.eval_queries: vocabulary too small to draw held-out queries")
        tokens = factory.query_tokens(everything)
        text = factory.query_text(tokens)
        if text in seen:
            continue
        seen.add(text)
        eval_texts.append((text, factory.golden_chunk_text(tokens)))

    # Golden chunks and distractors are shuffled together before ids are
    # assigned so id order carries no information about relevance.
    pool = [(i, chunk) for i, (_, chunk) in enumerate(eval_texts)]
    pool += [(None, factory.distractor_text()) for _ in range(spec.distractor_chunks)]
    rng.shuffle(pool)

    corpus: List[Chunk] = []
    golden_for: Dict[int, str] = {}
    for eval_index, text in pool:
        chunk_id = chunk_id_for(next_chunk)
        next_chunk += 1
        corpus.append(Chunk(chunk_id, text))
        if eval_index is not None:
            golden_for[eval_index] = chunk_id

    eval_queries = [EvalQuery(text, (golden_for[i],)) for i, (text, _) in enumerate(eval_texts)]
    logger.debug("generated %d pairs, %d eval queries, %d corpus chunks",
                 len(pairs), len(eval_queries), len(corpus))
    return pairs, eval_queries, corpus


def partition_report(pairs: List[TrainPair]) -> PartitionReport:
    """Per-client pair counts and query-token histograms"""
    report = PartitionReport()
    for pair in pairs:
        report.counts[pair.client_id] = report.counts.get(pair.client_id, 0) + 1
        report.vocab_histograms.setdefault(pair.client_id, Counter()).update(
            t for t in pair.query.split(" ") if t)
    report.counts = dict(sorted(report.counts.items()))
    report.vocab_histograms = dict(sorted(report.vocab_histograms.items()))
    return report


def _nonempty(value: str, field_name: str, path: str, line_no: int) -> str:
    if not value:
        raise SchemaError(path, line_no, field_name, "empty value for")
    return value


def save_pairs(pairs: List[TrainPair], path: str):
    write_jsonl(path, ({"query": p.query, "chunk": p.chunk, "chunk_id": p.chunk_id,
                        "client_id": p.client_id} for p in pairs))


def load_pairs(path: str) -> List[TrainPair]:
    pairs = []
    seen = set()
    for line_no, record in read_jsonl(path):
        query = _nonempty(require_field(record, "query", str, path, line_no), "query", path, line_no)
        chunk = _nonempty(require_field(record, "chunk", str, path, line_no), "chunk", path, line_no)
        chunk_id = require_field(record, "chunk_id", str, path, line_no)
        client_id = require_field(record, "client_id", int, path, line_no)
        if client_id < 0:
            raise SchemaError(path, line_no, "client_id", "negative value for")
        if chunk_id in seen:
            raise SchemaError(path, line_no, "chunk_id", "duplicate value for")
        seen.add(chunk_id)
        pairs.append(TrainPair(query, chunk, chunk_id, client_id))
    return pairs


def save_corpus(corpus: List[Chunk], path: str):
    write_jsonl(path, ({"chunk_id": c.chunk_id, "text": c.text} for c in corpus))


def load_corpus(path: str) -> List[Chunk]:
    corpus = []
    seen = set()
    for line_no, record in read_jsonl(path):
        chunk_id = require_field(record, "chunk_id", str, path, line_no)
        text = require_field(record, "text", str, path, line_no)
        if chunk_id in seen:
            raise SchemaError(path, line_no, "chunk_id", "duplicate value for")
        seen.add(chunk_id)
        corpus.append(Chunk(chunk_id, text))
    return corpus


def save_eval(eval_queries: List[EvalQuery], corpus: List[Chunk], eval_path: str, corpus_path: str):
    write_jsonl(eval_path, ({"query": q.query, "golden_ids": list(q.golden_ids)} for q in eval_queries))
    save_corpus(corpus, corpus_path)


def load_eval(eval_path: str, corpus_path: str) -> Tuple[List[EvalQuery], List[Chunk]]:
    """Load eval queries with their companion corpus; golden ids must resolve"""
    corpus = load_corpus(corpus_path)
    known = {c.chunk_id for c in corpus}
    queries = []
    missing = []
    for line_no, record in read_jsonl(eval_path):
        query = _nonempty(require_field(record, "query", str, eval_path, line_no), "query", eval_path, line_no)
        golden = require_field(record, "golden_ids", list, eval_path, line_no)
        if not golden or not all(isinstance(g, str) for g in golden):
            raise SchemaError(eval_path, line_no, "golden_ids", "expected a nonempty string list for")
        missing.extend(g for g in golden if g not in known)
        queries.append(EvalQuery(query, tuple(golden)))
    if missing:
        raise DataIntegrityError("eval golden ids missing from corpus", missing)
    return queries, corpus


def save_dataset(out_dir: str, pairs: List[TrainPair], eval_queries: List[EvalQuery],
                 corpus: List[Chunk]) -> List[str]:
    """Write one pairs file per client plus eval and corpus files; return the paths"""
    written = []
    for client_id in sorted({p.client_id for p in pairs}):
        path = os.path.join(out_dir, PAIRS_FILE_PATTERN.format(client_id=client_id))
        save_pairs([p for p in pairs if p.client_id == client_id], path)
        written.append(path)
    eval_path = os.path.join(out_dir, EVAL_FILE)
    corpus_path = os.path.join(out_dir, CORPUS_FILE)
    save_eval(eval_queries, corpus, eval_path, corpus_path)
    written.extend([eval_path, corpus_path])
    return written


def _client_file_key(path: str) -> int:
    match = re.search(r"(\d+)\.jsonl$", path)
    return int(match.group(1)) if match else -1


def dataset_files(data_dir: str) -> List[str]:
    """Pairs files in client order, then the eval and corpus files"""
    pattern = os.path.join(data_dir, PAIRS_FILE_PATTERN.format(client_id="*"))
    paths = sorted(glob.glob(pattern), key=_client_file_key)
    return paths + [os.path.join(data_dir, EVAL_FILE), os.path.join(data_dir, CORPUS_FILE)]


def load_dataset(data_dir: str) -> Tuple[List[TrainPair], List[EvalQuery], List[Chunk]]:
    *pair_paths, eval_path, corpus_path = dataset_files(data_dir)
    pairs: List[TrainPair] = []
    for path in pair_paths:
        pairs.extend(load_pairs(path))
    eval_queries, corpus = load_eval(eval_path, corpus_path)
    return pairs, eval_queries, corpus
