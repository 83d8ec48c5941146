import os
import random
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from corpus_builder import CorpusSpec  # noqa: E402


@pytest.fixture
def tiny_spec():
    """Three small clients over a 24-token vocabulary"""
    return CorpusSpec(
        n_clients=3,
        pairs_per_client=[10, 12, 14],
        query_vocab_size=24,
        chunk_vocab_size=24,
        tokens_per_query=3,
        tokens_per_chunk=6,
        overlap_fraction=1.0,
        distractor_chunks=20,
        seed=7,
        eval_queries=10,
        client_slice_overlap=0.25,
    )


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
