"""
Embedding Engine - the trainable encoder and its two objectives
Hashed bag-of-words features feed a single linear map W (d_out x d_in).
Queries and chunks share W. Training minimises the in-batch InfoNCE loss,
optionally plus a similarity-matching distillation penalty against a frozen
copy of the global model. Both gradients are analytic.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from errors import ConfigError, DegenerateInputError, DimensionError, SchemaError
from jsonl_store import read_json, write_text
from tensor_ops import Vec64, as_mat, as_vec, matvec, require_finite

logger = logging.getLogger(__name__)

SimRow = Vec64


class FeatureExtractor:
    """Hashes space-separated tokens into d_in buckets, L2-normalised counts"""

    def __init__(self, d_in: int, hash_seed: int = 0):
        if d_in < 1:
            raise ConfigError("d_in must be >= 1")
        self.d_in = d_in
        self.hash_seed = hash_seed
        self._key = (hash_seed & ((1 << 64) - 1)).to_bytes(8, 'little')
        self._buckets: Dict[str, int] = {}

    def bucket(self, token: str) -> int:
        cached = self._buckets.get(token)
        if cached is None:
            digest = hashlib.blake2b(token.encode('utf-8'), digest_size=8, key=self._key).digest()
            cached = int.from_bytes(digest, 'little') % self.d_in
            self._buckets[token] = cached
        return cached

    def featurize(self, text: str) -> Vec64:
        """Feature vector of text; the zero vector means 'degenerate'"""
        counts = np.zeros(self.d_in, dtype=np.float64)
        for token in text.split(" "):
            if token:
                counts[self.bucket(token)] += 1.0
        norm = np.sqrt(np.dot(counts, counts))
        if norm > 0.0:
            counts /= norm
        return as_vec(counts)


def is_degenerate(features: Vec64) -> bool:
    return not np.any(features)


class ModelParams:
    """Encoder weights W, immutable; flattening is row-major"""

    def __init__(self, w):
        self.w = as_mat(w)

    @property
    def d_out(self) -> int:
        return self.w.shape[0]

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    @property
    def size(self) -> int:
        return self.w.size

    def flatten(self) -> Vec64:
        return as_vec(self.w.ravel(order='C'))

    @classmethod
    def from_flat(cls, flat, d_in: int, d_out: int) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (d_in * d_out,):
            raise DimensionError(f"flat parameters of length {flat.size}, expected {d_in * d_out}")
        return cls(flat.reshape((d_out, d_in), order='C'))

    def apply_delta(self, delta: Vec64) -> "ModelParams":
        return ModelParams.from_flat(self.flatten() + delta, self.d_in, self.d_out)

    def bitwise_equal(self, other: "ModelParams") -> bool:
        return self.w.shape == other.w.shape and self.w.tobytes() == other.w.tobytes()

    def to_json(self) -> str:
        """{"d_in", "d_out", "w"} with 17 significant digits per float"""
        values = ", ".join(format(float(x), '.17g') for x in self.w.ravel(order='C'))
        return f'{{"d_in": {self.d_in}, "d_out": {self.d_out}, "w": [{values}]}}\n'

    @classmethod
    def from_json(cls, text: str, source: str = "<params>") -> "ModelParams":
        return cls.from_dict(json.loads(text), source)

    @classmethod
    def from_dict(cls, data: Dict, source: str = "<params>") -> "ModelParams":
        if not isinstance(data, dict):
            raise SchemaError(source, 1, 'd_in', "expected a JSON object with")
        for key in ('d_in', 'd_out', 'w'):
            if key not in data:
                raise SchemaError(source, 1, key)
        for key in ('d_in', 'd_out'):
            if isinstance(data[key], bool) or not isinstance(data[key], int) or data[key] < 1:
                raise SchemaError(source, 1, key, "expected a positive integer for")
        weights = data['w']
        if not isinstance(weights, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in weights):
            raise SchemaError(source, 1, 'w', "expected a list of numbers for")
        return cls.from_flat([float(x) for x in weights], data['d_in'], data['d_out'])

    def save(self, path: str):
        write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str) -> "ModelParams":
        return cls.from_dict(read_json(path), path)

    def __repr__(self):
        return f"<ModelParams {self.d_out}x{self.d_in}>"


@dataclass(frozen=True)
class Batch:
    """Aligned query/chunk feature rows; row i of each forms the positive pair"""
    queries: np.ndarray
    chunks: np.ndarray

    def __post_init__(self):
        if self.queries.ndim != 2 or self.queries.shape != self.chunks.shape:
            raise DimensionError(f"batch shapes differ: {self.queries.shape} vs {self.chunks.shape}")
        if self.queries.shape[0] < 1:
            raise ConfigError("a batch needs at least one pair")

    @classmethod
    def from_vectors(cls, queries: Sequence[Vec64], chunks: Sequence[Vec64]) -> "Batch":
        if len(queries) != len(chunks):
            raise DimensionError(f"{len(queries)} queries but {len(chunks)} chunks")
        if not queries:
            raise ConfigError("a batch needs at least one pair")
        return cls(np.vstack(queries), np.vstack(chunks))

    @property
    def size(self) -> int:
        return self.queries.shape[0]


def embed(params: ModelParams, x: Vec64) -> Vec64:
    if x.shape[0] != params.d_in:
        raise DimensionError(f"feature length {x.shape[0]} does not match d_in={params.d_in}")
    return matvec(params.w, x)


def _encode(w: np.ndarray, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise embeddings, normalised; returns (unit rows, norms)"""
    if features.shape[1] != w.shape[1]:
        raise DimensionError(f"feature width {features.shape[1]} does not match d_in={w.shape[1]}")
    h = features @ w.T
    norms = np.sqrt(np.einsum('ij,ij->i', h, h))
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"zero-norm embedding at batch row {int(np.flatnonzero(norms == 0.0)[0])}")
    return h / norms[:, None], norms


def _check_tau(tau: float):
    if not tau > 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")


def _infonce_value_and_grad(w: np.ndarray, batch: Batch, tau: float,
                            want_grad: bool = True) -> Tuple[float, np.ndarray]:
    _check_tau(tau)
    un, nu = _encode(w, batch.queries)
    vn, nv = _encode(w, batch.chunks)
    n = batch.size

    sims = un @ vn.T
    logits = sims / tau
    row_max = logits.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(logits - row_max).sum(axis=1))
    loss = float(np.mean(lse - np.diag(logits)))
    if not want_grad:
        return loss, None

    probs = np.exp(logits - lse[:, None])
    d_sims = (probs - np.eye(n)) / (n * tau)
    d_u = (d_sims @ vn - (d_sims * sims).sum(axis=1)[:, None] * un) / nu[:, None]
    d_v = (d_sims.T @ un - (d_sims * sims).sum(axis=0)[:, None] * vn) / nv[:, None]
    grad = d_u.T @ batch.queries + d_v.T @ batch.chunks
    return loss, require_finite(grad, "InfoNCE gradient")


def pair_similarities(params: ModelParams, batch: Batch) -> SimRow:
    """z_i = cos(W q_i, W c_i) for every aligned pair"""
    un, _ = _encode(params.w, batch.queries)
    vn, _ = _encode(params.w, batch.chunks)
    return as_vec(np.einsum('ij,ij->i', un, vn))


def _kd_value_and_grad(w: np.ndarray, batch: Batch, z_global: SimRow,
                       want_grad: bool = True) -> Tuple[float, np.ndarray]:
    un, nu = _encode(w, batch.queries)
    vn, nv = _encode(w, batch.chunks)
    z_local = np.einsum('ij,ij->i', un, vn)
    if z_local.shape != z_global.shape:
        raise DimensionError(f"teacher similarities of length {z_global.shape[0]}, batch of {z_local.shape[0]}")
    diff = z_local - z_global
    loss = float(np.mean(diff * diff))
    if not want_grad:
        return loss, None

    g = 2.0 * diff / batch.size
    d_u = g[:, None] * (vn - z_local[:, None] * un) / nu[:, None]
    d_v = g[:, None] * (un - z_local[:, None] * vn) / nv[:, None]
    grad = d_u.T @ batch.queries + d_v.T @ batch.chunks
    return loss, require_finite(grad, "distillation gradient")


def infonce_loss(params: ModelParams, batch: Batch, tau: float) -> float:
    return _infonce_value_and_grad(params.w, batch, tau, want_grad=False)[0]


def infonce_grad(params: ModelParams, batch: Batch, tau: float) -> Vec64:
    """dL/dW of the InfoNCE loss, flattened row-major"""
    return as_vec(_infonce_value_and_grad(params.w, batch, tau)[1].ravel(order='C'))


def kd_loss(z_local: Sequence[float], z_global: Sequence[float]) -> float:
    """Mean squared gap between local and teacher pair similarities"""
    z_local = as_vec(z_local)
    z_global = as_vec(z_global)
    if z_local.shape != z_global.shape:
        raise DimensionError(f"length mismatch: {z_local.shape[0]} vs {z_global.shape[0]}")
    if z_local.shape[0] < 1:
        raise DimensionError("similarity rows must be nonempty")
    diff = z_local - z_global
    return float(np.mean(diff * diff))


def kd_grad(params_local: ModelParams, params_global: ModelParams, batch: Batch) -> Vec64:
    """Gradient of the distillation penalty w.r.t. the local weights; teacher frozen"""
    if params_local.w.shape != params_global.w.shape:
        raise DimensionError(f"local {params_local.w.shape} vs global {params_global.w.shape}")
    z_global = pair_similarities(params_global, batch)
    return as_vec(_kd_value_and_grad(params_local.w, batch, z_global)[1].ravel(order='C'))


def combined_loss(params: ModelParams, teacher: ModelParams, batch: Batch,
                  tau: float, lambda_kd: float) -> float:
    loss = infonce_loss(params, batch, tau)
    if lambda_kd > 0.0:
        z_global = pair_similarities(teacher, batch)
        loss += lambda_kd * _kd_value_and_grad(params.w, batch, z_global, want_grad=False)[0]
    return loss


def train_step(params: ModelParams, teacher: ModelParams, batch: Batch, tau: float,
               lambda_kd: float, eta: float) -> Tuple[ModelParams, float]:
    """One SGD step on InfoNCE + lambda_kd * KD; returns (new params, loss before the step)"""
    if eta < 0.0:
        raise ConfigError(f"learning rate must be non-negative, got {eta}")
    if lambda_kd < 0.0:
        raise ConfigError(f"lambda_kd must be non-negative, got {lambda_kd}")

    loss, grad = _infonce_value_and_grad(params.w, batch, tau)
    if lambda_kd > 0.0:
        z_global = pair_similarities(teacher, batch)
        kd_value, kd_gradient = _kd_value_and_grad(params.w, batch, z_global)
        loss += lambda_kd * kd_value
        grad = grad + lambda_kd * kd_gradient
    if eta == 0.0:
        return params, loss
    return ModelParams(params.w - eta * grad), loss


def combined_step(params: ModelParams, teacher: ModelParams, batch: Batch, tau: float,
                  lambda_kd: float, eta: float) -> ModelParams:
    return train_step(params, teacher, batch, tau, lambda_kd, eta)[0]


def batch_from_pairs(extractor: FeatureExtractor, pairs: List[Tuple[str, str]]) -> Batch:
    """Featurize (query, chunk) texts, dropping pairs with an empty side"""
    queries, chunks = [], []
    for query, chunk in pairs:
        q, c = extractor.featurize(query), extractor.featurize(chunk)
        if is_degenerate(q) or is_degenerate(c):
            logger.warning("skipping pair with empty text: %r / %r", query[:40], chunk[:40])
            continue
        queries.append(q)
        chunks.append(c)
    return Batch.from_vectors(queries, chunks)
