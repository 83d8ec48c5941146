"""
Federated Training Engine
The round loop that drives every training strategy: client selection, local
contrastive training (optionally distilled against the broadcast global
model), plaintext or encrypted weighted aggregation of parameter deltas, and
the global update w <- w + sum_k (n_k / N) * delta_k.
"""
import hashlib
import logging
import math
import os
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from config import *
from corpus_builder import Chunk, EvalQuery, TrainPair
from embedding_engine import Batch, FeatureExtractor, ModelParams, is_degenerate, train_step
from errors import ConfigError, CryptoError, DimensionError, NumericError
from homomorphic import (FixedPointCodec, HeParams, NonceSource, aggregate, append_transcript,
                         decrypt_aggregate, encrypt_update, keygen)
from jsonl_store import append_jsonl, ensure_dir
from tensor_ops import Vec64, as_vec, l2_norm

console = Console()
logger = logging.getLogger(__name__)

MAX_SEED = (1 << 64) - 1
ClientSelector = Union[int, str, None]


@dataclass
class FedConfig:
    rounds: int = DEFAULT_ROUNDS
    local_epochs: int = DEFAULT_LOCAL_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    tau: float = DEFAULT_TAU
    lambda_kd: float = DEFAULT_LAMBDA_KD
    client_fraction: float = DEFAULT_CLIENT_FRACTION
    mode: str = "fede4rag"
    he_enabled: bool = True
    seed: int = DEFAULT_SEED
    d_in: int = DEFAULT_D_IN
    d_out: int = DEFAULT_D_OUT
    hash_seed: int = 0
    client_id: ClientSelector = None
    eval_every: int = 0
    he_transcript: bool = False
    he_seeded: bool = HE_SEEDED

    @property
    def effective_lambda_kd(self) -> float:
        """Distillation is part of fede4rag only"""
        return self.lambda_kd if self.mode == "fede4rag" else 0.0

    def validate(self):
        def fail(key, detail):
            raise ConfigError(f"fed.{key}: {detail}")

        for key in ('rounds', 'local_epochs', 'batch_size', 'seed', 'd_in', 'd_out',
                    'hash_seed', 'eval_every'):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, int):
                fail(key, f"expected an integer, got {value!r}")
        if self.mode not in TRAINING_MODES:
            fail('mode', f"unknown mode {self.mode!r}; valid modes: {', '.join(TRAINING_MODES)}")
        if self.rounds < 1:
            fail('rounds', "must be >= 1")
        if self.local_epochs < 1:
            fail('local_epochs', "must be >= 1")
        if self.batch_size < 1:
            fail('batch_size', "must be >= 1")
        if not self.lr > 0:
            fail('lr', "must be positive")
        if not self.tau > 0:
            fail('tau', "must be positive")
        if self.lambda_kd < 0:
            fail('lambda_kd', "must be >= 0")
        if not 0.0 < self.client_fraction <= 1.0:
            fail('client_fraction', "must be in (0, 1]")
        if not 0 <= self.seed <= MAX_SEED:
            fail('seed', "must be a 64-bit unsigned integer")
        if self.d_in < 1 or self.d_out < 1:
            fail('d_in' if self.d_in < 1 else 'd_out', "must be >= 1")
        if self.eval_every < 0:
            fail('eval_every', "must be >= 0")
        if self.client_id is not None and self.client_id not in ("max", "min") and (
                isinstance(self.client_id, bool) or not isinstance(self.client_id, int)):
            fail('client_id', "must be an integer, 'max' or 'min'")
        if self.mode == "independent" and self.client_id is None:
            fail('client_id', "independent mode needs a client id ('max', 'min' or an integer)")


@dataclass
class ClientState:
    client_id: int
    queries: np.ndarray
    chunks: np.ndarray
    pairs: List[TrainPair] = field(default_factory=list, repr=False)
    local_params: Optional[ModelParams] = None

    @property
    def n_k(self) -> int:
        return self.queries.shape[0]


@dataclass
class ClientUpdateStats:
    client_id: int
    losses: List[float]
    local_params: ModelParams = field(repr=False)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else 0.0


class ClientDelta(NamedTuple):
    client_id: int
    delta: Vec64
    n_k: int


@dataclass
class RoundRecord:
    round: int
    clients: List[int]
    client_losses: Dict[int, List[float]]
    mean_local_loss: float
    delta_norm: float
    metrics: Optional[Dict[str, float]] = None

    def to_dict(self) -> Dict:
        record = {"round": self.round, "clients": self.clients,
                  "mean_local_loss": self.mean_local_loss, "delta_norm": self.delta_norm}
        if self.metrics is not None:
            record["metrics"] = self.metrics
        return record


@dataclass
class EvalSet:
    queries: List[EvalQuery]
    corpus: List[Chunk]


def derive_seed(seed: int, *parts) -> int:
    """64-bit seed from the run seed and a path of labels / indices"""
    digest = hashlib.blake2b(struct.pack('<Q', seed), digest_size=8)
    for part in parts:
        digest.update(b'\x00' + str(part).encode('utf-8'))
    return int.from_bytes(digest.digest(), 'little')


def init_params(cfg: FedConfig) -> ModelParams:
    """Seeded uniform init in [-INIT_SCALE, INIT_SCALE]"""
    rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    return ModelParams(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(cfg.d_out, cfg.d_in)))


def build_clients(pairs: Sequence[TrainPair], extractor: FeatureExtractor) -> List[ClientState]:
    """Group pairs by client and featurize them; empty-text pairs are dropped"""
    grouped: Dict[int, List[TrainPair]] = {}
    for pair in pairs:
        grouped.setdefault(pair.client_id, []).append(pair)

    clients = []
    for client_id in sorted(grouped):
        kept, queries, chunks = [], [], []
        for pair in grouped[client_id]:
            q, c = extractor.featurize(pair.query), extractor.featurize(pair.chunk)
            if is_degenerate(q) or is_degenerate(c):
                logger.warning("client %d: dropping pair %s with empty text", client_id, pair.chunk_id)
                continue
            kept.append(pair)
            queries.append(q)
            chunks.append(c)
        if not kept:
            logger.warning("client %d has no usable pairs and is left out", client_id)
            continue
        clients.append(ClientState(client_id, np.vstack(queries), np.vstack(chunks), kept))
    return clients


def select_clients(all_ids: Sequence[int], fraction: float, round_seed: int) -> List[int]:
    """ceil(fraction * K) ids sampled without replacement, returned ascending"""
    if not all_ids:
        raise ConfigError("no clients to select from")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"client_fraction must be in (0, 1], got {fraction}")
    count = math.ceil(round(fraction * len(all_ids), 9))
    rng = random.Random(round_seed)
    return sorted(rng.sample(sorted(all_ids), count))


def client_update(state: ClientState, global_params: ModelParams, cfg: FedConfig,
                  round_seed: int) -> Tuple[Vec64, ClientUpdateStats]:
    """E epochs of seeded mini-batch SGD from the global model; returns the delta"""
    if state.n_k < 1:
        raise ConfigError(f"client {state.client_id} has an empty dataset")
    if state.queries.shape[1] != global_params.d_in:
        raise DimensionError(f"client features of width {state.queries.shape[1]}, model d_in={global_params.d_in}")

    rng = random.Random(round_seed)
    lambda_kd = cfg.effective_lambda_kd
    params = global_params
    order = list(range(state.n_k))
    losses = []
    for _ in range(cfg.local_epochs):
        rng.shuffle(order)
        for start in range(0, state.n_k, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            batch = Batch(state.queries[rows], state.chunks[rows])
            params, loss = train_step(params, global_params, batch, cfg.tau, lambda_kd, cfg.lr)
            losses.append(loss)

    delta = as_vec(params.flatten() - global_params.flatten())
    return delta, ClientUpdateStats(state.client_id, losses, params)


def aggregate_plain(deltas: Sequence[ClientDelta]) -> Vec64:
    """sum_k (n_k / N) * delta_k, summed in ascending client-id order"""
    if not deltas:
        raise ConfigError("nothing to aggregate")
    ordered = sorted(deltas, key=lambda d: d.client_id)
    length = ordered[0].delta.shape[0]
    total = sum(d.n_k for d in ordered)
    if total < 1:
        raise ConfigError("total client weight must be >= 1")

    acc = np.zeros(length, dtype=np.float64)
    for item in ordered:
        if item.delta.shape[0] != length:
            raise DimensionError(f"client {item.client_id} delta of length {item.delta.shape[0]}, expected {length}")
        acc = acc + (item.n_k / total) * item.delta
    return as_vec(acc)


def pick_independent_client(clients: Sequence[ClientState], selector: ClientSelector) -> ClientState:
    """Resolve 'max' / 'min' (most / fewest pairs, lowest id on ties) or an explicit id"""
    if selector == "max":
        return min(clients, key=lambda c: (-c.n_k, c.client_id))
    if selector == "min":
        return min(clients, key=lambda c: (c.n_k, c.client_id))
    for client in clients:
        if client.client_id == selector:
            return client
    raise ConfigError(f"client_id {selector!r} not found; clients: {[c.client_id for c in clients]}")


def pool_clients(clients: Sequence[ClientState]) -> ClientState:
    """All data in one client, concatenated in client-id order under the lowest id"""
    ordered = sorted(clients, key=lambda c: c.client_id)
    return ClientState(
        client_id=ordered[0].client_id,
        queries=np.vstack([c.queries for c in ordered]),
        chunks=np.vstack([c.chunks for c in ordered]),
        pairs=[p for c in ordered for p in c.pairs],
    )


class FederatedSimulator:
    """Runs one training strategy end to end and optionally writes its artifacts

    When out_dir is set, each round appends to the round log, writes
    checkpoints/round_<t>.json and (with he_transcript) the ciphertexts.
    """

    def __init__(self, cfg: FedConfig, clients: Sequence[ClientState],
                 eval_set: Optional[EvalSet] = None, he_params: Optional[HeParams] = None,
                 out_dir: Optional[str] = None, quiet: bool = False):
        cfg.validate()
        if not clients:
            raise ConfigError("training needs at least one client with data")
        self.cfg = cfg
        self.clients = sorted(clients, key=lambda c: c.client_id)
        self.eval_set = eval_set
        self.extractor = FeatureExtractor(cfg.d_in, cfg.hash_seed)
        self.he_params = he_params
        self.out_dir = out_dir
        self.quiet = quiet
        self.records: List[RoundRecord] = []
        self.local_models: Dict[int, ModelParams] = {}
        self._keys = None

    def run(self) -> Tuple[ModelParams, List[RoundRecord]]:
        cfg = self.cfg
        params = init_params(cfg)
        if cfg.mode == "vanilla":
            return params, []

        if cfg.mode == "central":
            participants = [pool_clients(self.clients)]
        elif cfg.mode == "independent":
            participants = [pick_independent_client(self.clients, cfg.client_id)]
        else:
            participants = list(self.clients)

        use_he = cfg.mode == "fede4rag" and cfg.he_enabled
        if use_he:
            self._setup_he(participants)
        if self.out_dir:
            self._prepare_out_dir()

        if not self.quiet:
            console.print(f"[blue]Training mode {cfg.mode}: {len(participants)} client(s), "
                          f"{cfg.rounds} round(s), HE {'on' if use_he else 'off'}[/blue]")

        for t in range(1, cfg.rounds + 1):
            params = self._run_round(t, params, participants, use_he)
        return params, self.records

    def _setup_he(self, participants: Sequence[ClientState]):
        if self.he_params is None:
            self.he_params = HeParams(
                max_clients=max(DEFAULT_MAX_CLIENTS, len(participants)),
                max_weight=max(DEFAULT_MAX_WEIGHT, max(c.n_k for c in participants)),
            )
        if len(participants) > self.he_params.max_clients:
            raise ConfigError(f"he.max_clients={self.he_params.max_clients} is below the {len(participants)} clients")
        if max(c.n_k for c in participants) > self.he_params.max_weight:
            raise ConfigError("he.max_weight is below the largest client dataset")
        key_seed = derive_seed(self.cfg.seed, "he-keys") if self.cfg.he_seeded else None
        public_key, secret_key = keygen(self.he_params, key_seed)
        self._keys = (public_key, secret_key, FixedPointCodec.for_key(self.he_params, public_key))
        logger.info("trusted setup: %d-bit keypair issued to clients, public key to server",
                    self.he_params.modulus_bits)

    def _prepare_out_dir(self):
        ensure_dir(os.path.join(self.out_dir, CHECKPOINT_DIR))
        for name in (ROUND_LOG_FILE, HE_TRANSCRIPT_FILE):
            path = os.path.join(self.out_dir, name)
            if os.path.exists(path):
                os.remove(path)

    def _run_round(self, t: int, params: ModelParams, participants: Sequence[ClientState],
                   use_he: bool) -> ModelParams:
        cfg = self.cfg
        by_id = {c.client_id: c for c in participants}
        selected = select_clients(list(by_id), cfg.client_fraction, derive_seed(cfg.seed, "select", t))

        deltas: List[ClientDelta] = []
        losses: Dict[int, List[float]] = {}
        for client_id in selected:
            state = by_id[client_id]
            try:
                delta, stats = client_update(state, params, cfg, derive_seed(cfg.seed, t, client_id))
            except NumericError as e:
                raise type(e)(str(e), round_index=t, client_id=client_id) from e
            deltas.append(ClientDelta(client_id, delta, state.n_k))
            losses[client_id] = stats.losses
            self.local_models[client_id] = stats.local_params

        if use_he:
            update = self._aggregate_encrypted(t, deltas)
        else:
            update = aggregate_plain(deltas)

        try:
            params = params.apply_delta(update)
        except NumericError as e:
            raise NumericError(f"global update failed: {e}", round_index=t) from e

        record = RoundRecord(
            round=t,
            clients=selected,
            client_losses=losses,
            mean_local_loss=float(np.mean([np.mean(v) for v in losses.values()])),
            delta_norm=l2_norm(update),
        )
        if cfg.eval_every and t % cfg.eval_every == 0 and self.eval_set is not None:
            record.metrics = self._snapshot_metrics(params)
        self.records.append(record)
        self._write_round(record, params)

        if not self.quiet:
            console.print(f"🔄 Round {t}/{cfg.rounds}: clients {selected} "
                          f"loss [green]{record.mean_local_loss:.4f}[/green] "
                          f"|Δ| [cyan]{record.delta_norm:.3e}[/cyan]")
        logger.debug("round %d per-client losses: %s",
                     t, {k: v[-1] if v else None for k, v in losses.items()})
        return params

    def _aggregate_encrypted(self, t: int, deltas: Sequence[ClientDelta]) -> Vec64:
        public_key, secret_key, codec = self._keys
        ciphers = []
        for item in sorted(deltas, key=lambda d: d.client_id):
            nonces = NonceSource(derive_seed(self.cfg.seed, "nonce", t, item.client_id)) if self.cfg.he_seeded else None
            try:
                cipher = encrypt_update(public_key, codec, item.delta, item.n_k, nonces)
            except CryptoError as e:
                raise NumericError(f"encryption failed: {e}", round_index=t, client_id=item.client_id) from e
            if self.out_dir and self.cfg.he_transcript:
                append_transcript(os.path.join(self.out_dir, HE_TRANSCRIPT_FILE), item.client_id, t, cipher)
            ciphers.append(cipher)

        # server: sums ciphertexts without any key material
        summed = aggregate(ciphers, self.he_params.max_clients)
        total = sum(d.n_k for d in deltas)
        try:
            return decrypt_aggregate(secret_key, codec, summed, total)
        except CryptoError as e:
            raise NumericError(f"decryption failed: {e}", round_index=t) from e

    def _snapshot_metrics(self, params: ModelParams) -> Dict[str, float]:
        from retrieval_engine import build_index, evaluate

        index = build_index(params, self.extractor, self.eval_set.corpus)
        return evaluate(index, params, self.extractor, self.eval_set.queries).values

    def _write_round(self, record: RoundRecord, params: ModelParams):
        if not self.out_dir:
            return
        append_jsonl(os.path.join(self.out_dir, ROUND_LOG_FILE), record.to_dict())
        params.save(os.path.join(self.out_dir, CHECKPOINT_DIR, f"round_{record.round}.json"))

    def display_summary(self):
        table = Table(title=f"📊 Training Summary ({self.cfg.mode})")
        table.add_column("Round", style="cyan")
        table.add_column("Clients", style="green")
        table.add_column("Mean local loss", style="green")
        table.add_column("|Δ|", style="green")
        for record in self.records:
            table.add_row(str(record.round), str(record.clients),
                          f"{record.mean_local_loss:.4f}", f"{record.delta_norm:.3e}")
        console.print(table)


def run(cfg: FedConfig, clients: Sequence[ClientState], eval_set: Optional[EvalSet] = None,
        he_params: Optional[HeParams] = None) -> Tuple[ModelParams, List[RoundRecord]]:
    """Train with cfg.mode and return the final global model and round records"""
    return FederatedSimulator(cfg, clients, eval_set, he_params, quiet=True).run()
