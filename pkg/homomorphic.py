"""
Additively Homomorphic Secure Aggregation
Paillier keys (g = n + 1), a fixed-point codec that maps real vectors into the
plaintext space Z_n, and the client-encrypt / server-sum / client-decrypt
protocol used to average model deltas without the server seeing them.

The server-side entry point `aggregate` takes ciphertexts only; nothing on
that path can reach a SecretKey.
"""
import logging
import math
import random
import secrets
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import gmpy2

from config import *
from errors import ConfigError, CryptoError, DimensionError, EncodingOverflowError
from jsonl_store import append_jsonl, read_json, write_json
from tensor_ops import Vec64, as_vec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeParams:
    modulus_bits: int = DEFAULT_MODULUS_BITS
    frac_bits: int = DEFAULT_FRAC_BITS
    max_clients: int = DEFAULT_MAX_CLIENTS
    max_abs_value: float = DEFAULT_MAX_ABS_VALUE
    max_weight: int = DEFAULT_MAX_WEIGHT

    def __post_init__(self):
        if self.modulus_bits < 512 or self.modulus_bits % 2:
            raise ConfigError(f"he.modulus_bits: must be an even number >= 512, got {self.modulus_bits}")
        if self.frac_bits < 1:
            raise ConfigError("he.frac_bits: must be >= 1")
        if self.max_clients < 1:
            raise ConfigError("he.max_clients: must be >= 1")
        if self.max_weight < 1:
            raise ConfigError("he.max_weight: must be >= 1")
        if not self.max_abs_value > 0:
            raise ConfigError("he.max_abs_value: must be positive")
        # n >= 2^(bits-1), so half the plaintext space is at least 2^(bits-2)
        worst = (self.frac_bits + math.log2(self.max_abs_value)
                 + math.log2(self.max_clients) + math.log2(self.max_weight))
        if worst >= self.modulus_bits - 2:
            raise ConfigError("he: worst-case aggregate would wrap the plaintext space; "
                              "raise modulus_bits or lower frac_bits/max_abs_value/max_clients/max_weight")


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int
    nsquare: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'nsquare', self.n * self.n)

    def to_dict(self) -> Dict[str, str]:
        return {"n": format(self.n, 'x'), "g": format(self.g, 'x')}


@dataclass(frozen=True)
class SecretKey:
    lam: int
    mu: int
    public_key: PublicKey = field(repr=False)

    def to_dict(self) -> Dict[str, str]:
        return {"lambda": format(self.lam, 'x'), "mu": format(self.mu, 'x')}


@dataclass(frozen=True)
class CiphertextVec:
    public_key: PublicKey = field(repr=False)
    ciphertexts: Tuple[int, ...]

    def __len__(self):
        return len(self.ciphertexts)


class NonceSource:
    """Encryption randomness: a seeded stream in test mode, OS entropy otherwise"""

    def __init__(self, seed: Optional[int] = None):
        self.seeded = seed is not None
        self._rng = random.Random(seed) if self.seeded else secrets.SystemRandom()

    def draw(self, n: int) -> int:
        while True:
            r = self._rng.randrange(1, n)
            if gmpy2.gcd(r, n) == 1:
                return r


def _random_prime(rng: random.Random, bits: int) -> int:
    candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
    return int(gmpy2.next_prime(candidate))


def keygen(params: HeParams, seed: Optional[int] = None) -> Tuple[PublicKey, SecretKey]:
    """Generate a keypair; deterministic when a seed is given"""
    rng = random.Random(seed) if seed is not None else secrets.SystemRandom()
    half = params.modulus_bits // 2
    for attempt in range(PRIME_SEARCH_RETRIES):
        p = _random_prime(rng, half)
        q = _random_prime(rng, half)
        if p == q or p.bit_length() != half or q.bit_length() != half:
            continue
        n = p * q
        if n.bit_length() != params.modulus_bits:
            continue
        lam = (p - 1) * (q - 1)
        if math.gcd(lam, n) != 1:
            continue
        mu = int(gmpy2.invert(lam, n))
        public_key = PublicKey(n=n, g=n + 1)
        logger.debug("generated %d-bit Paillier key after %d attempt(s)", params.modulus_bits, attempt + 1)
        return public_key, SecretKey(lam=lam, mu=mu, public_key=public_key)
    raise CryptoError(f"no suitable primes found after {PRIME_SEARCH_RETRIES} attempts")


class FixedPointCodec:
    """Reals <-> Z_n via round(v * 2^f), negatives wrapped two's-complement style"""

    def __init__(self, frac_bits: int, max_abs_value: float, modulus: int,
                 max_weight: int = DEFAULT_MAX_WEIGHT):
        self.frac_bits = frac_bits
        self.scale = 1 << frac_bits
        self.max_abs_value = max_abs_value
        self.modulus = modulus
        self.max_weight = max_weight

    @classmethod
    def for_key(cls, params: HeParams, public_key: PublicKey) -> "FixedPointCodec":
        return cls(params.frac_bits, params.max_abs_value, public_key.n, params.max_weight)

    def encode_value(self, index: int, value: float) -> int:
        if not abs(value) <= self.max_abs_value:
            raise EncodingOverflowError(index, value, self.max_abs_value)
        return int(round(value * self.scale)) % self.modulus

    def signed(self, m: int) -> int:
        return m - self.modulus if m > self.modulus // 2 else m

    def decode_value(self, m: int, divisor: int = 1) -> float:
        # Exact integer division keeps the only rounding in the final float
        return self.signed(m) / (divisor << self.frac_bits)


def encode(codec: FixedPointCodec, v: Vec64) -> List[int]:
    return [codec.encode_value(i, float(x)) for i, x in enumerate(v)]


def decode(codec: FixedPointCodec, iv: Sequence[int]) -> Vec64:
    return as_vec([codec.decode_value(m) for m in iv])


def raw_encrypt(public_key: PublicKey, plaintext: int, nonces: NonceSource) -> int:
    # g = n + 1 makes g^m = 1 + m*n (mod n^2)
    nude_ciphertext = (1 + plaintext * public_key.n) % public_key.nsquare
    r = nonces.draw(public_key.n)
    return int(nude_ciphertext * gmpy2.powmod(r, public_key.n, public_key.nsquare) % public_key.nsquare)


def raw_decrypt(secret_key: SecretKey, ciphertext: int) -> int:
    pk = secret_key.public_key
    if not 0 < ciphertext < pk.nsquare:
        raise CryptoError("ciphertext outside the group Z*_{n^2}")
    x = int(gmpy2.powmod(ciphertext, secret_key.lam, pk.nsquare))
    return (x - 1) // pk.n * secret_key.mu % pk.n


def encrypt_update(public_key: PublicKey, codec: FixedPointCodec, update: Vec64, int_weight: int,
                   nonces: Optional[NonceSource] = None) -> CiphertextVec:
    """Client side: Enc(encode(update_i) * int_weight) per component

    Scaling by the integer weight n_k before encryption gives the server a
    plain sum to compute; range checks all run before any encryption.
    """
    if isinstance(int_weight, bool) or not isinstance(int_weight, int) or int_weight < 1:
        raise ConfigError(f"int_weight must be an integer >= 1, got {int_weight!r}")
    if int_weight > codec.max_weight:
        raise EncodingOverflowError(-1, float(int_weight), float(codec.max_weight))
    plaintexts = [m * int_weight % codec.modulus for m in encode(codec, update)]
    nonces = nonces or NonceSource()
    return CiphertextVec(public_key, tuple(raw_encrypt(public_key, m, nonces) for m in plaintexts))


def aggregate(ciphers: Sequence[CiphertextVec], max_clients: Optional[int] = None) -> CiphertextVec:
    """Server side: componentwise homomorphic sum of encrypted updates"""
    if not ciphers:
        raise ConfigError("nothing to aggregate")
    if max_clients is not None and len(ciphers) > max_clients:
        raise ConfigError(f"{len(ciphers)} updates exceed max_clients={max_clients}")
    public_key = ciphers[0].public_key
    length = len(ciphers[0])
    for c in ciphers[1:]:
        if len(c) != length:
            raise DimensionError(f"ciphertext vectors of length {len(c)} and {length}")
        if c.public_key != public_key:
            raise CryptoError("ciphertexts encrypted under different keys")

    nsquare = public_key.nsquare
    summed = []
    for components in zip(*(c.ciphertexts for c in ciphers)):
        acc = gmpy2.mpz(1)
        for value in components:
            acc = acc * value % nsquare
        summed.append(int(acc))
    return CiphertextVec(public_key, tuple(summed))


def decrypt_aggregate(secret_key: SecretKey, codec: FixedPointCodec, agg: CiphertextVec,
                      total_weight: int) -> Vec64:
    """Client side: decode(Dec(agg)) / N, the weighted mean of the updates"""
    if total_weight < 1:
        raise ConfigError(f"total weight must be >= 1, got {total_weight}")
    return as_vec([codec.decode_value(raw_decrypt(secret_key, c), total_weight) for c in agg.ciphertexts])


def save_public_key(public_key: PublicKey, path: str):
    write_json(path, public_key.to_dict())


def save_secret_key(secret_key: SecretKey, path: str):
    write_json(path, secret_key.to_dict())


def load_public_key(path: str) -> PublicKey:
    data = read_json(path)
    try:
        return PublicKey(n=int(data["n"], 16), g=int(data["g"], 16))
    except (KeyError, TypeError, ValueError) as e:
        raise CryptoError(f"malformed public key file {path}: {e}") from e


def load_secret_key(path: str, public_key: PublicKey) -> SecretKey:
    data = read_json(path)
    try:
        return SecretKey(lam=int(data["lambda"], 16), mu=int(data["mu"], 16), public_key=public_key)
    except (KeyError, TypeError, ValueError) as e:
        raise CryptoError(f"malformed secret key file {path}: {e}") from e


def append_transcript(path: str, client_id: int, round_index: int, cipher: CiphertextVec):
    append_jsonl(path, {"client_id": client_id, "round": round_index,
                        "ciphertexts": [format(c, 'x') for c in cipher.ciphertexts]})
