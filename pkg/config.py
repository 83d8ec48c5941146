"""
Configuration settings for the federated embedding simulator
"""
import os
import logging
from dotenv import load_dotenv
from rich.logging import RichHandler

load_dotenv()

# Logging level: error, warn, info or debug
FEDEMBED_LOG = os.getenv('FEDEMBED_LOG', 'info').lower()

# Where commands write their outputs when --out is not given
OUTPUT_DIR = os.getenv('FEDEMBED_OUTPUT_DIR', 'runs')

# Seeded HE randomness (keys and encryption nonces) instead of OS entropy
HE_SEEDED = os.getenv('FEDEMBED_HE_SEEDED', '0').lower() in ('1', 'true', 'yes')

# Corpus defaults
DEFAULT_N_CLIENTS = 5
DEFAULT_PAIRS_PER_CLIENT = [200, 200, 200, 200, 200]
DEFAULT_VOCAB_SIZE = 64
DEFAULT_TOKENS_PER_QUERY = 4
DEFAULT_TOKENS_PER_CHUNK = 8
DEFAULT_OVERLAP_FRACTION = 1.0
DEFAULT_CLIENT_SLICE_OVERLAP = 0.25
DEFAULT_EVAL_QUERIES = 50
DEFAULT_DISTRACTOR_CHUNKS = 150
DEFAULT_SEED = 42

# Encoder
DEFAULT_D_IN = 256
DEFAULT_D_OUT = 64
INIT_SCALE = 0.05

# Federated training (batch 16, lr 1e-5, 25 rounds, tau 1)
DEFAULT_ROUNDS = 25
DEFAULT_LOCAL_EPOCHS = 1
DEFAULT_BATCH_SIZE = 16
DEFAULT_LR = 1e-5
DEFAULT_TAU = 1.0
DEFAULT_LAMBDA_KD = 1.0
DEFAULT_CLIENT_FRACTION = 1.0
TRAINING_MODES = ["central", "independent", "vanilla", "fedavg", "fede4rag"]

# Homomorphic encryption
DEFAULT_MODULUS_BITS = 2048
DEFAULT_FRAC_BITS = 32
DEFAULT_MAX_ABS_VALUE = 8.0
DEFAULT_MAX_CLIENTS = 16
DEFAULT_MAX_WEIGHT = 1 << 20
PRIME_SEARCH_RETRIES = 64

# Retrieval evaluation
DEFAULT_KS = [1, 5, 10]
DEFAULT_THETA = 0.5
ACC_MODES = ["threshold", "label"]

# Generation metrics
BLEU_MAX_N = 4
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2

# Hyperparameter sweep grid
SWEEP_ROUNDS = [5, 10, 15, 20, 25]
SWEEP_BATCH_SIZES = [8, 16, 32]

# File names inside run / data directories
PAIRS_FILE_PATTERN = "pairs_client_{client_id}.jsonl"
EVAL_FILE = "eval.jsonl"
CORPUS_FILE = "corpus.jsonl"
MANIFEST_FILE = "manifest.json"
FINAL_PARAMS_FILE = "final_params.json"
ROUND_LOG_FILE = "rounds.jsonl"
CHECKPOINT_DIR = "checkpoints"
CLIENT_MODEL_DIR = "clients"
HE_TRANSCRIPT_FILE = "he_transcript.jsonl"
REPORT_JSON_FILE = "report.json"
REPORT_CSV_FILE = "report.csv"
GEN_REPORT_FILE = "gen_report.json"
COMPARE_FILE = "compare.csv"
SWEEP_FILE = "sweep.csv"

_LOG_LEVELS = {
    'error': logging.ERROR,
    'warn': logging.WARNING,
    'warning': logging.WARNING,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}


def setup_logging(level: str = None):
    """Route library diagnostics through rich at the FEDEMBED_LOG level"""
    name = (level or FEDEMBED_LOG).lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(name, logging.INFO),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
