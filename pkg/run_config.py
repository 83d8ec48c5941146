"""
Run configuration files
A JSON object with optional "corpus", "fed", "he" and "eval" sections keyed by
the field names of CorpusSpec, FedConfig, HeParams and EvalParams. Absent keys
take the defaults from config.py; unknown sections or keys are rejected.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from config import *
from corpus_builder import CorpusSpec
from errors import ConfigError
from federated_engine import FedConfig
from homomorphic import HeParams
from jsonl_store import read_json


@dataclass
class EvalParams:
    ks: List[int] = field(default_factory=lambda: list(DEFAULT_KS))
    theta: float = DEFAULT_THETA
    acc_mode: str = "threshold"
    percent: bool = False

    def validate(self):
        if not self.ks or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in self.ks):
            raise ConfigError(f"eval.ks: expected positive integers, got {self.ks!r}")
        if not -1.0 <= self.theta <= 1.0:
            raise ConfigError(f"eval.theta: must be in [-1, 1], got {self.theta}")
        if self.acc_mode not in ACC_MODES:
            raise ConfigError(f"eval.acc_mode: must be one of {', '.join(ACC_MODES)}, got {self.acc_mode!r}")


@dataclass
class RunConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    fed: FedConfig = field(default_factory=FedConfig)
    he: HeParams = field(default_factory=HeParams)
    eval: EvalParams = field(default_factory=EvalParams)

    def validate(self):
        self.corpus.validate()
        self.fed.validate()
        self.eval.validate()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Resolved configuration, as echoed into run manifests"""
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply command-line flags; None means 'not given'

        seed feeds both the corpus generator and the training run.
        """
        fed_changes = {}
        corpus_changes = {}
        eval_changes = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "seed":
                fed_changes["seed"] = value
                corpus_changes["seed"] = value
            elif key in ("mode", "rounds", "he_enabled", "client_id", "batch_size", "lr"):
                fed_changes[key] = value
            elif key in ("theta", "acc_mode", "percent"):
                eval_changes[key] = value
            else:
                raise ConfigError(f"unknown override {key!r}")
        resolved = RunConfig(
            corpus=dataclasses.replace(self.corpus, **corpus_changes),
            fed=dataclasses.replace(self.fed, **fed_changes),
            he=self.he,
            eval=dataclasses.replace(self.eval, **eval_changes),
        )
        resolved.validate()
        return resolved


SECTIONS = {"corpus": CorpusSpec, "fed": FedConfig, "he": HeParams, "eval": EvalParams}


def _build_section(name: str, cls, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"{name}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key; valid keys: {', '.join(sorted(known))}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"{name}: {e}") from e


def parse_run_config(data: Any, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: run configuration must be a JSON object")
    for name in data:
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section {name!r}; valid sections: {', '.join(SECTIONS)}")
    sections = {name: _build_section(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    run_config = RunConfig(**sections)
    run_config.validate()
    return run_config


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Read a run configuration file; no path means all defaults"""
    if path is None:
        run_config = RunConfig()
        run_config.validate()
        return run_config
    return parse_run_config(read_json(path), path)
