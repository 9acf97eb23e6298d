"""Pipeline configuration: a flat key=value text file plus CLI overrides.

Precedence is CLI flags > AUDIORETRIEVAL_CACHE_DIR (cache dir only) > file >
defaults. Artifacts record the fingerprint of the configuration subset that
determines their content (dsp settings for feature caches, dsp+model+train
for checkpoints and stores), so commands can detect artifacts produced under
an incompatible configuration instead of silently mixing them.
"""

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, UsageError
from .nnet import CrnnConfig
from .train import TrainConfig

CACHE_DIR_ENV = "AUDIORETRIEVAL_CACHE_DIR"

_DEFAULTS = {
    "seed": 7,
    "sample_rate_hz": 44100,
    "audio_dir": "",
    "cache_dir": "cache",
    "checkpoint_dir": "checkpoints",
    "vectors_path": "",
    "training_csv": "",
    "validation_csv": "",
    "testing_csv": "",
    "evaluation_csv": "",
    "crnn.channels": "32,64,128,128,128",
    "crnn.gru_hidden": 150,
    "crnn.dropout_rate": 0.3,
    "crnn.leaky_slope": 0.1,
    "train.batch_size": 32,
    "train.max_epochs": 150,
    "train.lr": 0.001,
    "train.plateau_factor": 0.1,
    "train.plateau_patience": 5,
    "train.early_stop_patience": 10,
    "train.margin": 1.0,
}

_DSP_KEYS = ("sample_rate_hz",)
_MODEL_KEYS = ("crnn.channels", "crnn.gru_hidden", "crnn.dropout_rate", "crnn.leaky_slope")
_TRAIN_KEYS = tuple(k for k in _DEFAULTS if k.startswith("train.")) + ("seed",)


def parse_kv_file(path) -> dict[str, str]:
    """Parse "key = value" lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


@dataclass
class PipelineConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=None) -> "PipelineConfig":
        merged = {k: str(v) for k, v in _DEFAULTS.items()}
        if path is not None:
            file_values = parse_kv_file(path)
            unknown = set(file_values) - set(_DEFAULTS)
            if unknown:
                raise UsageError(f"{path}: unknown config keys: {sorted(unknown)}")
            merged.update(file_values)
        env_cache = os.environ.get(CACHE_DIR_ENV)
        if env_cache:
            merged["cache_dir"] = env_cache
        for item in overrides or []:
            if "=" not in item:
                raise UsageError(f"override {item!r} is not of the form key=value")
            key, value = item.split("=", 1)
            key = key.strip()
            if key not in _DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = value.strip()
        return cls(values=merged)

    # typed accessors -------------------------------------------------------
    def _int(self, key):
        return int(self.values[key])

    def _float(self, key):
        return float(self.values[key])

    def path(self, key, must_exist=False) -> Path:
        raw = self.values[key]
        if not raw:
            raise UsageError(f"config key {key!r} is required for this command")
        p = Path(raw)
        if must_exist and not p.exists():
            raise DataError(f"{key} = {p}: path does not exist")
        return p

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def sample_rate_hz(self) -> int:
        return self._int("sample_rate_hz")

    def crnn_config(self) -> CrnnConfig:
        channels = tuple(int(c) for c in self.values["crnn.channels"].split(",") if c.strip())
        return CrnnConfig(
            channels=channels,
            gru_hidden=self._int("crnn.gru_hidden"),
            dropout_rate=self._float("crnn.dropout_rate"),
            leaky_slope=self._float("crnn.leaky_slope"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self._int("train.batch_size"),
            max_epochs=self._int("train.max_epochs"),
            lr=self._float("train.lr"),
            plateau_factor=self._float("train.plateau_factor"),
            plateau_patience=self._int("train.plateau_patience"),
            early_stop_patience=self._int("train.early_stop_patience"),
            margin=self._float("train.margin"),
            seed=self.seed,
        )

    # fingerprints ----------------------------------------------------------
    def _digest(self, keys) -> str:
        blob = "\n".join(f"{k}={self.values[k]}" for k in sorted(keys))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def config_hash(self) -> str:
        return self._digest(_DEFAULTS.keys())

    def dsp_fingerprint(self) -> str:
        return self._digest(_DSP_KEYS)

    def model_fingerprint(self) -> str:
        return self._digest(_DSP_KEYS + _MODEL_KEYS + _TRAIN_KEYS)
