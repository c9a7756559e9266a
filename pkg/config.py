"""Configuration management for tabbin experiments."""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

LOSS_KINDS = ("ValueRecon", "MaskXent", "BinRecon", "BinXent")
TASKS = ("binclass", "multiclass", "regression")
CORRUPTION_MODES = ("none", "constant", "random")
BIN_METHODS = ("quantile", "equal_width", "per_value")
SPLIT_MODES = ("ratio", "index_files")


class ConfigError(ValueError):
    """Raised when an experiment configuration is invalid."""


class Config:
    """Process-level settings."""

    # Worker threads for grid cells and probe seeds; --threads takes precedence.
    # THREADS is parsed from the raw setting by validate()
    THREADS_SETTING = os.getenv("TABBIN_THREADS", "1")
    THREADS = 1

    LOG_LEVEL = os.getenv("TABBIN_LOG_LEVEL", "INFO").upper()

    # Default output directory when neither the config file nor --out sets one
    OUTPUT_DIR = os.getenv("TABBIN_OUTPUT_DIR", "runs")

    @staticmethod
    def validate():
        """Validate that the environment settings are usable."""
        try:
            threads = int(Config.THREADS_SETTING or 1)
        except ValueError:
            raise ValueError(f"TABBIN_THREADS must be a positive integer, got '{Config.THREADS_SETTING}'") from None
        if threads < 1:
            raise ValueError("TABBIN_THREADS must be a positive integer")
        Config.THREADS = threads
        if Config.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"TABBIN_LOG_LEVEL '{Config.LOG_LEVEL}' is not a logging level")


def _default_losses() -> List[Dict]:
    return [{"kind": "BinRecon", "weight": 1.0}]


def _default_grid() -> Dict:
    return {
        "mask_prob": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "n_bins": [2, 5, 10, 20, 50, 100],
        "objectives": ["BinRecon"],
        "corruption_modes": ["none"],
    }


# Reduced grid used when binning objectives are combined with masking
COMBINED_GRID = {"mask_prob": [0.1, 0.2, 0.3], "n_bins": [2, 10]}
# Masking modes for the combined preset when the grid itself only lists "none"
COMBINED_CORRUPTION_MODES = ["random", "constant"]


@dataclass
class ExperimentConfig:
    """Every knob of one experiment; resolved from a JSON document plus overrides."""

    dataset_path: str = ""
    task: str = ""
    label_column: str = "target"
    split_mode: str = "ratio"
    split_fractions: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_index_files: List[str] = field(default_factory=list)
    split_seed: int = 0
    categorical_threshold: int = 20

    bin_method: str = "quantile"
    n_bins: int = 10

    corruption_mode: str = "none"
    mask_prob: float = 0.0

    encoder_dims: List[int] = field(default_factory=lambda: [128])
    # None means symmetric with the encoder
    decoder_dims: Optional[List[int]] = None
    head_embedding_dim: int = 8
    losses: List[Dict] = field(default_factory=_default_losses)

    epochs: int = 1000
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: Optional[int] = None

    probe_lr: float = 0.01
    probe_epochs: int = 100
    probe_seeds: int = 10
    finetune_lr: float = 1e-3
    finetune_epochs: int = 100
    supervised_lr: float = 1e-3
    supervised_epochs: int = 100

    pca_feature: int = 0
    reference_checkpoint: Optional[str] = None
    binning_path: Optional[str] = None
    checkpoint_path: Optional[str] = None

    grid: Dict = field(default_factory=_default_grid)
    grid_preset: Optional[str] = None

    seed: int = 0
    threads: Optional[int] = None
    output_dir: str = ""

    # ── Parsing ──────────────────────────────────────────────────────────────

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        """Build a config from a plain dict, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("Config document must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Optional[str], overrides: Optional[List[str]] = None) -> "ExperimentConfig":
        """Load a config file (optional) and apply ``key=value`` overrides."""
        data: Dict = {}
        if path:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    data = json.load(fh)
            except FileNotFoundError as e:
                raise ConfigError(f"Config file not found: {path}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
            if not isinstance(data, dict):
                raise ConfigError("Config document must be a JSON object")
        for item in overrides or []:
            key, value = parse_override(item)
            data[key] = value
        return cls.from_dict(data)

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    # ── Validation ───────────────────────────────────────────────────────────

    def validate(self):
        """Check field values; raises ConfigError on the first problem."""
        if self.task and self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got '{self.task}'")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if self.bin_method not in BIN_METHODS:
            raise ConfigError(f"bin_method must be one of {BIN_METHODS}")
        if int(self.n_bins) < 2:
            raise ConfigError(f"n_bins must be at least 2, got {self.n_bins}")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ConfigError(f"corruption_mode must be one of {CORRUPTION_MODES}")
        if not 0.0 <= float(self.mask_prob) <= 1.0:
            raise ConfigError("mask_prob must lie in [0, 1]")
        if not self.encoder_dims or any(int(w) < 1 for w in self.encoder_dims):
            raise ConfigError("encoder_dims must be a non-empty list of positive widths")
        if self.decoder_dims is not None and any(int(w) < 1 for w in self.decoder_dims):
            raise ConfigError("decoder_dims must contain positive widths")
        if self.head_embedding_dim < 1:
            raise ConfigError("head_embedding_dim must be positive")
        if not self.losses:
            raise ConfigError("losses must contain at least one entry")
        for entry in self.losses:
            if set(entry) - {"kind", "weight"}:
                raise ConfigError(f"Unknown loss entry key(s) in {entry}")
            if entry.get("kind") not in LOSS_KINDS:
                raise ConfigError(f"Loss kind must be one of {LOSS_KINDS}, got {entry.get('kind')}")
            if float(entry.get("weight", 1.0)) < 0:
                raise ConfigError("Loss weights must be non-negative")
        if self.epochs < 0 or self.probe_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("Epoch counts must be non-negative")
        if self.probe_seeds < 1:
            raise ConfigError("probe_seeds must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.categorical_threshold < 1:
            raise ConfigError("categorical_threshold must be positive")
        if self.grid_preset not in (None, "combined"):
            raise ConfigError("grid_preset must be null or 'combined'")
        unknown_grid = set(self.grid) - {"mask_prob", "n_bins", "objectives", "corruption_modes"}
        if unknown_grid:
            raise ConfigError(f"Unknown grid key(s): {', '.join(sorted(unknown_grid))}")

    def require_dataset(self):
        """The two fields without defaults."""
        if not self.dataset_path:
            raise ConfigError("dataset_path is required")
        if not self.task:
            raise ConfigError("task is required")

    def needs_binning(self) -> bool:
        return any(entry["kind"] in ("BinRecon", "BinXent") for entry in self.losses)

    def resolved_threads(self) -> int:
        return self.threads or Config.THREADS


def parse_override(item: str):
    """Split ``key=value``; the value is read as JSON when possible, else as text."""
    if "=" not in item:
        raise ConfigError(f"Override '{item}' must look like key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value
