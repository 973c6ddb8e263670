from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

LOSSES = ("NLL-l", "NLL-e", "L1", "L2", "NCE")
DISCRETE_LOSSES = ("NLL-l", "NLL-e")
MODES = ("discrete", "continuous")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and objective of a masked-prediction encoder.

    ``vocab_size`` is the unit vocabulary for discrete inputs and, unless
    ``target_vocab_size`` is set, for discrete targets too.
    """

    input_mode: str = "discrete"
    target_mode: str = "discrete"
    loss: str = "NLL-e"
    vocab_size: int = 0
    target_vocab_size: int = 0
    feature_dim: int = 0
    model_dim: int = 32
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 0
    max_len: int = 256
    nce_negatives: int = 100
    temperature: float = 0.1
    use_positions: bool = True
    tie_unit_embeddings: bool = True
    prepend_bos: bool = False

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.model_dim)
        if self.target_vocab_size == 0 and self.target_mode == "discrete":
            object.__setattr__(self, "target_vocab_size", self.vocab_size)
        self.validate()

    def validate(self):
        if self.input_mode not in MODES:
            raise ConfigError("input_mode", f"must be one of {MODES}, got {self.input_mode!r}")
        if self.target_mode not in MODES:
            raise ConfigError("target_mode", f"must be one of {MODES}, got {self.target_mode!r}")
        if self.loss not in LOSSES:
            raise ConfigError("loss", f"must be one of {LOSSES}, got {self.loss!r}")
        if (self.loss in DISCRETE_LOSSES) != (self.target_mode == "discrete"):
            raise ConfigError("loss", f"{self.loss} is incompatible with {self.target_mode} targets")
        if self.input_mode == "discrete" and self.vocab_size < 1:
            raise ConfigError("vocab_size", "discrete input needs vocab_size >= 1")
        if self.target_mode == "discrete" and self.target_vocab_size < 1:
            raise ConfigError("target_vocab_size", "discrete target needs a vocabulary")
        if (self.input_mode == "continuous" or self.target_mode == "continuous") and self.feature_dim < 1:
            raise ConfigError("feature_dim", "continuous input or target needs feature_dim >= 1")
        if self.model_dim < 1 or self.heads < 1 or self.model_dim % self.heads:
            raise ConfigError("heads", f"model_dim {self.model_dim} must be divisible by heads {self.heads}")
        if self.layers < 0:
            raise ConfigError("layers", "must be >= 0")
        if self.max_len < 1:
            raise ConfigError("max_len", "must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature", "must be > 0")
        if self.nce_negatives < 1:
            raise ConfigError("nce_negatives", "must be >= 1")

    @property
    def tied(self) -> bool:
        return (self.loss == "NLL-e" and self.tie_unit_embeddings and self.input_mode == "discrete"
                and self.vocab_size == self.target_vocab_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown model config key")
        return cls(**d)


@dataclass(frozen=True)
class MaskingPolicy:
    span_mean: float = 10.0
    span_std: float = 10.0
    coverage: float = 0.5
    max_coverage: float = 0.6

    def __post_init__(self):
        if not 0 < self.coverage <= 1:
            raise ConfigError("coverage", "must be in (0, 1]")
        if self.max_coverage < self.coverage:
            raise ConfigError("max_coverage", "must be >= coverage")
        if self.span_std < 0:
            raise ConfigError("span_std", "must be >= 0")


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 0.2
    momentum: float = 0.9
    warmup_steps: int = 100
    clip_norm: float | None = 1.0
    optimizer: str = "sgd"
    crop_len: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr", "must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if self.crop_len < 0:
            raise ConfigError("crop_len", "must be >= 0 (0 disables cropping)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", f"must be float32 or float64, got {self.dtype!r}")
