"""
Configuration models.

Every model forbids unknown keys. ``RunConfig`` is what the CLI builds from a
flat ``key = value`` file plus command-line overrides.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from vcpcfg.errors import ConfigError

Mode = Literal["text-only", "grounded", "grounded-no-lm"]


class GrammarTopology(BaseModel):
    """Symbol inventory sizes of the CNF grammar."""

    model_config = ConfigDict(extra="forbid")

    num_nonterminals: int = Field(30, ge=1)
    num_preterminals: int = Field(60, ge=1)
    vocab_size: int = Field(..., ge=1)
    symbol_dim: int = Field(256, ge=1)
    z_dim: int = Field(64, ge=1)

    @property
    def num_symbols(self) -> int:
        return self.num_nonterminals + self.num_preterminals


class EncoderConfig(BaseModel):
    """Sizes of the variational encoder, the span encoder and the image projection."""

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(..., ge=1)
    word_dim: int = Field(512, ge=1)
    hidden_dim: int = Field(512, ge=1)
    z_dim: int = Field(64, ge=1)
    joint_dim: int = Field(512, ge=1)
    image_dim: int = Field(2048, ge=1)
    num_labels: int = Field(30, ge=1)
    share_span_embeddings: bool = False


class TrainConfig(BaseModel):
    """Objective and optimiser settings."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.001, ge=0.0)
    learning_rate: float = Field(0.01, gt=0.0)
    beta1: float = Field(0.75, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    max_epochs: int = Field(15, ge=0)
    batch_size: int = Field(16, ge=1)
    seed: int = 0
    max_sentence_length: int = Field(40, ge=2)
    mode: Mode = "text-only"
    margin: float = Field(0.2, gt=0.0)
    patience: int = Field(1, ge=1)
    clip_norm: Optional[float] = Field(None, gt=0.0)
    negative_mode: Literal["single", "all"] = "single"
    negative_sampler: Literal["rotation", "random"] = "rotation"
    contrastive_z: Literal["sample", "mean"] = "sample"
    threads: int = Field(1, ge=1)
    record_wall_time: bool = True

    @property
    def grounded(self) -> bool:
        return self.mode != "text-only"

    @model_validator(mode="after")
    def _negatives_need_a_batch(self):
        if self.grounded and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when the contrastive term is active")
        return self


class RunConfig(TrainConfig):
    """Everything one CLI invocation needs: training settings, model sizes and paths."""

    num_nonterminals: int = Field(30, ge=1)
    num_preterminals: int = Field(60, ge=1)
    symbol_dim: int = Field(256, ge=1)
    z_dim: int = Field(64, ge=1)
    word_dim: int = Field(512, ge=1)
    hidden_dim: int = Field(512, ge=1)
    joint_dim: int = Field(512, ge=1)
    share_span_embeddings: bool = False
    vocab_cap: int = Field(10000, ge=1)

    captions: Optional[Path] = None
    features: Optional[Path] = None
    valid_captions: Optional[Path] = None
    valid_features: Optional[Path] = None
    alignment_index: Optional[Path] = None
    valid_alignment_index: Optional[Path] = None
    captions_per_image: int = Field(5, ge=1)
    gold_trees: Optional[Path] = None
    checkpoint: Optional[Path] = None
    output_dir: Path = Path("runs")
    labels: str = "NP,VP,PP,SBAR,ADJP,ADVP"

    def topology(self, vocab_size: int) -> GrammarTopology:
        return GrammarTopology(num_nonterminals=self.num_nonterminals, num_preterminals=self.num_preterminals,
                               vocab_size=vocab_size, symbol_dim=self.symbol_dim, z_dim=self.z_dim)

    def encoder_config(self, vocab_size: int, image_dim: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, word_dim=self.word_dim, hidden_dim=self.hidden_dim,
                             z_dim=self.z_dim, joint_dim=self.joint_dim, image_dim=image_dim,
                             num_labels=self.num_nonterminals, share_span_embeddings=self.share_span_embeddings)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in TrainConfig.model_fields})

    def label_list(self) -> list:
        return [label.strip() for label in self.labels.split(",") if label.strip()]

    def require(self, *keys: str) -> None:
        """Fail with a ConfigError naming the first missing key."""
        for key in keys:
            if getattr(self, key) is None:
                raise ConfigError(f"missing required key '{key}'")

    def require_existing(self, *keys: str) -> None:
        """Every named path must be set and exist on disk."""
        self.require(*keys)
        for key in keys:
            path = getattr(self, key)
            if not Path(path).exists():
                raise ConfigError(f"path for '{key}' does not exist: {path}")


def parse_config_file(path: Path) -> Dict[str, str]:
    """Read flat ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        values[key] = value
    return values


def build_config(model: type, values: Mapping[str, object]):
    """Validate ``values`` against a config model, turning pydantic errors into ConfigError."""
    unknown = sorted(set(values) - set(model.model_fields))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cleaned = {k: (None if isinstance(v, str) and v.lower() in ("none", "") else v) for k, v in values.items()}
    try:
        return model(**cleaned)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(problems) from e


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, object]] = None,
                    defaults: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Precedence: ``defaults`` < config file < ``overrides``."""
    values: Dict[str, object] = dict(defaults or {})
    if path is not None:
        values.update(parse_config_file(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(RunConfig, values)
