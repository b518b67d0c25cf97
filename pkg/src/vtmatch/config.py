"""Flat key=value run configuration with a schema validator.

The file format is diff-able plain text: one ``key = value`` per line,
``#`` comments, no sections.  Every knob has a default except the master
seed, which must come from the file or the --seed flag (never the
clock).  All stage randomness derives from that one seed via named
sub-seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import EncoderConfig, TrainConfig
from .serialize import atomic_write_text
from .world import WorldConfig


def _parse_int(v: str) -> int:
    return int(v)


def _parse_float(v: str) -> float:
    return float(v)


def _parse_int_tuple(v: str):
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


_REQUIRED = object()

# key -> (attribute, parser, default)
SCHEMA: dict[str, tuple[str, object, object]] = {
    "world.n_objects": ("n_objects", _parse_int, 62),
    "world.episodes_per_object": ("episodes_per_object", _parse_int, 20),
    "world.resolution": ("resolution", _parse_int, 32),
    "world.pixel_noise": ("pixel_noise", _parse_float, 0.02),
    "world.jitter_px": ("jitter_px", _parse_float, 2.0),
    "world.brightness_jitter": ("brightness_jitter", _parse_float, 0.1),
    "world.min_force": ("min_force", _parse_float, 0.2),
    "world.min_object_size": ("min_object_size", _parse_float, 0.25),
    "split.test_fraction": ("test_fraction", _parse_float, 12 / 62),
    "pairs.positives_per_tactile": ("positives_per_tactile", _parse_int, 4),
    "pairs.negatives_per_tactile": ("negatives_per_tactile", _parse_int, 4),
    "model.conv_channels": ("conv_channels", _parse_int_tuple, (16, 32, 64)),
    "model.kernel_size": ("kernel_size", _parse_int, 3),
    "model.stride": ("stride", _parse_int, 2),
    "model.feature_dim": ("feature_dim", _parse_int, 64),
    "model.hidden_dim": ("hidden_dim", _parse_int, 128),
    "model.dropout": ("dropout", _parse_float, 0.5),
    "train.learning_rate": ("learning_rate", _parse_float, 1e-4),
    "train.batch_size": ("batch_size", _parse_int, 48),
    "train.iterations": ("iterations", _parse_int, 3000),
    "cca.pca_dims": ("pca_dims", _parse_int, 64),
    "cca.canonical_dims": ("canonical_dims", _parse_int, 16),
    "cca.ridge": ("ridge", _parse_float, 1e-3),
    "eval.k_values": ("k_values", _parse_int_tuple, (5, 10)),
    "eval.n_trials": ("n_trials", _parse_int, 2000),
    "seed": ("seed", _parse_int, _REQUIRED),
}

_POSITIVE_KEYS = (
    "n_objects",
    "episodes_per_object",
    "resolution",
    "positives_per_tactile",
    "negatives_per_tactile",
    "n_trials",
)


@dataclass(frozen=True)
class RunConfig:
    n_objects: int
    episodes_per_object: int
    resolution: int
    pixel_noise: float
    jitter_px: float
    brightness_jitter: float
    min_force: float
    min_object_size: float
    test_fraction: float
    positives_per_tactile: int
    negatives_per_tactile: int
    conv_channels: tuple[int, ...]
    kernel_size: int
    stride: int
    feature_dim: int
    hidden_dim: int
    dropout: float
    learning_rate: float
    batch_size: int
    iterations: int
    pca_dims: int
    canonical_dims: int
    ridge: float
    k_values: tuple[int, ...]
    n_trials: int
    seed: int

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            resolution=self.resolution,
            pixel_noise=self.pixel_noise,
            jitter_px=self.jitter_px,
            brightness_jitter=self.brightness_jitter,
            min_force=self.min_force,
            min_object_size=self.min_object_size,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            stride=self.stride,
            feature_dim=self.feature_dim,
            hidden_dim=self.hidden_dim,
            dropout=self.dropout,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            seed=seed,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
        )


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value': {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def build_config(raw: dict[str, str], overrides: dict[str, object] | None = None) -> RunConfig:
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    values: dict[str, object] = {}
    for key, (attr, parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[attr] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        elif default is not _REQUIRED:
            values[attr] = default
    for attr, value in (overrides or {}).items():
        if value is not None:
            values[attr] = value
    if "seed" not in values:
        raise ConfigError("seed is mandatory: set it in the config or pass --seed")
    cfg = RunConfig(**values)
    for attr in _POSITIVE_KEYS:
        if getattr(cfg, attr) < 1:
            raise ConfigError(f"{attr} must be positive, got {getattr(cfg, attr)}")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg.seed}")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0,1), got {cfg.test_fraction}")
    if not cfg.k_values:
        raise ConfigError("eval.k_values must list at least one K")
    cfg.encoder_config()  # validates model dims
    cfg.train_config(seed=0)  # validates train settings
    return cfg


def load_config(path: Path, overrides: dict[str, object] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_config(parse_config_text(text, source=str(path)), overrides)


def config_to_text(cfg: RunConfig) -> str:
    by_attr = {attr: key for key, (attr, _, _) in SCHEMA.items()}
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{by_attr[f.name]} = {rendered}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: Path) -> None:
    atomic_write_text(Path(path), config_to_text(cfg))


def default_config(seed: int) -> RunConfig:
    return build_config({}, overrides={"seed": seed})
