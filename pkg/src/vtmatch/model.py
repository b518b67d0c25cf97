"""Tied-weight late-fusion match network and its training loop.

Architecture: each finger image passes through one shared tactile
convolution stack (weight tying is structural, both branches read the
same parameter tensors), the camera image through its own stack; each
stack ends in global average pooling and an affine projection with
ReLU.  The three feature vectors are fused by concatenation and pushed
through two fully connected layers with dropout in between, then a
single logit and a sigmoid giving the probability that the tactile and
visual observations come from the same object.

Training minimizes mean binary cross entropy over a balanced pair list
with Adam, sampling batches with replacement.  Everything is
deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import EpisodeStore, PairExample
from .errors import ConfigError, StoreFormatError, TrainingDivergedError
from .seeding import derive_seed
from .serialize import atomic_write_text, read_bundle, write_bundle
from .world import TactileObs, VisualObs


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    stride: int = 2
    feature_dim: int = 64
    hidden_dim: int = 128
    dropout: float = 0.5
    in_channels: int = 3

    def __post_init__(self):
        dims = (*self.conv_channels, self.kernel_size, self.stride,
                self.feature_dim, self.hidden_dim, self.in_channels)
        if any(d < 1 for d in dims):
            raise ConfigError(f"encoder dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")

    @property
    def pad(self) -> int:
        return self.kernel_size // 2


@dataclass
class EncoderParams:
    convs: list[ad.Tensor]
    proj_w: ad.Tensor
    proj_b: ad.Tensor


@dataclass
class MatchModelParams:
    """All trainable tensors; the tactile encoder is stored exactly once."""

    config: EncoderConfig
    tactile: EncoderParams
    visual: EncoderParams
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor
    w_out: ad.Tensor
    b_out: ad.Tensor

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        named = []
        for branch, enc in (("tactile", self.tactile), ("visual", self.visual)):
            for i, w in enumerate(enc.convs):
                named.append((f"{branch}.conv{i}", w))
            named.append((f"{branch}.proj_w", enc.proj_w))
            named.append((f"{branch}.proj_b", enc.proj_b))
        named += [
            ("fusion.w1", self.w1),
            ("fusion.b1", self.b1),
            ("fusion.w2", self.w2),
            ("fusion.b2", self.b2),
            ("fusion.w_out", self.w_out),
            ("fusion.b_out", self.b_out),
        ]
        return named

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    learning_rate: float = 1e-4
    batch_size: int = 48
    iterations: int = 3000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ConfigError(f"train settings must be positive: {self}")


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> ad.Tensor:
    std = math.sqrt(2.0 / fan_in)
    return ad.Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def _zeros(shape) -> ad.Tensor:
    return ad.Tensor(np.zeros(shape), requires_grad=True)


def _init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    convs = []
    c_in = cfg.in_channels
    k = cfg.kernel_size
    for c_out in cfg.conv_channels:
        convs.append(_he_normal(rng, (c_out, c_in, k, k), fan_in=c_in * k * k))
        c_in = c_out
    proj_w = _he_normal(rng, (c_in, cfg.feature_dim), fan_in=c_in)
    return EncoderParams(convs=convs, proj_w=proj_w, proj_b=_zeros(cfg.feature_dim))


def init_model(cfg: EncoderConfig, seed: int) -> MatchModelParams:
    """Fan-in-scaled normal weights (std sqrt(2/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    tactile = _init_encoder(cfg, rng)
    visual = _init_encoder(cfg, rng)
    joint = 3 * cfg.feature_dim
    h = cfg.hidden_dim
    return MatchModelParams(
        config=cfg,
        tactile=tactile,
        visual=visual,
        w1=_he_normal(rng, (joint, h), fan_in=joint),
        b1=_zeros(h),
        w2=_he_normal(rng, (h, h), fan_in=h),
        b2=_zeros(h),
        w_out=_he_normal(rng, (h, 1), fan_in=h),
        b_out=_zeros(1),
    )


def _encode_batch(enc: EncoderParams, x: ad.Tensor, cfg: EncoderConfig) -> ad.Tensor:
    h = x
    for w in enc.convs:
        h = ad.relu(ad.conv2d(h, w, stride=cfg.stride, pad=cfg.pad))
    return ad.relu(ad.affine(ad.global_avg_pool(h), enc.proj_w, enc.proj_b))


def forward_logits(
    params: MatchModelParams,
    tactile_a: np.ndarray,
    tactile_b: np.ndarray,
    visual: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    """(B,3,H,W) observation batches -> (B,1) match logits."""
    cfg = params.config
    fa = _encode_batch(params.tactile, ad.Tensor(tactile_a), cfg)
    fb = _encode_batch(params.tactile, ad.Tensor(tactile_b), cfg)
    fv = _encode_batch(params.visual, ad.Tensor(visual), cfg)
    joint = ad.concat([fa, fb, fv], axis=1)
    h1 = ad.relu(ad.affine(joint, params.w1, params.b1))
    h1 = ad.dropout(h1, cfg.dropout, training, rng)
    h2 = ad.relu(ad.affine(h1, params.w2, params.b2))
    return ad.affine(h2, params.w_out, params.b_out)


def encode_tactile(params: MatchModelParams, obs: TactileObs) -> np.ndarray:
    """Both finger images through the shared encoder; 2F feature vector."""
    cfg = params.config
    fa = _encode_batch(params.tactile, ad.Tensor(obs.finger_a[None]), cfg)
    fb = _encode_batch(params.tactile, ad.Tensor(obs.finger_b[None]), cfg)
    return ad.concat([fa, fb], axis=1).data[0]

def encode_visual(params: MatchModelParams, obs: VisualObs) -> np.ndarray:
    return _encode_batch(params.visual, ad.Tensor(obs.image[None]), params.config).data[0]


def predict_match(
    params: MatchModelParams,
    tactile: TactileObs,
    visual: VisualObs,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Probability in (0,1) that both observations show the same object."""
    logits = forward_logits(
        params,
        tactile.finger_a[None],
        tactile.finger_b[None],
        visual.image[None],
        training=training,
        rng=rng,
    )
    return float(ad.sigmoid(logits).data[0, 0])


def batch_arrays(
    store: EpisodeStore, pairs: list[PairExample]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gather (tactile_a, tactile_b, visual, labels) arrays for a pair list."""
    t_ids = np.array([p.tactile_episode_id for p in pairs])
    v_ids = np.array([p.visual_episode_id for p in pairs])
    y = np.array([[float(p.label)] for p in pairs])
    return store.tactile_a[t_ids], store.tactile_b[t_ids], store.visual[v_ids], y


def loss_on_batch(
    params: MatchModelParams,
    tactile_a: np.ndarray,
    tactile_b: np.ndarray,
    visual: np.ndarray,
    labels: np.ndarray,
    training: bool = True,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    logits = forward_logits(params, tactile_a, tactile_b, visual, training, rng)
    return ad.bce_with_logits(logits, labels)


def train(
    store: EpisodeStore,
    pairs: list[PairExample],
    train_cfg: TrainConfig,
    encoder_cfg: EncoderConfig = EncoderConfig(),
    log_every: int = 50,
) -> tuple[MatchModelParams, list[tuple[int, float]]]:
    """Adam over batches sampled with replacement from the pair list.

    Returns the trained parameters and a (iteration, loss) history
    recorded at iteration 1 and every ``log_every`` iterations.  A
    non-finite loss aborts with the iteration index.
    """
    if not pairs:
        raise ConfigError("training needs a nonempty pair list")
    params = init_model(encoder_cfg, derive_seed(train_cfg.seed, "init"))
    batch_rng = np.random.default_rng(derive_seed(train_cfg.seed, "batches"))
    drop_rng = np.random.default_rng(derive_seed(train_cfg.seed, "dropout"))

    t_ids = np.array([p.tactile_episode_id for p in pairs])
    v_ids = np.array([p.visual_episode_id for p in pairs])
    labels = np.array([float(p.label) for p in pairs])

    tensors = params.parameters()
    state = ad.AdamState.for_params(tensors)
    history: list[tuple[int, float]] = []
    last = float("nan")
    for it in range(1, train_cfg.iterations + 1):
        idx = batch_rng.integers(0, len(pairs), size=train_cfg.batch_size)
        ta = store.tactile_a[t_ids[idx]]
        tb = store.tactile_b[t_ids[idx]]
        vi = store.visual[v_ids[idx]]
        y = labels[idx][:, None]

        ad.zero_grads(tensors)
        try:
            with ad.Tape() as tape:
                loss = loss_on_batch(params, ta, tb, vi, y, True, drop_rng)
        except ad.NumericError as exc:
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (last finite loss {last:.6f}): {exc}"
            ) from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (last finite loss {last:.6f})"
            )
        last = value
        tape.backward(loss)
        ad.adam_step(
            tensors, [p.grad for p in tensors], state, train_cfg.learning_rate
        )
        if it == 1 or it % log_every == 0:
            history.append((it, value))
    return params, history


# ---------------------------------------------------------------------------
# persistence


def save_model(params: MatchModelParams, path_base: Path) -> None:
    cfg = params.config
    meta = {
        "format": "match-model-v1",
        "conv_channels": ",".join(str(c) for c in cfg.conv_channels),
        "kernel_size": str(cfg.kernel_size),
        "stride": str(cfg.stride),
        "feature_dim": str(cfg.feature_dim),
        "hidden_dim": str(cfg.hidden_dim),
        "dropout": repr(cfg.dropout),
        "in_channels": str(cfg.in_channels),
    }
    write_bundle(Path(path_base), meta, [(n, t.data) for n, t in params.named_parameters()])


def load_model(path_base: Path) -> MatchModelParams:
    meta, arrays = read_bundle(Path(path_base))
    if meta.get("format") != "match-model-v1":
        raise StoreFormatError(f"{path_base} is not a match-model checkpoint")
    cfg = EncoderConfig(
        conv_channels=tuple(int(c) for c in meta["conv_channels"].split(",")),
        kernel_size=int(meta["kernel_size"]),
        stride=int(meta["stride"]),
        feature_dim=int(meta["feature_dim"]),
        hidden_dim=int(meta["hidden_dim"]),
        dropout=float(meta["dropout"]),
        in_channels=int(meta["in_channels"]),
    )
    params = init_model(cfg, seed=0)
    for name, tensor in params.named_parameters():
        if name not in arrays:
            raise StoreFormatError(f"checkpoint {path_base} missing tensor {name}")
        if arrays[name].shape != tensor.data.shape:
            raise StoreFormatError(
                f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = arrays[name].copy()
    return params


def save_loss_history(history: list[tuple[int, float]], path: Path) -> None:
    rows = ["iteration,loss"] + [f"{it},{value:.10g}" for it, value in history]
    atomic_write_text(Path(path), "\n".join(rows) + "\n")
