"""Procedural desk-scale world: objects, a camera view, and gel fingers.

Every object is an 8-component latent vector in [0,1]^8.  The visual
renderer draws a superellipse silhouette (extent from size, axis ratio
from aspect, corner exponent from curvature) filled with a hue-derived
color and modulated by a sinusoidal texture.  The tactile renderer
builds a contact height field (indentation from force and hardness, an
edge ridge near the silhouette boundary, the same sinusoidal material
texture scaled by force) and encodes it photometrically into three
channels with fixed directional pseudo-lights, one image per finger.

Texture frequency/amplitude and curvature influence both modalities;
hue and gloss are visible only to the camera, hardness only to the gel.
All functions are pure in (spec, grasp, generator state), so renders
replay bit-identically from a seed.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateObjectError, InvalidGraspError

LATENT_FIELDS = (
    "size",
    "aspect",
    "curvature",
    "hue",
    "texture_freq",
    "texture_amp",
    "hardness",
    "gloss",
)

# render constants (latent -> physical mappings); noise magnitudes live
# in WorldConfig because they are tuning knobs, these are the world's shape
_EXTENT_MAX = 0.85
_ASPECT_LOG_RANGE = 0.35
_CORNER_EXP_MIN = 0.75
_CORNER_EXP_MAX = 8.0
_FREQ_MIN = 1.0
_FREQ_MAX = 5.0
_BACKGROUND = 0.12
_VIS_TEXTURE_DEPTH = 0.45
_GLOSS_GAIN = 0.30
_TAC_BASE = 0.18
_TAC_DEPTH_GAIN = 0.30
_TAC_EDGE_AMP = 0.35
_TAC_TEX_GAIN = 0.30
_TAC_HEIGHT_SHADE = 0.55
_TAC_LIGHT_GAIN = 0.040
_TAC_LIGHT_ANGLES = (0.5 * math.pi, 7.0 * math.pi / 6.0, 11.0 * math.pi / 6.0)
_EDGE_BAND = 0.35
_RIDGE_WIDTH_MAX = 0.45
_RIDGE_WIDTH_MIN = 0.06


@dataclass(frozen=True)
class WorldConfig:
    """Observation geometry and noise levels (tunable, not constants)."""

    resolution: int = 32
    pixel_noise: float = 0.02
    jitter_px: float = 2.0
    brightness_jitter: float = 0.1
    min_force: float = 0.2
    min_object_size: float = 0.25


@dataclass(frozen=True)
class ObjectSpec:
    """Ground-truth latent attributes shared by both renderers."""

    object_id: int
    latent: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.latent, dtype=np.float64)
        if lat.shape != (len(LATENT_FIELDS),):
            raise ValueError(f"latent must have shape (8,), got {lat.shape}")
        if np.any(lat < 0.0) or np.any(lat > 1.0):
            raise ValueError("latent components must lie in [0, 1]")
        object.__setattr__(self, "latent", lat)

    def __getattr__(self, name):
        # only latent component names resolve here; anything else (incl.
        # pickle protocol probes before state is restored) must miss fast
        try:
            idx = LATENT_FIELDS.index(name)
        except ValueError:
            raise AttributeError(name) from None
        return float(object.__getattribute__(self, "latent")[idx])


@dataclass(frozen=True)
class GraspParams:
    """Normalized contact position relative to object center, plus force."""

    contact_offset: tuple[float, float]
    force: float

    def __post_init__(self):
        ox, oy = self.contact_offset
        if not (-1.0 <= ox <= 1.0 and -1.0 <= oy <= 1.0):
            raise ValueError(f"contact_offset out of [-1,1]^2: {self.contact_offset}")
        if not 0.0 <= self.force <= 1.0:
            raise ValueError(f"force out of [0,1]: {self.force}")


@dataclass(frozen=True)
class VisualObs:
    image: np.ndarray  # (3, R, R) in [0, 1]


@dataclass(frozen=True)
class TactileObs:
    finger_a: np.ndarray  # (3, R, R) in [0, 1]
    finger_b: np.ndarray  # (3, R, R) in [0, 1]


@dataclass(frozen=True)
class Episode:
    episode_id: int
    object_id: int
    visual: VisualObs
    tactile: TactileObs
    grasp: GraspParams
    success: bool = True


def sample_object(rng: np.random.Generator, object_id: int = 0) -> ObjectSpec:
    """Draw all latent components independently and uniformly on [0,1]."""
    return ObjectSpec(object_id=object_id, latent=rng.uniform(0.0, 1.0, 8))


def generate_objects(
    n: int, rng: np.random.Generator, min_size: float = 0.0
) -> list[ObjectSpec]:
    """Sample a world of objects, rejecting ungraspable sizes.

    A physical object set is implicitly graspable; with ``min_size`` > 0
    specs whose size latent falls below it are redrawn so every object's
    footprint gives the grasp sampler a real acceptance region.
    """
    objects = []
    for i in range(n):
        for _ in range(10_000):
            spec = sample_object(rng, object_id=i)
            if spec.size >= min_size:
                break
        else:
            raise DegenerateObjectError(
                f"could not sample an object with size >= {min_size}"
            )
        objects.append(spec)
    return objects


def _shape_params(spec: ObjectSpec) -> tuple[float, float, float]:
    """Semi-axes (a, b) and corner exponent p of the silhouette."""
    extent = _EXTENT_MAX * math.sqrt(spec.size)
    ratio = math.exp((spec.aspect - 0.5) * _ASPECT_LOG_RANGE)
    p = _CORNER_EXP_MIN * (_CORNER_EXP_MAX / _CORNER_EXP_MIN) ** spec.curvature
    return extent * ratio, extent / ratio, p


def _superellipse_metric(x, y, a: float, b: float, p: float):
    """|x/a|^p + |y/b|^p; below 1 inside the silhouette."""
    return np.abs(x / a) ** p + np.abs(y / b) ** p


def _texture_frequency(spec: ObjectSpec) -> float:
    return _FREQ_MIN + (_FREQ_MAX - _FREQ_MIN) * spec.texture_freq


def _grid(resolution: int):
    c = np.linspace(-1.0, 1.0, resolution)
    return np.meshgrid(c, c, indexing="xy")


def render_visual(
    spec: ObjectSpec, rng: np.random.Generator, cfg: WorldConfig = WorldConfig()
) -> VisualObs:
    """Frontal camera view: silhouette + color + texture + jitter + noise.

    Per-render randomness, drawn in fixed order: sub-pixel translation
    up to +-jitter_px, a brightness scale in [1-j, 1+j], then iid
    Gaussian pixel noise.  Output is clamped to [0, 1].
    """
    res = cfg.resolution
    xx, yy = _grid(res)
    px = 2.0 / (res - 1)
    dx, dy = rng.uniform(-cfg.jitter_px * px, cfg.jitter_px * px, 2)
    brightness = 1.0 + rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    noise = rng.normal(0.0, cfg.pixel_noise, (3, res, res))

    a, b, p = _shape_params(spec)
    img = np.full((3, res, res), _BACKGROUND)
    if a > 1e-6 and b > 1e-6:
        xs, ys = xx - dx, yy - dy
        m = _superellipse_metric(xs, ys, a, b, p)
        mask = 1.0 / (1.0 + np.exp(np.clip((m - 1.0) / 0.09, -60.0, 60.0)))
        freq = _texture_frequency(spec)
        # texture anchored in the image frame: jitter moves the silhouette,
        # not the pattern phase, keeping repeat renders close
        tex = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * xx) * np.sin(
            2.0 * np.pi * freq * yy
        )
        color = colorsys.hsv_to_rgb(spec.hue, 0.65, 0.80)
        highlight = spec.gloss * _GLOSS_GAIN * np.exp(
            -((xs - 0.3 * a) ** 2 + (ys + 0.3 * b) ** 2) / (0.15 * max(a, 0.2)) ** 2
        )
        for c in range(3):
            # subtractive texture: contrast independent of the hue's own
            # brightness, so texture amplitude reads the same for any color
            fg = np.clip(
                0.25 + 0.75 * color[c] - _VIS_TEXTURE_DEPTH * spec.texture_amp * tex,
                0.0,
                None,
            )
            img[c] += mask * (fg + highlight - _BACKGROUND)

    img = np.clip(img * brightness + noise, 0.0, 1.0)
    return VisualObs(image=img)


def grasp_success(
    spec: ObjectSpec, grasp: GraspParams, cfg: WorldConfig = WorldConfig()
) -> bool:
    """True iff the contact point falls inside the silhouette footprint
    and the grip force reaches the minimum for a stable grasp."""
    if grasp.force < cfg.min_force:
        return False
    a, b, p = _shape_params(spec)
    if a <= 1e-6 or b <= 1e-6:
        return False
    ox, oy = grasp.contact_offset
    return float(_superellipse_metric(np.float64(ox), np.float64(oy), a, b, p)) <= 1.0


def _contact_height_field(
    spec: ObjectSpec, grasp: GraspParams, resolution: int
) -> np.ndarray:
    xx, yy = _grid(resolution)
    ox, oy = grasp.contact_offset
    force = grasp.force

    depth = _TAC_DEPTH_GAIN * force * (1.0 - 0.5 * spec.hardness)
    h = np.full((resolution, resolution), depth)

    # material texture: same frequency/amplitude latents as the camera,
    # phase shifted by where on the surface the grasp landed
    freq = _texture_frequency(spec)
    tex = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * (xx + 2.0 * ox)) * np.sin(
        2.0 * np.pi * freq * (yy + 2.0 * oy)
    )
    h += _TAC_TEX_GAIN * spec.texture_amp * force * tex

    # edge ridge when the contact lies near the silhouette boundary
    a, b, p = _shape_params(spec)
    m0 = float(_superellipse_metric(np.float64(ox), np.float64(oy), a, b, p))
    proximity = math.exp(-(((1.0 - m0) / _EDGE_BAND) ** 2))
    if proximity > 1e-6 and m0 > 1e-9:
        # boundary normal ~ gradient of the superellipse metric at the contact
        gx = math.copysign((p / a) * (max(abs(ox), 1e-6) / a) ** (p - 1.0), ox)
        gy = math.copysign((p / b) * (max(abs(oy), 1e-6) / b) ** (p - 1.0), oy)
        norm = math.hypot(gx, gy)
        if norm > 1e-12:
            cos_t, sin_t = gx / norm, gy / norm
            width = _RIDGE_WIDTH_MAX * (
                _RIDGE_WIDTH_MIN / _RIDGE_WIDTH_MAX
            ) ** spec.curvature
            u = xx * cos_t + yy * sin_t - 0.6 * (1.0 - m0)
            step = 1.0 / (1.0 + np.exp(np.clip(u / width, -60.0, 60.0)))
            h += _TAC_EDGE_AMP * force * proximity * step
    return h


def _shade_height_field(h: np.ndarray, resolution: int) -> np.ndarray:
    """GelSight-style photometric encoding with three fixed lights."""
    spacing = 2.0 / (resolution - 1)
    dy, dx = np.gradient(h, spacing)
    img = np.empty((3, resolution, resolution))
    for c, angle in enumerate(_TAC_LIGHT_ANGLES):
        img[c] = (
            _TAC_BASE
            + _TAC_HEIGHT_SHADE * h
            + _TAC_LIGHT_GAIN * (dx * math.cos(angle) + dy * math.sin(angle))
        )
    return img


def render_tactile(
    spec: ObjectSpec,
    grasp: GraspParams,
    rng: np.random.Generator,
    cfg: WorldConfig = WorldConfig(),
) -> TactileObs:
    """Two finger images from one contact event.

    Finger B observes the horizontally mirrored height field through its
    own (mirror-mounted) lights, so its noise-free image is exactly the
    mirror of finger A's; each finger then gets independent pixel noise.
    """
    if not grasp_success(spec, grasp, cfg):
        raise InvalidGraspError(
            f"object {spec.object_id}: grasp at {grasp.contact_offset} "
            f"with force {grasp.force:.3f} fails the success rule"
        )
    res = cfg.resolution
    h = _contact_height_field(spec, grasp, res)
    base = _shade_height_field(h, res)
    noise_a = rng.normal(0.0, cfg.pixel_noise, (3, res, res))
    noise_b = rng.normal(0.0, cfg.pixel_noise, (3, res, res))
    finger_a = np.clip(base + noise_a, 0.0, 1.0)
    finger_b = np.clip(base[:, :, ::-1] + noise_b, 0.0, 1.0)
    return TactileObs(finger_a=finger_a, finger_b=np.ascontiguousarray(finger_b))


def collect_episode(
    spec: ObjectSpec,
    rng: np.random.Generator,
    cfg: WorldConfig = WorldConfig(),
    episode_id: int = 0,
    max_attempts: int = 100,
) -> Episode:
    """One interaction: record the camera image, then grasp until success.

    The visual observation is rendered before any grasp is attempted
    (the camera sees the scene pre-contact).  Grasp candidates sample
    the contact offset uniformly over the table and the force uniformly
    on [0,1]; failed candidates are retried up to ``max_attempts``.
    """
    visual = render_visual(spec, rng, cfg)
    for _ in range(max_attempts):
        ox, oy = rng.uniform(-1.0, 1.0, 2)
        force = float(rng.uniform(0.0, 1.0))
        grasp = GraspParams(contact_offset=(float(ox), float(oy)), force=force)
        if grasp_success(spec, grasp, cfg):
            tactile = render_tactile(spec, grasp, rng, cfg)
            return Episode(
                episode_id=episode_id,
                object_id=spec.object_id,
                visual=visual,
                tactile=tactile,
                grasp=grasp,
                success=True,
            )
    raise DegenerateObjectError(
        f"object {spec.object_id}: no successful grasp in {max_attempts} attempts "
        f"(size={spec.size:.4f})"
    )
