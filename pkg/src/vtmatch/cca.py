"""Canonical correlation analysis baseline for cross-modal matching.

Features are 2x average-pooled, flattened pixels (both finger images
concatenated on the tactile side).  Fitting centers each modality,
reduces to p principal components, then solves the whitened
cross-covariance SVD: the top C singular values are the canonical
correlations and the back-transformed singular vectors the projections.
A pair's score is the correlation-weighted inner product of the two
projected features; classification thresholds that score, ranking uses
it raw.

Fitting uses positive (same-object) pairs only: negatives carry no
correspondence signal.  The decision threshold does need both classes,
so it is calibrated afterwards on a labeled pair list.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, StoreFormatError
from .serialize import read_bundle, write_bundle
from .world import TactileObs, VisualObs


def _pool2(img: np.ndarray) -> np.ndarray:
    """(C,R,R) -> (C,R/2,R/2) by 2x2 average pooling."""
    c, r, _ = img.shape
    if r % 2:
        raise ConfigError(f"featurize needs an even resolution, got {r}")
    return img.reshape(c, r // 2, 2, r // 2, 2).mean(axis=(2, 4))


def featurize_visual(obs: VisualObs) -> np.ndarray:
    return _pool2(obs.image).reshape(-1)


def featurize_tactile(obs: TactileObs) -> np.ndarray:
    return np.concatenate(
        [_pool2(obs.finger_a).reshape(-1), _pool2(obs.finger_b).reshape(-1)]
    )


def featurize_visual_batch(images: np.ndarray) -> np.ndarray:
    n, c, r, _ = images.shape
    return images.reshape(n, c, r // 2, 2, r // 2, 2).mean(axis=(3, 5)).reshape(n, -1)


def featurize_tactile_batch(finger_a: np.ndarray, finger_b: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [featurize_visual_batch(finger_a), featurize_visual_batch(finger_b)], axis=1
    )


@dataclass
class CcaModel:
    """Means, PCA bases, canonical projections, and the decision threshold.

    Projected training features have unit variance per canonical
    coordinate by construction; correlations are sorted descending in
    [0, 1].
    """

    mean_tactile: np.ndarray
    mean_visual: np.ndarray
    basis_tactile: np.ndarray  # (dx, p)
    basis_visual: np.ndarray  # (dy, p)
    proj_tactile: np.ndarray  # (p, C)
    proj_visual: np.ndarray  # (p, C)
    correlations: np.ndarray  # (C,)
    ridge: float
    threshold: float | None = None

    def tactile_coords(self, feats: np.ndarray) -> np.ndarray:
        return ((feats - self.mean_tactile) @ self.basis_tactile) @ self.proj_tactile

    def visual_coords(self, feats: np.ndarray) -> np.ndarray:
        return ((feats - self.mean_visual) @ self.basis_visual) @ self.proj_visual

    def score_features(self, tactile_feats: np.ndarray, visual_feats: np.ndarray):
        """Correlation-weighted agreement; bilinear in the projections."""
        ct = self.tactile_coords(tactile_feats)
        cv = self.visual_coords(visual_feats)
        return (ct * cv) @ self.correlations

    def score(self, tactile: TactileObs, visual: VisualObs) -> float:
        return float(
            self.score_features(featurize_tactile(tactile), featurize_visual(visual))
        )


def _principal_basis(centered: np.ndarray, p: int) -> np.ndarray:
    cov = centered.T @ centered / (centered.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    basis = vecs[:, ::-1][:, :p]
    return _fix_signs(basis)


def _fix_signs(mat: np.ndarray) -> np.ndarray:
    """Deterministic SVD/eig sign convention: first nonzero entry positive."""
    mat = mat.copy()
    for j in range(mat.shape[1]):
        col = mat[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            mat[:, j] = -col
    return mat


def _inv_sqrt(mat: np.ndarray, ridge: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat + ridge * np.eye(mat.shape[0]))
    if vals[0] <= vals[-1] * 1e-13 or vals[0] <= 0.0:
        raise NumericError(
            f"covariance rank-deficient beyond the ridge (condition ~{vals[-1] / max(vals[0], 1e-300):.3e})"
        )
    return vecs @ ((1.0 / np.sqrt(vals)) * vecs).T


def fit_cca(
    tactile_feats: np.ndarray,
    visual_feats: np.ndarray,
    pca_dims: int,
    canonical_dims: int,
    ridge: float,
) -> CcaModel:
    """Fit on positive pairs: rows of the two matrices correspond."""
    n, dx = tactile_feats.shape
    ny, dy = visual_feats.shape
    if n != ny:
        raise ConfigError(f"paired feature counts differ: {n} vs {ny}")
    p, c = pca_dims, canonical_dims
    if not (n > p >= c >= 1):
        raise ConfigError(
            f"need n > pca_dims >= canonical_dims >= 1, got n={n}, p={p}, C={c}"
        )
    if p > min(dx, dy):
        raise ConfigError(f"pca_dims {p} exceeds feature dims ({dx}, {dy})")

    mean_x = tactile_feats.mean(axis=0)
    mean_y = visual_feats.mean(axis=0)
    xc = tactile_feats - mean_x
    yc = visual_feats - mean_y
    bx = _principal_basis(xc, p)
    by = _principal_basis(yc, p)
    xr = xc @ bx
    yr = yc @ by

    sxx = xr.T @ xr / (n - 1)
    syy = yr.T @ yr / (n - 1)
    sxy = xr.T @ yr / (n - 1)
    wx = _inv_sqrt(sxx, ridge)
    wy = _inv_sqrt(syy, ridge)
    u_w, sv, vt_w = np.linalg.svd(wx @ sxy @ wy)
    if sv[0] > 1.0 + 1e-6:
        raise NumericError(f"leading canonical correlation {sv[0]:.6f} exceeds 1")

    u = wx @ u_w[:, :c]
    v = wy @ vt_w.T[:, :c]
    flip = np.ones(c)
    for j in range(c):
        nz = np.nonzero(np.abs(u[:, j]) > 1e-12)[0]
        if nz.size and u[nz[0], j] < 0:
            flip[j] = -1.0
    u *= flip
    v *= flip
    # the ridge detunes whitening slightly; rescale so projected training
    # features have unit variance exactly
    sd_x = (xr @ u).std(axis=0, ddof=1)
    sd_y = (yr @ v).std(axis=0, ddof=1)
    if np.any(sd_x <= 0) or np.any(sd_y <= 0):
        raise NumericError("degenerate canonical coordinate with zero variance")
    u /= sd_x
    v /= sd_y

    return CcaModel(
        mean_tactile=mean_x,
        mean_visual=mean_y,
        basis_tactile=bx,
        basis_visual=by,
        proj_tactile=u,
        proj_visual=v,
        correlations=np.clip(sv[:c], 0.0, 1.0),
        ridge=ridge,
    )


def calibrate_threshold(
    model: CcaModel,
    tactile_feats: np.ndarray,
    visual_feats: np.ndarray,
    labels: np.ndarray,
) -> CcaModel:
    """Pick the score threshold maximizing balanced accuracy on the rows."""
    scores = model.score_features(tactile_feats, visual_feats)
    labels = np.asarray(labels).astype(bool)
    if not labels.any() or labels.all():
        raise ConfigError("threshold calibration needs both classes")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    cuts = np.concatenate(
        [
            [sorted_scores[0] - 1.0],
            (sorted_scores[1:] + sorted_scores[:-1]) / 2.0,
            [sorted_scores[-1] + 1.0],
        ]
    )
    best_tau, best_acc = cuts[0], -1.0
    n_pos, n_neg = labels.sum(), (~labels).sum()
    for tau in cuts:
        decide = scores >= tau
        tpr = (decide & labels).sum() / n_pos
        tnr = (~decide & ~labels).sum() / n_neg
        acc = 0.5 * (tpr + tnr)
        if acc > best_acc + 1e-12:
            best_acc, best_tau = acc, float(tau)
    model.threshold = best_tau
    return model


def save_cca(model: CcaModel, path_base: Path) -> None:
    meta = {
        "format": "cca-model-v1",
        "ridge": repr(model.ridge),
        "threshold": "none" if model.threshold is None else repr(model.threshold),
    }
    arrays = [
        ("mean_tactile", model.mean_tactile),
        ("mean_visual", model.mean_visual),
        ("basis_tactile", model.basis_tactile),
        ("basis_visual", model.basis_visual),
        ("proj_tactile", model.proj_tactile),
        ("proj_visual", model.proj_visual),
        ("correlations", model.correlations),
    ]
    write_bundle(Path(path_base), meta, arrays)


def load_cca(path_base: Path) -> CcaModel:
    meta, arrays = read_bundle(Path(path_base))
    if meta.get("format") != "cca-model-v1":
        raise StoreFormatError(f"{path_base} is not a CCA model bundle")
    return CcaModel(
        mean_tactile=arrays["mean_tactile"],
        mean_visual=arrays["mean_visual"],
        basis_tactile=arrays["basis_tactile"],
        basis_visual=arrays["basis_visual"],
        proj_tactile=arrays["proj_tactile"],
        proj_visual=arrays["proj_visual"],
        correlations=arrays["correlations"],
        ridge=float(meta["ridge"]),
        threshold=None if meta["threshold"] == "none" else float(meta["threshold"]),
    )
