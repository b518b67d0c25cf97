"""Ranking evaluation: pair accuracy, K-shot trials, per-object readouts.

A scorer maps a (tactile, visual) episode pair to a confidence, higher
meaning more likely the same object.  Four implementations: the trained
match network (log-probability), the fitted CCA baseline, a seeded
chance scorer, and a latent oracle that reads generator ground truth
(used only to confirm the task is solvable by construction).

Trials are independent: trial ``i`` draws its randomness from the
stream ``default_rng([seed, i])``, so results do not depend on
evaluation order.  Ranking ties break by ascending candidate object id.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cca import CcaModel, featurize_tactile_batch, featurize_visual_batch
from .data import EpisodeStore, PairExample
from .errors import ConfigError, NumericError
from .model import MatchModelParams, _encode_batch
from .seeding import indexed_rng
from .serialize import atomic_write_text


class Scorer:
    """Confidence function over episode pairs; higher = more likely same."""

    name: str = "scorer"
    decision_threshold: float = 0.0

    def score(self, tactile_episode_id: int, visual_episode_id: int) -> float:
        raise NotImplementedError


class MatchNetScorer(Scorer):
    """Log match probability from the trained network (eval mode).

    Encoder features are precomputed per episode, so scoring a pair is
    one pass through the fusion head.
    """

    name = "matchnet"
    decision_threshold = math.log(0.5)  # probability 0.5

    def __init__(self, params: MatchModelParams, store: EpisodeStore, chunk: int = 128):
        self._params = params
        cfg = params.config
        n = len(store)
        tac = np.empty((n, 2 * cfg.feature_dim))
        vis = np.empty((n, cfg.feature_dim))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            fa = _encode_batch(params.tactile, ad.Tensor(store.tactile_a[lo:hi]), cfg)
            fb = _encode_batch(params.tactile, ad.Tensor(store.tactile_b[lo:hi]), cfg)
            fv = _encode_batch(params.visual, ad.Tensor(store.visual[lo:hi]), cfg)
            tac[lo:hi] = np.concatenate([fa.data, fb.data], axis=1)
            vis[lo:hi] = fv.data
        self._tactile_feats = tac
        self._visual_feats = vis

    def _logit(self, joint: np.ndarray) -> np.ndarray:
        p = self._params
        h1 = np.maximum(joint @ p.w1.data + p.b1.data, 0.0)
        h2 = np.maximum(h1 @ p.w2.data + p.b2.data, 0.0)
        return h2 @ p.w_out.data + p.b_out.data

    def score(self, tactile_episode_id: int, visual_episode_id: int) -> float:
        joint = np.concatenate(
            [
                self._tactile_feats[tactile_episode_id],
                self._visual_feats[visual_episode_id],
            ]
        )[None, :]
        logit = float(self._logit(joint)[0, 0])
        # log sigmoid, stable on both tails
        return -math.log1p(math.exp(-abs(logit))) + min(logit, 0.0)


class CcaScorer(Scorer):
    name = "cca"

    def __init__(self, model: CcaModel, store: EpisodeStore):
        self._model = model
        self._tactile_feats = featurize_tactile_batch(store.tactile_a, store.tactile_b)
        self._visual_feats = featurize_visual_batch(store.visual)
        self.decision_threshold = 0.0 if model.threshold is None else model.threshold

    def score(self, tactile_episode_id: int, visual_episode_id: int) -> float:
        return float(
            self._model.score_features(
                self._tactile_feats[tactile_episode_id],
                self._visual_feats[visual_episode_id],
            )
        )


class ChanceScorer(Scorer):
    """Seeded uniform confidence keyed on the episode-id pair."""

    name = "chance"
    decision_threshold = 0.5

    def __init__(self, seed: int):
        self._seed = seed

    def score(self, tactile_episode_id: int, visual_episode_id: int) -> float:
        digest = hashlib.sha256(
            f"chance:{self._seed}:{tactile_episode_id}:{visual_episode_id}".encode()
        ).digest()
        return int.from_bytes(digest[:8], "little") / 2.0**64


class LatentOracleScorer(Scorer):
    """Generator ground truth: negative distance between object latents.

    Zero exactly when the objects match, strictly negative otherwise;
    only for validating that the synthetic task is solvable.
    """

    name = "oracle"
    decision_threshold = -1e-9

    def __init__(self, store: EpisodeStore):
        self._store = store

    def score(self, tactile_episode_id: int, visual_episode_id: int) -> float:
        lt = self._store.latent(int(self._store.object_ids[tactile_episode_id]))
        lv = self._store.latent(int(self._store.object_ids[visual_episode_id]))
        return -float(np.linalg.norm(lt - lv))


# ---------------------------------------------------------------------------
# pair accuracy


def pair_accuracy(
    scorer: Scorer,
    pairs: list[PairExample],
    threshold: float | None = None,
) -> float:
    """Fraction of pairs where (score >= threshold) equals the label."""
    if not pairs:
        raise ConfigError("pair_accuracy on an empty pair list")
    tau = scorer.decision_threshold if threshold is None else threshold
    correct = 0
    for p in pairs:
        decide = scorer.score(p.tactile_episode_id, p.visual_episode_id) >= tau
        correct += decide == bool(p.label)
    return correct / len(pairs)


# ---------------------------------------------------------------------------
# K-shot ranking trials


@dataclass(frozen=True)
class RankingTrial:
    query_episode_id: int
    query_object_id: int
    candidate_episode_ids: tuple[int, ...]
    candidate_object_ids: tuple[int, ...]
    true_index: int


@dataclass(frozen=True)
class TrialResult:
    trial: RankingTrial
    confidences: tuple[float, ...]
    rank_of_truth: int
    first_guess_object_id: int


def make_trials(
    store: EpisodeStore,
    pool_object_ids,
    k: int,
    n_trials: int,
    seed: int,
) -> list[RankingTrial]:
    """Independent K-candidate recognition trials over an object pool.

    Each trial: a uniform query episode from the pool, K-1 distractor
    objects sampled without replacement (true object excluded), one
    uniform episode's visual per candidate object, candidate order
    shuffled.  Trial i uses the stream ``default_rng([seed, i])``.
    """
    pool = sorted(int(i) for i in pool_object_ids)
    if len(pool) < k:
        raise ConfigError(f"pool has {len(pool)} objects, need at least K={k}")
    pool_arr = np.array(pool)
    episodes = np.concatenate([store.episodes_of(o) for o in pool])
    trials = []
    for i in range(n_trials):
        rng = indexed_rng(seed, i)
        q = int(episodes[rng.integers(episodes.size)])
        true_obj = int(store.object_ids[q])
        others = pool_arr[pool_arr != true_obj]
        distractors = rng.choice(others, size=k - 1, replace=False)
        objects = [true_obj] + [int(d) for d in distractors]
        visuals = []
        for obj in objects:
            eps = store.episodes_of(obj)
            visuals.append(int(eps[rng.integers(len(eps))]))
        order = rng.permutation(k)
        cand_eps = tuple(visuals[int(j)] for j in order)
        cand_objs = tuple(objects[int(j)] for j in order)
        trials.append(
            RankingTrial(
                query_episode_id=q,
                query_object_id=true_obj,
                candidate_episode_ids=cand_eps,
                candidate_object_ids=cand_objs,
                true_index=int(np.nonzero(order == 0)[0][0]),
            )
        )
    return trials


def rank_candidates(scorer: Scorer, trial: RankingTrial) -> TrialResult:
    """Rank candidates by descending confidence, ties by object id."""
    confidences = [
        scorer.score(trial.query_episode_id, c) for c in trial.candidate_episode_ids
    ]
    for conf in confidences:
        if not math.isfinite(conf):
            raise NumericError(
                f"scorer {scorer.name} produced a non-finite confidence on the "
                f"trial with query episode {trial.query_episode_id}"
            )
    order = sorted(
        range(len(confidences)),
        key=lambda j: (-confidences[j], trial.candidate_object_ids[j]),
    )
    return TrialResult(
        trial=trial,
        confidences=tuple(confidences),
        rank_of_truth=order.index(trial.true_index) + 1,
        first_guess_object_id=trial.candidate_object_ids[order[0]],
    )


def run_trials(scorer: Scorer, trials: list[RankingTrial]) -> list[TrialResult]:
    return [rank_candidates(scorer, t) for t in trials]


def cumulative_accuracy(ranks, k: int) -> list[float]:
    """curve[n-1] = fraction of trials solved within n guesses."""
    ranks = list(ranks)
    if not ranks:
        raise ConfigError("cumulative_accuracy on zero trials")
    if any(r < 1 or r > k for r in ranks):
        raise ConfigError(f"rank outside 1..{k}")
    return [sum(r <= n for r in ranks) / len(ranks) for n in range(1, k + 1)]


@dataclass(frozen=True)
class PerObjectStats:
    trials: dict[int, int]
    correct: dict[int, int]
    confusion: dict[tuple[int, int], int]

    def accuracy(self, object_id: int) -> float:
        return self.correct[object_id] / self.trials[object_id]


def first_shot_by_object(results: list[TrialResult]) -> PerObjectStats:
    """Per true-object first-guess accuracy plus confusion counts."""
    trials: dict[int, int] = {}
    correct: dict[int, int] = {}
    confusion: dict[tuple[int, int], int] = {}
    for res in results:
        obj = res.trial.query_object_id
        trials[obj] = trials.get(obj, 0) + 1
        correct[obj] = correct.get(obj, 0) + (res.rank_of_truth == 1)
        key = (obj, res.first_guess_object_id)
        confusion[key] = confusion.get(key, 0) + 1
    return PerObjectStats(trials=trials, correct=correct, confusion=confusion)


# ---------------------------------------------------------------------------
# metric files


def write_curves_csv(path: Path, rows: list[tuple[int, float, str, int]]) -> None:
    """Rows are (guess_index, accuracy, scorer, K)."""
    lines = ["guess_index,accuracy,scorer,K"]
    lines += [f"{g},{acc:.6f},{scorer},{k}" for g, acc, scorer, k in rows]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_per_object_csv(path: Path, rows: list[tuple[int, str, float, int]]) -> None:
    """Rows are (object_id, split, accuracy, n_trials)."""
    lines = ["object_id,split,accuracy,n_trials"]
    lines += [f"{oid},{split},{acc:.6f},{n}" for oid, split, acc, n in rows]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_confusion_csv(path: Path, confusion: dict[tuple[int, int], int]) -> None:
    lines = ["true_object_id,first_guess_object_id,count"]
    lines += [
        f"{t},{g},{c}" for (t, g), c in sorted(confusion.items())
    ]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_summary(path: Path, entries: list[tuple[str, str]]) -> None:
    atomic_write_text(
        Path(path), "\n".join(f"{k} {v}" for k, v in entries) + "\n"
    )
