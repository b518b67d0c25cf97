"""Episode storage, object splits, and self-supervised pair construction.

Pairing follows the collection protocol: every stored tactile reading is
matched with a fixed number of positive visuals (drawn from the same
object's episodes) and negative visuals (drawn from other objects on the
same split side), giving an exactly label-balanced dataset with equal
tactile usage per object.

On disk a store is a plain-text manifest (object latents, episode
metadata, blob offsets) plus one binary blob of little-endian float32
observations; pair lists are three-column CSV files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, StoreFormatError, UnderPopulatedObjectError
from .serialize import atomic_write_bytes, atomic_write_text
from .world import Episode, GraspParams, ObjectSpec, TactileObs, VisualObs

MANIFEST_NAME = "episodes.manifest"
BLOB_NAME = "episodes.f32"


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint train/test object-id partition."""

    train_object_ids: tuple[int, ...]
    test_object_ids: tuple[int, ...]
    seed: int

    def side(self, name: str) -> tuple[int, ...]:
        if name == "train":
            return self.train_object_ids
        if name == "test":
            return self.test_object_ids
        raise ValueError(f"unknown split side {name!r}")


@dataclass(frozen=True)
class PairExample:
    tactile_episode_id: int
    visual_episode_id: int
    label: int
    tactile_object_id: int
    visual_object_id: int


class EpisodeStore:
    """All collected episodes, indexed by dense episode id and by object.

    Observations live in stacked arrays (one per stream) so training can
    gather batches with fancy indexing; :meth:`episode` materializes a
    lightweight view-backed Episode for per-item access.
    """

    def __init__(
        self,
        objects: list[ObjectSpec],
        object_ids: np.ndarray,
        grasps: list[GraspParams],
        visual: np.ndarray,
        tactile_a: np.ndarray,
        tactile_b: np.ndarray,
    ):
        n = len(object_ids)
        if not (len(grasps) == visual.shape[0] == tactile_a.shape[0] == n):
            raise StoreFormatError("inconsistent episode counts across streams")
        self.objects = {spec.object_id: spec for spec in objects}
        if len(self.objects) != len(objects):
            raise StoreFormatError("duplicate object ids")
        self.object_ids = np.asarray(object_ids, dtype=np.int64)
        self.grasps = grasps
        self.visual = visual
        self.tactile_a = tactile_a
        self.tactile_b = tactile_b
        self._by_object: dict[int, list[int]] = {oid: [] for oid in self.objects}
        for eid, oid in enumerate(self.object_ids):
            self._by_object[int(oid)].append(eid)

    @classmethod
    def build(cls, objects: list[ObjectSpec], episodes: list[Episode]) -> "EpisodeStore":
        visual = np.stack([e.visual.image for e in episodes])
        tactile_a = np.stack([e.tactile.finger_a for e in episodes])
        tactile_b = np.stack([e.tactile.finger_b for e in episodes])
        return cls(
            objects=objects,
            object_ids=np.array([e.object_id for e in episodes]),
            grasps=[e.grasp for e in episodes],
            visual=visual,
            tactile_a=tactile_a,
            tactile_b=tactile_b,
        )

    def __len__(self) -> int:
        return len(self.object_ids)

    @property
    def resolution(self) -> int:
        return self.visual.shape[-1]

    def episodes_of(self, object_id: int) -> list[int]:
        return self._by_object[object_id]

    def episode(self, episode_id: int) -> Episode:
        return Episode(
            episode_id=episode_id,
            object_id=int(self.object_ids[episode_id]),
            visual=VisualObs(image=self.visual[episode_id]),
            tactile=TactileObs(
                finger_a=self.tactile_a[episode_id],
                finger_b=self.tactile_b[episode_id],
            ),
            grasp=self.grasps[episode_id],
            success=True,
        )

    def latent(self, object_id: int) -> np.ndarray:
        return self.objects[object_id].latent

    # -- persistence --------------------------------------------------

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        res = self.resolution
        per_stream = 3 * res * res
        lines = [
            "store-version 1",
            f"resolution {res}",
            f"objects {len(self.objects)}",
            f"episodes {len(self)}",
            f"blob {BLOB_NAME}",
        ]
        for oid in sorted(self.objects):
            lat = " ".join(repr(float(v)) for v in self.objects[oid].latent)
            lines.append(f"object {oid} {lat}")
        blob = np.empty((len(self), 3 * per_stream), dtype="<f4")
        for eid in range(len(self)):
            g = self.grasps[eid]
            offset = eid * 3 * per_stream
            lines.append(
                f"episode {eid} {int(self.object_ids[eid])} "
                f"{g.contact_offset[0]!r} {g.contact_offset[1]!r} {g.force!r} "
                f"{offset}"
            )
            blob[eid, :per_stream] = self.visual[eid].reshape(-1)
            blob[eid, per_stream : 2 * per_stream] = self.tactile_a[eid].reshape(-1)
            blob[eid, 2 * per_stream :] = self.tactile_b[eid].reshape(-1)
        atomic_write_bytes(directory / BLOB_NAME, blob.tobytes())
        atomic_write_text(directory / MANIFEST_NAME, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory: Path) -> "EpisodeStore":
        directory = Path(directory)
        manifest = directory / MANIFEST_NAME
        try:
            text = manifest.read_text()
        except OSError as exc:
            raise StoreFormatError(f"cannot read manifest {manifest}: {exc}") from exc

        header: dict[str, str] = {}
        objects: list[ObjectSpec] = []
        episode_rows: list[tuple[int, int, float, float, float, int]] = []
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, _, rest = line.partition(" ")
            if kind == "object":
                parts = rest.split()
                objects.append(
                    ObjectSpec(int(parts[0]), np.array([float(v) for v in parts[1:]]))
                )
            elif kind == "episode":
                e, o, ox, oy, force, off = rest.split()
                episode_rows.append(
                    (int(e), int(o), float(ox), float(oy), float(force), int(off))
                )
            else:
                header[kind] = rest
        try:
            res = int(header["resolution"])
            n_episodes = int(header["episodes"])
            blob_name = header["blob"]
        except KeyError as exc:
            raise StoreFormatError(f"manifest {manifest} missing field {exc}") from exc
        if len(episode_rows) != n_episodes:
            raise StoreFormatError(
                f"manifest says {n_episodes} episodes, found {len(episode_rows)}"
            )

        per_stream = 3 * res * res
        raw = np.frombuffer((directory / blob_name).read_bytes(), dtype="<f4")
        if raw.size != n_episodes * 3 * per_stream:
            raise StoreFormatError(
                f"blob has {raw.size} floats, expected {n_episodes * 3 * per_stream}"
            )

        episode_rows.sort()
        if [row[0] for row in episode_rows] != list(range(n_episodes)):
            raise StoreFormatError("episode ids are not dense from 0")
        visual = np.empty((n_episodes, 3, res, res))
        tactile_a = np.empty_like(visual)
        tactile_b = np.empty_like(visual)
        grasps = []
        object_ids = np.empty(n_episodes, dtype=np.int64)
        for eid, oid, ox, oy, force, off in episode_rows:
            object_ids[eid] = oid
            grasps.append(GraspParams((ox, oy), force))
            chunk = raw[off : off + 3 * per_stream].astype(np.float64)
            visual[eid] = chunk[:per_stream].reshape(3, res, res)
            tactile_a[eid] = chunk[per_stream : 2 * per_stream].reshape(3, res, res)
            tactile_b[eid] = chunk[2 * per_stream :].reshape(3, res, res)
        return cls(objects, object_ids, grasps, visual, tactile_a, tactile_b)


# ---------------------------------------------------------------------------
# splits


def split_objects(n_objects: int, test_fraction: float, seed: int) -> SplitManifest:
    """Uniform random object partition with round(n * fraction) test ids."""
    if n_objects < 2:
        raise ConfigError(f"need at least 2 objects to split, got {n_objects}")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0,1), got {test_fraction}")
    n_test = int(n_objects * test_fraction + 0.5)
    if n_test < 2 or n_objects - n_test < 2:
        raise ConfigError(
            f"split of {n_objects} objects at fraction {test_fraction} leaves "
            f"fewer than 2 objects on one side"
        )
    perm = np.random.default_rng(seed).permutation(n_objects)
    return SplitManifest(
        train_object_ids=tuple(sorted(int(i) for i in perm[n_test:])),
        test_object_ids=tuple(sorted(int(i) for i in perm[:n_test])),
        seed=seed,
    )


def save_split(split: SplitManifest, path: Path) -> None:
    text = (
        f"seed {split.seed}\n"
        f"train {' '.join(str(i) for i in split.train_object_ids)}\n"
        f"test {' '.join(str(i) for i in split.test_object_ids)}\n"
    )
    atomic_write_text(Path(path), text)


def load_split(path: Path) -> SplitManifest:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise StoreFormatError(f"cannot read split {path}: {exc}") from exc
    fields = dict(line.partition(" ")[::2] for line in lines if line.strip())
    try:
        return SplitManifest(
            train_object_ids=tuple(int(i) for i in fields["train"].split()),
            test_object_ids=tuple(int(i) for i in fields["test"].split()),
            seed=int(fields["seed"]),
        )
    except KeyError as exc:
        raise StoreFormatError(f"split file {path} missing field {exc}") from exc


# ---------------------------------------------------------------------------
# pairing


def build_pairs(
    store: EpisodeStore,
    side_object_ids,
    pos_per_tactile: int,
    neg_per_tactile: int,
    seed: int,
) -> list[PairExample]:
    """Pair every tactile reading on one split side with sampled visuals.

    Positives draw the visual uniformly from the same object's episodes
    (self-pairing allowed; the image is recorded before the grasp, so it
    leaks nothing about the touch).  Negatives first pick a distractor
    object uniformly, then one of its episodes uniformly, which keeps
    per-object exposure even when episode counts are unbalanced.  The
    result is shuffled; with pos == neg it is exactly label-balanced.
    """
    side = sorted(int(i) for i in side_object_ids)
    if len(side) < 2:
        raise ConfigError(f"pair construction needs >= 2 objects, got {len(side)}")
    for oid in side:
        if len(store.episodes_of(oid)) < 2:
            raise UnderPopulatedObjectError(
                f"object {oid} has {len(store.episodes_of(oid))} episode(s); "
                f"need at least 2 for pairing"
            )
    rng = np.random.default_rng(seed)
    pairs: list[PairExample] = []
    for oid in side:
        own = store.episodes_of(oid)
        others = [o for o in side if o != oid]
        for eid in own:
            for _ in range(pos_per_tactile):
                vid = own[int(rng.integers(len(own)))]
                pairs.append(PairExample(eid, vid, 1, oid, oid))
            for _ in range(neg_per_tactile):
                dobj = others[int(rng.integers(len(others)))]
                dep = store.episodes_of(dobj)
                vid = dep[int(rng.integers(len(dep)))]
                pairs.append(PairExample(eid, vid, 0, oid, dobj))
    order = rng.permutation(len(pairs))
    return [pairs[int(i)] for i in order]


@dataclass(frozen=True)
class DatasetSummary:
    n_pairs: int
    n_positive: int
    n_negative: int
    label_ratio: float
    tactile_uses_by_object: dict[int, int]
    visual_uses_by_object: dict[int, int]


def dataset_summary(pairs: list[PairExample]) -> DatasetSummary:
    n_pos = sum(p.label for p in pairs)
    tactile: dict[int, int] = {}
    visual: dict[int, int] = {}
    for p in pairs:
        tactile[p.tactile_object_id] = tactile.get(p.tactile_object_id, 0) + 1
        visual[p.visual_object_id] = visual.get(p.visual_object_id, 0) + 1
    return DatasetSummary(
        n_pairs=len(pairs),
        n_positive=n_pos,
        n_negative=len(pairs) - n_pos,
        label_ratio=n_pos / len(pairs) if pairs else float("nan"),
        tactile_uses_by_object=dict(sorted(tactile.items())),
        visual_uses_by_object=dict(sorted(visual.items())),
    )


def save_pairs(pairs: list[PairExample], path: Path) -> None:
    rows = ["tactile_episode_id,visual_episode_id,label"]
    rows += [
        f"{p.tactile_episode_id},{p.visual_episode_id},{p.label}" for p in pairs
    ]
    atomic_write_text(Path(path), "\n".join(rows) + "\n")


def load_pairs(path: Path, store: EpisodeStore) -> list[PairExample]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise StoreFormatError(f"cannot read pairs {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        pairs = []
        for row in reader:
            t = int(row["tactile_episode_id"])
            v = int(row["visual_episode_id"])
            pairs.append(
                PairExample(
                    tactile_episode_id=t,
                    visual_episode_id=v,
                    label=int(row["label"]),
                    tactile_object_id=int(store.object_ids[t]),
                    visual_object_id=int(store.object_ids[v]),
                )
            )
    return pairs
