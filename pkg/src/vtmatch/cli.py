"""Pipeline commands: gen-data, build-pairs, train, baseline, eval, report.

Every command is a one-shot process driven by (config file, master
seed, output directory); outputs are written atomically, so reruns with
identical inputs reproduce identical bytes.  Failures print a single
``<category>: <message>`` line and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import cca as cca_mod
from . import data as data_mod
from . import evaluate as ev
from . import model as model_mod
from . import world as world_mod
from .config import RunConfig, load_config, save_config
from .errors import MissingPrerequisiteError, VtmatchError
from .seeding import derive_seed

STORE_DIR = "store"
SPLIT_FILE = "split.txt"
PAIRS_TRAIN = "pairs_train.csv"
PAIRS_TEST = "pairs_test.csv"
MODEL_BASE = "model"
LOSS_CSV = "loss_history.csv"
CCA_BASE = "cca"
METRICS_DIR = "metrics"
REPORT_FILE = "report.txt"
FIRST_SHOT_K = 5


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(
            f"{path} not found; run `vtmatch {produced_by}` first"
        )
    return path


def _load_store(out: Path) -> data_mod.EpisodeStore:
    _require(out / STORE_DIR / data_mod.MANIFEST_NAME, "gen-data")
    return data_mod.EpisodeStore.load(out / STORE_DIR)


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    wcfg = cfg.world_config()
    rng = np.random.default_rng(derive_seed(cfg.seed, "world"))
    objects = world_mod.generate_objects(
        cfg.n_objects, rng, min_size=wcfg.min_object_size
    )
    episodes = []
    for spec in objects:
        for _ in range(cfg.episodes_per_object):
            episodes.append(
                world_mod.collect_episode(spec, rng, wcfg, episode_id=len(episodes))
            )
    store = data_mod.EpisodeStore.build(objects, episodes)
    store.save(out / STORE_DIR)
    save_config(cfg, out / "config.txt")
    print(f"gen-data: {len(objects)} objects, {len(episodes)} episodes -> {out / STORE_DIR}")


def cmd_build_pairs(cfg: RunConfig, out: Path) -> None:
    store = _load_store(out)
    split = data_mod.split_objects(
        cfg.n_objects, cfg.test_fraction, derive_seed(cfg.seed, "split")
    )
    data_mod.save_split(split, out / SPLIT_FILE)
    for side, filename in (("train", PAIRS_TRAIN), ("test", PAIRS_TEST)):
        pairs = data_mod.build_pairs(
            store,
            split.side(side),
            cfg.positives_per_tactile,
            cfg.negatives_per_tactile,
            derive_seed(cfg.seed, f"pairs.{side}"),
        )
        data_mod.save_pairs(pairs, out / filename)
        summary = data_mod.dataset_summary(pairs)
        print(
            f"build-pairs: {side} {summary.n_pairs} pairs "
            f"({summary.n_positive} pos / {summary.n_negative} neg, "
            f"{len(split.side(side))} objects)"
        )


def cmd_train(cfg: RunConfig, out: Path) -> None:
    store = _load_store(out)
    pairs = data_mod.load_pairs(_require(out / PAIRS_TRAIN, "build-pairs"), store)
    params, history = model_mod.train(
        store,
        pairs,
        cfg.train_config(derive_seed(cfg.seed, "train")),
        cfg.encoder_config(),
    )
    model_mod.save_model(params, out / MODEL_BASE)
    model_mod.save_loss_history(history, out / LOSS_CSV)
    print(
        f"train: {cfg.iterations} iterations, loss {history[0][1]:.4f} -> "
        f"{history[-1][1]:.4f}, checkpoint {out / MODEL_BASE}"
    )


def cmd_baseline(cfg: RunConfig, out: Path) -> None:
    store = _load_store(out)
    pairs = data_mod.load_pairs(_require(out / PAIRS_TRAIN, "build-pairs"), store)
    t_ids = np.array([p.tactile_episode_id for p in pairs])
    v_ids = np.array([p.visual_episode_id for p in pairs])
    labels = np.array([p.label for p in pairs])
    tac = cca_mod.featurize_tactile_batch(store.tactile_a, store.tactile_b)
    vis = cca_mod.featurize_visual_batch(store.visual)
    pos = labels == 1
    model = cca_mod.fit_cca(
        tac[t_ids[pos]], vis[v_ids[pos]], cfg.pca_dims, cfg.canonical_dims, cfg.ridge
    )
    cca_mod.calibrate_threshold(model, tac[t_ids], vis[v_ids], labels)
    cca_mod.save_cca(model, out / CCA_BASE)
    print(
        f"baseline: fitted CCA on {int(pos.sum())} positive pairs, "
        f"rho_1 {model.correlations[0]:.3f}, threshold {model.threshold:.4f}"
    )


def _scorers(cfg: RunConfig, store, params, cca_model) -> list[ev.Scorer]:
    return [
        ev.MatchNetScorer(params, store),
        ev.CcaScorer(cca_model, store),
        ev.ChanceScorer(derive_seed(cfg.seed, "eval.chance")),
        ev.LatentOracleScorer(store),
    ]


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    store = _load_store(out)
    split = data_mod.load_split(_require(out / SPLIT_FILE, "build-pairs"))
    test_pairs = data_mod.load_pairs(_require(out / PAIRS_TEST, "build-pairs"), store)
    _require(out / (MODEL_BASE + ".header"), "train")
    _require(out / (CCA_BASE + ".header"), "baseline")
    params = model_mod.load_model(out / MODEL_BASE)
    cca_model = cca_mod.load_cca(out / CCA_BASE)
    scorers = _scorers(cfg, store, params, cca_model)
    metrics = out / METRICS_DIR

    summary: list[tuple[str, str]] = [
        ("n_test_pairs", str(len(test_pairs))),
        ("n_trials", str(cfg.n_trials)),
    ]
    for scorer in scorers:
        acc = ev.pair_accuracy(scorer, test_pairs)
        summary.append((f"pair_accuracy.{scorer.name}", f"{acc:.6f}"))
        print(f"eval: pair accuracy {scorer.name} = {acc:.4f}")

    curve_rows: list[tuple[int, float, str, int]] = []
    for k in cfg.k_values:
        trials = ev.make_trials(
            store,
            split.test_object_ids,
            k,
            cfg.n_trials,
            derive_seed(cfg.seed, f"eval.trials.K{k}.test"),
        )
        for scorer in scorers:
            results = ev.run_trials(scorer, trials)
            curve = ev.cumulative_accuracy([r.rank_of_truth for r in results], k)
            curve_rows += [(n + 1, curve[n], scorer.name, k) for n in range(k)]
            summary.append(
                (f"first_guess.K{k}.test.{scorer.name}", f"{curve[0]:.6f}")
            )
            if k == FIRST_SHOT_K:
                stats = ev.first_shot_by_object(results)
                rows = [
                    (oid, "test", stats.accuracy(oid), stats.trials[oid])
                    for oid in sorted(stats.trials)
                ]
                ev.write_per_object_csv(
                    metrics / f"per_object_test_{scorer.name}.csv", rows
                )
                ev.write_confusion_csv(
                    metrics / f"confusion_test_{scorer.name}.csv", stats.confusion
                )
        print(f"eval: K={k} test-pool trials scored")

    # all-objects pool (train + test queries and candidates), first-shot setting
    all_objects = split.train_object_ids + split.test_object_ids
    trials_all = ev.make_trials(
        store,
        all_objects,
        FIRST_SHOT_K,
        cfg.n_trials,
        derive_seed(cfg.seed, f"eval.trials.K{FIRST_SHOT_K}.all"),
    )
    test_set = set(split.test_object_ids)
    for scorer in scorers:
        results = ev.run_trials(scorer, trials_all)
        stats = ev.first_shot_by_object(results)
        rows = [
            (
                oid,
                "test" if oid in test_set else "train",
                stats.accuracy(oid),
                stats.trials[oid],
            )
            for oid in sorted(stats.trials)
        ]
        ev.write_per_object_csv(metrics / f"per_object_all_{scorer.name}.csv", rows)
        ev.write_confusion_csv(
            metrics / f"confusion_all_{scorer.name}.csv", stats.confusion
        )
        by_split = {"train": [], "test": []}
        for oid, split_name, acc, _ in rows:
            by_split[split_name].append(acc)
        for split_name, accs in by_split.items():
            mean = sum(accs) / len(accs) if accs else float("nan")
            summary.append(
                (f"first_shot_mean.all_pool.{split_name}.{scorer.name}", f"{mean:.6f}")
            )
    print("eval: all-objects pool first-shot scored")

    ev.write_curves_csv(metrics / "curves.csv", curve_rows)
    ev.write_summary(metrics / "summary.txt", summary)
    print(f"eval: metrics written to {metrics}")


def _read_summary(path: Path) -> dict[str, str]:
    entries = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            entries[key] = value
    return entries


def cmd_report(out: Path) -> None:
    metrics = out / METRICS_DIR
    summary_path = _require(metrics / "summary.txt", "eval")
    curves_path = _require(metrics / "curves.csv", "eval")
    summary = _read_summary(summary_path)

    curves: dict[tuple[str, int], list[float]] = {}
    for line in curves_path.read_text().splitlines()[1:]:
        guess, acc, scorer, k = line.split(",")
        curves.setdefault((scorer, int(k)), []).append(float(acc))

    lines = ["cross-modal instance recognition report", ""]
    lines.append("pair accuracy on held-out-object test pairs "
                 f"({summary.get('n_test_pairs', '?')} pairs, threshold per scorer):")
    for scorer in ("matchnet", "cca", "chance", "oracle"):
        key = f"pair_accuracy.{scorer}"
        if key in summary:
            lines.append(f"  {scorer:9s} {float(summary[key]):.4f}")
    lines.append("")

    ks = sorted({k for _, k in curves})
    for k in ks:
        lines.append(f"K={k} cumulative accuracy vs guesses "
                     f"({summary.get('n_trials', '?')} trials, test objects):")
        scorers = [s for s, kk in curves if kk == k]
        ordered = [s for s in ("matchnet", "cca", "chance", "oracle") if s in scorers]
        header = "  guess " + " ".join(f"{s:>9s}" for s in ordered) + "    n/K"
        lines.append(header)
        for n in range(k):
            row = f"  {n + 1:5d} " + " ".join(
                f"{curves[(s, k)][n]:9.4f}" for s in ordered
            )
            lines.append(row + f" {(n + 1) / k:6.4f}")
        lines.append("")

    lines.append("first-shot accuracy by object (K=5, all-objects pool), "
                 "mean over objects:")
    for scorer in ("matchnet", "cca", "chance", "oracle"):
        tr = summary.get(f"first_shot_mean.all_pool.train.{scorer}")
        te = summary.get(f"first_shot_mean.all_pool.test.{scorer}")
        if tr and te:
            lines.append(
                f"  {scorer:9s} train {float(tr):.4f}  test {float(te):.4f}"
            )
    lines.append("")
    lines.append("per-object and confusion tables: see metrics/*.csv")

    from .serialize import atomic_write_text

    atomic_write_text(out / REPORT_FILE, "\n".join(lines) + "\n")
    print(f"report: {out / REPORT_FILE}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtmatch",
        description="visuo-tactile cross-modal instance recognition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("gen-data", True),
        ("build-pairs", True),
        ("train", True),
        ("baseline", True),
        ("eval", True),
        ("report", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=needs_config,
                       help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            cmd_report(out)
            return 0
        cfg = load_config(args.config, overrides={"seed": args.seed})
        dispatch = {
            "gen-data": cmd_gen_data,
            "build-pairs": cmd_build_pairs,
            "train": cmd_train,
            "baseline": cmd_baseline,
            "eval": cmd_eval,
        }
        dispatch[args.command](cfg, out)
        return 0
    except VtmatchError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
