"""Command-line pipeline: synth | train | cluster | classify | retrain | adapt | report.

Every command reads an optional JSON config (--config) whose values are
overridden by explicit flags; flags always win. One root seed (--seed or
config "seed") feeds every seeded component through the package seeding
scheme, so a command re-run with identical inputs and seed reproduces its
reports byte for byte, except for the ``generated_at`` timestamp field in
JSON reports. CSV outputs carry no timestamp at all.

Errors surface as a single structured JSON line on stderr and a nonzero
exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

from . import atlas as atlas_mod
from . import data_io, dense_head, domain_adapt, retrain
from .errors import LatentAtlasError

DEFAULT_HEAD = {"hidden_dims": [32, 16], "learning_rate": 0.1, "epochs": 100, "batch_size": 32}
DEFAULT_CLUSTER = {"max_iter": 100, "tol": 1e-8}
DEFAULT_RETRAIN = {"new_data_path": None, "lambda": 1.0, "tol": 0.05, "max_iter": 50, "clamp": 0.02}
DEFAULT_ADAPT = {"eta": 0.5, "atlas_path": None, "epochs": 100, "lr": 0.1,
                 "batch_size": 32, "seed": None, "class_constrained": True}


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(payload: dict, path: Path) -> None:
    payload = dict(payload)
    payload["generated_at"] = _timestamp()
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _section(config: dict, name: str, defaults: dict) -> dict:
    merged = dict(defaults)
    merged.update(config.get(name, {}))
    return merged


def _root_seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


def _head_config(config: dict, input_dim: int, seed: int) -> dense_head.HeadConfig:
    section = _section(config, "head", DEFAULT_HEAD)
    return dense_head.HeadConfig(
        input_dim=input_dim,
        hidden_dims=list(section["hidden_dims"]),
        seed=seed,
        learning_rate=float(section["learning_rate"]),
        epochs=int(section["epochs"]),
        batch_size=int(section["batch_size"]),
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = _load_config(args.config)
    seed = _root_seed(args, config)
    section = dict(config.get("synth", {}))
    if args.spec:
        section.update(json.loads(Path(args.spec).read_text()))
    section["seed"] = seed
    known = {f.name for f in fields(data_io.SynthSpec)}
    unknown = set(section) - known
    if unknown:
        raise LatentAtlasError(f"unknown synth spec fields: {sorted(unknown)}")
    spec = data_io.SynthSpec(**section)
    out = _out_dir(args)
    names = ["full_train", "full_test", "reduced_train", "reduced_test"]
    datasets = data_io.generate_synth(spec)
    for name, ds in zip(names, datasets):
        data_io.save_csv(ds, out / f"{name}.csv")
    _write_json(
        {
            "command": "synth",
            "seed": seed,
            "sizes": {name: len(ds) for name, ds in zip(names, datasets)},
            "files": {name: str(out / f"{name}.csv") for name in names},
        },
        out / "synth_report.json",
    )
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = _root_seed(args, config)
    data = data_io.load_csv(args.data, modality=args.modality, split="train")
    model = dense_head.DenseHead(_head_config(config, data.dim, seed))
    report = dense_head.train_mse(model, data)
    out = _out_dir(args)
    dense_head.save_head(model, out / "model.json")
    _write_json(
        {"command": "train", "seed": seed, "n_samples": len(data),
         "model_path": str(out / "model.json"), **report.to_dict()},
        out / "train_report.json",
    )
    return 0


def cmd_cluster(args) -> int:
    config = _load_config(args.config)
    seed = _root_seed(args, config)
    section = _section(config, "cluster", DEFAULT_CLUSTER)
    k = args.k if args.k is not None else int(config.get("k", 5))
    model = dense_head.load_head(args.model)
    data = data_io.load_csv(args.data, split="train")
    latents = dense_head.extract_latents(model, data)
    built = atlas_mod.kmeans_pp(
        latents, k, seed=seed,
        max_iter=int(section["max_iter"]), tol=float(section["tol"]),
    )
    for index, text in enumerate(config.get("annotations", [])[: built.k]):
        atlas_mod.annotate(built, index, text)
    out = _out_dir(args)
    atlas_mod.save_atlas(built, out / "atlas.json")
    atlas_mod.write_membership_csv(built, out / "membership.csv")
    atlas_mod.write_projection_csv(atlas_mod.project_3d(built, latents), out / "projection.csv")
    _write_json(
        {
            "command": "cluster", "seed": seed, "k": built.k, "latent_dim": built.dim,
            "objective": built.objective_history[-1] if built.objective_history else 0.0,
            "n_iter": built.n_iter,
            "purity": [float(p) for p in built.purity],
            "member_counts": [int(c) for c in built.member_counts],
            "class_labels": [int(c) for c in built.class_labels],
            "atlas_path": str(out / "atlas.json"),
        },
        out / "cluster_report.json",
    )
    return 0


def cmd_classify(args) -> int:
    model = dense_head.load_head(args.model)
    built = atlas_mod.load_atlas(args.atlas)
    data = data_io.load_csv(args.data, split="test")
    latents = dense_head.extract_latents(model, data)
    _, report = atlas_mod.assign_nearest(built, latents)
    out = _out_dir(args)
    atlas_mod.write_subject_report_csv(report, out / "subjects.csv", built.k)
    _write_json(
        {"command": "classify", "n_samples": len(data), **report.to_dict()},
        out / "classify_report.json",
    )
    return 0


def cmd_retrain(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "retrain", DEFAULT_RETRAIN)
    lam = args.lam if args.lam is not None else float(section["lambda"])
    new_path = args.new_data or section["new_data_path"]
    if not new_path:
        raise LatentAtlasError("retrain needs --new-data or retrain.new_data_path in the config")
    model = dense_head.load_head(args.model)
    built = atlas_mod.load_atlas(args.atlas)
    old_data = data_io.load_csv(args.data, split="train")
    new_data = data_io.load_csv(new_path, split="train")
    exemplars = retrain.exemplars_from_atlas(built, old_data)
    problem = retrain.RetrainProblem(
        base_model=model, new_data=new_data, centroid_exemplars=exemplars,
        lam=lam, old_data=old_data, clamp=float(section["clamp"]),
    )
    out = _out_dir(args)
    test_data = data_io.load_csv(args.test, split="test") if args.test else None
    if test_data is not None:
        before_latents = dense_head.extract_latents(model, test_data)
        _, before = atlas_mod.assign_nearest(built, before_latents)
        atlas_mod.write_subject_report_csv(before, out / "subjects_before.csv", built.k)

    result = retrain.solve_retrain(
        problem, tol=float(section["tol"]), max_iter=int(section["max_iter"]), atlas=built,
    )
    dense_head.save_head(result.updated_model, out / "retrained_model.json")
    payload = {
        "command": "retrain",
        "lambda": lam,
        "augmented_size": problem.augmented_size,
        "n_new": len(new_data),
        "n_exemplars": len(exemplars),
        "model_path": str(out / "retrained_model.json"),
        **result.to_dict(),
    }
    if test_data is not None:
        after = retrain.evaluate_drift(result, built, test_data)
        atlas_mod.write_subject_report_csv(after, out / "subjects_after.csv", built.k)
        payload["test_accuracy_before"] = float(before.accuracy)
        payload["test_accuracy_after"] = float(after.accuracy)
    _write_json(payload, out / "retrain_report.json")
    return 0


def cmd_adapt(args) -> int:
    config = _load_config(args.config)
    seed = _root_seed(args, config)
    section = _section(config, "adapt", DEFAULT_ADAPT)
    eta = args.eta if args.eta is not None else float(section["eta"])
    atlas_path = args.atlas or section["atlas_path"]
    if not atlas_path:
        raise LatentAtlasError("adapt needs --atlas or adapt.atlas_path in the config")
    built = atlas_mod.load_atlas(atlas_path)
    data = data_io.load_csv(args.data, modality="reduced", split="train")
    adapt_seed = seed if section["seed"] is None else int(section["seed"])
    adapt_config = domain_adapt.AdaptConfig(
        eta=eta, atlas=built, epochs=int(section["epochs"]),
        learning_rate=float(section["lr"]), batch_size=int(section["batch_size"]),
        seed=adapt_seed, class_constrained=bool(section["class_constrained"]),
    )
    head_config = _head_config(config, data.dim, adapt_seed)
    eval_data = data_io.load_csv(args.test, modality="reduced", split="test") if args.test else data
    out = _out_dir(args)

    # Before: the plain-MSE baseline from the same initialization.
    baseline = dense_head.DenseHead(head_config)
    dense_head.train_mse(baseline, data)
    _, before = atlas_mod.assign_nearest(built, dense_head.extract_latents(baseline, eval_data))
    atlas_mod.write_subject_report_csv(before, out / "subjects_before.csv", built.k)

    model = dense_head.DenseHead(head_config)
    report = domain_adapt.train_adapted(model, data, adapt_config)
    dense_head.save_head(model, out / "adapted_model.json")
    _, after = atlas_mod.assign_nearest(built, dense_head.extract_latents(model, eval_data))
    atlas_mod.write_subject_report_csv(after, out / "subjects_after.csv", built.k)

    _write_json(
        {
            "command": "adapt", "seed": adapt_seed, "eta": eta,
            "n_samples": len(data),
            "model_path": str(out / "adapted_model.json"),
            "baseline_accuracy": dense_head.accuracy(baseline, eval_data),
            "adapted_accuracy": dense_head.accuracy(model, eval_data),
            "assignment_accuracy_before": float(before.accuracy),
            "assignment_accuracy_after": float(after.accuracy),
            **report.to_dict(),
        },
        out / "adapt_report.json",
    )
    return 0


def cmd_report(args) -> int:
    model = dense_head.load_head(args.model)
    built = atlas_mod.load_atlas(args.atlas)
    data = data_io.load_csv(args.data)
    latents = dense_head.extract_latents(model, data)
    _, report = atlas_mod.assign_nearest(built, latents)
    out = _out_dir(args)
    atlas_mod.write_membership_csv(built, out / "membership.csv")
    atlas_mod.write_projection_csv(atlas_mod.project_3d(built, latents), out / "projection.csv")
    atlas_mod.write_subject_report_csv(report, out / "subjects.csv", built.k)
    _write_json(
        {"command": "report", "n_samples": len(data), "k": built.k, **report.to_dict()},
        out / "report_summary.json",
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-atlas",
        description="Latent-representation atlas pipeline over precomputed feature CSVs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_out: bool = True):
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        if with_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark CSVs")
    common(p)
    p.add_argument("--spec", default=None, help="SynthSpec JSON file")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a dense head on a feature CSV")
    common(p)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--modality", choices=["full", "reduced"], default="full")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("cluster", help="build the centroid atlas from training latents")
    common(p)
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--data", required=True, help="CSV the latents come from")
    p.add_argument("--k", type=int, default=None, help="number of centroids")
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("classify", help="nearest-centroid classification of a test CSV")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--data", required=True, help="test CSV")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("retrain", help="constraint-preserving retraining on new data")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--data", required=True, help="old training CSV (atlas source)")
    p.add_argument("--new-data", default=None, help="new samples CSV")
    p.add_argument("--test", default=None, help="optional test CSV for before/after tables")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="old-data weight in the refinement objective")
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("adapt", help="train a reduced-modality head against the atlas")
    common(p)
    p.add_argument("--data", required=True, help="reduced-modality training CSV")
    p.add_argument("--atlas", default=None)
    p.add_argument("--test", default=None, help="optional reduced-modality test CSV")
    p.add_argument("--eta", type=float, default=None, help="MSE weight in [0, 1]")
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("report", help="regenerate atlas reports for a dataset")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (LatentAtlasError, ValueError, OSError) as exc:
        diagnostic = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(diagnostic, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
