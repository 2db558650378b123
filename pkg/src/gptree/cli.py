"""Batch command-line surface.

Subcommands: train-base, class-sweep, incremental, chain-sweep, eval,
inspect-artifact. Flags may come from a JSON config file (``--config``)
with command-line flags taking precedence; the seed is mandatory so that
every run is reproducible. Each run writes one output directory holding
``config.json`` (the fully resolved configuration), ``metrics.csv``, and
``report.md``. Metric CSVs contain no timestamps and are byte-identical
across reruns of the same (config, seed) for any worker count.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data_io, incremental, svgp
from . import gibbs as gibbs_mod
from . import tree as tree_mod
from .errors import (
    ConfigError,
    EmptyClass,
    FactorizationFailure,
    FormatError,
    GPTreeError,
    InsufficientClasses,
    InsufficientShots,
    LabelRangeError,
    PDViolation,
    SingleClassNode,
    UnknownClass,
    VersionMismatch,
    ZeroRow,
)
from .kernels import KernelSpec
from .rng import RngStream

_DATA_ERRORS = (
    FileNotFoundError,
    FormatError,
    LabelRangeError,
    VersionMismatch,
    InsufficientClasses,
    InsufficientShots,
    EmptyClass,
    UnknownClass,
    ZeroRow,
    SingleClassNode,
)
_NUMERICAL_ERRORS = (FactorizationFailure, PDViolation)

METHOD_NAMES = {"gp-tree": "kmeans", "gp-tree-rnd": "random", "stick-break": "stick"}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "kernel": "rbf",
    "lengthscale": 1.0,
    "outputscale": 1.0,
    "normalize_inputs": True,
    "inference": "vi",
    "tree_method": "kmeans",
    "chains": 4,
    "gibbs_steps": 1,
    "predict_mode": "quadrature",
    "quad_order": 20,
    "epochs": 50,
    "batch_size": 256,
    "natural_lr": 0.05,
    "m_per_class": 5,
    "n_base": 4,
    "way": 2,
    "shot": 5,
    "sessions": 2,
    "expansion_mode": "accumulated",
    "novel_lengthscale": 1.0,
    "novel_outputscale": 8.0,
    "class_counts": [4],
    "chain_counts": [1, 4],
    "sweep_seeds": 2,
    "workers": 0,
}

_FLAG_KEYS = [
    "train_features",
    "train_labels",
    "val_features",
    "val_labels",
    "test_features",
    "test_labels",
    "artifact",
    "out",
    "seed",
    "workers",
    *_DEFAULTS.keys(),
]


def _add_common(p: argparse.ArgumentParser, data: bool = True):
    p.add_argument("--config", help="JSON config file; flags override its entries")
    p.add_argument("--seed", type=int, help="run seed (mandatory, no wall-clock default)")
    p.add_argument("--out", help="output directory for config/metrics/report")
    p.add_argument("--workers", type=int, help="parallel node fits (default $GPTREE_WORKERS or 1)")
    if data:
        p.add_argument("--train-features")
        p.add_argument("--train-labels")
        p.add_argument("--val-features")
        p.add_argument("--val-labels")
        p.add_argument("--test-features")
        p.add_argument("--test-labels")
        p.add_argument("--kernel", choices=["linear", "rbf", "matern52"])
        p.add_argument("--lengthscale", type=float)
        p.add_argument("--outputscale", type=float)
        p.add_argument(
            "--no-normalize", dest="normalize_inputs", action="store_const", const=False
        )
        p.add_argument("--tree-method", choices=list(tree_mod.TREE_METHODS))
        p.add_argument("--chains", type=int)
        p.add_argument("--gibbs-steps", type=int)
        p.add_argument("--predict-mode", choices=list(gibbs_mod.PREDICT_MODES))
        p.add_argument("--quad-order", type=int)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gptree",
        description="Hierarchical GP classification: training, sweeps, and "
        "few-shot incremental sessions on precomputed feature vectors.",
    )
    parser.add_argument("--version", action="version", version=f"gptree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-base", help="fit a base tree and persist the artifact")
    _add_common(p)
    p.add_argument("--inference", choices=["gibbs", "vi"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--natural-lr", type=float)
    p.add_argument("--m-per-class", type=int)

    p = sub.add_parser("class-sweep", help="accuracy vs class count for the three tree methods")
    _add_common(p)
    p.add_argument("--class-counts", help="comma-separated class counts, e.g. 4,6,8")
    p.add_argument("--sweep-seeds", type=int)

    p = sub.add_parser("chain-sweep", help="accuracy vs number of Gibbs chains")
    _add_common(p)
    p.add_argument("--chain-counts", help="comma-separated chain counts, e.g. 1,4")
    p.add_argument("--sweep-seeds", type=int)

    p = sub.add_parser("incremental", help="base session plus few-shot novel sessions")
    _add_common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--natural-lr", type=float)
    p.add_argument("--m-per-class", type=int)
    p.add_argument("--n-base", type=int)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--expansion-mode", choices=list(incremental.EXPANSION_MODES))
    p.add_argument("--novel-lengthscale", type=float)
    p.add_argument("--novel-outputscale", type=float)

    p = sub.add_parser("eval", help="score a saved artifact on a labeled split")
    _add_common(p)
    p.add_argument("--artifact", required=True)

    p = sub.add_parser("inspect-artifact", help="print an artifact's manifest summary")
    p.add_argument("--artifact", required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and flags into one validated mapping."""
    cfg = dict(_DEFAULTS)
    cfg.update(
        {k: None for k in ("train_features", "train_labels", "val_features", "val_labels",
                            "test_features", "test_labels", "artifact", "out", "seed")}
    )
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            file_cfg = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_cfg) - set(_FLAG_KEYS) - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in _FLAG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command

    if args.command != "inspect-artifact":
        if cfg.get("seed") is None:
            raise ConfigError("--seed is mandatory (reproducibility; there is no clock default)")
        cfg["seed"] = int(cfg["seed"])
    if cfg.get("workers") in (None, 0):
        cfg["workers"] = int(os.environ.get("GPTREE_WORKERS", "1"))
    for key in ("class_counts", "chain_counts"):
        if isinstance(cfg.get(key), str):
            try:
                cfg[key] = [int(v) for v in cfg[key].split(",") if v]
            except ValueError as exc:
                raise ConfigError(f"--{key.replace('_', '-')} must be comma-separated ints") from exc
    try:
        _kernel_spec(cfg)
        _novel_spec(cfg)
        _gibbs_config(cfg)
        if cfg["command"] in ("train-base", "incremental"):
            _vi_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _kernel_spec(cfg) -> KernelSpec:
    return KernelSpec(
        family=cfg["kernel"],
        lengthscale=cfg["lengthscale"],
        outputscale=cfg["outputscale"],
        normalize_inputs=cfg["normalize_inputs"],
    )


def _novel_spec(cfg) -> KernelSpec:
    return KernelSpec(
        family="rbf",
        lengthscale=cfg["novel_lengthscale"],
        outputscale=cfg["novel_outputscale"],
        normalize_inputs=cfg["normalize_inputs"],
    )


def _gibbs_config(cfg) -> gibbs_mod.GibbsConfig:
    return gibbs_mod.GibbsConfig(
        n_chains=cfg["chains"],
        n_steps=cfg["gibbs_steps"],
        predict_mode=cfg["predict_mode"],
        quadrature_order=cfg["quad_order"],
    )


def _vi_config(cfg) -> svgp.VIConfig:
    return svgp.VIConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        natural_lr=cfg["natural_lr"],
        predict_mode=cfg["predict_mode"],
        quadrature_order=cfg["quad_order"],
    )


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list], cfg: dict) -> None:
    config_hash = hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()
    ).hexdigest()[:16]
    lines = [f"# gptree {__version__} config_sha256={config_hash}"]
    lines.append(",".join(header))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _prepare_out(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise ConfigError("--out directory is required for this command")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in sorted(cfg.items())}
    resolved["library_version"] = __version__
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return out


def _write_report(out: Path, cfg: dict, lines: list[str]) -> None:
    body = [f"# gptree {cfg['command']} report", ""]
    body.extend(lines)
    body += ["", "## Resolved configuration", "", "```json",
             json.dumps({k: v for k, v in sorted(cfg.items())}, indent=2, sort_keys=True),
             "```", "", f"gptree version {__version__}"]
    (out / "report.md").write_text("\n".join(body) + "\n")


def _require_data(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError(f"missing required data paths: {missing}")


def _accuracy(tr, x, y) -> float:
    pred = tree_mod.predict_labels(getattr(tr, "tree", tr), x)
    return float(np.mean(pred == np.asarray(y)))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train_base(cfg: dict) -> int:
    _require_data(cfg, "train_features", "train_labels")
    out = _prepare_out(cfg)
    train = data_io.load_dataset(cfg["train_features"], cfg["train_labels"], split="train")
    val = None
    if cfg.get("val_features"):
        _require_data(cfg, "val_labels")
        val = data_io.load_dataset(cfg["val_features"], cfg["val_labels"], split="val")

    spec = _kernel_spec(cfg)
    stream = RngStream(cfg["seed"])
    protos = tree_mod.class_prototypes(train.features, train.labels)
    tr = tree_mod.build_tree(protos, cfg["tree_method"], stream=stream.child(0))
    store = svgp.init_inducing(train.features, train.labels, cfg["m_per_class"], stream.child(1))

    final_elbo = float("nan")
    if cfg["inference"] == "vi":
        history = tree_mod.fit_tree_vi(
            tr, train.features, train.labels, store, spec, _vi_config(cfg), stream.child(2)
        )
        final_elbo = history[-1] if history else float("nan")
    else:
        tree_mod.fit_tree_gibbs(
            tr, train.features, train.labels, spec, _gibbs_config(cfg), stream.child(2),
            workers=cfg["workers"],
        )

    artifact = incremental.finalize_base(
        tr, store, spec, _novel_spec(cfg), _gibbs_config(cfg)
    )
    data_io.save_artifact(artifact, out / "model.gpt")

    train_acc = _accuracy(tr, train.features, train.labels)
    rows = [["train_accuracy", train_acc]]
    if val is not None:
        rows.append(["val_accuracy", _accuracy(tr, val.features, val.labels)])
    if cfg["inference"] == "vi":
        rows.append(["final_weighted_elbo", final_elbo])
    _write_csv(out / "metrics.csv", ["metric", "value"], rows, cfg)
    _write_report(
        out,
        cfg,
        [f"- model: `{out / 'model.gpt'}`"]
        + [f"- {name}: {_fmt(val)}" for name, val in rows],
    )
    print(f"train-base done: {', '.join(f'{n}={_fmt(v)}' for n, v in rows)}")
    return 0


def _subset_by_classes(ds: data_io.Dataset, classes) -> tuple[np.ndarray, np.ndarray]:
    mask = np.isin(ds.labels, np.asarray(classes))
    return ds.features[mask], ds.labels[mask]


def _sweep_fit_eval(
    train, test, classes, method: str, spec, gconf, stream: RngStream
) -> float:
    x_tr, y_tr = _subset_by_classes(train, classes)
    x_te, y_te = _subset_by_classes(test, classes)
    protos = tree_mod.class_prototypes(x_tr, y_tr)
    tr = tree_mod.build_tree(protos, method, stream=stream.child(0))
    tree_mod.fit_tree_gibbs(tr, x_tr, y_tr, spec, gconf, stream.child(1))
    pred = tree_mod.predict_labels(tr, x_te)
    return float(np.mean(pred == y_te))


def cmd_class_sweep(cfg: dict) -> int:
    _require_data(cfg, "train_features", "train_labels", "test_features", "test_labels")
    out = _prepare_out(cfg)
    train = data_io.load_dataset(cfg["train_features"], cfg["train_labels"], "train")
    test = data_io.load_dataset(cfg["test_features"], cfg["test_labels"], "test")
    all_classes = np.unique(train.labels)
    counts = cfg["class_counts"]
    if max(counts) > all_classes.size:
        raise InsufficientClasses(
            f"sweep needs {max(counts)} classes, dataset has {all_classes.size}"
        )
    spec, gconf = _kernel_spec(cfg), _gibbs_config(cfg)
    root = RngStream(cfg["seed"])

    rows = []
    by_cell: dict[tuple[str, int], list[float]] = {}
    for count in counts:
        for s in range(cfg["sweep_seeds"]):
            pick_gen = root.child(count, s).generator()
            classes = np.sort(pick_gen.choice(all_classes, size=count, replace=False))
            for name, method in METHOD_NAMES.items():
                acc = _sweep_fit_eval(
                    train, test, classes, method, spec, gconf,
                    root.child(count, s, list(METHOD_NAMES).index(name)),
                )
                rows.append([name, count, s, acc])
                by_cell.setdefault((name, count), []).append(acc)
    _write_csv(out / "metrics.csv", ["method", "n_classes", "sweep_seed", "accuracy"], rows, cfg)

    summary = []
    for (name, count), accs in sorted(by_cell.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        arr = np.asarray(accs)
        sem = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        summary.append([name, count, float(arr.mean()), sem])
    _write_csv(out / "summary.csv", ["method", "n_classes", "mean_accuracy", "sem"], summary, cfg)
    _write_report(
        out, cfg,
        ["| method | classes | mean acc | sem |", "|---|---|---|---|"]
        + [f"| {m} | {c} | {a:.4f} | {s:.4f} |" for m, c, a, s in summary],
    )
    print(f"class-sweep done: {len(rows)} runs over counts {counts}")
    return 0


def cmd_chain_sweep(cfg: dict) -> int:
    _require_data(cfg, "train_features", "train_labels", "test_features", "test_labels")
    out = _prepare_out(cfg)
    train = data_io.load_dataset(cfg["train_features"], cfg["train_labels"], "train")
    test = data_io.load_dataset(cfg["test_features"], cfg["test_labels"], "test")
    all_classes = np.unique(train.labels)
    count = all_classes.size
    spec = _kernel_spec(cfg)
    root = RngStream(cfg["seed"])

    rows = []
    for n_chains in cfg["chain_counts"]:
        gconf = gibbs_mod.GibbsConfig(
            n_chains=n_chains,
            n_steps=cfg["gibbs_steps"],
            predict_mode=cfg["predict_mode"],
            quadrature_order=cfg["quad_order"],
        )
        for s in range(cfg["sweep_seeds"]):
            pick_gen = root.child(count, s).generator()
            classes = np.sort(pick_gen.choice(all_classes, size=count, replace=False))
            acc = _sweep_fit_eval(train, test, classes, "kmeans", spec, gconf,
                                  root.child(count, s, 0))
            rows.append([n_chains, s, acc])
    _write_csv(out / "metrics.csv", ["n_chains", "sweep_seed", "accuracy"], rows, cfg)
    _write_report(out, cfg, [f"- chains={r[0]} seed={r[1]} accuracy={_fmt(r[2])}" for r in rows])
    print(f"chain-sweep done: chain counts {cfg['chain_counts']}")
    return 0


def cmd_incremental(cfg: dict) -> int:
    _require_data(cfg, "train_features", "train_labels", "test_features", "test_labels")
    out = _prepare_out(cfg)
    train = data_io.load_dataset(cfg["train_features"], cfg["train_labels"], "train")
    test = data_io.load_dataset(cfg["test_features"], cfg["test_labels"], "test")
    stream = RngStream(cfg["seed"])
    plan = data_io.make_session_plan(
        train, cfg["n_base"], cfg["way"], cfg["shot"], cfg["sessions"], stream.child(0)
    )
    (out / "plan.json").write_text(
        json.dumps(
            {
                "base_classes": list(plan.base_classes),
                "novel_sessions": [
                    {"classes": list(c), "shot": s} for c, s in plan.novel_sessions
                ],
                "seed": plan.seed,
            },
            indent=2,
        )
        + "\n"
    )

    spec = _kernel_spec(cfg)
    x_base = train.features[plan.base_indices]
    y_base = train.labels[plan.base_indices]
    protos = tree_mod.class_prototypes(x_base, y_base)
    base_tree = tree_mod.build_tree(protos, cfg["tree_method"], stream=stream.child(1))
    store = svgp.init_inducing(x_base, y_base, cfg["m_per_class"], stream.child(2))
    tree_mod.fit_tree_vi(
        base_tree, x_base, y_base, store, spec, _vi_config(cfg), stream.child(3)
    )
    artifact = incremental.finalize_base(
        base_tree, store, spec, _novel_spec(cfg), _gibbs_config(cfg)
    )
    art_dir = out / "artifacts"
    art_dir.mkdir(exist_ok=True)
    data_io.save_artifact(artifact, art_dir / "base.gpt")

    novel = incremental.NovelStore()
    models = [artifact]
    prev = None
    for t, (sess_classes, _) in enumerate(plan.novel_sessions):
        idx = plan.session_indices[t]
        model = incremental.add_novel_session(
            artifact, novel, train.features[idx], train.labels[idx],
            cfg["expansion_mode"], stream.child(10 + t), prev=prev,
        )
        data_io.save_artifact(
            data_io.ExpandedBundle(model=model, base=artifact, novel=novel),
            art_dir / f"session{t + 2:02d}.gpt",
        )
        models.append(model)
        prev = model

    test_sets = [_subset_by_classes(test, plan.base_classes)]
    for sess_classes, _ in plan.novel_sessions:
        test_sets.append(_subset_by_classes(test, sess_classes))
    report = incremental.evaluate_sessions(models, test_sets)

    joint_rows = [[k + 1, float(report.joint[k])] for k in range(report.n_sessions)]
    _write_csv(out / "metrics.csv", ["session", "joint_accuracy"], joint_rows, cfg)
    matrix_rows = [
        [j + 1, k + 1, float(report.acc[j, k])]
        for j in range(report.n_sessions)
        for k in range(j, report.n_sessions)
    ]
    _write_csv(out / "acc_matrix.csv", ["origin_session", "eval_session", "accuracy"],
               matrix_rows, cfg)
    forget_rows = [
        [k + 1, incremental.average_forgetting(report, k)]
        for k in range(1, report.n_sessions)
    ]
    _write_csv(out / "forgetting.csv", ["session", "average_forgetting"], forget_rows, cfg)
    _write_report(
        out, cfg,
        [f"- session {k}: joint accuracy {_fmt(a)}" for k, a in joint_rows]
        + [f"- session {k}: average forgetting {_fmt(g)}" for k, g in forget_rows],
    )
    print(
        "incremental done: joint "
        + " ".join(f"s{k}={a:.4f}" for k, a in joint_rows)
    )
    return 0


def cmd_eval(cfg: dict) -> int:
    _require_data(cfg, "test_features", "test_labels")
    out = _prepare_out(cfg)
    loaded = data_io.load_artifact(cfg["artifact"])
    model = loaded.model if isinstance(loaded, data_io.ExpandedBundle) else loaded
    test = data_io.load_dataset(cfg["test_features"], cfg["test_labels"], "test")
    covered = np.isin(test.labels, np.asarray(model.tree.classes))
    if not covered.all():
        raise UnknownClass(
            f"test split contains classes outside the model: "
            f"{np.unique(test.labels[~covered]).tolist()}"
        )
    acc = _accuracy(model, test.features, test.labels)
    _write_csv(out / "metrics.csv", ["metric", "value"],
               [["test_accuracy", acc], ["n_test", test.n]], cfg)
    _write_report(out, cfg, [f"- test accuracy: {_fmt(acc)} on {test.n} rows"])
    print(f"eval done: test_accuracy={acc:.6f}")
    return 0


def cmd_inspect(cfg: dict) -> int:
    manifest = data_io.read_manifest(cfg["artifact"])
    info = {
        "kind": manifest["kind"],
        "format_version": manifest["format_version"],
        "library_version": manifest.get("library_version"),
        "base_spec": manifest["base_spec"],
        "novel_spec": manifest["novel_spec"],
        "n_tree_nodes": len(manifest["tree"]["nodes"]),
        "classes": sorted(manifest["tree"]["nodes"][manifest["tree"]["root_id"]]["classes"]),
    }
    if manifest["kind"] == "expanded":
        info["mode"] = manifest["mode"]
        info["n_novel_sessions"] = manifest["n_novel_sessions"]
    print(json.dumps(info, indent=2))
    return 0


_COMMANDS = {
    "train-base": cmd_train_base,
    "class-sweep": cmd_class_sweep,
    "chain-sweep": cmd_chain_sweep,
    "incremental": cmd_incremental,
    "eval": cmd_eval,
    "inspect-artifact": cmd_inspect,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except GPTreeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
