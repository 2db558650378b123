"""Feature/label ingestion, session plans, and model-artifact persistence.

Feature files are either CSV (small data) or a raw little-endian float32
row-major payload with a JSON sidecar header at ``<path>.json``::

    {"n": 120, "d": 64, "dtype": "f32", "endianness": "little", "C": 8}

Labels are one integer per line. Model artifacts are a single zip
container holding a JSON manifest plus ``.npy`` tensors; the manifest
carries a mandatory ``format_version`` checked on load. Round trips are
bit-exact: a reloaded model reproduces the in-memory model's predictions
exactly.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import gibbs as gibbs_mod
from . import svgp
from . import tree as tree_mod
from .errors import (
    FormatError,
    InsufficientClasses,
    InsufficientShots,
    LabelRangeError,
    VersionMismatch,
)
from .gibbs import ChainState, GibbsConfig, NodeGibbsModel
from .incremental import BaseArtifact, ExpandedModel, NovelStore
from .kernels import KernelSpec
from .rng import RngStream

FORMAT_VERSION = 1


@dataclass
class Dataset:
    """One split of a feature/label table."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_indices(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cls)


# ---------------------------------------------------------------------------
# feature / label files
# ---------------------------------------------------------------------------


def save_features(path, x: np.ndarray, n_classes: int) -> None:
    """Write a float32 binary payload plus its JSON sidecar header."""
    path = Path(path)
    x = np.ascontiguousarray(x, dtype="<f4")
    header = {
        "n": int(x.shape[0]),
        "d": int(x.shape[1]),
        "dtype": "f32",
        "endianness": "little",
        "C": int(n_classes),
    }
    path.write_bytes(x.tobytes())
    Path(str(path) + ".json").write_text(json.dumps(header) + "\n")


def save_labels(path, y: np.ndarray) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in np.asarray(y)))


def _load_feature_file(path: Path) -> tuple[np.ndarray, int | None]:
    if path.suffix.lower() == ".csv":
        try:
            x = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"cannot parse CSV feature file {path}: {exc}") from exc
        return x, None
    header_path = Path(str(path) + ".json")
    if not header_path.exists():
        raise FormatError(f"missing sidecar header {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed header {header_path}: {exc}") from exc
    for key in ("n", "d", "dtype", "endianness", "C"):
        if key not in header:
            raise FormatError(f"header {header_path} is missing field {key!r}")
    if header["dtype"] != "f32" or header["endianness"] != "little":
        raise FormatError(
            f"unsupported payload encoding {header['dtype']}/{header['endianness']}"
        )
    n, d = int(header["n"]), int(header["d"])
    payload = path.read_bytes()
    if len(payload) != n * d * 4:
        raise FormatError(
            f"payload of {path} has {len(payload)} bytes, expected {n * d * 4} for {n}x{d} f32"
        )
    x = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    return x, int(header["C"])


def _load_label_file(path: Path) -> np.ndarray:
    try:
        y = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise FormatError(f"cannot parse label file {path}: {exc}") from exc
    return y


def load_dataset(features_path, labels_path, split: str = "train") -> Dataset:
    """Load and validate one (features, labels) split."""
    features_path, labels_path = Path(features_path), Path(labels_path)
    for p in (features_path, labels_path):
        if not p.exists():
            raise FileNotFoundError(p)
    x, n_classes = _load_feature_file(features_path)
    if not np.all(np.isfinite(x)):
        raise FormatError(f"feature file {features_path} contains non-finite values")
    y = _load_label_file(labels_path)
    if y.shape[0] != x.shape[0]:
        raise FormatError(
            f"{labels_path} has {y.shape[0]} labels for {x.shape[0]} feature rows"
        )
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 0
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelRangeError(
            f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]"
        )
    return Dataset(features=x, labels=y, n_classes=n_classes, split=split)


# ---------------------------------------------------------------------------
# session plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionPlan:
    """Base classes plus ordered novel sessions with per-class shot counts.

    ``session_indices[t]`` holds the sampled train-row indices of novel
    session t (t >= 0 for the first novel session).
    """

    base_classes: tuple[int, ...]
    novel_sessions: tuple[tuple[tuple[int, ...], int], ...]
    seed: int
    base_indices: np.ndarray
    session_indices: tuple[np.ndarray, ...]


def make_session_plan(
    dataset: Dataset,
    n_base: int,
    way: int,
    shot: int,
    n_sessions: int,
    stream: RngStream,
) -> SessionPlan:
    """Deterministic incremental plan over the dataset's class list.

    The first ``n_base`` classes (sorted ids) form the base session; the
    next ``way`` classes form each novel session in order. Each novel
    class contributes exactly ``shot`` sampled train rows.
    """
    classes = np.unique(dataset.labels)
    needed = n_base + way * n_sessions
    if needed > classes.size:
        raise InsufficientClasses(
            f"plan needs {needed} classes (base {n_base} + {n_sessions} x {way}-way), "
            f"dataset has {classes.size}"
        )
    base = tuple(int(c) for c in classes[:n_base])
    sessions = []
    session_indices = []
    for t in range(n_sessions):
        sess_classes = tuple(int(c) for c in classes[n_base + t * way : n_base + (t + 1) * way])
        rows = []
        for cls in sess_classes:
            idx = dataset.class_indices(cls)
            if idx.size < shot:
                raise InsufficientShots(
                    f"class {cls} has {idx.size} train samples, needs {shot}"
                )
            gen = stream.child(cls).generator()
            rows.append(gen.choice(idx, size=shot, replace=False))
        sessions.append((sess_classes, shot))
        session_indices.append(np.sort(np.concatenate(rows)))
    base_indices = np.flatnonzero(np.isin(dataset.labels, np.asarray(base)))
    return SessionPlan(
        base_classes=base,
        novel_sessions=tuple(sessions),
        seed=stream.seed,
        base_indices=base_indices,
        session_indices=tuple(session_indices),
    )


# ---------------------------------------------------------------------------
# model artifacts
# ---------------------------------------------------------------------------


@dataclass
class ExpandedBundle:
    """Everything needed to keep running sessions after a reload."""

    model: ExpandedModel
    base: BaseArtifact
    novel: NovelStore


def _np_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr))
    return buf.getvalue()


class _Writer:
    def __init__(self, zf: zipfile.ZipFile):
        self.zf = zf

    def array(self, key: str, arr: np.ndarray) -> str:
        self.zf.writestr(key + ".npy", _np_bytes(arr))
        return key


class _Reader:
    def __init__(self, zf: zipfile.ZipFile):
        self.zf = zf

    def array(self, key: str) -> np.ndarray:
        try:
            with self.zf.open(key + ".npy") as fh:
                return np.load(io.BytesIO(fh.read()))
        except (KeyError, ValueError, OSError) as exc:
            raise FormatError(f"artifact is missing or corrupt at {key!r}: {exc}") from exc


def _classifier_manifest(clf, key: str, w: _Writer) -> dict:
    if isinstance(clf, svgp.NodeVIModel):
        w.array(f"{key}/rows", clf.rows)
        w.array(f"{key}/x_ind", clf.x_ind)
        w.array(f"{key}/eta", clf.eta)
        w.array(f"{key}/h", clf.h)
        w.array(f"{key}/mu", clf.mu)
        w.array(f"{key}/sigma", clf.sigma)
        return {"type": "vi", "key": key, "spec": clf.spec.to_dict()}
    if isinstance(clf, NodeGibbsModel):
        w.array(f"{key}/x", clf.x)
        w.array(f"{key}/y", clf.y)
        chains = []
        for i, chain in enumerate(clf.chains):
            w.array(f"{key}/chain{i}_omega", chain.omega)
            w.array(f"{key}/chain{i}_f", chain.f)
            chains.append(
                {
                    "steps_taken": chain.steps_taken,
                    "seed": chain.stream.seed,
                    "path": list(chain.stream.path),
                }
            )
        return {
            "type": "gibbs",
            "key": key,
            "spec": clf.spec.to_dict(),
            "config": clf.config.to_dict(),
            "chains": chains,
        }
    raise TypeError(f"cannot serialize classifier of type {type(clf)!r}")


def _classifier_from_manifest(entry: dict, r: _Reader):
    key = entry["key"]
    spec = KernelSpec.from_dict(entry["spec"])
    if entry["type"] == "vi":
        return svgp.NodeVIModel.from_state(
            x_ind=r.array(f"{key}/x_ind"),
            rows=r.array(f"{key}/rows"),
            spec=spec,
            eta=r.array(f"{key}/eta"),
            h=r.array(f"{key}/h"),
            mu=r.array(f"{key}/mu"),
            sigma=r.array(f"{key}/sigma"),
        )
    if entry["type"] == "gibbs":
        config = GibbsConfig(**entry["config"])
        chains = []
        for i, meta in enumerate(entry["chains"]):
            chains.append(
                ChainState(
                    omega=r.array(f"{key}/chain{i}_omega"),
                    f=r.array(f"{key}/chain{i}_f"),
                    steps_taken=int(meta["steps_taken"]),
                    stream=RngStream(int(meta["seed"]), tuple(meta["path"])),
                )
            )
        return NodeGibbsModel(
            x=r.array(f"{key}/x"), y=r.array(f"{key}/y"), spec=spec, config=config, chains=chains
        )
    raise FormatError(f"unknown classifier type {entry['type']!r}")


def _tree_manifest(tr: tree_mod.LabelTree, prefix: str, w: _Writer) -> dict:
    nodes = []
    for node in tr.nodes:
        entry = {
            "node_id": int(node.node_id),
            "classes": [int(c) for c in node.classes],
            "left": None if node.left is None else int(node.left),
            "right": None if node.right is None else int(node.right),
            "left_classes": [int(c) for c in node.left_classes],
            "right_classes": [int(c) for c in node.right_classes],
            "classifier": None,
        }
        if node.classifier is not None:
            entry["classifier"] = _classifier_manifest(
                node.classifier, f"{prefix}/node{node.node_id}", w
            )
        nodes.append(entry)
    return {"root_id": tr.root_id, "nodes": nodes}


def _tree_from_manifest(manifest: dict, r: _Reader) -> tree_mod.LabelTree:
    nodes = []
    for entry in manifest["nodes"]:
        clf = None
        if entry["classifier"] is not None:
            clf = _classifier_from_manifest(entry["classifier"], r)
        nodes.append(
            tree_mod.TreeNode(
                node_id=entry["node_id"],
                classes=tuple(entry["classes"]),
                left=entry["left"],
                right=entry["right"],
                left_classes=tuple(entry["left_classes"]),
                right_classes=tuple(entry["right_classes"]),
                classifier=clf,
            )
        )
    return tree_mod.LabelTree(nodes=nodes, root_id=manifest["root_id"])


def _store_manifest(store: svgp.InducingStore, w: _Writer) -> dict:
    w.array("store/xbar", store.xbar)
    w.array("store/ybar", store.ybar)
    return {"n_inducing": store.n_inducing}


def _store_from_reader(r: _Reader) -> svgp.InducingStore:
    return svgp.InducingStore(xbar=r.array("store/xbar"), ybar=r.array("store/ybar"))


def save_artifact(obj, path) -> None:
    """Persist a BaseArtifact or ExpandedBundle to a container file."""
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        w = _Writer(zf)
        manifest: dict = {
            "format_version": FORMAT_VERSION,
            "library_version": __version__,
        }
        if isinstance(obj, BaseArtifact):
            manifest["kind"] = "base"
            manifest["base_spec"] = obj.base_spec.to_dict()
            manifest["novel_spec"] = obj.novel_spec.to_dict()
            manifest["gibbs_config"] = obj.gibbs_config.to_dict()
            manifest["store"] = _store_manifest(obj.store, w)
            manifest["tree"] = _tree_manifest(obj.tree, "base", w)
        elif isinstance(obj, ExpandedBundle):
            manifest["kind"] = "expanded"
            manifest["mode"] = obj.model.mode
            manifest["n_novel_sessions"] = obj.model.n_novel_sessions
            manifest["base_spec"] = obj.base.base_spec.to_dict()
            manifest["novel_spec"] = obj.base.novel_spec.to_dict()
            manifest["gibbs_config"] = obj.base.gibbs_config.to_dict()
            manifest["store"] = _store_manifest(obj.base.store, w)
            manifest["tree"] = _tree_manifest(obj.model.tree, "model", w)
            manifest["base_tree"] = _tree_manifest(obj.base.tree, "base", w)
            w.array("novel/features", obj.novel.features)
            w.array("novel/labels", obj.novel.labels)
            manifest["novel_sessions"] = [
                [int(c) for c in s] for s in obj.novel.session_classes
            ]
        else:
            raise TypeError(f"cannot save object of type {type(obj)!r}")
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"not a readable artifact: {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"artifact {path} has format_version {version!r}; this build reads {FORMAT_VERSION}"
        )
    return manifest


def load_artifact(path):
    """Load a BaseArtifact or ExpandedBundle (dispatch on the manifest)."""
    manifest = read_manifest(path)
    with zipfile.ZipFile(Path(path)) as zf:
        r = _Reader(zf)
        store = _store_from_reader(r)
        base_spec = KernelSpec.from_dict(manifest["base_spec"])
        novel_spec = KernelSpec.from_dict(manifest["novel_spec"])
        gibbs_config = GibbsConfig(**manifest["gibbs_config"])
        if manifest["kind"] == "base":
            tr = _tree_from_manifest(manifest["tree"], r)
            return BaseArtifact(
                tree=tr,
                store=store,
                base_spec=base_spec,
                novel_spec=novel_spec,
                gibbs_config=gibbs_config,
            )
        if manifest["kind"] == "expanded":
            base = BaseArtifact(
                tree=_tree_from_manifest(manifest["base_tree"], r),
                store=store,
                base_spec=base_spec,
                novel_spec=novel_spec,
                gibbs_config=gibbs_config,
            )
            model = ExpandedModel(
                tree=_tree_from_manifest(manifest["tree"], r),
                mode=manifest["mode"],
                n_novel_sessions=int(manifest["n_novel_sessions"]),
            )
            novel = NovelStore(
                features=r.array("novel/features"),
                labels=r.array("novel/labels"),
                session_classes=[tuple(s) for s in manifest["novel_sessions"]],
            )
            return ExpandedBundle(model=model, base=base, novel=novel)
    raise FormatError(f"unknown artifact kind {manifest.get('kind')!r}")
