"""Few-shot class-incremental sessions on top of a frozen base tree.

The base classes are learned once with variational inference; afterwards
only stored embeddings move forward: the per-class inducing inputs act as
exemplars of the base data, and each novel session contributes its few
labeled embeddings. Sessions extend the model by

* building a subtree over novel classes (Gibbs-fitted from stored
  embeddings),
* grafting it onto the untouched base tree under a new shared root, whose
  classifier is Gibbs-fitted on inducing inputs (base side) vs novel
  embeddings (novel side).

Expansion variants: ``accumulated`` rebuilds one subtree over all novel
classes seen so far (the default), ``session-tree`` chains one subtree per
session under nested roots, and ``rebuild`` reconstructs the entire tree
each session from inducing inputs plus novel embeddings.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import gibbs as gibbs_mod
from . import svgp
from . import tree as tree_mod
from .errors import ClassCollision, EmptyClass
from .kernels import KernelSpec
from .rng import RngStream

EXPANSION_MODES = ("accumulated", "session-tree", "rebuild")


@dataclass(frozen=True)
class BaseArtifact:
    """Frozen output of base training: tree, exemplar store, and kernels."""

    tree: tree_mod.LabelTree
    store: svgp.InducingStore
    base_spec: KernelSpec
    novel_spec: KernelSpec
    gibbs_config: gibbs_mod.GibbsConfig

    @property
    def base_classes(self) -> tuple[int, ...]:
        return self.tree.classes


@dataclass
class NovelStore:
    """Embeddings and labels accumulated across novel sessions."""

    features: np.ndarray | None = None
    labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    session_classes: list[tuple[int, ...]] = field(default_factory=list)

    def add_session(self, x: np.ndarray, y: np.ndarray, known: set[int]):
        y = np.asarray(y, dtype=np.int64)
        new_classes = tuple(sorted(int(c) for c in np.unique(y)))
        clash = set(new_classes) & (known | set(self.all_classes))
        if clash:
            raise ClassCollision(f"classes {sorted(clash)} were already seen")
        x = np.asarray(x, dtype=np.float64)
        self.features = x.copy() if self.features is None else np.vstack([self.features, x])
        self.labels = np.concatenate([self.labels, y])
        self.session_classes.append(new_classes)
        return new_classes

    @property
    def all_classes(self) -> tuple[int, ...]:
        return tuple(sorted(c for s in self.session_classes for c in s))


@dataclass
class ExpandedModel:
    """Combined tree after a novel session."""

    tree: tree_mod.LabelTree
    mode: str
    n_novel_sessions: int

    @property
    def classes(self) -> tuple[int, ...]:
        return self.tree.classes

    def predict_proba(self, x, **kwargs) -> np.ndarray:
        return tree_mod.predict_proba(self.tree, x, **kwargs)

    def predict_labels(self, x, **kwargs) -> np.ndarray:
        return tree_mod.predict_labels(self.tree, x, **kwargs)


def finalize_base(
    tree: tree_mod.LabelTree,
    store: svgp.InducingStore,
    base_spec: KernelSpec,
    novel_spec: KernelSpec | None = None,
    gibbs_config: gibbs_mod.GibbsConfig | None = None,
) -> BaseArtifact:
    """Freeze the VI-fitted base tree and its exemplar store.

    The novel-session kernel defaults to an RBF with lengthscale 1 and
    outputscale 8 over normalized inputs.
    """
    for nid in tree.internal_ids_inorder():
        if tree.nodes[nid].classifier is None:
            raise ValueError(f"base tree node {nid} is not fitted")
    return BaseArtifact(
        tree=tree,
        store=store,
        base_spec=base_spec,
        novel_spec=novel_spec or KernelSpec("rbf", lengthscale=1.0, outputscale=8.0),
        gibbs_config=gibbs_config or gibbs_mod.GibbsConfig(),
    )


def _copy_structure(tree: tree_mod.LabelTree, offset: int) -> list[tree_mod.TreeNode]:
    """Clone tree nodes with ids shifted by offset; classifiers are shared."""
    out = []
    for node in tree.nodes:
        out.append(
            tree_mod.TreeNode(
                node_id=node.node_id + offset,
                classes=node.classes,
                left=None if node.left is None else node.left + offset,
                right=None if node.right is None else node.right + offset,
                left_classes=node.left_classes,
                right_classes=node.right_classes,
                classifier=node.classifier,
            )
        )
    return out


def _graft(
    left_tree: tree_mod.LabelTree,
    right_tree: tree_mod.LabelTree,
    root_classifier,
) -> tree_mod.LabelTree:
    """New tree: fresh root with left/right subtrees (left = novel side)."""
    left_nodes = _copy_structure(left_tree, offset=1)
    right_nodes = _copy_structure(right_tree, offset=1 + len(left_nodes))
    left_classes = tuple(sorted(left_tree.nodes[left_tree.root_id].classes))
    right_classes = tuple(sorted(right_tree.nodes[right_tree.root_id].classes))
    root = tree_mod.TreeNode(
        node_id=0,
        classes=tuple(sorted(left_classes + right_classes)),
        left=left_tree.root_id + 1,
        right=right_tree.root_id + 1 + len(left_nodes),
        left_classes=left_classes,
        right_classes=right_classes,
        classifier=root_classifier,
    )
    return tree_mod.LabelTree(nodes=[root] + left_nodes + right_nodes, root_id=0)


def _leaf_tree(cls: int) -> tree_mod.LabelTree:
    return tree_mod.LabelTree(
        nodes=[tree_mod.TreeNode(node_id=0, classes=(int(cls),))], root_id=0
    )


def _subtree_over(
    x: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    config: gibbs_mod.GibbsConfig,
    stream: RngStream,
) -> tree_mod.LabelTree:
    """Prototype-clustered, Gibbs-fitted tree over the classes present in y."""
    classes = np.unique(y)
    if classes.size == 0:
        raise EmptyClass("no samples to build a subtree from")
    if classes.size == 1:
        return _leaf_tree(int(classes[0]))
    protos = tree_mod.class_prototypes(x, y)
    sub = tree_mod.build_tree(protos, "kmeans", stream=stream.child(0))
    tree_mod.fit_tree_gibbs(sub, x, y, spec, config, stream.child(1))
    return sub


def add_novel_session(
    artifact: BaseArtifact,
    novel_store: NovelStore,
    session_x: np.ndarray,
    session_y: np.ndarray,
    mode: str,
    stream: RngStream,
    prev: ExpandedModel | None = None,
) -> ExpandedModel:
    """Absorb one novel session and return the expanded model.

    The session's embeddings are appended to ``novel_store``. All new
    nodes are Gibbs-fitted with the artifact's novel-session kernel; base
    nodes are never touched (except in ``rebuild`` mode, which replaces
    the whole tree).
    """
    if mode not in EXPANSION_MODES:
        raise ValueError(f"unknown expansion mode {mode!r}; expected one of {EXPANSION_MODES}")
    session_x = np.asarray(session_x, dtype=np.float64)
    session_y = np.asarray(session_y, dtype=np.int64)
    novel_store.add_session(session_x, session_y, known=set(artifact.base_classes))
    spec, config = artifact.novel_spec, artifact.gibbs_config
    store = artifact.store

    if mode == "rebuild":
        x_all = np.vstack([store.xbar, novel_store.features])
        y_all = np.concatenate([store.ybar, novel_store.labels])
        protos = tree_mod.class_prototypes(x_all, y_all)
        full = tree_mod.build_tree(protos, "kmeans", stream=stream.child(0))
        tree_mod.fit_tree_gibbs(full, x_all, y_all, spec, config, stream.child(1))
        return ExpandedModel(tree=full, mode=mode, n_novel_sessions=len(novel_store.session_classes))

    if mode == "accumulated":
        sub = _subtree_over(novel_store.features, novel_store.labels, spec, config, stream.child(0))
        right = artifact.tree
        x_base_side = store.xbar
        x_novel_side = novel_store.features
    else:  # session-tree: subtree over this session only, graft onto previous model
        sub = _subtree_over(session_x, session_y, spec, config, stream.child(0))
        right = prev.tree if prev is not None else artifact.tree
        n_this = session_x.shape[0]
        x_novel_side = novel_store.features[-n_this:]
        x_base_side = np.vstack([store.xbar, novel_store.features[:-n_this]])

    x_root = np.vstack([x_novel_side, x_base_side])
    y_root = np.concatenate(
        [np.ones(x_novel_side.shape[0], dtype=np.int64), np.zeros(x_base_side.shape[0], dtype=np.int64)]
    )
    root_clf = gibbs_mod.fit(x_root, y_root, spec, config, stream.child(2))
    combined = _graft(sub, right, root_clf)
    return ExpandedModel(
        tree=combined, mode=mode, n_novel_sessions=len(novel_store.session_classes)
    )


@dataclass
class SessionReport:
    """Accuracy matrix acc[j, k]: session-j test classes scored by the
    model available after session k (0-based; defined for k >= j)."""

    acc: np.ndarray
    joint: np.ndarray

    @property
    def n_sessions(self) -> int:
        return self.joint.shape[0]

    def forgetting(self, j: int, k: int) -> float:
        """Drop of task j at session k from its best earlier score."""
        if not 0 <= j < k < self.n_sessions:
            raise ValueError("need j < k within the evaluated sessions")
        return float(np.max(self.acc[j, j:k]) - self.acc[j, k])


def evaluate_sessions(models, test_sets) -> SessionReport:
    """Score every session's model on every already-seen session's test set.

    ``models[k]`` must predict over all classes seen up to session k;
    ``test_sets[j]`` is the (features, labels) pair of the classes that
    session j introduced.
    """
    t = len(models)
    if len(test_sets) != t:
        raise ValueError("need one test set per session")
    acc = np.full((t, t), np.nan)
    joint = np.zeros(t)
    for k, model in enumerate(models):
        tr = getattr(model, "tree", model)
        hits, total = 0, 0
        for j in range(k + 1):
            x_j, y_j = test_sets[j]
            pred = tree_mod.predict_labels(tr, x_j)
            correct = int(np.sum(pred == np.asarray(y_j)))
            acc[j, k] = correct / len(y_j)
            hits += correct
            total += len(y_j)
        joint[k] = hits / total
    return SessionReport(acc=acc, joint=joint)


def average_forgetting(report: SessionReport, k: int) -> float:
    """Mean over tasks j < k of the drop from best historical accuracy."""
    if k < 1:
        raise ValueError("forgetting needs at least one earlier session (k >= 1)")
    return float(np.mean([report.forgetting(j, k) for j in range(k)]))


def classifier_digest(clf) -> str:
    """Stable hash of a node classifier's numeric payload."""
    h = hashlib.sha256()
    if isinstance(clf, svgp.NodeVIModel):
        for arr in (clf.rows, clf.eta, clf.h, clf.mu, clf.sigma, clf.x_ind):
            h.update(np.ascontiguousarray(arr).tobytes())
    else:
        h.update(np.ascontiguousarray(clf.x).tobytes())
        h.update(np.ascontiguousarray(clf.y).tobytes())
        for chain in clf.chains:
            h.update(np.ascontiguousarray(chain.omega).tobytes())
            h.update(np.ascontiguousarray(chain.f).tobytes())
    return h.hexdigest()


def base_subtree_digests(model: ExpandedModel | BaseArtifact, base_classes) -> dict:
    """Digest of every internal-node classifier whose class set lies fully
    inside the base classes (keyed by sorted class set)."""
    tr = model.tree
    base = set(base_classes)
    out = {}
    for nid in tr.internal_ids_inorder():
        node = tr.nodes[nid]
        if set(node.classes) <= base:
            out[node.classes] = classifier_digest(node.classifier)
    return out
