"""Label trees: structure, construction, fitting, and prediction.

Internal nodes carry a binary classifier deciding left vs right; a class's
probability is the product of node decisions along its root-to-leaf path,
so class probabilities sum to one by construction. Three constructions are
supported:

* ``kmeans``  - recursive 2-means on unit-normalized class prototypes
  (divisive hierarchical clustering, the default),
* ``random``  - seeded balanced random halving,
* ``stick``   - the sequential chain that peels one class per level and
  assigns the remaining mass to the final class (the stick-break baseline).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gibbs as gibbs_mod
from . import svgp
from .clustering import bisect
from .errors import EmptyClass, UnknownClass
from .kernels import KernelSpec, normalize_rows
from .numerics import gauss_hermite
from .rng import RngStream

TREE_METHODS = ("kmeans", "random", "stick")


@dataclass(frozen=True)
class ClassPrototypes:
    """Unit-norm per-class mean feature vectors."""

    classes: tuple[int, ...]
    vectors: np.ndarray


def class_prototypes(features, labels, classes=None) -> ClassPrototypes:
    """Coordinate-wise class means, L2-normalized, one row per class."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = tuple(int(c) for c in (np.unique(labels) if classes is None else sorted(classes)))
    protos = np.empty((len(classes), features.shape[1]))
    for i, cls in enumerate(classes):
        mask = labels == cls
        if not mask.any():
            raise EmptyClass(f"class {cls} has no samples to build a prototype from")
        protos[i] = features[mask].mean(axis=0)
    return ClassPrototypes(classes=classes, vectors=normalize_rows(protos))


@dataclass
class TreeNode:
    node_id: int
    classes: tuple[int, ...]
    left: int | None = None
    right: int | None = None
    left_classes: tuple[int, ...] = ()
    right_classes: tuple[int, ...] = ()
    classifier: object = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class LabelTree:
    nodes: list[TreeNode]
    root_id: int = 0
    paths: dict[int, tuple[tuple[int, bool], ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.paths:
            self._rebuild_paths()

    def _rebuild_paths(self):
        self.paths = {}
        root = self.nodes[self.root_id]
        stack = [(root, ())]
        while stack:
            node, prefix = stack.pop()
            if node.is_leaf:
                self.paths[node.classes[0]] = prefix
                continue
            stack.append((self.nodes[node.left], prefix + ((node.node_id, True),)))
            stack.append((self.nodes[node.right], prefix + ((node.node_id, False),)))

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.nodes[self.root_id].classes))

    def internal_ids_inorder(self) -> list[int]:
        """Internal node ids by in-order traversal (left, node, right)."""
        out: list[int] = []

        def visit(nid: int):
            node = self.nodes[nid]
            if node.is_leaf:
                return
            visit(node.left)
            out.append(nid)
            visit(node.right)

        visit(self.root_id)
        return out

    def depth(self) -> int:
        def d(nid: int) -> int:
            node = self.nodes[nid]
            if node.is_leaf:
                return 0
            return 1 + max(d(node.left), d(node.right))

        return d(self.root_id)


def build_tree(
    prototypes: ClassPrototypes,
    method: str = "kmeans",
    class_order=None,
    stream: RngStream | None = None,
) -> LabelTree:
    """Tree structure over the prototype classes; classifiers left unset."""
    if method not in TREE_METHODS:
        raise ValueError(f"unknown tree method {method!r}; expected one of {TREE_METHODS}")
    classes = prototypes.classes
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to build a tree")
    proto_of = {cls: prototypes.vectors[i] for i, cls in enumerate(classes)}
    if method == "stick":
        order = list(class_order) if class_order is not None else list(classes)
        if sorted(order) != sorted(classes):
            raise ValueError("class_order must be a permutation of the prototype classes")
    if method != "stick" and stream is None:
        raise ValueError(f"method {method!r} requires a stream")

    nodes: list[TreeNode] = []

    def new_node(cls_set) -> int:
        nid = len(nodes)
        nodes.append(TreeNode(node_id=nid, classes=tuple(int(c) for c in sorted(cls_set))))
        return nid

    def split(nid: int):
        node = nodes[nid]
        if len(node.classes) == 1:
            return
        if method == "stick":
            pos = min(order.index(c) for c in node.classes)
            left = (order[pos],)
            right = tuple(c for c in node.classes if c != order[pos])
        elif method == "random":
            gen = stream.child(nid).generator()
            perm = list(np.array(node.classes)[gen.permutation(len(node.classes))])
            half = (len(perm) + 1) // 2
            left, right = tuple(perm[:half]), tuple(perm[half:])
        else:  # kmeans
            protos = np.vstack([proto_of[c] for c in node.classes])
            mask = bisect(protos, stream.child(nid).generator())
            if mask.all() or not mask.any():
                # Duplicate prototypes: fall back to a balanced random split.
                gen = stream.child(nid, 1).generator()
                perm = list(np.array(node.classes)[gen.permutation(len(node.classes))])
                half = (len(perm) + 1) // 2
                left, right = tuple(perm[:half]), tuple(perm[half:])
            else:
                arr = np.array(node.classes)
                left, right = tuple(arr[mask]), tuple(arr[~mask])
        lid, rid = new_node(left), new_node(right)
        node.left, node.right = lid, rid
        node.left_classes = tuple(sorted(left))
        node.right_classes = tuple(sorted(right))
        split(lid)
        split(rid)

    root = new_node(classes)
    split(root)
    return LabelTree(nodes=nodes, root_id=root)


def assign_node_data(tree: LabelTree, labels) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per internal node: (sample indices, binary left/right labels)."""
    labels = np.asarray(labels)
    covered = np.isin(labels, np.asarray(tree.classes))
    if not covered.all():
        missing = np.unique(labels[~covered])
        raise UnknownClass(f"labels {missing.tolist()} are not covered by the tree")
    out = {}
    for nid in tree.internal_ids_inorder():
        node = tree.nodes[nid]
        idx = np.flatnonzero(np.isin(labels, np.asarray(node.classes)))
        y = np.isin(labels[idx], np.asarray(node.left_classes)).astype(np.int64)
        out[nid] = (idx, y)
    return out


def fit_tree_gibbs(
    tree: LabelTree,
    features,
    labels,
    spec: KernelSpec,
    config: gibbs_mod.GibbsConfig,
    stream: RngStream,
    workers: int = 1,
) -> LabelTree:
    """Gibbs-fit every internal node on its assigned binary subproblem.

    Node ``nid`` draws from ``stream.child(nid)``, so results are identical
    for any worker count.
    """
    features = np.asarray(features, dtype=np.float64)
    assignments = assign_node_data(tree, labels)

    def fit_one(nid: int):
        idx, y = assignments[nid]
        return nid, gibbs_mod.fit(features[idx], y, spec, config, stream.child(nid))

    ids = list(assignments)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = dict(pool.map(fit_one, ids))
    else:
        fitted = dict(map(fit_one, ids))
    for nid, model in fitted.items():
        tree.nodes[nid].classifier = model
    return tree


def fit_tree_vi(
    tree: LabelTree,
    features,
    labels,
    store: svgp.InducingStore,
    spec: KernelSpec,
    config: svgp.VIConfig,
    stream: RngStream,
    track_elbo: bool = True,
) -> list[float]:
    """Train all nodes jointly by epochs of minibatch natural-gradient steps.

    Each batch visits the internal nodes in-order; a node updates on the
    batch rows whose class it covers (skipping empty subsets): first the
    closed-form c update, then one natural step. Returns the per-epoch
    history of the summed ELBO with each node's bound weighted by
    1 / (that node's relevant training count).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    assignments = assign_node_data(tree, labels)
    order = tree.internal_ids_inorder()

    models: dict[int, svgp.NodeVIModel] = {}
    n_node: dict[int, int] = {}
    y_node: dict[int, np.ndarray] = {}
    for nid in order:
        node = tree.nodes[nid]
        models[nid] = svgp.init_node(store, node.classes, spec)
        idx, _ = assignments[nid]
        n_node[nid] = idx.size
        member_left = np.isin(labels, np.asarray(node.left_classes))
        y_node[nid] = member_left.astype(np.int64)

    n = features.shape[0]
    in_node = {nid: np.isin(labels, np.asarray(tree.nodes[nid].classes)) for nid in order}
    history: list[float] = []
    for epoch in range(config.epochs):
        perm = stream.child(epoch).generator().permutation(n)
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            for nid in order:
                rows = batch[in_node[nid][batch]]
                if rows.size == 0:
                    continue
                x_b = features[rows]
                y_b = y_node[nid][rows]
                aug = svgp.update_c(models[nid], x_b)
                svgp.natural_gradient_step(
                    models[nid], x_b, y_b, aug, config.natural_lr, n_node[nid]
                )
        if track_elbo:
            history.append(weighted_tree_elbo(tree, models, features, assignments, y_node))

    for nid in order:
        tree.nodes[nid].classifier = models[nid]
    return history


def weighted_tree_elbo(tree, models, features, assignments, y_node) -> float:
    """Sum over nodes of (full-data node ELBO at optimal c) / node count."""
    total = 0.0
    for nid, model in models.items():
        idx, _ = assignments[nid]
        x_all = features[idx]
        y_all = y_node[nid][idx]
        aug = svgp.update_c(model, x_all)
        total += svgp.elbo(model, x_all, y_all, aug, idx.size) / idx.size
    return total


def node_left_probs(
    tree: LabelTree, x, mode: str | None = None, quadrature_order: int = 20
) -> dict[int, np.ndarray]:
    """P(go left) per internal node for every query row."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rule = gauss_hermite(quadrature_order)
    out = {}
    for nid in tree.internal_ids_inorder():
        clf = tree.nodes[nid].classifier
        if clf is None:
            raise ValueError(f"node {nid} has no fitted classifier")
        if isinstance(clf, svgp.NodeVIModel):
            out[nid] = svgp.predict_prob(clf, x, rule=rule, mode=mode or "quadrature")
        else:
            out[nid] = clf.predict_prob(x, mode=mode)
    return out


def class_log_probs(tree: LabelTree, node_probs: dict[int, np.ndarray]) -> np.ndarray:
    """Per-class log probabilities from per-node left-probabilities.

    Accepts scalar or vector probabilities per node; returns an array of
    shape (n_classes,) or (n_classes, n_queries) aligned with
    ``tree.classes``. exp of the outputs sums to one over classes.
    """
    classes = tree.classes
    first = np.atleast_1d(np.asarray(node_probs[tree.internal_ids_inorder()[0]]))
    out = np.zeros((len(classes), first.shape[0]))
    for i, cls in enumerate(classes):
        for nid, go_left in tree.paths[cls]:
            p = np.atleast_1d(np.asarray(node_probs[nid], dtype=np.float64))
            out[i] += np.log(p) if go_left else np.log1p(-p)
    return out[:, 0] if out.shape[1] == 1 else out


def predict_proba(
    tree: LabelTree, x, mode: str | None = None, quadrature_order: int = 20
) -> np.ndarray:
    """Class probability matrix (n_queries, n_classes) for a fitted tree."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    probs = node_left_probs(tree, x, mode=mode, quadrature_order=quadrature_order)
    logp = class_log_probs(tree, probs)
    logp = logp.reshape(len(tree.classes), x.shape[0])
    return np.exp(logp).T


def predict_labels(tree: LabelTree, x, **kwargs) -> np.ndarray:
    """Argmax class ids for every query row."""
    proba = predict_proba(tree, x, **kwargs)
    classes = np.asarray(tree.classes)
    return classes[np.argmax(proba, axis=1)]
