"""Hierarchical Gaussian-process classification with Polya-Gamma augmentation.

A binary GP classifier sits at each internal node of a label tree; class
probabilities are products of node decisions along root-to-leaf paths.
Nodes can be trained exactly by block Gibbs sampling over (f, omega) or by
sparse variational inference over shared per-class inducing points, and the
tree can be grown across few-shot sessions without touching previously
fitted nodes.
"""

__version__ = "0.1.0"

from .errors import GPTreeError  # noqa: F401
from .rng import RngStream  # noqa: F401
