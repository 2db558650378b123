"""Synthetic datasets for tests, benchmarks, and CLI walkthroughs.

Class centers sit at distinct angles on a circle so that the default
L2 input normalization preserves separation (classes become arcs on the
unit circle rather than collapsing radially).
"""
from __future__ import annotations

import numpy as np

from .rng import RngStream


def angular_blobs(
    n_classes: int,
    n_per_class: int,
    stream: RngStream,
    radius: float = 10.0,
    std: float = 1.0,
    dim: int = 2,
    n_groups: int | None = None,
    group_spread: float = 0.08,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs at angular positions; returns (features, labels).

    With ``n_groups`` set, classes are packed into that many angular
    clusters (``group_spread`` radians apart within a group), producing
    class sets whose semantic structure a prototype-based tree split can
    exploit but a random split will mix.
    """
    gen = stream.generator()
    if n_groups is None:
        angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    else:
        per = n_classes // n_groups
        group_angles = 2.0 * np.pi * np.arange(n_groups) / n_groups
        angles = np.array(
            [
                group_angles[g] + group_spread * (i - (per - 1) / 2.0)
                for g in range(n_groups)
                for i in range(per)
            ]
        )
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if dim > 2:
        centers = np.hstack([centers, np.zeros((n_classes, dim - 2))])
    xs, ys = [], []
    for cls in range(n_classes):
        xs.append(centers[cls] + std * gen.standard_normal((n_per_class, dim)))
        ys.append(np.full(n_per_class, cls, dtype=np.int64))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    perm = gen.permutation(x.shape[0])
    return x[perm], y[perm]
