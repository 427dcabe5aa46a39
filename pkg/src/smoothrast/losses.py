"""Differentiable image and mesh objectives with analytic adjoints.

Every loss returns (value, adjoint) where the adjoint has the shape of the
differentiated argument, so callers can feed it straight into the renderer's
backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Mesh


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective."""

    lambda_sil: float = 1.0
    lambda_rgb: float = 1.0
    lambda_lap: float = 3e-3

    def __post_init__(self):
        if min(self.lambda_sil, self.lambda_rgb, self.lambda_lap) < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_same_shape(target, rendered):
    target = np.asarray(target, dtype=np.float64)
    rendered = np.asarray(rendered, dtype=np.float64)
    if target.shape != rendered.shape:
        raise ValueError(f"image shapes differ: {target.shape} vs {rendered.shape}")
    return target, rendered


def rgb_l2(target, rendered):
    """Half squared error: 0.5 * sum((rendered - target)^2), adjoint = diff."""
    target, rendered = _check_same_shape(target, rendered)
    diff = rendered - target
    return 0.5 * float((diff * diff).sum()), diff


def rgb_l1(target, rendered):
    """Sum of absolute differences; adjoint is the sign (0 at equality)."""
    target, rendered = _check_same_shape(target, rendered)
    diff = rendered - target
    return float(np.abs(diff).sum()), np.sign(diff)


def neg_iou(target_sil, rendered_sil):
    """One minus soft IoU between silhouettes in [0, 1].

    The same algebraic form applies to binary and soft silhouettes.  If both
    silhouettes are identically zero the loss is defined as 0 with a zero
    adjoint.
    """
    target, rendered = _check_same_shape(target_sil, rendered_sil)
    inter = float((target * rendered).sum())
    union = float((target + rendered - target * rendered).sum())
    if union <= 0.0:
        return 0.0, np.zeros_like(rendered)
    # d/dI_hat [1 - A/B] with A = sum(I*Ih), B = sum(I + Ih - I*Ih)
    adj = -(target * union - inter * (1.0 - target)) / (union * union)
    return 1.0 - inter / union, adj


def laplacian_loss(mesh: Mesh, displaced_vertices):
    """Sum over vertices of squared distance to the neighbor centroid.

    Vertices without neighbors contribute nothing.  Returns the value and the
    per-vertex adjoint with respect to the displaced positions.
    """
    v = np.asarray(displaced_vertices, dtype=np.float64)
    if v.shape != mesh.vertices.shape:
        raise ValueError("displaced vertices must match the mesh vertex count")
    nv = len(v)
    value = 0.0
    adjoint = np.zeros_like(v)
    residual = np.zeros_like(v)
    for i, nbrs in enumerate(mesh.adjacency):
        if len(nbrs) == 0:
            continue
        residual[i] = v[i] - v[nbrs].mean(axis=0)
    value = float((residual * residual).sum())
    for i, nbrs in enumerate(mesh.adjacency):
        if len(nbrs) == 0:
            continue
        adjoint[i] += 2.0 * residual[i]
        adjoint[nbrs] -= 2.0 * residual[i] / len(nbrs)
    return value, adjoint


def composite_loss(weights: LossWeights, parts: dict):
    """Weighted sum of loss parts.

    ``parts`` maps part name ("sil", "rgb", "lap") to a (value, adjoint)
    pair; a part may be omitted only if its weight is zero.  Returns the
    total and a dict of correspondingly scaled adjoints.
    """
    lam = {"sil": weights.lambda_sil, "rgb": weights.lambda_rgb,
           "lap": weights.lambda_lap}
    total = 0.0
    scaled = {}
    for name, weight in lam.items():
        if weight == 0.0:
            continue
        if name not in parts:
            raise ValueError(f"missing loss part {name!r} with nonzero weight")
        value, adjoint = parts[name]
        total += weight * value
        scaled[name] = weight * np.asarray(adjoint)
    return total, scaled
