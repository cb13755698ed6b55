"""Template-space introspection: PCA projection, closed-form factorization of
the VAE decoder's first-layer weight, opposite-vector decoding, and
interpolation sweeps. All read-only on models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .templates import interpolate
from .vae import GestureVae

EIGENVALUE_TIE_TOL = 1e-9


@dataclass
class PcaProjection:
    points: np.ndarray                    # (N, dims) centered projections
    explained_variance_ratio: np.ndarray  # (dims,)
    components: np.ndarray                # (dims, C) principal axes
    requested_dims: int
    effective_dims: int

    @property
    def rank_deficient(self) -> bool:
        return self.effective_dims < self.requested_dims


def pca_project(vectors: np.ndarray, dims: int = 2) -> PcaProjection:
    """Project centered vectors onto their top principal axes; ratios are
    each axis's share of the total variance. If the data's rank is below
    ``dims``, the projection is reported with reduced dimensionality."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise DataError(f"expected an N x C array, got shape {vectors.shape}")
    if vectors.shape[0] < dims + 1:
        raise DataError(f"need at least dims+1 = {dims + 1} vectors, got {vectors.shape[0]}")
    centered = vectors - vectors.mean(axis=0)
    _, singular, v_rows = np.linalg.svd(centered, full_matrices=False)
    total = float(np.sum(singular ** 2))
    if total == 0.0:
        raise DataError("all template vectors identical; nothing to project")
    rank = int(np.sum(singular > max(singular[0], 1.0) * 1e-12))
    effective = min(dims, rank)
    components = v_rows[:effective]
    points = centered @ components.T
    ratios = singular[:effective] ** 2 / total
    return PcaProjection(points, ratios, components, dims, effective)


@dataclass
class SemanticDirection:
    vector: np.ndarray       # unit norm, largest-magnitude entry positive
    eigenvalues: np.ndarray  # all eigenvalues of W^T W, descending
    degenerate: bool         # top two eigenvalues tied within tolerance


def top_semantic_direction(vae: GestureVae) -> SemanticDirection:
    """Top eigenvector of W^T W for the first affine map W applied to a
    template vector in the VAE's decoder (bias excluded)."""
    weight = vae.decoder_input.weight.detach().cpu().numpy().astype(np.float64)
    gram = weight.T @ weight
    eigvals, eigvecs = np.linalg.eigh(gram)  # ascending, deterministic
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    direction = eigvecs[:, order[0]]
    degenerate = bool(
        eigvals.size > 1 and eigvals[0] - eigvals[1] <= EIGENVALUE_TIE_TOL * max(1.0, eigvals[0])
    )
    direction = direction / np.linalg.norm(direction)
    pivot = int(np.argmax(np.abs(direction)))
    if direction[pivot] < 0:
        direction = -direction
    return SemanticDirection(direction, eigvals, degenerate)


def decode_opposites(vae: GestureVae, direction: np.ndarray, magnitude: float):
    """Decode +magnitude*direction and -magnitude*direction."""
    direction = np.asarray(direction, dtype=np.float64)
    positive = vae.decode_template(magnitude * direction)
    negative = vae.decode_template(-magnitude * direction)
    return positive, negative


def interpolation_sweep(decode, t0: np.ndarray, t1: np.ndarray, steps: int):
    """Decoded outputs for alpha = linspace(0, 1, steps) plus the mean
    coordinate change between adjacent steps. ``decode`` maps a template
    vector to a GestureSequence (VAE decoder or a generator closure)."""
    if steps < 2:
        raise DataError("interpolation sweep needs at least 2 steps")
    alphas = np.linspace(0.0, 1.0, steps)
    sequences = [decode(interpolate(t0, t1, float(a))) for a in alphas]
    diffs = [
        float(np.abs(b.coords - a.coords).mean())
        for a, b in zip(sequences, sequences[1:])
    ]
    return sequences, alphas, diffs
