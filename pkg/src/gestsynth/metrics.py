"""Evaluation metrics: L2 distance, normalized lip-sync error, and the
Frechet template distance between Gaussian fits of VAE-encoded templates."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import GestureSequence
from .errors import DataError, NumericError

#: Eigenvalues of nominally-PSD matrices below this are clamped to zero.
PSD_CLAMP = 1e-10


@dataclass
class MetricsReport:
    l2: float
    lip_error: float
    ftd: float
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "l2": self.l2,
                "lip_error": self.lip_error,
                "ftd": self.ftd,
                "n_samples": self.n_samples,
            }
        )


def _check_same_shape(pred: GestureSequence, gt: GestureSequence) -> None:
    if pred.coords.shape != gt.coords.shape:
        raise DataError(
            f"sequence shapes differ: {pred.coords.shape} vs {gt.coords.shape}"
        )


def l2_distance(pred: GestureSequence, gt: GestureSequence) -> float:
    """Mean over frames of the Euclidean norm of the 2K-dim coordinate
    difference (per-frame norms, then the frame average)."""
    _check_same_shape(pred, gt)
    diff = (pred.coords - gt.coords).reshape(pred.num_frames, -1)
    return float(np.linalg.norm(diff, axis=1).mean())


def lip_distances(seq: GestureSequence) -> np.ndarray:
    upper = seq.coords[:, seq.layout.lip_upper_center]
    lower = seq.coords[:, seq.layout.lip_lower_center]
    return np.linalg.norm(upper - lower, axis=1)


def lip_sync_error(pred: GestureSequence, gt: GestureSequence) -> float:
    """Mean absolute error of the lip-opening distance, normalized by the
    ground truth's maximum lip opening."""
    _check_same_shape(pred, gt)
    d_pred = lip_distances(pred)
    d_gt = lip_distances(gt)
    peak = d_gt.max()
    if peak <= 0.0:
        raise DataError("ground-truth mouth never opens (max lip distance is 0)")
    return float(np.abs(d_pred - d_gt).mean() / peak)


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray


def fit_gaussian(templates: np.ndarray) -> GaussianStats:
    """Mean and population covariance of a set of template vectors (N x C)."""
    templates = np.asarray(templates, dtype=np.float64)
    if templates.ndim != 2 or templates.shape[0] < 2:
        raise DataError(
            f"need at least 2 template vectors as an N x C array, got shape {templates.shape}"
        )
    mu = templates.mean(axis=0)
    centered = templates - mu
    sigma = centered.T @ centered / templates.shape[0]
    return GaussianStats(mu=mu, sigma=sigma)


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition; small
    negative eigenvalues from roundoff are clamped to zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -max(PSD_CLAMP, 1e-8 * max(eigvals.max(), 1.0)):
        raise NumericError(
            f"matrix is not PSD (eigenvalue {eigvals.min():.3e} beyond tolerance)"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), computed with the
    symmetric reduction tr((S1 S2)^{1/2}) = tr((S1^{1/2} S2 S1^{1/2})^{1/2})."""
    if g1.mu.shape != g2.mu.shape:
        raise DataError(f"Gaussian dimensions differ: {g1.mu.shape} vs {g2.mu.shape}")
    root1 = psd_sqrt(g1.sigma)
    cross = psd_sqrt(root1 @ g2.sigma @ root1)
    mean_term = float(np.sum((g1.mu - g2.mu) ** 2))
    trace_term = float(np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * np.trace(cross))
    return max(mean_term + trace_term, 0.0)


def ftd(pred_set, gt_set, vae) -> float:
    """Frechet template distance between two sets of gesture sequences,
    using a frozen VAE as the template extractor."""
    if len(pred_set) < 2 or len(gt_set) < 2:
        raise DataError("FTD needs at least 2 sequences on each side")
    pred_templates = np.stack([vae.extract_template(s) for s in pred_set])
    gt_templates = np.stack([vae.extract_template(s) for s in gt_set])
    return frechet_distance(fit_gaussian(pred_templates), fit_gaussian(gt_templates))
