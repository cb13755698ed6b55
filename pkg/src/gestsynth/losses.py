"""Loss terms shared by the generator training loop and the gesture VAE."""
from __future__ import annotations

import torch

from .errors import DataError


def l1_sequence_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over frames of the L1 norm of the per-frame 2K-dim difference,
    averaged over the batch. Accepts (B, 2K, F) or (2K, F)."""
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 2:
        pred = pred.unsqueeze(0)
        target = target.unsqueeze(0)
    per_frame = (pred - target).abs().sum(dim=1)  # (B, F)
    return per_frame.mean(dim=1).mean()


def gaussian_kl(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, exp(log_var)) || N(0, I)) summed over dimensions,
    averaged over the batch: 0.5 * sum(exp(lv) + mu^2 - 1 - lv)."""
    per_sample = 0.5 * torch.sum(torch.exp(log_var) + mu ** 2 - 1.0 - log_var, dim=-1)
    return per_sample.mean()
