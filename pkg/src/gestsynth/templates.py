"""Learned template vectors: one per clip (or per frame, for the ablation).

Templates start at zero and are updated by back-propagation together with the
generator parameters; a KL-divergence penalty on their batch statistics keeps
the learned space close to a standard Gaussian so it can be sampled at test
time.
"""
from __future__ import annotations

import json

import numpy as np
import torch
import torch.nn as nn

from .core import atomic_write_text
from .errors import DataError

VAR_FLOOR = 1e-8


class TemplateBank(nn.Module):
    """Lookup table clip_id -> template vector (clip mode) or clip_id ->
    frames x C array (frame mode). All entries initialize to exactly zero."""

    def __init__(self, clip_ids, template_dim: int, mode: str = "clip", frames: int | None = None):
        super().__init__()
        if mode not in ("clip", "frame"):
            raise DataError(f"template bank mode must be 'clip' or 'frame', got '{mode}'")
        clip_ids = list(clip_ids)
        if not clip_ids:
            raise DataError("template bank needs at least one clip id")
        if len(set(clip_ids)) != len(clip_ids):
            raise DataError("duplicate clip_id in template bank")
        if template_dim < 1:
            raise DataError("template_dim must be >= 1")
        if mode == "frame":
            if frames is None or frames < 1:
                raise DataError("frame mode requires the shared frame count")
            shape = (len(clip_ids), frames, template_dim)
        else:
            shape = (len(clip_ids), template_dim)
        self.mode = mode
        self.template_dim = template_dim
        self.frames = frames if mode == "frame" else None
        self.clip_ids = clip_ids
        self.index = {cid: i for i, cid in enumerate(clip_ids)}
        self.table = nn.Parameter(torch.zeros(*shape))
        self.frozen = False

    def __len__(self) -> int:
        return len(self.clip_ids)

    def lookup(self, clip_ids) -> torch.Tensor:
        try:
            rows = [self.index[cid] for cid in clip_ids]
        except KeyError as exc:
            raise DataError(f"unknown clip_id {exc.args[0]!r} in template bank") from None
        return self.table[rows]

    def vector(self, clip_id: str) -> np.ndarray:
        return self.lookup([clip_id])[0].detach().cpu().numpy()

    def freeze(self) -> None:
        self.table.requires_grad_(False)
        self.frozen = True

    def state(self) -> dict:
        return {
            "mode": self.mode,
            "template_dim": self.template_dim,
            "frames": self.frames,
            "clip_ids": list(self.clip_ids),
            "table": self.table.detach().clone().cpu(),
            "frozen": self.frozen,
        }

    @classmethod
    def from_state(cls, state: dict) -> "TemplateBank":
        bank = cls(state["clip_ids"], state["template_dim"], state["mode"], state["frames"])
        with torch.no_grad():
            bank.table.copy_(state["table"])
        if state.get("frozen"):
            bank.freeze()
        return bank

    def export_json(self, path) -> None:
        payload = {
            "C": self.template_dim,
            "mode": self.mode,
            "templates": {cid: self.vector(cid).tolist() for cid in self.clip_ids},
        }
        if self.mode == "frame":
            payload["frames"] = self.frames
        atomic_write_text(path, json.dumps(payload))


def init_bank(clip_ids, template_dim: int, mode: str = "clip", frames: int | None = None) -> TemplateBank:
    return TemplateBank(clip_ids, template_dim, mode=mode, frames=frames)


def kl_regularizer(batch: torch.Tensor) -> torch.Tensor:
    """KL divergence between the batch's per-dimension Gaussian fit
    (population variance) and the standard normal:
    0.5 * sum_c (var_c + mean_c^2 - 1 - log var_c).

    Frame-mode template arrays (B, F, C) are treated as B*F batch elements.
    """
    if batch.ndim == 3:
        batch = batch.reshape(-1, batch.shape[-1])
    if batch.ndim != 2:
        raise DataError(f"template batch must be (B, C) or (B, F, C), got {tuple(batch.shape)}")
    if batch.shape[0] < 2:
        raise DataError("KL regularizer needs a batch of at least 2 templates")
    mean = batch.mean(dim=0)
    var = ((batch - mean) ** 2).mean(dim=0)
    log_var = torch.log(torch.clamp(var, min=VAR_FLOOR))
    return 0.5 * torch.sum(var + mean ** 2 - 1.0 - log_var)


def sample_template(bank: TemplateBank, rng_seed: int) -> tuple[str, np.ndarray]:
    """Uniformly pick one stored entry; deterministic per seed."""
    if len(bank) == 0:
        raise DataError("cannot sample from an empty template bank")
    rng = np.random.default_rng(rng_seed)
    idx = int(rng.integers(len(bank)))
    clip_id = bank.clip_ids[idx]
    return clip_id, bank.vector(clip_id)


def interpolate(t0: np.ndarray, t1: np.ndarray, alpha: float) -> np.ndarray:
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    if t0.shape != t1.shape:
        raise DataError(f"template shapes differ: {t0.shape} vs {t1.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"interpolation weight must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * t0 + alpha * t1


def load_template_json(path) -> np.ndarray:
    """Single template vector file: {"C": int, "values": [...]}."""
    try:
        payload = json.loads(open(path).read())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read template file ({exc})") from exc
    if "values" not in payload:
        raise DataError(f"{path}: missing 'values'")
    values = np.asarray(payload["values"], dtype=np.float64)
    if values.ndim != 1 or ("C" in payload and values.size != payload["C"]):
        raise DataError(f"{path}: values must be a flat list of length C")
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite template values")
    return values
