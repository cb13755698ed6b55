"""Gesture VAE: fully 1D-convolutional encoder/decoder over the timeline.

Encodes a gesture sequence to per-dimension Gaussian statistics (mu, log_var)
in the template space, reparameterizes, and decodes back. Once trained it is
frozen and doubles as the template extractor for the template-VAE generator
variant and as the feature extractor for the Frechet template distance.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import GestureSequence, SkeletonLayout, get_layout
from .core import absolute_coords_array, hierarchical_offsets_array
from .errors import DataError, UsageError
from .generator import TransposedInstanceNorm1d
from .losses import gaussian_kl, l1_sequence_loss

VAE_CHECKPOINT_VERSION = 1


@dataclass
class VaeConfig:
    keypoints: int
    layout: str = "toy_v1"
    template_dim: int = 32
    clip_frames: int = 64
    base_channels: int = 64
    max_channels: int = 128
    hierarchical: bool = False
    norm: str = "none"  # or "transposed_instance"
    log_var_init: float = -4.0  # small posterior variance at init keeps z informative
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.template_dim < 1:
            raise UsageError("template_dim must be >= 1")
        if self.norm not in ("transposed_instance", "none"):
            raise UsageError("VAE norm must be 'transposed_instance' or 'none'")
        f = self.clip_frames
        if f < 2 or (f & (f - 1)) != 0:
            raise UsageError("clip_frames must be a power of two for the stride-2 stack")


class GestureVae(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        self.layout = get_layout(cfg.layout)
        if self.layout.num_keypoints != cfg.keypoints:
            raise UsageError(
                f"config keypoints {cfg.keypoints} != layout '{cfg.layout}' "
                f"({self.layout.num_keypoints})"
            )
        act = nn.LeakyReLU(cfg.negative_slope)

        def norm_layers(ch):
            return [TransposedInstanceNorm1d(ch)] if cfg.norm == "transposed_instance" else []

        n_down = int(math.log2(cfg.clip_frames))
        channels = [min(cfg.base_channels * 2 ** i, cfg.max_channels) for i in range(n_down + 1)]
        enc = []
        prev = 2 * cfg.keypoints
        for i, ch in enumerate(channels):
            stride = 1 if i == 0 else 2
            enc += [nn.Conv1d(prev, ch, kernel_size=3, stride=stride, padding=1)]
            enc += norm_layers(ch)
            enc += [act]
            prev = ch
        self.encoder = nn.Sequential(*enc)
        self.mu_head = nn.Linear(channels[-1], cfg.template_dim)
        self.log_var_head = nn.Linear(channels[-1], cfg.template_dim)
        nn.init.constant_(self.log_var_head.bias, cfg.log_var_init)
        # first affine map applied to a template vector; its weight matrix is
        # what the closed-form factorization analyzes
        self.decoder_input = nn.Linear(cfg.template_dim, channels[-1])
        dec = []
        for i in range(n_down - 1, -1, -1):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv1d(channels[i + 1], channels[i], kernel_size=3, padding=1),
            ]
            dec += norm_layers(channels[i])
            dec += [act]
        self.decoder = nn.Sequential(*dec)
        self.head = nn.Conv1d(channels[0], 2 * cfg.keypoints, kernel_size=1)
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self._frozen = True

    # ---- representation plumbing -------------------------------------------------

    def coords_to_raw(self, coords: torch.Tensor) -> torch.Tensor:
        """(B, F, K, 2) absolute coordinates -> model space (B, 2K, F)."""
        if self.cfg.hierarchical:
            coords = hierarchical_offsets_array(self.layout, coords)
        b, frames, k, _ = coords.shape
        return coords.reshape(b, frames, 2 * k).permute(0, 2, 1)

    def raw_to_coords(self, raw: torch.Tensor) -> torch.Tensor:
        b, ch, frames = raw.shape
        coords = raw.permute(0, 2, 1).reshape(b, frames, self.cfg.keypoints, 2)
        if self.cfg.hierarchical:
            coords = absolute_coords_array(self.layout, coords)
        return coords

    def _check_raw(self, raw: torch.Tensor) -> None:
        expected = (2 * self.cfg.keypoints, self.cfg.clip_frames)
        if raw.ndim != 3 or tuple(raw.shape[1:]) != expected:
            raise DataError(
                f"VAE input must be (B, {expected[0]}, {expected[1]}), got {tuple(raw.shape)}"
            )

    # ---- core model --------------------------------------------------------------

    def encode(self, raw: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check_raw(raw)
        h = self.encoder(raw).squeeze(-1)
        return self.mu_head(h), self.log_var_head(h)

    @staticmethod
    def reparameterize(mu: torch.Tensor, log_var: torch.Tensor,
                       noise: torch.Tensor | None = None) -> torch.Tensor:
        std = torch.exp(0.5 * log_var)
        if noise is None:
            noise = torch.randn_like(std)
        return mu + std * noise

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.template_dim:
            raise DataError(
                f"latent batch must be (B, {self.cfg.template_dim}), got {tuple(z.shape)}"
            )
        h = self.decoder_input(z).unsqueeze(-1)
        return self.head(self.decoder(h))

    def forward(self, raw: torch.Tensor, noise: torch.Tensor | None = None):
        mu, log_var = self.encode(raw)
        z = self.reparameterize(mu, log_var, noise)
        return self.decode(z), mu, log_var

    def loss(self, raw: torch.Tensor, noise: torch.Tensor | None = None) -> dict:
        """{'recon': L1 reconstruction, 'kl': Gaussian KL}, both batch means."""
        recon_raw, mu, log_var = self.forward(raw, noise)
        return {
            "recon": l1_sequence_loss(recon_raw, raw),
            "kl": gaussian_kl(mu, log_var),
        }

    # ---- frozen-VAE API ----------------------------------------------------------

    def extract_templates(self, coords: torch.Tensor) -> torch.Tensor:
        """mu for a batch of absolute-coordinate sequences (B, F, K, 2); the
        VAE must be frozen (no sampling involved)."""
        if not self._frozen:
            raise UsageError("extract_templates requires a frozen VAE")
        with torch.no_grad():
            mu, _ = self.encode(self.coords_to_raw(coords))
        return mu

    def extract_template(self, seq: GestureSequence) -> np.ndarray:
        coords = torch.as_tensor(seq.coords[None], dtype=self._param_dtype())
        return self.extract_templates(coords)[0].cpu().numpy()

    def decode_template(self, template: np.ndarray, fps: float = 15.0) -> GestureSequence:
        values = np.asarray(template, dtype=np.float64).reshape(1, -1)
        z = torch.as_tensor(values, dtype=self._param_dtype())
        with torch.no_grad():
            raw = self.decode(z)
            coords = self.raw_to_coords(raw)[0].cpu().numpy()
        return GestureSequence(self.layout, fps, coords)

    def _param_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


def save_vae(vae: GestureVae, path) -> None:
    torch.save(
        {
            "version": VAE_CHECKPOINT_VERSION,
            "kind": "gesture_vae",
            "config": asdict(vae.cfg),
            "state": vae.state_dict(),
            "frozen": vae.frozen,
        },
        path,
    )


def load_vae(path, frozen: bool = True) -> GestureVae:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"{path}: cannot load VAE checkpoint ({exc})") from exc
    if payload.get("kind") != "gesture_vae":
        raise DataError(f"{path}: not a gesture VAE checkpoint")
    vae = GestureVae(VaeConfig(**payload["config"]))
    vae.load_state_dict(payload["state"])
    if frozen or payload.get("frozen"):
        vae.freeze()
    return vae
