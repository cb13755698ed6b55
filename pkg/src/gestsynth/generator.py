"""Template-conditioned gesture generator.

An audio encoder collapses the mel axis with 2D convolutions and downsamples
time to the pose-frame rate with strided 1D convolutions; the template vector
is tiled along time and concatenated; a UNet-style 1D convolutional network
(7-layer encoder, 6-layer decoder, skip connections) emits one 2K-channel
frame per pose frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import SkeletonLayout, absolute_coords_array, hierarchical_offsets_array
from .errors import DataError, UsageError

NORM_KINDS = ("batch", "instance", "transposed_instance")
TEMPLATE_MODES = ("none", "clip", "frame")


@dataclass
class GeneratorConfig:
    keypoints: int
    template_dim: int = 32
    audio_feature_dim: int = 256
    audio_hidden: int = 64
    unet_encoder_layers: int = 7
    unet_decoder_layers: int = 6
    base_channels: int = 64
    max_channels: int = 512
    norm_kind: str = "transposed_instance"
    hierarchical: bool = False
    template_mode: str = "clip"
    mel_bins: int = 64
    frames_per_pose: int = 4
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.norm_kind not in NORM_KINDS:
            raise UsageError(f"norm_kind must be one of {NORM_KINDS}, got '{self.norm_kind}'")
        if self.template_mode not in TEMPLATE_MODES:
            raise UsageError(f"template_mode must be one of {TEMPLATE_MODES}")
        if self.template_mode == "none":
            self.template_dim = 0
        elif self.template_dim < 1:
            raise UsageError("template_dim must be >= 1 unless template_mode is 'none'")
        if self.unet_decoder_layers != self.unet_encoder_layers - 1:
            raise UsageError("decoder must have exactly one layer fewer than the encoder")
        if self.mel_bins % 8 != 0:
            raise UsageError("mel_bins must be divisible by 8 for the frequency-collapse stack")
        r = self.frames_per_pose
        if r < 1 or (r & (r - 1)) != 0:
            raise UsageError("frames_per_pose must be a power of two")

    @property
    def downsample_period(self) -> int:
        """Temporal shift period (pose frames) the UNet is equivariant to."""
        return 2 ** (self.unet_encoder_layers - 1)


class TransposedInstanceNorm1d(nn.Module):
    """Normalizes each frame's channel vector to zero mean / unit variance
    (over channels, per batch element and frame), then applies a per-channel
    learned affine. Contrast: standard instance norm normalizes each channel
    over frames."""

    def __init__(self, channels: int, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.normalize(x)
        if self.affine:
            y = y * self.weight[None, :, None] + self.bias[None, :, None]
        return y


class TransposedInstanceNorm2d(nn.Module):
    """Per-frame variant for (B, C, M, T) maps: statistics over C and M for
    each (batch, time) pair, keeping the layer local in time."""

    def __init__(self, channels: int, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = x.var(dim=(1, 2), unbiased=False, keepdim=True)
        y = (x - mean) / torch.sqrt(var + self.eps)
        if self.affine:
            y = y * self.weight[None, :, None, None] + self.bias[None, :, None, None]
        return y


def make_norm1d(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm1d(channels)
    if kind == "instance":
        return nn.InstanceNorm1d(channels, affine=True)
    return TransposedInstanceNorm1d(channels)


def make_norm2d(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    return TransposedInstanceNorm2d(channels)


class AudioEncoder(nn.Module):
    """Mel spectrogram (B, M, T) -> audio feature (B, D, F) with T = r * F."""

    N_FREQ_STAGES = 3  # collapses the mel axis by 8x before flattening

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        act = nn.LeakyReLU(cfg.negative_slope)
        h = cfg.audio_hidden
        widths = [max(h // 2, 8), h, h]
        layers2d = []
        in_ch = 1
        for w in widths:
            layers2d += [
                nn.Conv2d(in_ch, w, kernel_size=3, stride=(2, 1), padding=1),
                make_norm2d(cfg.norm_kind, w),
                act,
            ]
            in_ch = w
        self.freq_stack = nn.Sequential(*layers2d)
        flat_ch = h * (cfg.mel_bins // 2 ** self.N_FREQ_STAGES)
        layers1d = []
        in_ch = flat_ch
        for _ in range(int(math.log2(cfg.frames_per_pose))):
            layers1d += [
                nn.Conv1d(in_ch, cfg.audio_feature_dim, kernel_size=3, stride=2, padding=1),
                make_norm1d(cfg.norm_kind, cfg.audio_feature_dim),
                act,
            ]
            in_ch = cfg.audio_feature_dim
        layers1d += [
            nn.Conv1d(in_ch, cfg.audio_feature_dim, kernel_size=3, stride=1, padding=1),
            make_norm1d(cfg.norm_kind, cfg.audio_feature_dim),
            act,
        ]
        self.temporal_stack = nn.Sequential(*layers1d)

    def receptive_radius_pose_frames(self) -> int:
        """Upper bound on how many pose frames away an input change can
        influence an output frame."""
        receptive = 1
        stride_prod = 1
        kernels = [3] * self.N_FREQ_STAGES
        strides = [1] * self.N_FREQ_STAGES
        n_down = int(math.log2(self.cfg.frames_per_pose))
        kernels += [3] * (n_down + 1)
        strides += [2] * n_down + [1]
        for k, s in zip(kernels, strides):
            receptive += (k - 1) * stride_prod
            stride_prod *= s
        return math.ceil((receptive // 2) / self.cfg.frames_per_pose)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.ndim != 3:
            raise DataError(f"expected mel batch (B, M, T), got shape {tuple(mel.shape)}")
        r = self.cfg.frames_per_pose
        if mel.shape[1] != self.cfg.mel_bins:
            raise DataError(f"mel has {mel.shape[1]} bins, configured {self.cfg.mel_bins}")
        if mel.shape[2] % r != 0:
            raise DataError(f"mel length {mel.shape[2]} not divisible by frames_per_pose {r}")
        x = self.freq_stack(mel.unsqueeze(1))
        b, c, m, t = x.shape
        x = x.reshape(b, c * m, t)
        return self.temporal_stack(x)


class GestureUNet(nn.Module):
    """1D UNet over the pose-frame axis: stride-2 downsampling, nearest
    upsampling, skip concatenation. Pads time to a multiple of the total
    downsampling factor and crops afterwards."""

    def __init__(self, cfg: GeneratorConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        act = nn.LeakyReLU(cfg.negative_slope)
        levels = cfg.unet_encoder_layers
        self.channels = [min(cfg.base_channels * 2 ** i, cfg.max_channels) for i in range(levels)]
        self.enc = nn.ModuleList()
        prev = in_channels
        for i, ch in enumerate(self.channels):
            stride = 1 if i == 0 else 2
            self.enc.append(
                nn.Sequential(
                    nn.Conv1d(prev, ch, kernel_size=3, stride=stride, padding=1),
                    make_norm1d(cfg.norm_kind, ch),
                    act,
                )
            )
            prev = ch
        self.dec = nn.ModuleList()
        for i in range(levels - 2, -1, -1):
            self.dec.append(
                nn.Sequential(
                    nn.Conv1d(self.channels[i + 1] + self.channels[i], self.channels[i],
                              kernel_size=3, stride=1, padding=1),
                    make_norm1d(cfg.norm_kind, self.channels[i]),
                    act,
                )
            )

    @property
    def period(self) -> int:
        return 2 ** (self.cfg.unet_encoder_layers - 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        frames = x.shape[2]
        period = self.period
        padded = (frames + period - 1) // period * period
        if padded != frames:
            x = F.pad(x, (0, padded - frames))
        skips = []
        for layer in self.enc:
            x = layer(x)
            skips.append(x)
        levels = len(self.channels)
        for j, layer in enumerate(self.dec):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = layer(torch.cat([x, skips[levels - 2 - j]], dim=1))
        return x[:, :, :frames]


class GestureGenerator(nn.Module):
    """Maps (mel batch, template batch) to raw gesture output (B, 2K, F).

    Channel layout of the raw output: [x_0, y_0, x_1, y_1, ...]. When
    ``cfg.hierarchical`` is set, the raw output lives in the hierarchical
    offset representation and ``raw_to_coords`` decodes it.
    """

    def __init__(self, cfg: GeneratorConfig, layout: SkeletonLayout):
        super().__init__()
        if layout.num_keypoints != cfg.keypoints:
            raise UsageError(
                f"config keypoints {cfg.keypoints} != layout '{layout.name}' ({layout.num_keypoints})"
            )
        self.cfg = cfg
        self.layout = layout
        self.audio_encoder = AudioEncoder(cfg)
        in_ch = cfg.audio_feature_dim + cfg.template_dim
        self.unet = GestureUNet(cfg, in_ch)
        self.head = nn.Conv1d(self.unet.channels[0], 2 * cfg.keypoints, kernel_size=1)

    def encode_audio(self, mel: torch.Tensor) -> torch.Tensor:
        return self.audio_encoder(mel)

    @staticmethod
    def tile_template(template: torch.Tensor, frames: int) -> torch.Tensor:
        """(B, C) -> (B, C, F): every column equals the template vector."""
        return template.unsqueeze(-1).expand(-1, -1, frames)

    def template_feature(self, template: torch.Tensor | None, frames: int) -> torch.Tensor | None:
        cfg = self.cfg
        if cfg.template_mode == "none":
            if template is not None:
                raise UsageError("template passed to a generator configured without templates")
            return None
        if template is None:
            raise UsageError(f"template_mode '{cfg.template_mode}' requires a template")
        if cfg.template_mode == "clip":
            if template.ndim != 2 or template.shape[1] != cfg.template_dim:
                raise DataError(
                    f"clip template must be (B, {cfg.template_dim}), got {tuple(template.shape)}"
                )
            return self.tile_template(template, frames)
        if template.ndim != 3 or template.shape[1] != cfg.template_dim or template.shape[2] != frames:
            raise DataError(
                f"frame template must be (B, {cfg.template_dim}, {frames}), got {tuple(template.shape)}"
            )
        return template

    def forward(self, mel: torch.Tensor, template: torch.Tensor | None = None) -> torch.Tensor:
        audio_feat = self.encode_audio(mel)
        frames = audio_feat.shape[2]
        template_feat = self.template_feature(template, frames)
        if template_feat is None:
            x = audio_feat
        else:
            if template_feat.shape[0] != audio_feat.shape[0]:
                raise DataError("audio and template batch sizes differ")
            x = torch.cat([audio_feat, template_feat], dim=1)
        return self.generate_from_features(x)

    def generate_from_features(self, features: torch.Tensor) -> torch.Tensor:
        expected = self.cfg.audio_feature_dim + self.cfg.template_dim
        if features.shape[1] != expected:
            raise DataError(f"feature channels {features.shape[1]} != configured {expected}")
        return self.head(self.unet(features))

    def raw_to_coords(self, raw: torch.Tensor) -> torch.Tensor:
        """(B, 2K, F) -> absolute coordinates (B, F, K, 2)."""
        b, ch, frames = raw.shape
        coords = raw.permute(0, 2, 1).reshape(b, frames, self.cfg.keypoints, 2)
        if self.cfg.hierarchical:
            coords = absolute_coords_array(self.layout, coords)
        return coords

    def coords_to_raw(self, coords: torch.Tensor) -> torch.Tensor:
        """Absolute coordinates (B, F, K, 2) -> training-target space (B, 2K, F)."""
        if self.cfg.hierarchical:
            coords = hierarchical_offsets_array(self.layout, coords)
        b, frames, k, _ = coords.shape
        return coords.reshape(b, frames, 2 * k).permute(0, 2, 1)
