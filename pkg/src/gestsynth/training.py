"""Training loops for the generator variants and the gesture VAE, plus
checkpointing, inference, and evaluation over a manifest.

Variants: ``plain`` (audio only), ``bp_clip``/``bp_frame`` (back-propagated
template table, clip- or frame-wise, with the KL batch regularizer), and
``vae_template`` (templates are the frozen VAE's means; inputs, not
parameters). Runs are deterministic given the seed: the data order per epoch
comes from a seeded generator and all model randomness goes through torch's
global CPU generator.
"""
from __future__ import annotations

import copy
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import AudioClip, MelConfig, load_wav, mel_spectrogram
from .core import GestureSequence, atomic_write_text, get_layout
from .data import DatasetArrays, load_dataset
from .errors import DataError, NumericError, UsageError
from .generator import GeneratorConfig, GestureGenerator
from .losses import l1_sequence_loss
from .metrics import MetricsReport, ftd, l2_distance, lip_sync_error
from .templates import TemplateBank, init_bank, kl_regularizer, load_template_json
from .vae import GestureVae, VaeConfig, load_vae, save_vae

CHECKPOINT_VERSION = 1
VARIANTS = ("plain", "bp_clip", "bp_frame", "vae_template")
_VARIANT_TEMPLATE_MODE = {
    "plain": "none",
    "bp_clip": "clip",
    "bp_frame": "frame",
    "vae_template": "clip",
}


def regression_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """L1 regression loss: mean over frames of the L1 norm of the 2K-dim
    frame difference, averaged over the batch."""
    return l1_sequence_loss(pred, target)


def total_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    templates: torch.Tensor | None,
    variant: str,
    lambda_reg: float = 1.0,
    lambda_kl: float = 1.0,
) -> dict:
    """Variant-dependent loss composition; returns the total plus components.

    plain / vae_template: lambda_reg * L_reg (templates, when present, are
    inputs rather than parameters). bp_clip / bp_frame: lambda_reg * L_reg +
    lambda_kl * KL over the batch's templates.
    """
    reg = regression_loss(pred, target)
    if variant in ("bp_clip", "bp_frame"):
        if templates is None:
            raise UsageError(f"variant '{variant}' needs the batch's templates")
        kl = kl_regularizer(templates)
    else:
        kl = torch.zeros((), dtype=reg.dtype)
    total = lambda_reg * reg + lambda_kl * kl
    return {"total": total, "reg": reg, "kl": kl}


@dataclass
class TrainConfig:
    variant: str
    manifest: str
    out_dir: str
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    lr_drops: dict = field(default_factory=lambda: {90: 0.1, 98: 0.1})
    lambda_reg: float = 1.0
    lambda_kl: float = 1.0
    seed: int = 0
    vae_checkpoint: str | None = None
    grad_clip: float = 10.0
    save_every: int = 0
    generator: dict = field(default_factory=dict)
    mel: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.lr <= 0:
            raise UsageError("learning rate must be positive")
        if self.lambda_reg < 0 or self.lambda_kl < 0:
            raise UsageError("loss weights must be non-negative")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        self.lr_drops = {int(k): float(v) for k, v in self.lr_drops.items()}
        if self.variant == "vae_template" and not self.vae_checkpoint:
            raise UsageError("variant 'vae_template' requires vae_checkpoint")

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise UsageError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_drops"] = {str(k): v for k, v in self.lr_drops.items()}
        return d

    def mel_config(self) -> MelConfig:
        return MelConfig(**self.mel)


def learning_rate_at(cfg_lr: float, lr_drops: dict, epoch: int) -> float:
    """LR for a 1-based epoch: every configured drop at an epoch <= the
    current one multiplies the base rate by its factor."""
    lr = cfg_lr
    for drop_epoch, factor in sorted(lr_drops.items()):
        if epoch >= drop_epoch:
            lr *= factor
    return lr


def _epoch_order(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    size = min(batch_size, n)
    batches = [perm[i : i + size] for i in range(0, n - size + 1, size)]
    return batches


def _checkpoint_payload(cfg: TrainConfig, gen_cfg: GeneratorConfig, data: DatasetArrays,
                        model, bank, template_table, optimizer, epoch, shuffle_rng) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "kind": "generator_training",
        "train_config": cfg.to_dict(),
        "generator_config": asdict(gen_cfg),
        "layout": data.layout.name,
        "fps": data.fps,
        "clip_frames": int(data.gestures.shape[1]),
        "model_state": {k: v.clone() for k, v in model.state_dict().items()},
        "bank": bank.state() if bank is not None else None,
        "template_table": template_table,
        "optimizer_state": copy.deepcopy(optimizer.state_dict()),
        "epoch": epoch,
        "rng": {
            "torch": torch.get_rng_state(),
            "shuffle": shuffle_rng.bit_generator.state,
        },
    }


def _save_checkpoint(path, cfg, gen_cfg, data, model, bank, template_table,
                     optimizer, epoch, shuffle_rng) -> None:
    torch.save(
        _checkpoint_payload(cfg, gen_cfg, data, model, bank, template_table,
                            optimizer, epoch, shuffle_rng),
        path,
    )


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    log: list[dict]


def train(cfg: TrainConfig) -> TrainResult:
    """Train one generator variant; writes the loss log (JSON lines) and the
    final checkpoint under cfg.out_dir."""
    torch.manual_seed(cfg.seed)
    mel_cfg = cfg.mel_config()
    data = load_dataset(cfg.manifest, mel_cfg)
    n_clips = len(data.clip_ids)
    frames = data.gestures.shape[1]
    gen_cfg = GeneratorConfig(
        keypoints=data.layout.num_keypoints,
        template_mode=_VARIANT_TEMPLATE_MODE[cfg.variant],
        mel_bins=mel_cfg.mel_bins,
        frames_per_pose=mel_cfg.frames_per_pose,
        **cfg.generator,
    )
    model = GestureGenerator(gen_cfg, data.layout)

    bank: TemplateBank | None = None
    template_table = None
    fixed_templates: torch.Tensor | None = None
    if cfg.variant == "bp_clip":
        bank = init_bank(data.clip_ids, gen_cfg.template_dim)
    elif cfg.variant == "bp_frame":
        bank = init_bank(data.clip_ids, gen_cfg.template_dim, mode="frame", frames=frames)
    elif cfg.variant == "vae_template":
        vae = load_vae(cfg.vae_checkpoint)
        if vae.cfg.template_dim != gen_cfg.template_dim:
            raise UsageError(
                f"VAE template_dim {vae.cfg.template_dim} != generator {gen_cfg.template_dim}"
            )
        coords = torch.as_tensor(data.gestures, dtype=torch.float32)
        fixed_templates = vae.extract_templates(coords)
        template_table = {
            "clip_ids": list(data.clip_ids),
            "values": fixed_templates.clone(),
        }

    mels = torch.as_tensor(data.mels, dtype=torch.float32)
    targets = model.coords_to_raw(torch.as_tensor(data.gestures, dtype=torch.float32))

    params = list(model.parameters())
    if bank is not None:
        params += list(bank.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "checkpoint.pt"
    log: list[dict] = []
    last_good: dict | None = None

    with open(log_path, "w") as log_file:
        for epoch in range(1, cfg.epochs + 1):
            lr_now = learning_rate_at(cfg.lr, cfg.lr_drops, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr_now
            reg_sum = kl_sum = 0.0
            batches = _epoch_order(shuffle_rng, n_clips, cfg.batch_size)
            if not batches:
                raise DataError("no full batch available; reduce batch_size")
            for batch_idx in batches:
                idx = batch_idx.tolist()
                if bank is not None:
                    templates = bank.lookup([data.clip_ids[i] for i in idx])
                elif fixed_templates is not None:
                    templates = fixed_templates[idx]
                else:
                    templates = None
                template_arg = None
                if gen_cfg.template_mode == "clip":
                    template_arg = templates
                elif gen_cfg.template_mode == "frame":
                    template_arg = templates.permute(0, 2, 1)  # (B, F, C) -> (B, C, F)
                pred = model(mels[idx], template_arg)
                losses = total_loss(
                    pred, targets[idx], templates, cfg.variant, cfg.lambda_reg, cfg.lambda_kl
                )
                if not torch.isfinite(losses["total"]):
                    if last_good is not None:
                        torch.save(last_good, ckpt_path)
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} "
                        f"(reg={float(losses['reg'].detach())}, kl={float(losses['kl'].detach())}); "
                        f"last good checkpoint {'saved' if last_good else 'unavailable'}"
                    )
                optimizer.zero_grad()
                losses["total"].backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                optimizer.step()
                reg_sum += float(losses["reg"].detach())
                kl_sum += float(losses["kl"].detach())
            entry = {
                "epoch": epoch,
                "l_reg": reg_sum / len(batches),
                "l_kl": kl_sum / len(batches),
                "lr": lr_now,
            }
            log.append(entry)
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
            last_good = _checkpoint_payload(cfg, gen_cfg, data, model, bank,
                                            template_table, optimizer, epoch, shuffle_rng)
            if cfg.save_every and epoch % cfg.save_every == 0 and epoch < cfg.epochs:
                torch.save(last_good, out_dir / f"checkpoint_epoch{epoch:04d}.pt")

    if bank is not None:
        bank.freeze()
    _save_checkpoint(ckpt_path, cfg, gen_cfg, data, model, bank, template_table,
                     optimizer, cfg.epochs, shuffle_rng)
    return TrainResult(str(ckpt_path), str(log_path), log)


@dataclass
class LoadedGenerator:
    model: GestureGenerator
    gen_cfg: GeneratorConfig
    train_config: dict
    mel_cfg: MelConfig
    layout_name: str
    fps: float
    clip_frames: int
    variant: str
    bank: TemplateBank | None
    template_table: dict | None
    epoch: int

    def stored_templates(self) -> tuple[list[str], np.ndarray]:
        """(clip_ids, vectors) available for test-time sampling."""
        if self.bank is not None:
            return list(self.bank.clip_ids), self.bank.table.detach().cpu().numpy()
        if self.template_table is not None:
            return (
                list(self.template_table["clip_ids"]),
                self.template_table["values"].cpu().numpy(),
            )
        raise UsageError(f"variant '{self.variant}' stores no templates")


def load_generator_checkpoint(path) -> LoadedGenerator:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"{path}: cannot load checkpoint ({exc})") from exc
    if payload.get("kind") != "generator_training":
        raise DataError(f"{path}: not a generator checkpoint")
    gen_cfg = GeneratorConfig(**payload["generator_config"])
    layout = get_layout(payload["layout"])
    model = GestureGenerator(gen_cfg, layout)
    model.load_state_dict(payload["model_state"])
    model.eval()
    bank = TemplateBank.from_state(payload["bank"]) if payload["bank"] is not None else None
    return LoadedGenerator(
        model=model,
        gen_cfg=gen_cfg,
        train_config=payload["train_config"],
        mel_cfg=MelConfig(**payload["train_config"]["mel"]),
        layout_name=payload["layout"],
        fps=payload["fps"],
        clip_frames=payload["clip_frames"],
        variant=payload["train_config"]["variant"],
        bank=bank,
        template_table=payload["template_table"],
        epoch=payload["epoch"],
    )


def resolve_template(loaded: LoadedGenerator, template_spec) -> np.ndarray | None:
    """Template spec: 'zero', 'sample:SEED', 'id:CLIP', 'file:PATH', or an
    already-resolved vector. Returns None for the template-free variant."""
    if loaded.gen_cfg.template_mode == "none":
        if template_spec not in (None, "zero"):
            warnings.warn("variant 'plain' takes no template; ignoring template spec")
        return None
    dim = loaded.gen_cfg.template_dim
    if isinstance(template_spec, np.ndarray):
        return template_spec
    if template_spec is None or template_spec == "zero":
        return np.zeros(dim)
    if template_spec.startswith("sample:"):
        seed = int(template_spec.split(":", 1)[1])
        ids, vectors = loaded.stored_templates()
        rng = np.random.default_rng(seed)
        return vectors[int(rng.integers(len(ids)))]
    if template_spec.startswith("id:"):
        clip_id = template_spec.split(":", 1)[1]
        ids, vectors = loaded.stored_templates()
        try:
            return vectors[ids.index(clip_id)]
        except ValueError:
            raise DataError(f"unknown template id '{clip_id}'") from None
    if template_spec.startswith("file:"):
        return load_template_json(template_spec.split(":", 1)[1])
    raise UsageError(f"bad template spec '{template_spec}'")


def _template_tensor(loaded: LoadedGenerator, vector: np.ndarray | None, frames: int):
    if vector is None:
        return None
    cfg = loaded.gen_cfg
    values = np.asarray(vector, dtype=np.float64)
    if cfg.template_mode == "clip":
        if values.shape != (cfg.template_dim,):
            raise DataError(f"template must have {cfg.template_dim} dims, got {values.shape}")
        return torch.as_tensor(values[None], dtype=torch.float32)
    # frame mode: stored arrays are (F_train, C); single vectors are tiled
    if values.ndim == 1:
        values = np.tile(values, (frames, 1))
    if values.shape[1] != cfg.template_dim:
        raise DataError(f"frame template needs {cfg.template_dim} channels, got {values.shape}")
    if values.shape[0] < frames:
        pad = np.repeat(values[-1:], frames - values.shape[0], axis=0)
        values = np.concatenate([values, pad])
    values = values[:frames]
    return torch.as_tensor(values.T[None], dtype=torch.float32)  # (1, C, F)


def infer(
    loaded: LoadedGenerator,
    clip: AudioClip,
    template_spec="zero",
    windowed: bool = False,
) -> GestureSequence:
    """Generate a gesture sequence for a piece of audio; deterministic per
    (checkpoint, audio, resolved template)."""
    mel = mel_spectrogram(clip, loaded.mel_cfg)
    vector = resolve_template(loaded, template_spec)
    layout = get_layout(loaded.layout_name)
    model = loaded.model
    model.eval()
    frames = mel.pose_frames
    mel_tensor = torch.as_tensor(mel.values[None], dtype=torch.float32)
    with torch.no_grad():
        if not windowed or frames <= loaded.clip_frames:
            template = _template_tensor(loaded, vector, frames)
            coords = model.raw_to_coords(model(mel_tensor, template))[0].numpy()
        else:
            coords = _windowed_coords(loaded, mel_tensor, vector, frames)
    return GestureSequence(layout, loaded.fps, coords)


def _windowed_coords(loaded, mel_tensor, vector, frames, crossfade: int = 8):
    """64-frame windows with a linear crossfade on the overlap."""
    window = loaded.clip_frames
    r = loaded.mel_cfg.frames_per_pose
    hop = window - crossfade
    model = loaded.model
    acc = np.zeros((frames, loaded.gen_cfg.keypoints, 2))
    weight = np.zeros(frames)
    start = 0
    while True:
        start = min(start, frames - window)
        sl = slice(start, start + window)
        template = _template_tensor(loaded, vector, window)
        piece = model.raw_to_coords(
            model(mel_tensor[:, :, start * r : (start + window) * r], template)
        )[0].numpy()
        taper = np.ones(window)
        if start > 0:
            taper[:crossfade] = np.linspace(0.0, 1.0, crossfade, endpoint=False)
        acc[sl] += piece * taper[:, None, None]
        weight[sl] += taper
        if start + window >= frames:
            break
        start += hop
    return acc / weight[:, None, None]


def evaluate(
    ckpt_path,
    manifest_path,
    vae_ckpt_path,
    seed: int = 0,
    oracle: bool = False,
) -> MetricsReport:
    """MetricsReport over a manifest: per-clip L2 and lip-sync error averaged
    across clips, FTD between the generated and ground-truth sets. Templates
    are sampled per clip from the trained ones, deterministically in
    (seed, clip index)."""
    loaded = load_generator_checkpoint(ckpt_path)
    vae = load_vae(vae_ckpt_path)
    mel_cfg = loaded.mel_cfg
    data = load_dataset(manifest_path, mel_cfg)
    layout = data.layout
    if len(data.clip_ids) < 2:
        raise DataError("evaluation needs at least 2 clips for FTD")
    preds, gts = [], []
    model = loaded.model
    model.eval()
    for i, cid in enumerate(data.clip_ids):
        gt = GestureSequence(layout, data.fps, data.gestures[i])
        if oracle:
            pred = gt
        else:
            if loaded.gen_cfg.template_mode == "none":
                vector = None
            else:
                ids, vectors = loaded.stored_templates()
                rng = np.random.default_rng([seed, i])
                vector = vectors[int(rng.integers(len(ids)))]
            frames = data.gestures.shape[1]
            template = _template_tensor(loaded, vector, frames)
            mel_tensor = torch.as_tensor(data.mels[i][None], dtype=torch.float32)
            with torch.no_grad():
                coords = model.raw_to_coords(model(mel_tensor, template))[0].numpy()
            pred = GestureSequence(layout, data.fps, coords)
        preds.append(pred)
        gts.append(gt)
    l2 = float(np.mean([l2_distance(p, g) for p, g in zip(preds, gts)]))
    lip = float(np.mean([lip_sync_error(p, g) for p, g in zip(preds, gts)]))
    distance = ftd(preds, gts, vae)
    return MetricsReport(l2=l2, lip_error=lip, ftd=distance, n_samples=len(preds))


@dataclass
class VaeTrainConfig:
    manifest: str
    out_dir: str
    epochs: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    beta: float = 1.0
    kl_free_epochs: int = 200    # KL weight held at zero (reconstruction-first)
    kl_warmup_epochs: int = 200  # then ramped linearly up to beta
    lr_drops: dict = field(default_factory=dict)
    seed: int = 0
    grad_clip: float = 10.0
    template_dim: int = 32
    base_channels: int = 64
    max_channels: int = 128
    hierarchical: bool = False
    norm: str = "none"
    mel: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("learning rate must be positive")
        self.lr_drops = {int(k): float(v) for k, v in self.lr_drops.items()}

    @classmethod
    def from_dict(cls, payload: dict) -> "VaeTrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise UsageError(f"unknown VAE config keys: {sorted(unknown)}")
        return cls(**payload)


def train_vae(cfg: VaeTrainConfig) -> TrainResult:
    """Train the gesture VAE with L1 reconstruction + KL; the saved
    checkpoint is marked frozen for use as a template extractor."""
    torch.manual_seed(cfg.seed)
    mel_cfg = MelConfig(**cfg.mel)
    data = load_dataset(cfg.manifest, mel_cfg)
    frames = data.gestures.shape[1]
    vae_cfg = VaeConfig(
        keypoints=data.layout.num_keypoints,
        layout=data.layout.name,
        template_dim=cfg.template_dim,
        clip_frames=frames,
        base_channels=cfg.base_channels,
        max_channels=cfg.max_channels,
        hierarchical=cfg.hierarchical,
        norm=cfg.norm,
    )
    vae = GestureVae(vae_cfg)
    raw = vae.coords_to_raw(torch.as_tensor(data.gestures, dtype=torch.float32))
    optimizer = torch.optim.Adam(vae.parameters(), lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "vae_log.jsonl"
    ckpt_path = out_dir / "vae.pt"
    log = []
    with open(log_path, "w") as log_file:
        for epoch in range(1, cfg.epochs + 1):
            lr_now = learning_rate_at(cfg.lr, cfg.lr_drops, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr_now
            if epoch <= cfg.kl_free_epochs:
                beta_now = 0.0
            elif cfg.kl_warmup_epochs > 0:
                ramp = (epoch - cfg.kl_free_epochs) / cfg.kl_warmup_epochs
                beta_now = cfg.beta * min(1.0, ramp)
            else:
                beta_now = cfg.beta
            recon_sum = kl_sum = 0.0
            batches = _epoch_order(shuffle_rng, raw.shape[0], cfg.batch_size)
            if not batches:
                raise DataError("no full batch available; reduce batch_size")
            for batch_idx in batches:
                losses = vae.loss(raw[batch_idx.tolist()])
                loss = losses["recon"] + beta_now * losses["kl"]
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite VAE loss at epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(vae.parameters(), cfg.grad_clip)
                optimizer.step()
                recon_sum += float(losses["recon"].detach())
                kl_sum += float(losses["kl"].detach())
            entry = {
                "epoch": epoch,
                "recon": recon_sum / len(batches),
                "kl": kl_sum / len(batches),
                "lr": lr_now,
            }
            log.append(entry)
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
    vae.freeze()
    save_vae(vae, ckpt_path)
    return TrainResult(str(ckpt_path), str(log_path), log)


def write_report(report: MetricsReport, path) -> None:
    atomic_write_text(path, report.to_json())


def load_audio_for_inference(path) -> AudioClip:
    return load_wav(path)
