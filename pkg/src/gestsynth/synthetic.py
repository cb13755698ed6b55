"""Synthetic one-to-many toy dataset.

Lip opening is an exact deterministic function of the audio envelope, while
the body pose depends on a per-clip hidden mode drawn from M well-separated
static poses. The same audio therefore admits several valid gesture
sequences, which is precisely the ambiguity template vectors are meant to
absorb; plain regression can only fit the mode average.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import write_wav
from .core import (
    GestureSequence,
    atomic_write_text,
    get_layout,
    write_gesture_file,
    write_manifest,
)
from .errors import DataError

LIP_GAIN = 0.1       # lip distance = LIP_GAIN * envelope, exactly
MOTION_GAIN = 0.05   # body sway amplitude per unit envelope
MODE_RADIUS = 0.42   # arm displacement radius between modes
HEAD_RADIUS = 0.12   # rigid head displacement between modes

_AUDIO_STREAM, _MODE_STREAM, _NOISE_STREAM = 0, 1, 2


@dataclass
class SynthConfig:
    n_clips: int = 200
    n_modes: int = 4
    clip_frames: int = 64
    fps: float = 15.0
    sample_rate: int = 16000
    noise_std: float = 0.01
    lip_noise_std: float = 0.0
    seed: int = 0
    layout_name: str = "toy_v1"
    speaker_id: str = "toy"
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n_modes < 2:
            raise DataError("need at least 2 modes for a one-to-many dataset")
        if self.n_clips < self.n_modes:
            raise DataError("n_clips must be >= n_modes")
        if self.clip_frames < 20:
            raise DataError("clip_frames too short for syllable placement")
        if self.layout_name != "toy_v1":
            raise DataError("the synthetic generator produces toy_v1 skeletons only")


@dataclass
class SynthClip:
    clip_id: str
    gesture: GestureSequence
    samples: np.ndarray
    envelope: np.ndarray
    mode: int


def canonical_pose() -> np.ndarray:
    """Rest pose for toy_v1 in normalized image units; lip centers coincide
    at rest so the lip opening starts at exactly zero."""
    pose = np.zeros((14, 2))
    pose[0] = (0.50, 0.35)   # neck
    pose[1] = (0.50, 0.22)   # nose
    pose[2] = (0.44, 0.20)   # left cheek
    pose[3] = (0.56, 0.20)   # right cheek
    pose[4] = (0.50, 0.27)   # upper lip center
    pose[5] = (0.50, 0.27)   # lower lip center
    pose[6] = (0.35, 0.38)   # right shoulder
    pose[7] = (0.30, 0.52)   # right elbow
    pose[8] = (0.27, 0.64)   # right wrist
    pose[9] = (0.65, 0.38)   # left shoulder
    pose[10] = (0.70, 0.52)  # left elbow
    pose[11] = (0.73, 0.64)  # left wrist
    pose[12] = (0.26, 0.68)  # right hand
    pose[13] = (0.74, 0.68)  # left hand
    return pose


_RIGHT_ARM = (7, 8, 12)  # elbow, wrist, hand
_LEFT_ARM = (10, 11, 13)
_HEAD = (1, 2, 3, 4, 5)  # nose + face; displaced rigidly


def base_pose(mode: int, n_modes: int) -> np.ndarray:
    """One of n_modes static poses, pairwise well separated (arms swung to
    mode-specific positions, head shifted rigidly)."""
    pose = canonical_pose()
    theta = 2.0 * np.pi * mode / n_modes + 0.4
    arm = MODE_RADIUS * np.array([np.cos(theta), 0.7 * np.sin(theta)])
    head = HEAD_RADIUS * np.array([np.cos(theta + 1.0), np.sin(theta + 1.0)])
    for weight, idx in ((0.9, 7), (1.0, 8), (1.0, 12)):
        pose[idx] += weight * arm
    mirrored = arm * np.array([-1.0, 1.0])
    for weight, idx in ((0.9, 10), (1.0, 11), (1.0, 13)):
        pose[idx] += weight * mirrored
    pose[list(_HEAD)] += head
    return pose


def motion_basis(mode: int, n_modes: int) -> np.ndarray:
    """Per-keypoint sway direction scaled by the envelope; identical rows for
    every head point keep the lip opening untouched."""
    basis = np.zeros((14, 2))
    theta = 2.0 * np.pi * mode / n_modes + 0.4
    tangent = np.array([-np.sin(theta), np.cos(theta)])
    for weight, idx in ((0.5, 7), (1.0, 8), (1.0, 12)):
        basis[idx] = weight * tangent
    mirrored = tangent * np.array([-1.0, 1.0])
    for weight, idx in ((0.5, 10), (1.0, 11), (1.0, 13)):
        basis[idx] = weight * mirrored
    basis[list(_HEAD)] = 0.3 * np.array([np.cos(theta + 2.0), np.sin(theta + 2.0)])
    return basis


def _syllable_envelope(rng: np.random.Generator, frames: int) -> np.ndarray:
    """Sum of non-overlapping smooth bumps; exactly zero between syllables."""
    env = np.zeros(frames)
    cursor = 0
    while True:
        gap = int(rng.integers(2, 9))
        length = int(rng.integers(5, 13))
        start = cursor + gap
        if start + length > frames:
            break
        amp = float(rng.uniform(0.5, 1.0))
        env[start : start + length] = amp * np.hanning(length)
        cursor = start + length
    return env


def _synth_audio(rng: np.random.Generator, env: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Each syllable becomes an amplitude-modulated sinusoid burst with its
    own carrier; bursts are summed."""
    frames = env.size
    n_samples = int(round(frames * cfg.sample_rate / cfg.fps))
    t = np.arange(n_samples) / cfg.sample_rate
    frame_pos = t * cfg.fps
    samples = np.zeros(n_samples)
    nonzero = env > 0
    if nonzero.any():
        # contiguous runs of nonzero envelope = the syllables
        edges = np.flatnonzero(np.diff(np.concatenate([[0], nonzero.astype(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            burst_env = np.zeros(frames)
            burst_env[start:stop] = env[start:stop]
            carrier = float(rng.uniform(180.0, 500.0))
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            per_sample = np.interp(frame_pos, np.arange(frames), burst_env)
            samples += per_sample * np.sin(2.0 * np.pi * carrier * t + phase)
    return 0.9 * samples


def synth_clip(cfg: SynthConfig, clip_index: int, mode: int | None = None) -> SynthClip:
    """Deterministic per (cfg.seed, clip_index); audio, mode and noise come
    from independent seeded streams so the mode can be overridden without
    changing the audio."""
    layout = get_layout(cfg.layout_name)
    rng_audio = np.random.default_rng([cfg.seed, clip_index, _AUDIO_STREAM])
    rng_mode = np.random.default_rng([cfg.seed, clip_index, _MODE_STREAM])
    rng_noise = np.random.default_rng([cfg.seed, clip_index, _NOISE_STREAM])
    if mode is None:
        mode = int(rng_mode.integers(cfg.n_modes))
    elif not 0 <= mode < cfg.n_modes:
        raise DataError(f"mode {mode} outside [0, {cfg.n_modes})")

    frames = cfg.clip_frames
    env = _syllable_envelope(rng_audio, frames)
    samples = _synth_audio(rng_audio, env, cfg)

    coords = np.broadcast_to(base_pose(mode, cfg.n_modes), (frames, 14, 2)).copy()
    coords += MOTION_GAIN * env[:, None, None] * motion_basis(mode, cfg.n_modes)
    noise_scale = np.full((14, 1), cfg.noise_std)
    noise_scale[[layout.lip_upper_center, layout.lip_lower_center]] = cfg.lip_noise_std
    coords += rng_noise.normal(size=(frames, 14, 2)) * noise_scale
    # lower lip drops by the lip opening; both lip rows already share the
    # same head displacement and (by default zero) noise
    coords[:, layout.lip_lower_center, 1] += LIP_GAIN * env

    gesture = GestureSequence(layout, cfg.fps, coords)
    return SynthClip(f"clip_{clip_index:04d}", gesture, samples, env, mode)


def synth_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write WAVs, gesture files, manifests (full/train/test) and the
    modes.json sidecar (evaluation only, never fed to models)."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "gestures").mkdir(parents=True, exist_ok=True)
    entries = []
    modes = {}
    for i in range(cfg.n_clips):
        clip = synth_clip(cfg, i)
        wav_rel = f"audio/{clip.clip_id}.wav"
        gesture_rel = f"gestures/{clip.clip_id}.json"
        write_wav(out_dir / wav_rel, clip.samples, cfg.sample_rate)
        write_gesture_file(clip.gesture, out_dir / gesture_rel)
        entries.append(
            {
                "clip_id": clip.clip_id,
                "gesture": gesture_rel,
                "audio": wav_rel,
                "speaker_id": cfg.speaker_id,
            }
        )
        modes[clip.clip_id] = clip.mode
    n_test = int(round(cfg.test_fraction * cfg.n_clips))
    paths = {"manifest": out_dir / "manifest.jsonl", "modes": out_dir / "modes.json"}
    write_manifest(entries, paths["manifest"])
    atomic_write_text(paths["modes"], json.dumps(modes))
    if n_test > 0:
        paths["train"] = out_dir / "train.jsonl"
        paths["test"] = out_dir / "test.jsonl"
        write_manifest(entries[: cfg.n_clips - n_test], paths["train"])
        write_manifest(entries[cfg.n_clips - n_test :], paths["test"])
    return {k: str(v) for k, v in paths.items()}
