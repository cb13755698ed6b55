"""WAV ingestion and pose-frame-aligned log-mel spectrograms.

Alignment is by construction: spectrogram column starts follow the exact
rational hop sample_rate / (fps * frames_per_pose), so a clip with F pose
frames always yields T = frames_per_pose * F columns and the generator's
time axis never needs resampling.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import atomic_write_bytes
from .errors import DataError


@dataclass
class AudioClip:
    samples: np.ndarray  # mono, float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("audio must be a non-empty 1-D sample array")
        if not np.isfinite(self.samples).all():
            raise DataError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM WAV file; samples are scaled to [-1, 1]."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: unsupported or corrupt WAV ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if channels != 1:
        raise DataError(f"{path}: mono required (file has {channels} channels)")
    if sampwidth != 2:
        raise DataError(f"{path}: 16-bit PCM required (sample width {sampwidth} bytes)")
    if len(raw) < n_frames * 2:
        raise DataError(f"{path}: truncated file ({len(raw)} bytes for {n_frames} frames)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    ints = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    import io

    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(ints.tobytes())
    atomic_write_bytes(path, buf.getvalue())


@dataclass
class MelConfig:
    sample_rate: int = 16000
    mel_bins: int = 64
    window: int = 400
    fft_size: int = 1024
    fmin: float = 0.0
    fmax: float = 8000.0
    fps: float = 15.0
    frames_per_pose: int = 4
    floor: float = 1e-10

    def __post_init__(self):
        if self.window > self.fft_size:
            raise DataError("mel window must not exceed fft_size")
        if self.frames_per_pose < 1:
            raise DataError("frames_per_pose must be >= 1")

    @property
    def hop(self) -> float:
        """Nominal hop in samples; fractional by design, column starts are
        rounded individually."""
        return self.sample_rate / (self.fps * self.frames_per_pose)


@dataclass
class MelSpectrogram:
    values: np.ndarray  # mel_bins x T log magnitudes
    mel_bins: int
    frames_per_pose_frame: int
    pose_frames: int

    def __post_init__(self):
        m, t = self.values.shape
        if m != self.mel_bins or t != self.frames_per_pose_frame * self.pose_frames:
            raise DataError(
                f"mel spectrogram shape {self.values.shape} inconsistent with "
                f"{self.mel_bins} bins and {self.frames_per_pose_frame} x {self.pose_frames} frames"
            )


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular mel filters sampled at the FFT bin frequencies."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    bins = np.fft.rfftfreq(cfg.fft_size, 1.0 / cfg.sample_rate)
    fb = np.zeros((cfg.mel_bins, bins.size))
    for m in range(cfg.mel_bins):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bins - lo) / max(center - lo, 1e-12)
        falling = (hi - bins) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def pose_frame_count(n_samples: int, sample_rate: int, fps: float) -> int:
    return int(round(n_samples * fps / sample_rate))


def mel_spectrogram(clip: AudioClip, cfg: MelConfig, pose_frames: int | None = None) -> MelSpectrogram:
    """log(mel_filterbank @ |STFT|^2 + floor) with exactly frames_per_pose
    columns per pose frame. Deterministic for fixed inputs."""
    if clip.sample_rate != cfg.sample_rate:
        raise DataError(
            f"audio sample rate {clip.sample_rate} != configured {cfg.sample_rate}"
        )
    if clip.samples.size < cfg.window:
        raise DataError(
            f"clip too short: {clip.samples.size} samples < one window ({cfg.window})"
        )
    if pose_frames is None:
        pose_frames = pose_frame_count(clip.samples.size, cfg.sample_rate, cfg.fps)
    if pose_frames < 1:
        raise DataError("clip shorter than one pose frame")
    t_cols = pose_frames * cfg.frames_per_pose
    starts = np.round(np.arange(t_cols) * cfg.hop).astype(np.int64)
    needed = int(starts[-1]) + cfg.window
    samples = clip.samples
    if needed > samples.size:
        samples = np.concatenate([samples, np.zeros(needed - samples.size)])
    window = np.hanning(cfg.window)
    frames = np.stack([samples[s : s + cfg.window] * window for s in starts])
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    mel = mel_filterbank(cfg) @ power.T
    values = np.log(mel + cfg.floor)
    return MelSpectrogram(values, cfg.mel_bins, cfg.frames_per_pose, pose_frames)
