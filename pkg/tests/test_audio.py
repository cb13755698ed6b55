import wave

import numpy as np
import pytest

from gestsynth.audio import (
    AudioClip,
    MelConfig,
    hz_to_mel,
    load_wav,
    mel_band_centers,
    mel_spectrogram,
    mel_to_hz,
    write_wav,
)
from gestsynth.errors import DataError


def _write_raw_wav(path, ints, rate=16000, channels=1, sampwidth=2):
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(channels)
        handle.setsampwidth(sampwidth)
        handle.setframerate(rate)
        handle.writeframes(np.asarray(ints).astype("<i2").tobytes())


# ---- WAV loading --------------------------------------------------------------


def test_load_zero_wav(tmp_path):
    path = tmp_path / "z.wav"
    _write_raw_wav(path, np.zeros(16000, dtype=np.int16))
    clip = load_wav(path)
    assert clip.sample_rate == 16000
    assert clip.samples.shape == (16000,)
    assert np.all(clip.samples == 0.0)


def test_load_full_scale_square_wave(tmp_path):
    path = tmp_path / "sq.wav"
    _write_raw_wav(path, np.full(1000, 32767, dtype=np.int16))
    clip = load_wav(path)
    assert np.all(np.abs(clip.samples - 1.0) <= 1.0 / 32768)


def test_load_stereo_rejected(tmp_path):
    path = tmp_path / "st.wav"
    frames = np.zeros(200, dtype=np.int16)  # interleaved 100 stereo frames
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(2)
        handle.setsampwidth(2)
        handle.setframerate(16000)
        handle.writeframes(frames.tobytes())
    with pytest.raises(DataError, match="mono required"):
        load_wav(path)


def test_load_8bit_rejected(tmp_path):
    path = tmp_path / "b8.wav"
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(1)
        handle.setframerate(16000)
        handle.writeframes(bytes(100))
    with pytest.raises(DataError, match="16-bit PCM required"):
        load_wav(path)


def test_load_garbage_rejected(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a riff file at all")
    with pytest.raises(DataError, match="unsupported or corrupt"):
        load_wav(path)


def test_wav_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.uniform(-1, 1, 4000)
    path = tmp_path / "r.wav"
    write_wav(path, samples, 16000)
    back = load_wav(path)
    # write scales by 32767 and rounds, read divides by 32768
    assert np.abs(back.samples - samples).max() <= 1.5 / 32768


# ---- mel spectrogram -----------------------------------------------------------


def _tone_clip(freq, seconds=64 / 15, rate=16000):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioClip(0.5 * np.sin(2 * np.pi * freq * t), rate)


def test_silence_gives_floor():
    cfg = MelConfig()
    clip = AudioClip(np.zeros(int(16000 * 64 / 15)), 16000)
    mel = mel_spectrogram(clip, cfg)
    np.testing.assert_allclose(mel.values, np.log(cfg.floor))


def test_alignment_64_pose_frames():
    cfg = MelConfig()
    clip = _tone_clip(440.0)
    mel = mel_spectrogram(clip, cfg)
    assert mel.pose_frames == 64
    assert mel.values.shape == (64, 256)


def test_tone_at_band_center_dominates():
    cfg = MelConfig()
    band = 20
    center = mel_band_centers(cfg)[band]
    mel = mel_spectrogram(_tone_clip(center), cfg)
    # independent oracle: evaluate every triangular filter directly at the
    # tone frequency; the chosen band must be the best responder
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.mel_bins + 2))
    response = np.array([
        max(0.0, min((center - edges[m]) / (edges[m + 1] - edges[m]),
                     (edges[m + 2] - center) / (edges[m + 2] - edges[m + 1])))
        for m in range(cfg.mel_bins)
    ])
    assert int(np.argmax(response)) == band
    far = np.abs(np.arange(cfg.mel_bins) - band) >= 2
    assert (mel.values[band][None, :] > mel.values[far]).all()


def test_output_shape_and_doubling():
    cfg = MelConfig()
    n = int(round(32 * cfg.sample_rate / cfg.fps))  # exactly 32 pose frames
    rng = np.random.default_rng(1)
    clip = AudioClip(rng.uniform(-0.5, 0.5, n), 16000)
    mel = mel_spectrogram(clip, cfg)
    assert mel.values.shape == (cfg.mel_bins, 32 * cfg.frames_per_pose)
    double = AudioClip(np.concatenate([clip.samples, clip.samples]), 16000)
    mel2 = mel_spectrogram(double, cfg)
    assert mel2.values.shape[1] == 2 * mel.values.shape[1]


def test_monotonic_energy():
    cfg = MelConfig()
    rng = np.random.default_rng(2)
    samples = rng.uniform(-0.3, 0.3, int(16000 * 64 / 15))
    samples[: 2000] = 0.0  # keep a stretch at the floor
    base = mel_spectrogram(AudioClip(samples, 16000), cfg).values
    louder = mel_spectrogram(AudioClip(samples * 2.5, 16000), cfg).values
    floor = np.log(cfg.floor)
    at_floor = np.isclose(base, floor, atol=1e-12)
    assert (louder[~at_floor] > base[~at_floor]).all()
    assert np.allclose(louder[at_floor], floor)


def test_determinism():
    cfg = MelConfig()
    rng = np.random.default_rng(3)
    samples = rng.uniform(-0.5, 0.5, int(16000 * 64 / 15))
    a = mel_spectrogram(AudioClip(samples, 16000), cfg).values
    b = mel_spectrogram(AudioClip(samples.copy(), 16000), cfg).values
    assert np.array_equal(a, b)


def test_too_short_clip_rejected():
    cfg = MelConfig()
    with pytest.raises(DataError, match="too short"):
        mel_spectrogram(AudioClip(np.zeros(100), 16000), cfg)


def test_sample_rate_mismatch_rejected():
    cfg = MelConfig()
    with pytest.raises(DataError, match="sample rate"):
        mel_spectrogram(AudioClip(np.zeros(44100), 44100), cfg)
