"""Dataset assembly: manifests to aligned (gesture, mel) arrays, plus the
ingest pipeline for pre-extracted keypoint files."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import MelConfig, load_wav, mel_spectrogram
from .core import (
    DEFAULT_BOX_MARGIN,
    GestureSequence,
    SkeletonLayout,
    filter_frames,
    get_layout,
    load_clip,
    normalize_skeleton,
    read_gesture_file,
    read_manifest,
    write_gesture_file,
    write_manifest,
)
from .errors import DataError


@dataclass
class DatasetArrays:
    clip_ids: list[str]
    layout: SkeletonLayout
    fps: float
    gestures: np.ndarray  # (N, F, K, 2)
    mels: np.ndarray      # (N, M, T)
    audio_paths: list[str]


def load_dataset(manifest_path, mel_cfg: MelConfig) -> DatasetArrays:
    """Load every clip of a manifest, computing mels aligned to each clip's
    pose-frame count. All clips must share layout, fps, and frame count."""
    entries = read_manifest(manifest_path)
    if not entries:
        raise DataError(f"{manifest_path}: empty manifest")
    clips = [load_clip(e) for e in entries]
    layout = clips[0].gesture.layout
    fps = clips[0].gesture.fps
    frames = clips[0].gesture.num_frames
    gestures, mels = [], []
    for clip in clips:
        g = clip.gesture
        if g.layout.name != layout.name:
            raise DataError(f"{clip.clip_id}: layout '{g.layout.name}' differs from '{layout.name}'")
        if g.fps != fps or g.num_frames != frames:
            raise DataError(
                f"{clip.clip_id}: fps/frames ({g.fps}, {g.num_frames}) differ from "
                f"({fps}, {frames}); training needs uniform clips"
            )
        mel = mel_spectrogram(load_wav(clip.audio_path), mel_cfg, pose_frames=frames)
        gestures.append(g.coords)
        mels.append(mel.values)
    return DatasetArrays(
        clip_ids=[c.clip_id for c in clips],
        layout=layout,
        fps=fps,
        gestures=np.stack(gestures),
        mels=np.stack(mels),
        audio_paths=[str(c.audio_path) for c in clips],
    )


def load_modes_sidecar(dataset_dir) -> dict[str, int]:
    path = Path(dataset_dir) / "modes.json"
    try:
        return {k: int(v) for k, v in json.loads(path.read_text()).items()}
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read modes sidecar ({exc})") from exc


def ingest_dataset(
    keypoints_dir,
    audio_dir,
    layout_name: str,
    out_dir,
    target_shoulder_width: float = 1.0,
    box_margin: float = DEFAULT_BOX_MARGIN,
    speaker_id: str = "",
) -> dict:
    """Validate gesture files, drop abnormal frames, rescale skeletons, and
    write a cleaned dataset with a manifest.

    Person counts come from an optional ``<stem>.people.json`` sidecar (a
    per-frame list); without one, every frame counts as single-person.
    Clips whose frames are all filtered out are skipped.
    """
    keypoints_dir, audio_dir, out_dir = Path(keypoints_dir), Path(audio_dir), Path(out_dir)
    get_layout(layout_name)
    gesture_files = sorted(keypoints_dir.glob("*.json"))
    gesture_files = [p for p in gesture_files if not p.name.endswith(".people.json")]
    if not gesture_files:
        raise DataError(f"{keypoints_dir}: no gesture JSON files found")
    (out_dir / "gestures").mkdir(parents=True, exist_ok=True)
    entries = []
    skipped = []
    for path in gesture_files:
        seq = read_gesture_file(path)
        if seq.layout.name != layout_name:
            raise DataError(f"{path}: layout '{seq.layout.name}', expected '{layout_name}'")
        wav = audio_dir / (path.stem + ".wav")
        if not wav.exists():
            raise DataError(f"{path.stem}: no matching audio file {wav}")
        load_wav(wav)  # validates encoding up front
        people_path = keypoints_dir / (path.stem + ".people.json")
        if people_path.exists():
            person_count = json.loads(people_path.read_text())
        else:
            person_count = [1] * seq.num_frames
        mask = filter_frames(seq, person_count, margin=box_margin)
        if not mask.any():
            skipped.append(path.stem)
            continue
        kept = GestureSequence(seq.layout, seq.fps, seq.coords[mask])
        kept = normalize_skeleton(kept, target_shoulder_width)
        gesture_rel = f"gestures/{path.stem}.json"
        write_gesture_file(kept, out_dir / gesture_rel)
        entries.append(
            {
                "clip_id": path.stem,
                "gesture": gesture_rel,
                "audio": str(wav.resolve()),
                "speaker_id": speaker_id,
            }
        )
    if not entries:
        raise DataError("every clip was filtered out; nothing to ingest")
    manifest = out_dir / "manifest.jsonl"
    write_manifest(entries, manifest)
    return {
        "manifest": str(manifest),
        "clips": len(entries),
        "skipped": skipped,
    }
