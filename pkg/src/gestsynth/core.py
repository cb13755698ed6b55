"""Skeleton layouts, gesture sequences, hierarchical offsets, and gesture file I/O.

A gesture sequence is an F x K x 2 array of 2D keypoint coordinates in
normalized image units at a fixed frame rate. Layouts are data-driven and
named: the keypoint count and the index map for face/arm/hand groups depend
on the pose estimator that produced the data, so every sequence carries a
reference to its layout.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

GROUP_NAMES = ("face", "left_arm", "right_arm", "left_hand", "right_hand", "body")

#: Frames with any keypoint outside [-margin, 1+margin] are considered abnormal.
DEFAULT_BOX_MARGIN = 0.25


@dataclass(frozen=True)
class SkeletonLayout:
    """Named index map for the keypoints of one skeleton convention.

    ``groups`` partitions [0, K) into face/arm/hand/body index lists. Each
    group has a root keypoint used by the hierarchical representation; roots
    may be shared (e.g. the neck roots the body and both arms). The body
    group's root is the global root.
    """

    name: str
    num_keypoints: int
    groups: dict[str, tuple[int, ...]]
    lip_upper_center: int
    lip_lower_center: int
    root_of_group: dict[str, int]
    shoulder_left: int
    shoulder_right: int

    def __post_init__(self):
        k = self.num_keypoints
        seen: set[int] = set()
        for group in GROUP_NAMES:
            if group not in self.groups:
                raise DataError(f"layout {self.name}: missing group '{group}'")
            indices = self.groups[group]
            for i in indices:
                if not 0 <= i < k:
                    raise DataError(f"layout {self.name}: index {i} out of range in group '{group}'")
                if i in seen:
                    raise DataError(f"layout {self.name}: index {i} appears in more than one group")
                seen.add(i)
            if group not in self.root_of_group:
                raise DataError(f"layout {self.name}: no root for group '{group}'")
            root = self.root_of_group[group]
            if not 0 <= root < k:
                raise DataError(f"layout {self.name}: root {root} of group '{group}' out of range")
        if len(seen) != k:
            raise DataError(f"layout {self.name}: groups cover {len(seen)} of {k} keypoints")
        face = set(self.groups["face"])
        if self.lip_upper_center == self.lip_lower_center:
            raise DataError(f"layout {self.name}: lip centers must be distinct")
        if self.lip_upper_center not in face or self.lip_lower_center not in face:
            raise DataError(f"layout {self.name}: lip centers must belong to the face group")
        for idx in (self.shoulder_left, self.shoulder_right):
            if not 0 <= idx < k:
                raise DataError(f"layout {self.name}: shoulder index {idx} out of range")

    @property
    def global_root(self) -> int:
        return self.root_of_group["body"]

    def group_of(self, index: int) -> str:
        for group, indices in self.groups.items():
            if index in indices:
                return group
        raise KeyError(index)

    def hierarchy_parents(self) -> np.ndarray:
        """Parent index per keypoint: group root for members, global root for
        group roots, -1 for the global root itself."""
        parents = np.empty(self.num_keypoints, dtype=np.int64)
        roots = set(self.root_of_group.values())
        for group, indices in self.groups.items():
            for i in indices:
                parents[i] = self.root_of_group[group]
        for r in roots:
            parents[r] = self.global_root
        parents[self.global_root] = -1
        return parents

    def hierarchy_edges(self) -> list[tuple[int, int]]:
        parents = self.hierarchy_parents()
        return [(int(p), i) for i, p in enumerate(parents) if p >= 0]

    def offset_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """(to_offsets, to_absolute) K x K matrices for the hierarchical
        representation: offsets = to_offsets @ coords along the keypoint axis,
        and to_absolute is its exact inverse (I + P + P^2 + ... for the
        nilpotent parent matrix P)."""
        k = self.num_keypoints
        parents = self.hierarchy_parents()
        parent_mat = np.zeros((k, k))
        for i, p in enumerate(parents):
            if p >= 0:
                parent_mat[i, p] = 1.0
        to_offsets = np.eye(k) - parent_mat
        ancestors = np.zeros((k, k))
        power = parent_mat.copy()
        while power.any():
            ancestors += power
            power = power @ parent_mat
        to_absolute = np.eye(k) + ancestors
        return to_offsets, to_absolute


def _build_toy_layout() -> SkeletonLayout:
    # 0 neck, 1 nose, 2-3 cheeks, 4-5 lip centers, 6-8 right arm,
    # 9-11 left arm, 12 right hand, 13 left hand
    return SkeletonLayout(
        name="toy_v1",
        num_keypoints=14,
        groups={
            "body": (0, 1),
            "face": (2, 3, 4, 5),
            "right_arm": (6, 7, 8),
            "left_arm": (9, 10, 11),
            "right_hand": (12,),
            "left_hand": (13,),
        },
        lip_upper_center=4,
        lip_lower_center=5,
        root_of_group={
            "body": 0,
            "face": 1,
            "right_arm": 0,
            "left_arm": 0,
            "right_hand": 8,
            "left_hand": 11,
        },
        shoulder_left=9,
        shoulder_right=6,
    )


def _build_upper_body_layout() -> SkeletonLayout:
    # OpenPose-style indexing: 9 body joints (nose, neck, R arm, L arm,
    # mid-hip), 21 keypoints per hand, 70 face points. Lip centers are the
    # innermost upper/lower lip points of the 70-point face model (62/66).
    face_start = 51
    return SkeletonLayout(
        name="upper_body_v1",
        num_keypoints=121,
        groups={
            "body": (0, 1, 8),
            "right_arm": (2, 3, 4),
            "left_arm": (5, 6, 7),
            "left_hand": tuple(range(9, 30)),
            "right_hand": tuple(range(30, 51)),
            "face": tuple(range(face_start, 121)),
        },
        lip_upper_center=face_start + 62,
        lip_lower_center=face_start + 66,
        root_of_group={
            "body": 1,
            "face": 0,
            "right_arm": 1,
            "left_arm": 1,
            "left_hand": 7,
            "right_hand": 4,
        },
        shoulder_left=5,
        shoulder_right=2,
    )


_LAYOUTS: dict[str, SkeletonLayout] = {}
for _layout in (_build_toy_layout(), _build_upper_body_layout()):
    _LAYOUTS[_layout.name] = _layout


def get_layout(name: str) -> SkeletonLayout:
    try:
        return _LAYOUTS[name]
    except KeyError:
        known = ", ".join(sorted(_LAYOUTS))
        raise DataError(f"unknown skeleton layout '{name}' (known: {known})") from None


def register_layout(layout: SkeletonLayout) -> None:
    _LAYOUTS[layout.name] = layout


@dataclass
class GestureSequence:
    """F x K x 2 keypoint coordinates at a fixed frame rate."""

    layout: SkeletonLayout
    fps: float
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 2:
            raise DataError(f"gesture coords must be F x K x 2, got shape {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise DataError("gesture sequence needs at least one frame")
        if self.coords.shape[1] != self.layout.num_keypoints:
            raise DataError(
                f"gesture has {self.coords.shape[1]} keypoints, layout "
                f"'{self.layout.name}' defines {self.layout.num_keypoints}"
            )
        if not np.isfinite(self.coords).all():
            f, k, _ = np.argwhere(~np.isfinite(self.coords))[0]
            raise DataError(f"non-finite coordinate at frame {f}, keypoint {k}")
        if self.fps <= 0:
            raise DataError("fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.coords.shape[0]

    def copy_with(self, coords: np.ndarray) -> "GestureSequence":
        return GestureSequence(self.layout, self.fps, coords)


@dataclass
class ClipRecord:
    """One manifest entry: a gesture sequence paired with its speech audio."""

    clip_id: str
    gesture: GestureSequence
    audio_path: Path
    speaker_id: str


def shoulder_widths(seq: GestureSequence) -> np.ndarray:
    d = seq.coords[:, seq.layout.shoulder_left] - seq.coords[:, seq.layout.shoulder_right]
    return np.linalg.norm(d, axis=-1)


def normalize_skeleton(seq: GestureSequence, target_shoulder_width: float) -> GestureSequence:
    """Uniformly rescale a sequence about its mean neck position so that the
    mean shoulder width equals the target. Idempotent."""
    if target_shoulder_width <= 0:
        raise DataError("target shoulder width must be positive")
    mean_width = float(shoulder_widths(seq).mean())
    if mean_width <= 1e-12:
        raise DataError(
            f"degenerate skeleton: mean shoulder width {mean_width:.3g} "
            "(shoulders coincide; cannot rescale)"
        )
    scale = target_shoulder_width / mean_width
    center = seq.coords[:, seq.layout.global_root].mean(axis=0)
    coords = center + (seq.coords - center) * scale
    return seq.copy_with(coords)


def _apply_keypoint_matrix(matrix, coords):
    # coords: (..., K, 2); numpy array or torch tensor
    if isinstance(coords, np.ndarray):
        return np.einsum("ij,...jc->...ic", matrix, coords)
    import torch

    mat = torch.as_tensor(matrix, dtype=coords.dtype, device=coords.device)
    return torch.einsum("ij,...jc->...ic", mat, coords)


def to_hierarchical(seq: GestureSequence) -> np.ndarray:
    """Per-group-root offset representation: members relative to their group
    root, roots relative to the global root, the global root kept absolute."""
    to_off, _ = seq.layout.offset_matrices()
    return _apply_keypoint_matrix(to_off, seq.coords)


def from_hierarchical(layout: SkeletonLayout, offsets: np.ndarray, fps: float) -> GestureSequence:
    """Exact inverse of :func:`to_hierarchical`."""
    _, to_abs = layout.offset_matrices()
    return GestureSequence(layout, fps, _apply_keypoint_matrix(to_abs, np.asarray(offsets)))


def hierarchical_offsets_array(layout: SkeletonLayout, coords):
    """Array-level encoder used by models; accepts numpy or torch (..., K, 2)."""
    to_off, _ = layout.offset_matrices()
    return _apply_keypoint_matrix(to_off, coords)


def absolute_coords_array(layout: SkeletonLayout, offsets):
    """Array-level decoder used by models; accepts numpy or torch (..., K, 2)."""
    _, to_abs = layout.offset_matrices()
    return _apply_keypoint_matrix(to_abs, offsets)


def filter_frames(
    seq: GestureSequence,
    person_count,
    margin: float = DEFAULT_BOX_MARGIN,
) -> np.ndarray:
    """Boolean keep-mask over frames. A frame is dropped when it does not
    contain exactly one person or when any keypoint lies outside the
    normalized frame box extended by ``margin``."""
    counts = np.asarray(person_count)
    if counts.shape != (seq.num_frames,):
        raise DataError(
            f"person_count has length {counts.shape}, expected ({seq.num_frames},)"
        )
    single = counts == 1
    lo, hi = -margin, 1.0 + margin
    in_box = ((seq.coords >= lo) & (seq.coords <= hi)).all(axis=(1, 2))
    return single & in_box


GESTURE_FILE_VERSION = 1


def write_gesture_file(seq: GestureSequence, path) -> None:
    payload = {
        "version": GESTURE_FILE_VERSION,
        "layout": seq.layout.name,
        "fps": seq.fps,
        "coords": seq.coords.tolist(),
    }
    atomic_write_text(path, json.dumps(payload))


def read_gesture_file(path) -> GestureSequence:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for key in ("version", "layout", "fps", "coords"):
        if key not in payload:
            raise DataError(f"{path}: missing field '{key}'")
    if payload["version"] != GESTURE_FILE_VERSION:
        raise DataError(f"{path}: unsupported gesture file version {payload['version']}")
    layout = get_layout(payload["layout"])
    coords = np.asarray(payload["coords"], dtype=np.float64)
    if coords.ndim != 3 or coords.shape[1:] != (layout.num_keypoints, 2):
        raise DataError(
            f"{path}: coords shape {coords.shape} does not match layout "
            f"'{layout.name}' (expected F x {layout.num_keypoints} x 2)"
        )
    if not np.isfinite(coords).all():
        f, k, _ = np.argwhere(~np.isfinite(coords))[0]
        raise DataError(f"{path}: non-finite value at coords[{f}][{k}]")
    return GestureSequence(layout, float(payload["fps"]), coords)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_manifest(entries: list[dict], path) -> None:
    """Manifest: JSON lines, one clip reference per line with paths relative
    to the manifest's directory."""
    lines = [json.dumps(e) for e in entries]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    entries = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        for key in ("clip_id", "gesture", "audio"):
            if key not in entry:
                raise DataError(f"{path}:{lineno}: missing field '{key}'")
        if entry["clip_id"] in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate clip_id '{entry['clip_id']}'")
        seen_ids.add(entry["clip_id"])
        entry["gesture"] = str((path.parent / entry["gesture"]).resolve())
        entry["audio"] = str((path.parent / entry["audio"]).resolve())
        entries.append(entry)
    return entries


def load_clip(entry: dict) -> ClipRecord:
    gesture = read_gesture_file(entry["gesture"])
    return ClipRecord(
        clip_id=entry["clip_id"],
        gesture=gesture,
        audio_path=Path(entry["audio"]),
        speaker_id=entry.get("speaker_id", ""),
    )
