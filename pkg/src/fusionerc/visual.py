"""Visual utterance features: weighted faces and scene context over 15 frames."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

N_FRAMES = 15


class VisualError(ValueError):
    pass


@dataclass(frozen=True)
class FaceObservation:
    feature: np.ndarray
    bbox_area: float
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.float64).reshape(-1))
        if not self.bbox_area > 0:
            raise VisualError(f"bounding-box area must be positive, got {self.bbox_area}")
        if not 0.0 <= self.confidence <= 1.0:
            raise VisualError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class Frame:
    scene_feature: np.ndarray
    faces: List[FaceObservation] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "scene_feature", np.asarray(self.scene_feature, dtype=np.float64).reshape(-1))


@dataclass(frozen=True)
class UtteranceFrames:
    frames: Sequence[Frame]

    def __post_init__(self):
        if len(self.frames) != N_FRAMES:
            raise VisualError(f"expected exactly {N_FRAMES} frames, got {len(self.frames)}")
        dims = {f.scene_feature.size for f in self.frames}
        dims |= {face.feature.size for f in self.frames for face in f.faces}
        if len(dims) != 1:
            raise VisualError(f"frame features disagree in dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.frames[0].scene_feature.size

    def to_dict(self) -> dict:
        return {"frames": [
            {"scene": f.scene_feature.tolist(),
             "faces": [{"feature": face.feature.tolist(), "area": face.bbox_area,
                        "confidence": face.confidence} for face in f.faces]}
            for f in self.frames]}

    @classmethod
    def from_dict(cls, payload: dict) -> "UtteranceFrames":
        frames = [Frame(f["scene"], [FaceObservation(face["feature"], face["area"], face.get("confidence", 1.0))
                                     for face in f.get("faces", [])])
                  for f in payload["frames"]]
        return cls(frames)


def normalize_face_weights(areas: Sequence[float]) -> np.ndarray:
    """Convex weights proportional to bounding-box area."""
    areas = np.asarray(areas, dtype=np.float64)
    if areas.size == 0:
        raise VisualError("no face areas to normalise")
    if np.any(areas <= 0):
        raise VisualError("face areas must be positive")
    return areas / areas.sum()


def frame_face_feature(faces: Sequence[FaceObservation], dim: Optional[int] = None,
                       min_confidence: float = 0.0) -> np.ndarray:
    """Area-weighted sum of face features; a frame with no faces yields zeros.

    Detections below ``min_confidence`` are dropped before weighting.
    """
    faces = [f for f in faces if f.confidence >= min_confidence]
    if not faces:
        if dim is None:
            raise VisualError("dimension required for a frame without faces")
        return np.zeros(dim)
    dims = {f.feature.size for f in faces}
    if len(dims) != 1 or (dim is not None and dims != {dim}):
        raise VisualError(f"face features disagree in dimension: {sorted(dims)}")
    w = normalize_face_weights([f.bbox_area for f in faces])
    return w @ np.stack([f.feature for f in faces])


def utterance_face_embedding(u: UtteranceFrames, min_confidence: float = 0.0) -> np.ndarray:
    per_frame = np.stack([frame_face_feature(f.faces, u.dim, min_confidence) for f in u.frames])
    return per_frame.max(axis=0)


def utterance_scene_embedding(u: UtteranceFrames) -> np.ndarray:
    return np.stack([f.scene_feature for f in u.frames]).max(axis=0)


def visual_utterance_embedding(u: UtteranceFrames, min_confidence: float = 0.0) -> np.ndarray:
    """``[scene || face]``, length ``2 * d``."""
    return np.concatenate([utterance_scene_embedding(u), utterance_face_embedding(u, min_confidence)])
