"""SORT-style multi-object tracker.

Constant-velocity Kalman filtering on (center, area, aspect), optimal IoU
association, coasting for a bounded number of undetected frames, and
prediction of the next-frame boxes that the chip uses as ROIs.
Noise parameters follow SORT's published defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .metrics import Box, iou

_EPS = 1e-6


class NonPositiveDims(ValueError):
    pass


class SingularInnovation(RuntimeError):
    """Innovation covariance is numerically singular (broken noise config)."""


def box_to_state(box: Box) -> np.ndarray:
    """(x, y, w, h) -> (u, v, s, r): center, area, aspect w/h."""
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise NonPositiveDims(f"box dims must be positive, got w={w}, h={h}")
    return np.array([x + w / 2.0, y + h / 2.0, w * h, w / h], dtype=np.float64)


def state_to_box(z: Sequence[float]) -> Box:
    u, v, s, r = z[:4]
    if s <= 0 or r <= 0:
        raise NonPositiveDims(f"state must have positive s and r, got s={s}, r={r}")
    w = np.sqrt(s * r)
    h = np.sqrt(s / r)
    return (u - w / 2.0, v - h / 2.0, w, h)


def _transition() -> np.ndarray:
    f = np.eye(7)
    f[0, 4] = f[1, 5] = f[2, 6] = 1.0
    return f


_F = _transition()
_H = np.eye(4, 7)
_Q = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4])
_R = np.diag([1.0, 1.0, 10.0, 10.0])
_P0 = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])


@dataclass
class KalmanState:
    mean: np.ndarray        # [u, v, s, r, du, dv, ds]
    covariance: np.ndarray  # 7x7 symmetric PSD


@dataclass
class Track:
    track_id: int
    state: KalmanState
    class_id: int = 0
    frames_since_update: int = 0
    hits: int = 1
    age: int = 0
    confidence: float = 0.0  # c_j of the last matched detection

    @classmethod
    def from_box(cls, track_id: int, box: Box, class_id: int = 0,
                 confidence: float = 0.0) -> "Track":
        mean = np.zeros(7)
        mean[:4] = box_to_state(box)
        return cls(track_id=track_id,
                   state=KalmanState(mean=mean, covariance=_P0.copy()),
                   class_id=class_id, confidence=confidence)

    def box(self) -> Box:
        z = self.state.mean[:4].copy()
        z[2] = max(z[2], _EPS)  # linear model can overshoot shrinking objects
        z[3] = max(z[3], _EPS)
        return state_to_box(z)


def kf_predict(track: Track) -> Box:
    """Advance the state one frame; returns the predicted box."""
    st = track.state
    st.mean = _F @ st.mean
    st.covariance = _F @ st.covariance @ _F.T + _Q
    st.covariance = 0.5 * (st.covariance + st.covariance.T)
    track.frames_since_update += 1
    track.age += 1
    return track.box()


def peek_predicted_box(track: Track) -> Box:
    """Next-frame box of the motion model without mutating the track."""
    z = (_F @ track.state.mean)[:4].copy()
    z[2] = max(z[2], _EPS)
    z[3] = max(z[3], _EPS)
    return state_to_box(z)


def kf_update(track: Track, box: Box) -> Track:
    st = track.state
    z = box_to_state(box)
    innovation = z - _H @ st.mean
    s_mat = _H @ st.covariance @ _H.T + _R
    try:
        gain = np.linalg.solve(s_mat, _H @ st.covariance).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    if not np.all(np.isfinite(gain)):
        raise SingularInnovation("non-finite Kalman gain")
    st.mean = st.mean + gain @ innovation
    cov = (np.eye(7) - gain @ _H) @ st.covariance
    st.covariance = 0.5 * (cov + cov.T)
    track.frames_since_update = 0
    track.hits += 1
    return track


def linear_assignment(cost: np.ndarray) -> List[Tuple[int, int]]:
    """Minimum-cost bipartite matching (rectangular matrices allowed)."""
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def associate(detections: Sequence[Box], tracks: Sequence[Track],
              iou_min: float = 0.3,
              ) -> Tuple[List[Tuple[int, int]], List[int], List[int]]:
    """Match detections to (already predicted) tracks by maximum IoU.

    Returns (matches as (detection index, track index), unmatched detection
    indices, unmatched track indices). Matches below iou_min are severed.
    """
    if not 0 < iou_min < 1:
        raise ValueError("iou_min must be in (0, 1)")
    if not detections or not tracks:
        return [], list(range(len(detections))), list(range(len(tracks)))
    boxes = [t.box() for t in tracks]
    cost = np.empty((len(detections), len(tracks)))
    for i, det in enumerate(detections):
        for j, trk_box in enumerate(boxes):
            # infinitesimal index bias makes exact-cost ties deterministic,
            # preferring the lowest (track id, detection index) pair
            cost[i, j] = 1.0 - iou(det, trk_box) \
                + 1e-12 * (tracks[j].track_id * len(detections) + i)
    matches, unmatched_det, unmatched_trk = [], [], []
    assigned = dict(linear_assignment(cost))
    used_tracks = set()
    for i in range(len(detections)):
        j = assigned.get(i)
        if j is not None and iou(detections[i], boxes[j]) >= iou_min:
            matches.append((i, j))
            used_tracks.add(j)
        else:
            unmatched_det.append(i)
    unmatched_trk = [j for j in range(len(tracks)) if j not in used_tracks]
    return matches, unmatched_det, unmatched_trk


@dataclass
class TrackerConfig:
    iou_min: float = 0.3
    n_tracked: int = 4       # max coasted frames before a track is dropped
    min_hits: int = 1
    max_age: Optional[int] = None  # alias for n_tracked when set

    @property
    def coast_limit(self) -> int:
        return self.max_age if self.max_age is not None else self.n_tracked


@dataclass
class TrackerOutput:
    # confirmed tracks as (track_id, box, class_id, confidence)
    tracks: List[Tuple[int, Box, int, float]]
    # predicted next-frame boxes of all live tracks (the chip's ROIs)
    predicted_rois: List[Box]


class Tracker:
    """Stateful per-sequence tracker; strictly sequential."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.tracks: List[Track] = []
        self._next_id = 0

    def step(self, detections: Sequence[Tuple[Box, int, float]]) -> TrackerOutput:
        """One frame: predict, associate, update, spawn, cull.

        Detections are (box, class_id, confidence) triples, already
        thresholded and suppressed.
        """
        for trk in self.tracks:
            kf_predict(trk)
        det_boxes = [d[0] for d in detections]
        matches, unmatched_det, _ = associate(det_boxes, self.tracks,
                                              self.cfg.iou_min)
        for i, j in matches:
            box, class_id, conf = detections[i]
            kf_update(self.tracks[j], box)
            self.tracks[j].class_id = class_id
            self.tracks[j].confidence = conf
        for i in unmatched_det:
            box, class_id, conf = detections[i]
            self.tracks.append(Track.from_box(self._next_id, box,
                                              class_id=class_id,
                                              confidence=conf))
            self._next_id += 1
        self.tracks = [t for t in self.tracks
                       if t.frames_since_update <= self.cfg.coast_limit]

        out = []
        for t in self.tracks:
            if t.hits >= self.cfg.min_hits or t.age < self.cfg.min_hits:
                out.append((t.track_id, t.box(), t.class_id, t.confidence))
        rois = [peek_predicted_box(t) for t in self.tracks]
        return TrackerOutput(tracks=out, predicted_rois=rois)
