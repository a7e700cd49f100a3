"""Pen pose streams to standardized stroke trajectories.

A recorded stream of timed pen poses is reduced to canvas-frame tip
coordinates, segmented into contact strokes, and normalized into fixed-length
``(n, 3)`` trajectories of ``x, y, height`` rows.  Canvas coordinates are
normalized so the drawing surface spans ``[0, 1]`` on both axes; the height
column is normalized by the canvas *width* so that it shares a scale with x
and with the renderer's thickness parameters.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
from scipy.spatial.transform import Rotation
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_finite_array, check_positive_int, check_trajectory

DEFAULT_N_POINTS = 32
DEFAULT_CONTACT_THRESHOLD = 0.005
DEFAULT_MIN_SAMPLES = 3
DEFAULT_PEN_LENGTH = 0.15
DEFAULT_TIP_AXIS = (0.0, 0.0, -1.0)


@dataclasses.dataclass
class PoseSample:
    """One timed pen pose: world position plus a scalar-first unit quaternion."""

    t: float
    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self) -> None:
        self.position = as_finite_array(self.position, "position", shape=(3,))
        self.quaternion = as_finite_array(self.quaternion, "quaternion", shape=(4,))
        n = float(np.linalg.norm(self.quaternion))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.6g} is not 1")
        self.quaternion = self.quaternion / n


@dataclasses.dataclass
class CanvasFrame:
    """Orthonormal canvas coordinate frame built from three corner markers."""

    origin: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    normal: np.ndarray
    width: float
    height: float

    @property
    def aspect(self) -> float:
        return self.height / self.width


def pen_tip(sample: PoseSample, pen_length: float = DEFAULT_PEN_LENGTH,
            tip_axis=DEFAULT_TIP_AXIS) -> np.ndarray:
    """World position of the pen tip for one pose sample."""
    axis = as_finite_array(tip_axis, "tip_axis", shape=(3,))
    rot = Rotation.from_quat(sample.quaternion, scalar_first=True)
    return sample.position + rot.apply(axis * float(pen_length))


def canvas_frame(markers) -> CanvasFrame:
    """Build the canvas frame from corner markers (origin, x corner, y corner)."""
    m = as_finite_array(markers, "canvas_markers", shape=(3, 3))
    ex = m[1] - m[0]
    ey = m[2] - m[0]
    width = float(np.linalg.norm(ex))
    height = float(np.linalg.norm(ey))
    if width < 1e-9 or height < 1e-9:
        raise ValueError("canvas_markers: coincident corners")
    x_axis = ex / width
    normal = np.cross(x_axis, ey)
    area = float(np.linalg.norm(normal))
    if area < 1e-9:
        raise ValueError("canvas_markers: collinear corners")
    normal = normal / area
    y_axis = np.cross(normal, x_axis)
    return CanvasFrame(m[0].copy(), x_axis, y_axis, normal, width, height)


def project_to_canvas(points, frame: CanvasFrame) -> np.ndarray:
    """World points to canvas coordinates (x, y in [0,1] on-canvas, h above)."""
    pts = as_finite_array(points, "points", shape=(-1, 3))
    rel = pts - frame.origin
    x = rel @ frame.x_axis / frame.width
    y = rel @ frame.y_axis / frame.height
    # Height shares the width normalization so it is commensurate with x.
    h = rel @ frame.normal / frame.width
    return np.stack([x, y, h], axis=1)


def extract_strokes(canvas_points, contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
                    min_samples: int = DEFAULT_MIN_SAMPLES) -> list[np.ndarray]:
    """Split a canvas-frame point stream into contact strokes.

    A stroke is a maximal run of consecutive samples with height below
    ``contact_threshold``; runs shorter than ``min_samples`` are dropped as
    jitter.  Kept runs partition the below-threshold samples in order.
    """
    pts = as_finite_array(canvas_points, "canvas_points", shape=(-1, 3))
    check_positive_int(min_samples, "min_samples")
    below = pts[:, 2] < float(contact_threshold)
    strokes = []
    start = None
    for i, flag in enumerate(np.append(below, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= min_samples:
                strokes.append(pts[start:i].copy())
            start = None
    return strokes


def standardize(traj) -> tuple[np.ndarray, float]:
    """Translate the start to the origin and rotate the end onto the +x axis.

    Only x and y rotate; heights are untouched.  Returns the standardized
    trajectory and the rotation angle that was applied.  When the endpoints
    coincide in the plane, the trajectory is only translated (angle 0).
    """
    pts = check_trajectory(traj)
    out = pts.copy()
    out[:, :2] -= pts[0, :2]
    dx, dy = out[-1, 0], out[-1, 1]
    if np.hypot(dx, dy) < 1e-12:
        return out, 0.0
    angle = -np.arctan2(dy, dx)
    c, s = np.cos(angle), np.sin(angle)
    x, y = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = c * x - s * y
    out[:, 1] = s * x + c * y
    return out, float(angle)


def resample(traj, n_points: int = DEFAULT_N_POINTS) -> np.ndarray:
    """Resample to ``n_points`` uniformly spaced in planar arc length.

    The first and last input points carry over exactly.  A trajectory whose
    planar points all coincide degenerates to index-uniform resampling.
    """
    pts = check_trajectory(traj)
    n = check_positive_int(n_points, "n_points", minimum=2)
    seg = np.linalg.norm(np.diff(pts[:, :2], axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] < 1e-12:
        s = np.arange(len(pts), dtype=np.float64)
    target = np.linspace(0.0, s[-1], n)
    out = np.stack([np.interp(target, s, pts[:, k]) for k in range(3)], axis=1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


# ---------------------------------------------------------------------------
# wire formats


def load_pose_stream(path: str | os.PathLike) -> tuple[list[PoseSample], np.ndarray]:
    """Read a pose-stream JSONL file; canvas markers come from the first line."""
    samples = []
    markers = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                sample = PoseSample(float(rec["t"]), rec["pen"]["pos"], rec["pen"]["quat"])
                if markers is None:
                    markers = as_finite_array(rec["canvas_markers"], "canvas_markers", shape=(3, 3))
            except (KeyError, TypeError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: bad pose record: {err}") from err
            samples.append(sample)
    if not samples:
        raise ValueError(f"{path}: empty pose stream")
    if markers is None:
        raise ValueError(f"{path}: first record carries no canvas_markers")
    return samples, markers


def save_trajectories(path: str | os.PathLike, trajectories) -> None:
    """Write trajectories as JSONL records ``{"points": [[x, y, h], ...]}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            pts = check_trajectory(traj)
            fh.write(json.dumps({"points": pts.tolist()}) + "\n")


def load_trajectories(path: str | os.PathLike) -> list[np.ndarray]:
    """Read a trajectory JSONL file written by :func:`save_trajectories`."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(check_trajectory(rec["points"]))
            except (KeyError, TypeError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: bad trajectory record: {err}") from err
    return out


def ingest_pose_stream(path: str | os.PathLike, n_points: int = DEFAULT_N_POINTS,
                       contact_threshold: float = DEFAULT_CONTACT_THRESHOLD,
                       min_samples: int = DEFAULT_MIN_SAMPLES,
                       pen_length: float = DEFAULT_PEN_LENGTH,
                       tip_axis=DEFAULT_TIP_AXIS) -> list[np.ndarray]:
    """Full ingest: pose stream file to standardized fixed-length strokes."""
    samples, markers = load_pose_stream(path)
    frame = canvas_frame(markers)
    tips = np.stack([pen_tip(s, pen_length, tip_axis) for s in samples])
    canvas_pts = project_to_canvas(tips, frame)
    strokes = extract_strokes(canvas_pts, contact_threshold, min_samples)
    return [resample(standardize(s)[0], n_points) for s in strokes]


# ---------------------------------------------------------------------------
# estimator-style wrappers


class TrajectoryStandardizer(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`standardize` to each trajectory.

    ``transform`` takes a sequence of (k, 3) arrays and returns a list of the
    standardized copies; the applied angles are kept in ``angles_``.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        results = [standardize(t) for t in X]
        self.angles_ = np.array([angle for _, angle in results])
        return [traj for traj, _ in results]


class TrajectoryResampler(TransformerMixin, BaseEstimator):
    """Transformer resampling each trajectory to ``n_points`` rows.

    ``transform`` returns a stacked ``(m, n_points, 3)`` array.
    """

    def __init__(self, n_points: int = DEFAULT_N_POINTS):
        self.n_points = n_points

    def fit(self, X, y=None):
        check_positive_int(self.n_points, "n_points", minimum=2)
        return self

    def transform(self, X):
        return np.stack([resample(t, self.n_points) for t in X])
