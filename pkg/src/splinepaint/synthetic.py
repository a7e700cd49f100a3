"""Seeded synthetic datasets standing in for recorded painting sessions.

Everything here is deterministic given the seed, so tests and eval suites
can regenerate identical data instead of shipping fixtures.
"""

from __future__ import annotations

import os

import numpy as np

from .renderer import PoseOffset, RendererParams, render_stroke, save_triple, stamp
from .trajectory import resample, standardize
from . import autodiff as ad

TRAJECTORY_KINDS = ("arcs", "zigzags", "circles")
STREAM_MARKERS = np.array([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0], [0.0, 0.3, 0.0]])


def _finish(points: np.ndarray, n_points: int, height: float) -> np.ndarray:
    traj = np.column_stack([points, np.full(len(points), height)])
    out, _ = standardize(traj)
    return resample(out, n_points)


def make_arc(rng: np.random.Generator, n_points: int = 32) -> np.ndarray:
    """Circular arc with random radius, span, and orientation."""
    radius = rng.uniform(0.1, 0.5)
    span = rng.uniform(np.pi / 3, 5 * np.pi / 3)
    start = rng.uniform(0.0, 2 * np.pi)
    direction = rng.choice([-1.0, 1.0])
    theta = start + direction * np.linspace(0.0, span, 64)
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return _finish(pts, n_points, rng.uniform(0.002, 0.01))


def make_zigzag(rng: np.random.Generator, n_points: int = 32) -> np.ndarray:
    """Alternating wave along a straight baseline.

    A pen tracing a zigzag slows and curves through each turn, so the
    recorded path has bounded curvature; modelled here as a sine whose peak
    slope stays below one. Hard corners would not survive arc-length
    resampling with their length intact.
    """
    half_waves = int(rng.integers(3, 7))
    length = rng.uniform(0.2, 0.6)
    amplitude = rng.uniform(0.5, 0.9) * length / (np.pi * half_waves)
    x = np.linspace(0.0, length, 96)
    y = amplitude * np.sin(np.pi * half_waves * x / length)
    return _finish(np.column_stack([x, y]), n_points, rng.uniform(0.002, 0.01))


def make_circle(rng: np.random.Generator, n_points: int = 32) -> np.ndarray:
    """Nearly closed loop; distinct from arcs, used for fine-tuning sets."""
    radius = rng.uniform(0.08, 0.3)
    span = rng.uniform(1.88 * np.pi, 1.97 * np.pi)
    start = rng.uniform(0.0, 2 * np.pi)
    theta = start + np.linspace(0.0, span, 96)
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return _finish(pts, n_points, rng.uniform(0.002, 0.01))


_MAKERS = {"arcs": make_arc, "zigzags": make_zigzag, "circles": make_circle}


def make_trajectories(kind: str, count: int, seed: int = 0,
                      n_points: int = 32) -> list[np.ndarray]:
    if kind not in _MAKERS:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {sorted(_MAKERS)}")
    rng = np.random.default_rng(seed)
    return [_MAKERS[kind](rng, n_points) for _ in range(count)]


def make_pose_stream(path, n_strokes: int = 3, seed: int = 0,
                     pen_length: float = 0.15) -> None:
    """Write a pose-stream JSONL file with known canvas markers.

    Strokes are straight or gently curved passes on the canvas plane joined
    by airborne travel; the pen is held vertical so body position is tip
    position plus ``pen_length`` along +z.
    """
    import json

    rng = np.random.default_rng(seed)
    width = float(np.linalg.norm(STREAM_MARKERS[1] - STREAM_MARKERS[0]))
    height = float(np.linalg.norm(STREAM_MARKERS[2] - STREAM_MARKERS[0]))
    records = []
    t = 0.0

    def emit(tip_xyz):
        nonlocal t
        body = np.asarray(tip_xyz) + np.array([0.0, 0.0, pen_length])
        rec = {"t": round(t, 4),
               "pen": {"pos": [float(v) for v in body], "quat": [1.0, 0.0, 0.0, 0.0]}}
        records.append(rec)
        t += 0.01

    prev_end = np.array([0.05, 0.05])
    for _ in range(n_strokes):
        a = rng.uniform([0.1 * width, 0.1 * height], [0.9 * width, 0.9 * height])
        b = rng.uniform([0.1 * width, 0.1 * height], [0.9 * width, 0.9 * height])
        while np.linalg.norm(b - a) < 0.3 * width:
            b = rng.uniform([0.1 * width, 0.1 * height], [0.9 * width, 0.9 * height])
        # contact height in canvas-width units (the unit ingestion compares
        # against its contact threshold), scaled back to marker space
        contact_h = width * rng.uniform(0.001, 0.004)
        # travel in, airborne
        for s in np.linspace(0.0, 1.0, 4):
            p = prev_end + s * (a - prev_end)
            emit([p[0], p[1], 0.05])
        emit([a[0], a[1], 0.02])
        # on-canvas pass with a slight bow
        n_samples = int(rng.integers(12, 24))
        normal = np.array([-(b - a)[1], (b - a)[0]])
        normal /= max(np.linalg.norm(normal), 1e-12)
        bow = rng.uniform(-0.05, 0.05) * np.linalg.norm(b - a)
        for s in np.linspace(0.0, 1.0, n_samples):
            p = a + s * (b - a) + bow * np.sin(np.pi * s) * normal
            emit([p[0], p[1], contact_h])
        emit([b[0], b[1], 0.02])
        prev_end = b

    with open(path, "w") as fh:
        first = dict(records[0])
        first["canvas_markers"] = [[float(v) for v in m] for m in STREAM_MARKERS]
        fh.write(json.dumps(first) + "\n")
        for rec in records[1:]:
            fh.write(json.dumps(rec) + "\n")


def _triple_trajectory(rng: np.random.Generator) -> np.ndarray:
    """A gently curved stroke placed inside the canvas with varied heights."""
    a = rng.uniform(0.15, 0.85, size=2)
    direction = rng.uniform(0.0, 2 * np.pi)
    length = rng.uniform(0.25, 0.55)
    b = a + length * np.array([np.cos(direction), np.sin(direction)])
    b = np.clip(b, 0.12, 0.88)
    n = 8
    s = np.linspace(0.0, 1.0, n)
    normal = np.array([-(b - a)[1], (b - a)[0]])
    normal /= max(np.linalg.norm(normal), 1e-12)
    bow = rng.uniform(-0.08, 0.08) * np.linalg.norm(b - a)
    xy = a[None, :] + s[:, None] * (b - a)[None, :] + (bow * np.sin(np.pi * s))[:, None] * normal
    # height profile: random endpoints plus a mid bump, kept well spread so
    # the alpha/beta split is identifiable from the data alone
    h0, h1 = rng.uniform(0.004, 0.02, size=2)
    bump = rng.uniform(-0.004, 0.004)
    h = h0 + s * (h1 - h0) + bump * np.sin(np.pi * s)
    h = np.clip(h, 0.003, 0.022)
    return np.column_stack([xy, h])


def make_triples(dirpath, count: int = 64, size: int = 128,
                 params: RendererParams | None = None, seed: int = 0) -> RendererParams:
    """Generate (trajectory, before, after) calibration triples on disk.

    ``after`` is the ground-truth render of the trajectory stamped onto a
    white canvas; the stroke color is stored in the trajectory file. Returns
    the ground-truth parameters used.
    """
    if params is None:
        params = RendererParams(m_x=1.0, m_y=1.0, b_x=0.0, b_y=0.0,
                                alpha=0.3, beta=0.01, c=1.5)
    os.makedirs(dirpath, exist_ok=True)
    rng = np.random.default_rng(seed)
    for idx in range(count):
        traj = _triple_trajectory(rng)
        color = rng.uniform(0.0, 0.6, size=3)
        before = np.ones((size, size, 3))
        with ad.no_grad():
            dark = render_stroke(traj, PoseOffset(), params, size, size)
            after_t = stamp(np.moveaxis(before, 2, 0), dark, color)
        after = np.moveaxis(after_t.data, 0, 2)
        save_triple(dirpath, idx, traj, before, after,
                    delta=PoseOffset(), color=color)
    return params
