"""Differentiable polyline rasterization with learnable pen calibration.

A trajectory is reoriented by a pose offset and a seven-scalar calibration
(affine scales ``m_x, m_y``, offsets ``b_x, b_y``, thickness law ``alpha,
beta``, darkness exponent ``c``), then rasterized: every pixel's darkness
falls off with its distance to the nearest polyline segment relative to the
local pen thickness, and segments composite by maximum.  The whole chain is
differentiable with respect to the trajectory, the pose offset, and all
seven calibration scalars.

Canvas geometry: pixel centers span ``[0, 1]`` on both axes, with x mapping
to columns and y to rows (row 0 is y = 0).
"""

from __future__ import annotations

import dataclasses
import json
import os
import re

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tensor, is_tracked
from .imageio import load_image
from .optim import Adam
from .validation import as_finite_array, check_image, check_positive_int

THICKNESS_FLOOR = 1e-6
DARKNESS_BASE_FLOOR = 1e-6


@dataclasses.dataclass
class RendererParams:
    """The seven learnable calibration scalars.

    ``m`` and ``b`` correct the affine mapping from recorded to painted
    coordinates; thickness follows ``alpha * height + beta``; ``c`` shapes
    the darkness falloff and must stay positive.
    """

    m_x: float = 1.0
    m_y: float = 1.0
    b_x: float = 0.0
    b_y: float = 0.0
    alpha: float = 0.5
    beta: float = 0.005
    c: float = 1.0

    FIELDS = ("m_x", "m_y", "b_x", "b_y", "alpha", "beta", "c")

    def __post_init__(self) -> None:
        for name in self.FIELDS:
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"renderer params: {name} is not finite")
            setattr(self, name, value)
        if self.c <= 0.0:
            raise ValueError(f"renderer params: c must be positive, got {self.c}")

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "RendererParams":
        extra = set(d) - set(cls.FIELDS)
        if extra:
            raise ValueError(f"renderer params: unknown keys {sorted(extra)}")
        return cls(**d)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RendererParams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclasses.dataclass
class PoseOffset:
    """Planar offset and rotation applied to a trajectory before rendering."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0


class CoordinateGrid:
    """Constant pixel-center coordinate fields for an H x W raster."""

    def __init__(self, height: int, width: int) -> None:
        self.height = check_positive_int(height, "height", minimum=2)
        self.width = check_positive_int(width, "width", minimum=2)
        xs = np.linspace(0.0, 1.0, self.width)
        ys = np.linspace(0.0, 1.0, self.height)
        self.x = np.broadcast_to(xs, (self.height, self.width)).copy()
        self.y = np.broadcast_to(ys[:, None], (self.height, self.width)).copy()
        self.pixel_width = 1.0 / (self.width - 1)

    def window(self, r0: int, r1: int, c0: int, c1: int) -> tuple[Tensor, Tensor]:
        return Tensor(self.x[r0:r1, c0:c1]), Tensor(self.y[r0:r1, c0:c1])

    def full(self) -> tuple[Tensor, Tensor]:
        return Tensor(self.x), Tensor(self.y)

    @classmethod
    def from_points(cls, x, y) -> "CoordinateGrid":
        """Grid over explicit sample coordinates instead of pixel centers."""
        x = as_finite_array(x, "grid x")
        y = as_finite_array(y, "grid y")
        if x.shape != y.shape or x.ndim != 2:
            raise ValueError(f"grid points: mismatched shapes {x.shape} and {y.shape}")
        grid = cls.__new__(cls)
        grid.height, grid.width = x.shape
        grid.x, grid.y = x.copy(), y.copy()
        grid.pixel_width = 1.0 / max(grid.width - 1, 1)
        return grid


def _param_tensors(params) -> dict[str, Tensor]:
    """Normalize calibration parameters to a name -> scalar Tensor map."""
    if isinstance(params, RendererParams):
        return {name: Tensor(getattr(params, name)) for name in RendererParams.FIELDS}
    if isinstance(params, dict):
        missing = set(RendererParams.FIELDS) - set(params)
        if missing:
            raise ValueError(f"renderer params: missing keys {sorted(missing)}")
        return {name: ad.as_tensor(params[name]) for name in RendererParams.FIELDS}
    raise TypeError(f"renderer params: expected RendererParams or dict, got {type(params).__name__}")


def _as_xy_h(traj) -> tuple[Tensor, Tensor]:
    """Split a trajectory into tracked planar points (n, 2) and heights (n,)."""
    if isinstance(traj, tuple):
        xy, h = ad.as_tensor(traj[0]), ad.as_tensor(traj[1])
    else:
        t = ad.as_tensor(traj)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"trajectory: expected shape (n, 3), got {t.shape}")
        xy, h = t[:, :2], t[:, 2]
    if xy.ndim != 2 or xy.shape[1] != 2 or h.ndim != 1 or h.shape[0] != xy.shape[0]:
        raise ValueError(f"trajectory: inconsistent shapes {xy.shape} and {h.shape}")
    if xy.shape[0] < 2:
        raise ValueError("trajectory: needs at least 2 points")
    return xy, h


def _offset_scalars(delta) -> tuple:
    if isinstance(delta, PoseOffset):
        return ad.as_tensor(delta.dx), ad.as_tensor(delta.dy), ad.as_tensor(delta.dtheta)
    d = ad.as_tensor(delta)
    if d.shape != (3,):
        raise ValueError(f"pose offset: expected 3 values, got shape {d.shape}")
    return d[0], d[1], d[2]


def _reorient_xy(xy: Tensor, delta, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Rotate about the origin, then apply the affine calibration and offset."""
    dx, dy, dtheta = _offset_scalars(delta)
    x, y = xy[:, 0:1], xy[:, 1:2]
    ct, st = ad.cos(dtheta), ad.sin(dtheta)
    xr = x * ct - y * st
    yr = x * st + y * ct
    xp = p["m_x"] * xr + p["b_x"] + dx
    yp = p["m_y"] * yr + p["b_y"] + dy
    return xp, yp


def reorient(traj, delta, params) -> Tensor:
    """Map a trajectory into the canvas frame; heights pass through."""
    xy, h = _as_xy_h(traj)
    xp, yp = _reorient_xy(xy, delta, _param_tensors(params))
    return ad.concat([xp, yp, ad.reshape(h, (h.shape[0], 1))], axis=1)


def _segment_fields(ux, uy, vx, vy, hu, hv, gx, gy) -> tuple[Tensor, Tensor]:
    """Per-pixel distance to each closed segment and interpolated height.

    Endpoint tensors broadcast as (S, 1, 1) against a pixel grid (Hb, Wb).
    Degenerate segments (length below 1e-9) collapse to their start point:
    the projection parameter is forced to 0 exactly.
    """
    dx = gx - ux
    dy = gy - uy
    ex = vx - ux
    ey = vy - uy
    len2 = ex * ex + ey * ey
    alive = (len2.data >= 1e-18).astype(np.float64)
    t_raw = (dx * ex + dy * ey) * alive / ad.maximum(len2, 1e-18)
    t_seg = ad.clamp(t_raw, 0.0, 1.0)
    d_seg = ad.hypot(dx - t_seg * ex, dy - t_seg * ey)
    d_u = ad.hypot(dx, dy)
    d_v = ad.hypot(gx - vx, gy - vy)
    dist = ad.minimum(d_seg, ad.minimum(d_u, d_v))
    frac = ad.clamp(ad.absolute(t_raw), 0.0, 1.0)
    heights = (1.0 - frac) * hu + frac * hv
    return dist, heights


def _col(t: Tensor) -> Tensor:
    return ad.reshape(t, (t.shape[0], 1, 1))


def _endpoint_channels(xp: Tensor, yp: Tensor, h: Tensor):
    return (
        _col(xp[:-1]), _col(yp[:-1]), _col(xp[1:]), _col(yp[1:]),
        _col(h[:-1]), _col(h[1:]),
    )


def _endpoint_scalar(p, k: int) -> Tensor:
    v = ad.as_tensor(p)
    if v.shape != (2,):
        raise ValueError(f"segment endpoint: expected 2 values, got shape {v.shape}")
    return ad.reshape(v[k], (1, 1, 1))


def distance_map(u, v, grid: CoordinateGrid) -> Tensor:
    """Distance from each pixel center to the closed segment ``u -> v``.

    The distance is the minimum of the clamped-projection (rejection)
    distance and the two endpoint distances; a zero-length segment reduces
    to point distance.
    """
    gx, gy = grid.full()
    zero = Tensor(np.zeros((1, 1, 1)))
    dist, _ = _segment_fields(
        _endpoint_scalar(u, 0), _endpoint_scalar(u, 1),
        _endpoint_scalar(v, 0), _endpoint_scalar(v, 1),
        zero, zero, gx, gy,
    )
    return dist[0]


def height_map(u, v, h_u, h_v, grid: CoordinateGrid) -> Tensor:
    """Pen height at each pixel, interpolated along the segment ``u -> v``."""
    gx, gy = grid.full()
    hu = ad.reshape(ad.as_tensor(h_u), (1, 1, 1))
    hv = ad.reshape(ad.as_tensor(h_v), (1, 1, 1))
    _, heights = _segment_fields(
        _endpoint_scalar(u, 0), _endpoint_scalar(u, 1),
        _endpoint_scalar(v, 0), _endpoint_scalar(v, 1),
        hu, hv, gx, gy,
    )
    return heights[0]


def thickness_map(height_field, params) -> Tensor:
    """Pen-contact radius ``alpha * height + beta``, floored at 1e-6."""
    p = _param_tensors(params)
    return ad.maximum(p["alpha"] * ad.as_tensor(height_field) + p["beta"], THICKNESS_FLOOR)


def segment_darkness(distance_field, thickness_field, params) -> Tensor:
    """Darkness ``clamp01(1 - dist / thickness) ** c``.

    While ``c`` is gradient-tracked the clamped base is floored at 1e-6 so
    the exponent keeps a finite gradient everywhere.
    """
    p = _param_tensors(params)
    base = ad.clamp(1.0 - ad.as_tensor(distance_field) / ad.as_tensor(thickness_field), 0.0, 1.0)
    if is_tracked(p["c"]):
        base = ad.maximum(base, DARKNESS_BASE_FLOOR)
    return ad.power(base, p["c"])


def _stroke_bbox(xs: np.ndarray, ys: np.ndarray, pad: float, grid: CoordinateGrid):
    """Pixel window conservatively covering all nonzero darkness."""
    w1 = grid.width - 1
    h1 = grid.height - 1
    c0 = int(np.floor((xs.min() - pad) * w1)) - 1
    c1 = int(np.ceil((xs.max() + pad) * w1)) + 2
    r0 = int(np.floor((ys.min() - pad) * h1)) - 1
    r1 = int(np.ceil((ys.max() + pad) * h1)) + 2
    c0, c1 = max(c0, 0), min(c1, grid.width)
    r0, r1 = max(r0, 0), min(r1, grid.height)
    if c0 >= c1 or r0 >= r1:
        return None
    return r0, r1, c0, c1


def render_stroke(traj, delta, params, height: int, width: int, *,
                  grid: CoordinateGrid | None = None, cull: bool = True) -> Tensor:
    """Rasterize one trajectory to an (H, W) darkness image in [0, 1].

    Per pixel, darkness is the maximum over the trajectory's segments of
    :func:`segment_darkness`.  With ``cull=True`` work is restricted to a
    bounding window padded by the largest endpoint thickness; pixels outside
    are exactly zero (the window pad makes the clamped falloff zero there
    up to the tracked-``c`` base floor).
    """
    p = _param_tensors(params)
    xy, h = _as_xy_h(traj)
    if grid is None:
        grid = CoordinateGrid(height, width)
    elif (grid.height, grid.width) != (height, width):
        raise ValueError(f"grid is {grid.height}x{grid.width}, render wants {height}x{width}")
    xp, yp = _reorient_xy(xy, delta, p)

    window = None
    if cull:
        thick_pts = p["alpha"].data * h.data + p["beta"].data
        pad = max(float(np.max(thick_pts)), THICKNESS_FLOOR) + grid.pixel_width
        window = _stroke_bbox(xp.data[:, 0], yp.data[:, 0], pad, grid)
        if window is None:
            return Tensor(np.zeros((height, width)))
        gx, gy = grid.window(*window)
    else:
        gx, gy = grid.full()

    ux, uy, vx, vy, hu, hv = _endpoint_channels(xp[:, 0], yp[:, 0], h)
    dist, heights = _segment_fields(ux, uy, vx, vy, hu, hv, gx, gy)
    thick = ad.maximum(p["alpha"] * heights + p["beta"], THICKNESS_FLOOR)
    base = ad.clamp(1.0 - dist / thick, 0.0, 1.0)
    if is_tracked(p["c"]):
        base = ad.maximum(base, DARKNESS_BASE_FLOOR)
    dark = ad.amax(ad.power(base, p["c"]), axis=0)

    if window is not None:
        r0, r1, c0, c1 = window
        return ad.embed(dark, (height, width), (r0, c0))
    return dark


def colorize(stroke, color) -> tuple[Tensor, Tensor]:
    """Per-channel ink layer and alpha map for a rendered stroke."""
    stroke = ad.as_tensor(stroke)
    color = ad.as_tensor(color)
    if color.shape != (3,):
        raise ValueError(f"color: expected 3 values, got shape {color.shape}")
    layer = ad.reshape(color, (3, 1, 1)) * stroke
    return layer, stroke


def stamp(canvas, stroke, color) -> Tensor:
    """Alpha-composite a rendered stroke onto a (3, H, W) canvas."""
    canvas = ad.as_tensor(canvas)
    if canvas.ndim != 3 or canvas.shape[0] != 3:
        raise ValueError(f"canvas: expected shape (3, H, W), got {canvas.shape}")
    layer, alpha = colorize(stroke, color)
    if alpha.shape != canvas.shape[1:]:
        raise ValueError(f"stroke {alpha.shape} does not match canvas {canvas.shape}")
    return (1.0 - alpha) * canvas + layer


# ---------------------------------------------------------------------------
# calibration training


@dataclasses.dataclass
class RenderTriple:
    """One supervised example: a posed trajectory plus before/after photos.

    ``color`` is the ink color when known; otherwise it is measured from the
    image pair at training time.
    """

    traj: np.ndarray
    delta: PoseOffset
    before: np.ndarray
    after: np.ndarray
    color: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.traj = as_finite_array(self.traj, "traj", shape=(-1, 3))
        self.before = check_image(self.before, "before")
        self.after = check_image(self.after, "after")
        if self.before.shape != self.after.shape:
            raise ValueError(f"before {self.before.shape} and after {self.after.shape} differ")
        if self.color is not None:
            self.color = as_finite_array(self.color, "color", shape=(3,))


def measured_stroke_color(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Mean color over the most strongly changed pixels.

    Soft stroke edges blend ink with the canvas, so averaging the whole
    footprint underestimates ink strength. Pixels within 2% of the peak
    change are the most opaque ones available; when the stroke has a fully
    opaque core the estimate is exact, and for hairline strokes the bias
    stays bounded by the residual canvas blend-through.
    """
    change = np.abs(after - before).max(axis=2)
    changed = change > 0.02
    if not changed.any():
        raise ValueError("triple shows no visible stroke to measure a color from")
    core = change >= 0.98 * change[changed].max()
    return after[changed & core].mean(axis=0)


def load_triples(dirpath: str | os.PathLike) -> list[RenderTriple]:
    """Load ``{idx}.traj.json`` + ``{idx}.before/after.png`` triples."""
    names = sorted(os.listdir(dirpath))
    indices = sorted(
        int(m.group(1)) for m in (re.fullmatch(r"(\d+)\.traj\.json", n) for n in names) if m
    )
    if not indices:
        raise ValueError(f"{dirpath}: no *.traj.json files found")
    triples = []
    for idx in indices:
        base = os.path.join(dirpath, str(idx))
        for suffix in ("before", "after"):
            if not os.path.exists(f"{base}.{suffix}.png"):
                raise ValueError(f"{dirpath}: triple {idx} is missing its {suffix} image")
        with open(f"{base}.traj.json", "r", encoding="utf-8") as fh:
            rec = json.load(fh)
        d = rec.get("delta", {})
        triples.append(
            RenderTriple(
                traj=np.asarray(rec["points"], dtype=np.float64),
                delta=PoseOffset(float(d.get("dx", 0.0)), float(d.get("dy", 0.0)),
                                 float(d.get("dtheta", 0.0))),
                before=load_image(f"{base}.before.png"),
                after=load_image(f"{base}.after.png"),
                color=None if rec.get("color") is None else np.asarray(rec["color"]),
            )
        )
    return triples


def save_triple(dirpath: str | os.PathLike, idx: int, traj: np.ndarray,
                before: np.ndarray, after: np.ndarray, delta: PoseOffset | None = None,
                color=None) -> None:
    """Write one triple in the directory layout read by :func:`load_triples`."""
    from .imageio import save_image

    delta = delta or PoseOffset()
    base = os.path.join(dirpath, str(idx))
    rec = {
        "points": as_finite_array(traj, "traj", shape=(-1, 3)).tolist(),
        "delta": {"dx": delta.dx, "dy": delta.dy, "dtheta": delta.dtheta},
    }
    if color is not None:
        rec["color"] = as_finite_array(color, "color", shape=(3,)).tolist()
    with open(f"{base}.traj.json", "w", encoding="utf-8") as fh:
        json.dump(rec, fh)
    save_image(f"{base}.before.png", before)
    save_image(f"{base}.after.png", after)


ALIGN_POOL_FACTORS = (4, 16, 32)
AFFINE_FIELDS = ("m_x", "m_y", "b_x", "b_y")
SHAPE_FIELDS = ("alpha", "beta", "c")
SHAPE_LR_SCALE = 0.25


def _pool_mean(t: Tensor, f: int) -> Tensor:
    """Average-pool a (3, H, W) tensor by factor f (remainder cropped)."""
    c, hh, ww = t.shape
    h, w = hh // f, ww // f
    t = ad.take(t, (slice(None), slice(0, h * f), slice(0, w * f)))
    t = ad.reshape(t, (c, h, f, w, f))
    t = ad.mean(t, axis=2)
    return ad.mean(t, axis=3)


def _triple_loss(triple: RenderTriple, p: dict[str, Tensor], grid: CoordinateGrid,
                 stroke_weight: float) -> Tensor:
    """Stroke-weighted L1 plus coarse pooled-L1 alignment terms.

    The weighted L1 term carries all the precision but its gradient reach is
    one stroke thickness; a miscalibrated affine displaces strokes by many
    pixels, where only the pooled terms still see overlap and can pull the
    parameters back into range.
    """
    height, width = triple.before.shape[:2]
    dark = render_stroke(triple.traj, triple.delta, p, height, width, grid=grid)
    color = triple.color if triple.color is not None else measured_stroke_color(triple.before, triple.after)
    pred = stamp(np.moveaxis(triple.before, 2, 0), dark, color)
    target = Tensor(np.moveaxis(triple.after, 2, 0))
    weight = Tensor(1.0 + stroke_weight * dark.data)
    loss = ad.mean(weight * ad.absolute(pred - target))
    for f in ALIGN_POOL_FACTORS:
        if 2 * f <= min(height, width):
            loss = loss + ad.mean(ad.absolute(_pool_mean(pred, f) - _pool_mean(target, f)))
    return loss


def train_renderer(triples, init: RendererParams | None = None, epochs: int = 250,
                   batch_size: int = 8, learning_rate: float = 0.006,
                   stroke_weight: float = 5.0, seed: int = 0):
    """Fit the seven calibration scalars to before/after stroke triples.

    Minimizes a stroke-weighted L1 image loss ``mean((1 + w * darkness) *
    |stamped - after|)`` plus coarse pooled-L1 terms with Adam over shuffled
    minibatches.  The thickness/darkness scalars step slower than the affine
    map: Adam moves every parameter about one learning rate per step, and
    ``beta`` only has to travel ~0.02 to floor the thickness and kill all
    gradients, while a 20% scale error needs ~0.2 of travel to fix.  For the
    same reason ``alpha`` and ``beta`` are floored after each step; once
    thickness hits its floor everywhere the loss surface is flat and no
    setting of the other parameters can be recovered.

    Returns ``(params, history)`` where ``params`` is the best full-dataset
    loss seen (the unchanged init when ``epochs`` is 0) and ``history`` lists
    the full-dataset loss per epoch, starting with the init's.
    """
    triples = list(triples)
    if not triples:
        raise ValueError("train_renderer: empty dataset")
    init = init or RendererParams()
    check_positive_int(epochs, "epochs", minimum=0)
    check_positive_int(batch_size, "batch_size")
    shape = triples[0].before.shape
    for t in triples:
        if t.before.shape != shape:
            raise ValueError("train_renderer: mixed image sizes in dataset")
    grid = CoordinateGrid(shape[0], shape[1])

    p = {name: Tensor(getattr(init, name), requires_grad=True) for name in RendererParams.FIELDS}
    opt = Adam([
        {"params": [p[k] for k in AFFINE_FIELDS], "lr": learning_rate},
        {"params": [p[k] for k in SHAPE_FIELDS], "lr": learning_rate * SHAPE_LR_SCALE},
    ], lr=learning_rate)
    rng = np.random.default_rng(seed)

    def full_loss() -> float:
        with ad.no_grad():
            return float(np.mean([_triple_loss(t, p, grid, stroke_weight).data for t in triples]))

    def snapshot() -> RendererParams:
        return RendererParams(**{name: float(p[name].data) for name in RendererParams.FIELDS})

    best_loss = full_loss()
    best = snapshot()
    history = [best_loss]
    for _ in range(epochs):
        order = rng.permutation(len(triples))
        for start in range(0, len(triples), batch_size):
            batch = [triples[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            with ad.Tape():
                loss = _triple_loss(batch[0], p, grid, stroke_weight)
                for t in batch[1:]:
                    loss = loss + _triple_loss(t, p, grid, stroke_weight)
                # a batch whose strokes all culled off-canvas has exactly
                # zero gradient; there is nothing to backpropagate
                if loss.requires_grad:
                    ad.backward(loss * (1.0 / len(batch)))
            opt.step()
            # Positive-domain floors; see the absorbing-state note above.
            p["alpha"].data = np.maximum(p["alpha"].data, 1e-3)
            p["beta"].data = np.maximum(p["beta"].data, 1e-4)
            p["c"].data = np.maximum(p["c"].data, 1e-3)
        epoch_loss = full_loss()
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = snapshot()
    return best, history


class RendererCalibrator(BaseEstimator):
    """Estimator wrapper around :func:`train_renderer`.

    ``fit`` takes a list of :class:`RenderTriple`; the calibrated scalars
    land in ``params_`` and per-epoch losses in ``history_``.
    """

    def __init__(self, init: RendererParams | None = None, epochs: int = 250,
                 batch_size: int = 8, learning_rate: float = 0.006,
                 stroke_weight: float = 5.0, seed: int = 0):
        self.init = init
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.stroke_weight = stroke_weight
        self.seed = seed

    def fit(self, X, y=None):
        self.params_, self.history_ = train_renderer(
            X, init=self.init, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, stroke_weight=self.stroke_weight,
            seed=self.seed,
        )
        return self

    def score(self, X, y=None) -> float:
        """Negative full-dataset loss (higher is better)."""
        p = _param_tensors(self.params_)
        shape = X[0].before.shape
        grid = CoordinateGrid(shape[0], shape[1])
        with ad.no_grad():
            losses = [_triple_loss(t, p, grid, self.stroke_weight).data for t in X]
        return -float(np.mean(losses))
