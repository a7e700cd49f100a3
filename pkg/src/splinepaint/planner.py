"""Gradient-based painting planner.

A plan is an ordered list of stroke actions (latent shape vector, pose
offset, height profile, color). Planning renders the whole plan through the
differentiable stroke pipeline, compares against a target image, and updates
action parameters by Adam, optionally one round-robin batch of strokes at a
time with the rest frozen. Near the end, stroke colors can be discretized to
a small paint palette by K-means and held fixed.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .optim import Adam
from .renderer import CoordinateGrid, PoseOffset, RendererParams, render_stroke, reorient, stamp
from .validation import as_finite_array, check_image, check_positive_int

PLAN_FORMAT = "splineplan/1"
DEFAULT_H_MIN = 0.0
DEFAULT_H_MAX = 0.02
LATENT_LR_SCALE = 0.5


class PlanningError(RuntimeError):
    """Optimization aborted; the message carries iteration and stroke index."""


class StrokeAction:
    """One planned stroke; every field is a gradient-tracked leaf tensor."""

    def __init__(self, z, delta, heights, color):
        self.z = Tensor(as_finite_array(z, "z"), requires_grad=True)
        self.delta = Tensor(as_finite_array(delta, "delta", shape=(3,)), requires_grad=True)
        self.heights = Tensor(as_finite_array(heights, "heights"), requires_grad=True)
        self.color = Tensor(as_finite_array(color, "color", shape=(3,)), requires_grad=True)
        if self.z.ndim != 1:
            raise ValueError(f"z: expected a vector, got shape {self.z.shape}")
        if self.heights.ndim != 1:
            raise ValueError(f"heights: expected a vector, got shape {self.heights.shape}")

    def tensors(self, live: bool = True):
        """The four leaves, detached copies when the stroke is frozen."""
        parts = (self.z, self.delta, self.heights, self.color)
        return parts if live else tuple(p.detach() for p in parts)

    def snapshot(self) -> tuple[np.ndarray, ...]:
        return tuple(p.data.copy() for p in self.tensors())

    def copy(self) -> "StrokeAction":
        return StrokeAction(*self.snapshot())


@dataclasses.dataclass
class PaintingPlan:
    """Ordered stroke actions plus the canvas they are planned for."""

    actions: list
    height: int
    width: int
    background: np.ndarray
    vae_ref: str | None = None
    renderer_ref: str | None = None

    def __post_init__(self):
        check_positive_int(self.height, "height", minimum=2)
        check_positive_int(self.width, "width", minimum=2)
        self.background = as_finite_array(self.background, "background", shape=(3,))

    def copy(self) -> "PaintingPlan":
        return PaintingPlan([a.copy() for a in self.actions], self.height, self.width,
                            self.background.copy(), self.vae_ref, self.renderer_ref)

    def __len__(self) -> int:
        return len(self.actions)


def init_plan(n_strokes: int, height: int, width: int, rng,
              latent_dim: int, n_points: int,
              background=(1.0, 1.0, 1.0), h_min: float = DEFAULT_H_MIN,
              h_max: float = DEFAULT_H_MAX, vae_ref: str | None = None,
              renderer_ref: str | None = None) -> PaintingPlan:
    """Random seeded plan: z ~ N(0, I), positions uniform over the canvas,
    theta uniform in (-pi, pi], mid-range heights, uniform colors."""
    check_positive_int(n_strokes, "n_strokes")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    actions = []
    for _ in range(n_strokes):
        z = rng.standard_normal(latent_dim)
        dx, dy = rng.uniform(0.0, 1.0, size=2)
        dtheta = np.pi - rng.uniform(0.0, 2 * np.pi)
        heights = np.full(n_points, 0.5 * (h_min + h_max))
        color = rng.uniform(0.0, 1.0, size=3)
        actions.append(StrokeAction(z, (dx, dy, dtheta), heights, color))
    return PaintingPlan(actions, height, width, np.asarray(background, dtype=np.float64),
                        vae_ref=vae_ref, renderer_ref=renderer_ref)


def _frozen_decoder(vae):
    """The VAE's decode path with weights detached into constants."""
    frozen = copy.copy(vae)
    frozen._require_fitted()
    frozen.weights_ = {k: Tensor(v.data.copy()) for k, v in vae.weights_.items()}
    return frozen.decode_tensor


def _compose(actions, decode_fn, params, background, grid: CoordinateGrid,
             active=None) -> Tensor:
    """Stamp all strokes in order; returns an (H, W, 3) tensor.

    ``active`` is a set of stroke indices whose parameters stay attached to
    the tape; all others render from detached copies so the canvas is
    complete but carries no gradient to frozen strokes.
    """
    height, width = grid.height, grid.width
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64).reshape(3, 1, 1),
                         (3, height, width)).copy()
    canvas = Tensor(bg)
    for idx, action in enumerate(actions):
        live = active is None or idx in active
        z, delta, heights, color = action.tensors(live)
        try:
            xy = decode_fn(ad.reshape(z, (1, -1)))
            dark = render_stroke((xy, heights), delta, params, height, width, grid=grid)
            canvas = stamp(canvas, dark, color)
        except ValueError as exc:
            raise PlanningError(f"stroke {idx}: {exc}") from exc
    return ad.moveaxis(canvas, 0, 2)


def render_plan(plan: PaintingPlan, vae, params: RendererParams, *,
                grid: CoordinateGrid | None = None) -> Tensor:
    """Render the full plan; differentiable w.r.t. every action's tensors."""
    grid = grid or CoordinateGrid(plan.height, plan.width)
    decode = _frozen_decoder(vae)
    return _compose(plan.actions, decode, params, plan.background, grid)


class LossSpec:
    """Differentiable image objective.

    ``kind`` is ``"pixel-l2"``, ``"pixel-l1"``, or a callable
    ``(predicted, target) -> scalar Tensor`` for feature-space losses.
    ``weight`` is an optional (H, W) nonnegative map applied per pixel.
    """

    KINDS = ("pixel-l2", "pixel-l1")

    def __init__(self, kind="pixel-l2", weight=None):
        if not callable(kind) and kind not in self.KINDS:
            raise ValueError(f"loss kind {kind!r}: expected one of {self.KINDS} or a callable")
        self.kind = kind
        self.weight = None if weight is None else as_finite_array(weight, "weight")
        if self.weight is not None and np.any(self.weight < 0):
            raise ValueError("weight: negative entries")

    def __call__(self, predicted: Tensor, target) -> Tensor:
        target = ad.as_tensor(target)
        if predicted.shape != target.shape:
            raise ValueError(f"loss: predicted {predicted.shape} vs target {target.shape}")
        if callable(self.kind):
            return self.kind(predicted, target)
        diff = predicted - target
        per_pixel = diff * diff if self.kind == "pixel-l2" else ad.absolute(diff)
        if self.weight is not None:
            if self.weight.shape != predicted.shape[:2]:
                raise ValueError(
                    f"weight: expected {predicted.shape[:2]}, got {self.weight.shape}")
            per_pixel = per_pixel * Tensor(self.weight[:, :, None])
        return ad.mean(per_pixel)


def discretize_colors(plan: PaintingPlan, k: int, seed: int = 0):
    """Cluster stroke colors to at most ``k`` paints.

    Returns ``(new_plan, palette)``; the input plan is untouched. With more
    paints than strokes every stroke keeps its own color and the palette is
    the set of distinct colors.
    """
    check_positive_int(k, "k")
    if not plan.actions:
        raise ValueError("cannot discretize an empty plan")
    colors = np.stack([a.color.data for a in plan.actions])
    out = plan.copy()
    if k > len(colors):
        return out, np.unique(colors, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                    tol=1e-6, random_state=seed)
        labels = km.fit_predict(colors)
    centroids = km.cluster_centers_
    for action, label in zip(out.actions, labels):
        action.color.data[...] = np.clip(centroids[label], 0.0, 1.0)
    return out, np.clip(centroids, 0.0, 1.0)


def optimize(plan: PaintingPlan, target, vae, params: RendererParams,
             loss: LossSpec | None = None, *, iterations: int = 2000,
             learning_rate: float = 0.01, batch_size: int | None = 80,
             n_colors: int | None = None, seed: int = 0,
             h_min: float = DEFAULT_H_MIN, h_max: float = DEFAULT_H_MAX,
             callback=None):
    """Fit the plan to the target image; returns ``(best_plan, history)``.

    ``batch_size=None`` optimizes every stroke each iteration; otherwise a
    round-robin window of that many strokes is active per iteration and the
    rest render frozen. When ``n_colors`` is set, colors are discretized
    once at 90% of the budget and held at their centroids afterwards, and
    best-plan tracking restarts so the returned plan uses the final palette.
    """
    target = check_image(target, "target")
    if target.shape[:2] != (plan.height, plan.width):
        raise ValueError(
            f"target {target.shape[:2]} does not match plan canvas "
            f"{(plan.height, plan.width)}")
    check_positive_int(iterations, "iterations", minimum=0)
    if batch_size is not None:
        check_positive_int(batch_size, "batch_size")
    if loss is None:
        loss = LossSpec()
    elif isinstance(loss, str):
        loss = LossSpec(loss)

    history: dict = {"loss": [], "best_loss": None, "discretized_at": None, "palette": None}
    if iterations == 0:
        return plan, history
    if not plan.actions:
        raise ValueError("cannot optimize an empty plan")

    working = plan.copy()
    n = len(working.actions)
    decode = _frozen_decoder(vae)
    grid = CoordinateGrid(plan.height, plan.width)
    target_arr = np.asarray(target, dtype=np.float64)

    optimizers = [
        Adam([
            {"params": [a.delta, a.heights], "lr": learning_rate},
            {"params": [a.z], "lr": learning_rate * LATENT_LR_SCALE},
            {"params": [a.color], "lr": learning_rate},
        ], lr=learning_rate)
        for a in working.actions
    ]

    discretize_at = None
    if n_colors is not None:
        check_positive_int(n_colors, "n_colors")
        discretize_at = int(np.floor(0.9 * iterations))
    colors_frozen = False
    best_loss = np.inf
    best_snap = None

    for i in range(iterations):
        if discretize_at is not None and i == discretize_at:
            quantized, palette = discretize_colors(working, n_colors, seed)
            for action, src in zip(working.actions, quantized.actions):
                action.color.data[...] = src.color.data
            history["palette"] = palette
            history["discretized_at"] = i
            colors_frozen = True
            best_loss = np.inf
            best_snap = None

        active = None
        if batch_size is not None and batch_size < n:
            start = (i * batch_size) % n
            active = {(start + j) % n for j in range(batch_size)}

        try:
            with Tape():
                canvas = _compose(working.actions, decode, params,
                                  working.background, grid, active=active)
                value_t = loss(canvas, target_arr)
                value = float(value_t.data)
                # every active stroke off-canvas -> flat region, zero grads
                if value_t.requires_grad:
                    backward(value_t)
        except (PlanningError, ValueError) as exc:
            raise PlanningError(f"iteration {i}, {exc}") from exc

        history["loss"].append(value)
        if value < best_loss:
            best_loss = value
            best_snap = [a.snapshot() for a in working.actions]

        if colors_frozen:
            for action in working.actions:
                action.color.grad = None
        for idx, opt in enumerate(optimizers):
            if active is None or idx in active:
                opt.step()
        for action in working.actions:
            action.heights.data[...] = np.clip(action.heights.data, h_min, h_max)
            action.color.data[...] = np.clip(action.color.data, 0.0, 1.0)
            for leaf in action.tensors():
                leaf.grad = None
        if callback is not None:
            callback(i, value, working)

    # the state after the last update is never scored inside the loop
    with ad.no_grad():
        final_canvas = _compose(working.actions, decode, params, working.background, grid)
        final_value = float(loss(final_canvas, target_arr).data)
    if final_value < best_loss:
        best_loss = final_value
        best_snap = [a.snapshot() for a in working.actions]

    history["best_loss"] = best_loss
    best = PaintingPlan([StrokeAction(*snap) for snap in best_snap],
                        plan.height, plan.width, plan.background.copy(),
                        plan.vae_ref, plan.renderer_ref)
    return best, history


# ---------------------------------------------------------------------------
# plan files


def plan_palette(plan: PaintingPlan) -> np.ndarray:
    """Distinct stroke colors in first-use order."""
    seen: dict[tuple, None] = {}
    for action in plan.actions:
        seen.setdefault(tuple(action.color.data.tolist()), None)
    return np.array(list(seen), dtype=np.float64).reshape(-1, 3)


def palette_report(palette: np.ndarray) -> str:
    """Human-readable paint mixing list."""
    palette = as_finite_array(palette, "palette", shape=(-1, 3))
    lines = [f"{len(palette)} paint(s) to mix:"]
    for i, (r, g, b) in enumerate(palette):
        lines.append(f"  paint {i}: R={r:.6f} G={g:.6f} B={b:.6f}")
    return "\n".join(lines) + "\n"


def export_plan(plan: PaintingPlan, vae, params: RendererParams, path) -> None:
    """Write the executable plan file.

    Trajectories are stored post-reorient in canvas coordinates, so a
    consumer needs only the thickness/darkness parameters to reproduce the
    planned canvas exactly.
    """
    strokes = []
    with ad.no_grad():
        for i, action in enumerate(plan.actions):
            xy = vae.decode(action.z.data[None])[0, :, :2]
            traj = np.column_stack([xy, action.heights.data])
            placed = reorient(traj, PoseOffset(*action.delta.data), params)
            strokes.append({
                "order": i,
                "trajectory": placed.data.tolist(),
                "color": action.color.data.tolist(),
            })
    doc = {
        "version": PLAN_FORMAT,
        "canvas": {
            "height": plan.height,
            "width": plan.width,
            "background": plan.background.tolist(),
        },
        "vae_ref": plan.vae_ref,
        "renderer_ref": plan.renderer_ref,
        "palette": plan_palette(plan).tolist(),
        "strokes": strokes,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


@dataclasses.dataclass
class ExportedPlan:
    """In-memory form of a plan file."""

    version: str
    height: int
    width: int
    background: np.ndarray
    palette: np.ndarray
    strokes: list  # (order, trajectory (n, 3), color (3,)) in execution order
    vae_ref: str | None = None
    renderer_ref: str | None = None


def load_plan(path) -> ExportedPlan:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != PLAN_FORMAT:
        raise ValueError(f"{path}: unsupported plan version {version!r}")
    canvas = doc["canvas"]
    strokes = []
    for rec in sorted(doc["strokes"], key=lambda r: r["order"]):
        traj = as_finite_array(rec["trajectory"], f"stroke {rec['order']} trajectory",
                               shape=(-1, 3))
        color = as_finite_array(rec["color"], f"stroke {rec['order']} color", shape=(3,))
        strokes.append((int(rec["order"]), traj, color))
    return ExportedPlan(
        version=version,
        height=int(canvas["height"]),
        width=int(canvas["width"]),
        background=as_finite_array(canvas["background"], "background", shape=(3,)),
        palette=as_finite_array(doc.get("palette", []), "palette").reshape(-1, 3),
        strokes=strokes,
        vae_ref=doc.get("vae_ref"),
        renderer_ref=doc.get("renderer_ref"),
    )


def render_exported(exported: ExportedPlan, params: RendererParams) -> np.ndarray:
    """Re-render a plan file; returns an (H, W, 3) array.

    Exported trajectories already carry the affine calibration, so rendering
    uses an identity mapping plus the thickness/darkness parameters.
    """
    identity = RendererParams(m_x=1.0, m_y=1.0, b_x=0.0, b_y=0.0,
                              alpha=params.alpha, beta=params.beta, c=params.c)
    grid = CoordinateGrid(exported.height, exported.width)
    bg = np.broadcast_to(exported.background.reshape(3, 1, 1),
                         (3, exported.height, exported.width)).copy()
    with ad.no_grad():
        canvas = Tensor(bg)
        for _, traj, color in exported.strokes:
            dark = render_stroke(traj, PoseOffset(), identity,
                                 exported.height, exported.width, grid=grid)
            canvas = stamp(canvas, dark, color)
        out = ad.moveaxis(canvas, 0, 2)
    return out.data.copy()


class PaintingPlanner(BaseEstimator):
    """Estimator wrapper: fit a stroke plan to a target image.

    ``fit`` expects the target as an (H, W, 3) array in [0, 1]; the canvas
    takes its size from the target.
    """

    def __init__(self, vae=None, renderer_params=None, n_strokes: int = 400,
                 iterations: int = 2000, learning_rate: float = 0.01,
                 batch_size: int | None = 80, n_colors: int | None = None,
                 loss: str = "pixel-l2", background=(1.0, 1.0, 1.0),
                 h_min: float = DEFAULT_H_MIN, h_max: float = DEFAULT_H_MAX,
                 vae_ref: str | None = None, renderer_ref: str | None = None,
                 seed: int = 0):
        self.vae = vae
        self.renderer_params = renderer_params
        self.n_strokes = n_strokes
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_colors = n_colors
        self.loss = loss
        self.background = background
        self.h_min = h_min
        self.h_max = h_max
        self.vae_ref = vae_ref
        self.renderer_ref = renderer_ref
        self.seed = seed

    def _params(self) -> RendererParams:
        if self.renderer_params is None:
            return RendererParams()
        if isinstance(self.renderer_params, RendererParams):
            return self.renderer_params
        return RendererParams.from_dict(dict(self.renderer_params))

    def fit(self, X, y=None) -> "PaintingPlanner":
        if self.vae is None:
            raise ValueError("PaintingPlanner requires a fitted vae")
        target = check_image(X, "target")
        height, width = target.shape[:2]
        plan = init_plan(self.n_strokes, height, width,
                         np.random.default_rng(self.seed),
                         latent_dim=self.vae.latent_dim, n_points=self.vae.n_points,
                         background=self.background, h_min=self.h_min, h_max=self.h_max,
                         vae_ref=self.vae_ref, renderer_ref=self.renderer_ref)
        self.plan_, self.history_ = optimize(
            plan, target, self.vae, self._params(), LossSpec(self.loss),
            iterations=self.iterations, learning_rate=self.learning_rate,
            batch_size=self.batch_size, n_colors=self.n_colors, seed=self.seed,
            h_min=self.h_min, h_max=self.h_max)
        self.palette_ = (self.history_["palette"] if self.history_["palette"] is not None
                         else plan_palette(self.plan_))
        return self

    def render(self) -> np.ndarray:
        if not hasattr(self, "plan_"):
            raise RuntimeError("planner is not fitted")
        with ad.no_grad():
            out = render_plan(self.plan_, self.vae, self._params())
        return out.data.copy()
