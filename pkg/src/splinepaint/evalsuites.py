"""Numerical evaluation suites: gradient checks, parameter recovery, self-reconstruction.

These are the oracle-style checks behind ``splinepaint eval``.  The gradient
check compares tape gradients of a masked render objective against central
finite differences; the mask keeps only pixels that are safely away from the
rasterizer's non-smooth loci (the darkness boundary, projection clamps, and
extremum ties), since subgradient choices there are conventions rather than
derivatives.
"""

from __future__ import annotations

import dataclasses
import tempfile
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .renderer import CoordinateGrid, RendererParams, render_stroke

FD_STEP = 1e-5
REL_TOL = 1e-3
ABS_TOL = 1e-6

# Recovery targets: affine scale within 1%, offsets within 0.005 canvas
# units (the true offsets are zero, so a relative bound is meaningless),
# thickness/darkness scalars within 5%.
RECOVERY_TOLERANCES = {
    "m_x": ("rel", 0.01), "m_y": ("rel", 0.01),
    "b_x": ("abs", 0.005), "b_y": ("abs", 0.005),
    "alpha": ("rel", 0.05), "beta": ("rel", 0.05), "c": ("rel", 0.05),
}


@dataclasses.dataclass
class GradcheckConfig:
    """One sampled render configuration plus its smooth-pixel mask."""

    traj_xy: np.ndarray
    heights: np.ndarray
    delta: np.ndarray
    params: RendererParams
    mask: np.ndarray


def _field_stack(xy: np.ndarray, h: np.ndarray, delta: np.ndarray,
                 params: RendererParams, grid: CoordinateGrid):
    """Plain-numpy per-segment fields used for margin screening.

    Returns per-segment raw projection, the three candidate distances, their
    minimum, and the darkness stack, each shaped (S, H, W).
    """
    ct, st = np.cos(delta[2]), np.sin(delta[2])
    x = params.m_x * (xy[:, 0] * ct - xy[:, 1] * st) + params.b_x + delta[0]
    y = params.m_y * (xy[:, 0] * st + xy[:, 1] * ct) + params.b_y + delta[1]
    ux, vx = x[:-1, None, None], x[1:, None, None]
    uy, vy = y[:-1, None, None], y[1:, None, None]
    hu, hv = h[:-1, None, None], h[1:, None, None]
    dx, dy = grid.x - ux, grid.y - uy
    ex, ey = vx - ux, vy - uy
    len2 = np.maximum(ex * ex + ey * ey, 1e-18)
    t_raw = (dx * ex + dy * ey) / len2
    t_seg = np.clip(t_raw, 0.0, 1.0)
    d_seg = np.hypot(dx - t_seg * ex, dy - t_seg * ey)
    d_u = np.hypot(dx, dy)
    d_v = np.hypot(grid.x - vx, grid.y - vy)
    dist = np.minimum(d_seg, np.minimum(d_u, d_v))
    frac = np.clip(np.abs(t_raw), 0.0, 1.0)
    heights = (1.0 - frac) * hu + frac * hv
    thick = np.maximum(params.alpha * heights + params.beta, 1e-6)
    dark = np.clip(1.0 - dist / thick, 0.0, 1.0) ** params.c
    return t_raw, d_seg, d_u, d_v, dist, thick, dark


def sample_gradcheck_config(seed: int, height: int = 64, width: int = 64,
                            n_points: int = 6) -> GradcheckConfig:
    """Rejection-sample a configuration with a well-conditioned pixel mask.

    Kept pixels must be covered (darkness above 0.02), at least two
    pixel-widths from the darkness boundary ``dist == thickness``, clear of
    the projection clamps at 0 and 1, clear of ties among the three distance
    candidates, and clear of ties in the max over segments.
    """
    rng = np.random.default_rng(seed)
    grid = CoordinateGrid(height, width)
    margin = 2.0 * grid.pixel_width
    for _ in range(200):
        pts = [rng.uniform(0.3, 0.7, size=2)]
        for _ in range(n_points - 1):
            ang = rng.uniform(0.0, 2 * np.pi)
            step = rng.uniform(0.08, 0.16)
            pts.append(np.clip(pts[-1] + step * np.array([np.cos(ang), np.sin(ang)]), 0.12, 0.88))
        xy = np.array(pts)
        h = rng.uniform(0.05, 0.15, size=n_points)
        delta = np.array([rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.3, 0.3)])
        params = RendererParams(
            m_x=rng.uniform(0.9, 1.1), m_y=rng.uniform(0.9, 1.1),
            b_x=rng.uniform(-0.02, 0.02), b_y=rng.uniform(-0.02, 0.02),
            alpha=rng.uniform(0.4, 0.6), beta=rng.uniform(0.01, 0.03),
            c=rng.uniform(1.2, 2.0),
        )
        t_raw, d_seg, d_u, d_v, dist, thick, dark = _field_stack(xy, h, delta, params, grid)

        order = np.argsort(dark, axis=0)
        win = order[-1]
        take = lambda f: np.take_along_axis(f, win[None], axis=0)[0]  # noqa: E731
        dark_win = take(dark)
        second = np.take_along_axis(dark, order[-2][None], axis=0)[0] if dark.shape[0] > 1 else np.zeros_like(dark_win)
        three = np.sort(np.stack([take(d_seg), take(d_u), take(d_v)]), axis=0)
        t_win = take(t_raw)

        keep = (
            (dark_win > 0.02)
            & (np.abs(take(dist) - take(thick)) > margin)
            & (take(dist) > 1e-4)
            & (np.abs(t_win) > 0.02)
            & (np.abs(np.abs(t_win) - 1.0) > 0.02)
            & (three[1] - three[0] > 5e-4)
            & (dark_win - second > 1e-3)
        )
        if keep.sum() >= 40:
            return GradcheckConfig(xy, h, delta, params, keep)
    raise RuntimeError(f"gradcheck sampler: no valid configuration for seed {seed}")


def _masked_render_value(xy, h, delta, params: RendererParams, mask, height, width) -> float:
    out = render_stroke((xy, h), delta, params, height, width, cull=False)
    return float((out.data * mask).sum())


def run_gradcheck(n_configs: int = 20, height: int = 64, width: int = 64,
                  n_points: int = 6, seed: int = 0, fd_step: float = FD_STEP,
                  rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> dict:
    """Compare analytic and finite-difference gradients over sampled configs.

    Checks every planar coordinate, height, offset component, and the seven
    calibration scalars.  Returns a report dict with ``passed``, per-scalar
    failure records, the worst relative error, and timing.
    """
    t0 = time.time()
    failures = []
    checked = 0
    nonzero = 0
    worst = 0.0
    for k in range(n_configs):
        cfg = sample_gradcheck_config(seed + k, height, width, n_points)
        mask = cfg.mask.astype(np.float64)

        xy = Tensor(cfg.traj_xy, requires_grad=True)
        h = Tensor(cfg.heights, requires_grad=True)
        delta = Tensor(cfg.delta, requires_grad=True)
        p = {name: Tensor(getattr(cfg.params, name), requires_grad=True)
             for name in RendererParams.FIELDS}
        with Tape():
            out = render_stroke((xy, h), delta, p, height, width, cull=False)
            backward(ad.sum(out * mask))

        analytic = np.concatenate([
            xy.grad.reshape(-1), h.grad.reshape(-1), delta.grad.reshape(-1),
            np.array([float(p[name].grad) for name in RendererParams.FIELDS]),
        ])

        names = [f"{ax}{i}" for i in range(cfg.traj_xy.shape[0]) for ax in ("x", "y")]
        names += [f"h{i}" for i in range(cfg.heights.shape[0])]
        names += ["dx", "dy", "dtheta"]
        names += list(RendererParams.FIELDS)

        def value(xy_a, h_a, d_a, pr: RendererParams) -> float:
            return _masked_render_value(xy_a, h_a, d_a, pr, mask, height, width)

        base_args = [cfg.traj_xy, cfg.heights, cfg.delta]
        fd = np.zeros_like(analytic)
        i = 0
        for which in range(len(base_args)):
            for j in range(base_args[which].size):
                args_p = [a.copy() for a in base_args]
                args_m = [a.copy() for a in base_args]
                args_p[which].reshape(-1)[j] += fd_step
                args_m[which].reshape(-1)[j] -= fd_step
                fd[i] = (value(*args_p, cfg.params) - value(*args_m, cfg.params)) / (2 * fd_step)
                i += 1
        for name in RendererParams.FIELDS:
            d = cfg.params.to_dict()
            d[name] += fd_step
            hi = value(cfg.traj_xy, cfg.heights, cfg.delta, RendererParams(**d))
            d[name] -= 2 * fd_step
            lo = value(cfg.traj_xy, cfg.heights, cfg.delta, RendererParams(**d))
            fd[i] = (hi - lo) / (2 * fd_step)
            i += 1

        for name, a, f in zip(names, analytic, fd):
            checked += 1
            if a != 0.0:
                nonzero += 1
            err = abs(a - f)
            tol = max(rel_tol * abs(f), abs_tol)
            rel = err / max(abs(f), abs_tol)
            worst = max(worst, rel)
            if err > tol:
                failures.append({"config": k, "scalar": name, "analytic": a, "fd": f, "err": err})
    return {
        "passed": not failures,
        "configs": n_configs,
        "checked": checked,
        "nonzero_grads": nonzero,
        "worst_rel_err": worst,
        "failures": failures,
        "seconds": time.time() - t0,
    }


# ---------------------------------------------------------------------------
# parameter recovery


def perturb_params(params: RendererParams, rng, scale_jitter: float = 0.2,
                   offset_jitter: float = 0.004) -> RendererParams:
    """Jitter a parameter set for recovery runs.

    Multiplicative for the scales and thickness/darkness terms, additive for
    the offsets (whose nominal value is zero).
    """
    vals = {}
    for k in ("m_x", "m_y", "alpha", "beta", "c"):
        vals[k] = getattr(params, k) * rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter)
    for k in ("b_x", "b_y"):
        vals[k] = getattr(params, k) + rng.uniform(-offset_jitter, offset_jitter)
    return RendererParams(**vals)


def run_recovery(triples_dir=None, count: int = 64, size: int = 128,
                 epochs: int = 250, batch_size: int = 8,
                 learning_rate: float = 0.006, stroke_weight: float = 5.0,
                 seed: int = 0, gt_params: RendererParams | None = None) -> dict:
    """Synthesize stroke triples with known parameters, refit from a
    perturbed start, and score each scalar against :data:`RECOVERY_TOLERANCES`.

    ``triples_dir=None`` uses a throwaway directory.  Returns a report dict
    with ``passed``, the ground-truth/init/fitted triplets per scalar, loss
    endpoints, and timing.
    """
    from .renderer import load_triples, train_renderer
    from .synthetic import make_triples

    t0 = time.time()
    with tempfile.TemporaryDirectory() as tmp:
        out = triples_dir if triples_dir is not None else tmp
        gt = make_triples(out, count=count, size=size, params=gt_params, seed=seed + 7)
        triples = load_triples(out)
    init = perturb_params(gt, np.random.default_rng(seed + 123))
    fitted, history = train_renderer(triples, init=init, epochs=epochs,
                                     batch_size=batch_size,
                                     learning_rate=learning_rate,
                                     stroke_weight=stroke_weight, seed=seed)
    scalars = {}
    passed = True
    for name, (mode, tol) in RECOVERY_TOLERANCES.items():
        want, got = getattr(gt, name), getattr(fitted, name)
        err = abs(got - want) / abs(want) if mode == "rel" else abs(got - want)
        ok = err <= tol
        passed &= ok
        scalars[name] = {"expected": want, "init": getattr(init, name), "fitted": got,
                         "mode": mode, "err": err, "tol": tol, "ok": ok}
    return {
        "passed": passed,
        "scalars": scalars,
        "loss_initial": history[0],
        "loss_final": history[-1],
        "epochs": epochs,
        "steps": epochs * int(np.ceil(count / batch_size)),
        "seconds": time.time() - t0,
    }


# ---------------------------------------------------------------------------
# planner self-reconstruction


def _selfrecon_vae(seed: int, n_points: int, scale: float):
    """A small decoder for self-reconstruction targets.

    Trained on arcs shrunk to a fraction of the canvas so that several
    strokes fit side by side without touching.
    """
    from .synthetic import make_trajectories
    from .vae import TrajectoryVAE

    data = [t * np.array([scale, scale, 1.0]) for t in
            make_trajectories("arcs", 200, seed=seed, n_points=n_points)]
    return TrajectoryVAE(n_points=n_points, hidden_sizes=(128, 64), latent_dim=16,
                         epochs=600, learning_rate=2e-3, kl_weight=1e-4,
                         seed=seed).fit(data)


def _perturbed_plan(plan, rng, z_jitter=0.2, delta_jitter=0.05, color_jitter=0.2):
    """Jitter every action of a plan; the result is the optimization start."""
    from .planner import PaintingPlan, StrokeAction

    actions = []
    for a in plan.actions:
        z = a.z.data * rng.uniform(1 - z_jitter, 1 + z_jitter, size=a.z.shape)
        delta = a.delta.data + rng.uniform(-delta_jitter, delta_jitter, size=3)
        heights = np.clip(a.heights.data * rng.uniform(1 - z_jitter, 1 + z_jitter,
                                                       size=a.heights.shape), 0.0, 0.02)
        color = np.clip(a.color.data + rng.uniform(-color_jitter, color_jitter, size=3),
                        0.0, 1.0)
        actions.append(StrokeAction(z, delta, heights, color))
    return PaintingPlan(actions, plan.height, plan.width, plan.background.copy())


def _selfrecon_case(vae, gt_plan, iterations: int, learning_rate: float,
                    jitters: dict, bar: float, seed: int) -> dict:
    from .planner import optimize, render_plan

    params = RendererParams(alpha=0.3, beta=0.01, c=1.5)
    with ad.no_grad():
        target = render_plan(gt_plan, vae, params).data.copy()
    start = _perturbed_plan(gt_plan, np.random.default_rng(seed + 17), **jitters)
    best, history = optimize(start, target, vae, params, iterations=iterations,
                             learning_rate=learning_rate, batch_size=None, seed=seed)
    initial, final = history["loss"][0], history["best_loss"]
    return {"initial": initial, "final": final, "ratio": final / initial,
            "bar": bar, "ok": final < bar * initial, "iterations": iterations}


def run_selfrecon(size: int = 128, iterations_single: int = 500,
                  iterations_multi: int = 2000, learning_rate: float = 0.01,
                  seed: int = 0) -> dict:
    """Plan against renders of known strokes from a jittered start.

    Case one: a single stroke, budget one stroke; the final pixel-L2 must
    drop below 10% of the start.  Case two: ten strokes on a grid, placed so
    their supports stay disjoint; bar 25%.
    """
    from .planner import PaintingPlan, StrokeAction

    t0 = time.time()
    n_points = 32
    vae = _selfrecon_vae(seed, n_points, scale=0.22)
    rng = np.random.default_rng(seed + 1)

    def action(x, y, theta, color):
        return StrokeAction(rng.standard_normal(vae.latent_dim), (x, y, theta),
                            np.full(n_points, 0.012), color)

    single_plan = PaintingPlan([action(0.5, 0.5, 0.3, (0.15, 0.2, 0.6))],
                               size, size, np.ones(3))
    single = _selfrecon_case(vae, single_plan, iterations_single, learning_rate,
                             {"z_jitter": 0.2, "delta_jitter": 0.05, "color_jitter": 0.2},
                             bar=0.10, seed=seed)

    xs = np.linspace(0.15, 0.85, 5)
    ys = (0.28, 0.72)
    colors = rng.uniform(0.0, 0.7, size=(10, 3))
    actions = [action(x, y, rng.uniform(-0.4, 0.4), colors[i])
               for i, (y, x) in enumerate((y, x) for y in ys for x in xs)]
    multi_plan = PaintingPlan(actions, size, size, np.ones(3))
    multi = _selfrecon_case(vae, multi_plan, iterations_multi, learning_rate,
                            {"z_jitter": 0.2, "delta_jitter": 0.03, "color_jitter": 0.15},
                            bar=0.25, seed=seed)

    return {
        "passed": single["ok"] and multi["ok"],
        "single": single,
        "multi": multi,
        "seconds": time.time() - t0,
    }
