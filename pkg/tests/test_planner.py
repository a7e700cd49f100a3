"""Planner: init, rendering, optimization loop, color discretization, export."""

import json

import numpy as np
import pytest

from splinepaint import autodiff as ad
from splinepaint.autodiff import Tape, Tensor, backward
from splinepaint.renderer import RendererParams
from splinepaint.synthetic import make_trajectories
from splinepaint.planner import (
    ExportedPlan,
    LossSpec,
    PaintingPlan,
    PaintingPlanner,
    PlanningError,
    StrokeAction,
    discretize_colors,
    export_plan,
    init_plan,
    load_plan,
    optimize,
    palette_report,
    render_exported,
    render_plan,
)
from splinepaint.vae import TrajectoryVAE

N_POINTS = 6
LATENT = 4
PARAMS = RendererParams(alpha=0.35, beta=0.02, c=1.5)


@pytest.fixture(scope="module")
def vae():
    data = make_trajectories("arcs", 12, seed=1, n_points=N_POINTS)
    return TrajectoryVAE(n_points=N_POINTS, hidden_sizes=(16, 8), latent_dim=LATENT,
                         epochs=60, learning_rate=3e-3, kl_weight=1e-4, seed=0).fit(data)


def make_plan(vae, n=2, seed=0, size=32):
    return init_plan(n, size, size, np.random.default_rng(seed),
                     latent_dim=LATENT, n_points=N_POINTS)


# ---------------------------------------------------------------------------
# init_plan


def test_init_plan_seeded_and_in_bounds():
    a = init_plan(5, 32, 32, np.random.default_rng(3), latent_dim=LATENT, n_points=N_POINTS)
    b = init_plan(5, 32, 32, np.random.default_rng(3), latent_dim=LATENT, n_points=N_POINTS)
    assert len(a) == 5
    for act_a, act_b in zip(a.actions, b.actions):
        for ta, tb in zip(act_a.tensors(), act_b.tensors()):
            np.testing.assert_array_equal(ta.data, tb.data)
    for act in a.actions:
        dx, dy, dtheta = act.delta.data
        assert 0.0 <= dx <= 1.0 and 0.0 <= dy <= 1.0
        assert -np.pi < dtheta <= np.pi
        assert np.all(act.heights.data == 0.01)  # mid-range of [0, 0.02]
        assert np.all((act.color.data >= 0) & (act.color.data <= 1))


def test_init_plan_validates():
    with pytest.raises(ValueError):
        init_plan(0, 32, 32, 0, latent_dim=LATENT, n_points=N_POINTS)
    with pytest.raises(ValueError):
        StrokeAction(np.array([np.nan]), np.zeros(3), np.zeros(4), np.zeros(3))


# ---------------------------------------------------------------------------
# render_plan


def test_render_empty_plan_is_background(vae):
    plan = PaintingPlan([], 16, 24, np.array([0.9, 0.5, 0.2]))
    out = render_plan(plan, vae, PARAMS)
    assert out.shape == (16, 24, 3)
    np.testing.assert_array_equal(out.data, np.broadcast_to([0.9, 0.5, 0.2], (16, 24, 3)))


def test_render_disjoint_strokes_commute(vae):
    rng = np.random.default_rng(2)
    z = rng.standard_normal((2, LATENT))
    a = StrokeAction(z[0] * 0.3, (0.2, 0.25, 0.0), np.full(N_POINTS, 0.01), (0.8, 0.1, 0.1))
    b = StrokeAction(z[1] * 0.3, (0.75, 0.8, 0.0), np.full(N_POINTS, 0.01), (0.1, 0.1, 0.8))
    with ad.no_grad():
        ab = render_plan(PaintingPlan([a, b], 64, 64, np.ones(3)), vae, PARAMS).data
        ba = render_plan(PaintingPlan([b, a], 64, 64, np.ones(3)), vae, PARAMS).data
    # disjoint supports must not interact; identical up to stamping order
    assert np.abs(ab - ba).max() < 1e-9
    assert (ab < 0.999).any()  # the strokes are actually visible


def test_render_plan_differentiable(vae):
    plan = make_plan(vae, n=1, seed=4)
    act = plan.actions[0]
    with Tape():
        out = render_plan(plan, vae, PARAMS)
        backward(ad.sum(out))
    assert act.z.grad is not None and act.z.grad.shape == (LATENT,)
    assert act.color.grad is not None


# ---------------------------------------------------------------------------
# LossSpec


def test_loss_spec_values():
    pred = Tensor(np.zeros((2, 2, 3)))
    target = np.full((2, 2, 3), 0.5)
    assert abs(float(LossSpec("pixel-l2")(pred, target).data) - 0.25) < 1e-12
    assert abs(float(LossSpec("pixel-l1")(pred, target).data) - 0.5) < 1e-12


def test_loss_spec_weight_map():
    pred = Tensor(np.zeros((2, 2, 3)))
    target = np.ones((2, 2, 3))
    w = np.array([[1.0, 0.0], [0.0, 0.0]])
    val = float(LossSpec("pixel-l2", weight=w)(pred, target).data)
    assert abs(val - 0.25) < 1e-12  # only one of four pixels counts


def test_loss_spec_validation():
    with pytest.raises(ValueError, match="loss kind"):
        LossSpec("huber")
    with pytest.raises(ValueError, match="negative"):
        LossSpec("pixel-l2", weight=np.array([[-1.0]]))
    spec = LossSpec("pixel-l2", weight=np.ones((3, 3)))
    with pytest.raises(ValueError, match="weight"):
        spec(Tensor(np.zeros((2, 2, 3))), np.zeros((2, 2, 3)))


def test_loss_spec_callable():
    calls = []

    def custom(pred, target):
        calls.append(1)
        return ad.mean((pred - target) ** 2) * 2.0

    val = LossSpec(custom)(Tensor(np.zeros((2, 2, 3))), np.full((2, 2, 3), 0.5))
    assert abs(float(val.data) - 0.5) < 1e-12 and calls


# ---------------------------------------------------------------------------
# optimize


def test_optimize_zero_iterations_returns_plan_unchanged(vae):
    plan = make_plan(vae, n=2, seed=5)
    snap = [a.snapshot() for a in plan.actions]
    target = np.ones((32, 32, 3))
    out, history = optimize(plan, target, vae, PARAMS, iterations=0)
    assert out is plan
    assert history["loss"] == []
    for act, s in zip(plan.actions, snap):
        for t, arr in zip(act.tensors(), s):
            np.testing.assert_array_equal(t.data, arr)


def test_optimize_shrinks_loss_and_respects_bounds(vae):
    gt_plan = make_plan(vae, n=1, seed=11)
    with ad.no_grad():
        target = render_plan(gt_plan, vae, PARAMS).data.copy()
    plan = make_plan(vae, n=1, seed=12)
    best, history = optimize(plan, target, vae, PARAMS, iterations=25,
                             learning_rate=0.01, batch_size=None, seed=0)
    assert history["best_loss"] <= history["loss"][0]
    assert history["best_loss"] == min(min(history["loss"]), history["best_loss"])
    for act in best.actions:
        assert np.all(act.heights.data >= 0.0) and np.all(act.heights.data <= 0.02)
        assert np.all(act.color.data >= 0.0) and np.all(act.color.data <= 1.0)
    # input plan is not mutated by a non-trivial run
    np.testing.assert_array_equal(plan.actions[0].heights.data, np.full(N_POINTS, 0.01))


def test_optimize_validates_target(vae):
    plan = make_plan(vae, n=1)
    with pytest.raises(ValueError, match="does not match plan canvas"):
        optimize(plan, np.ones((16, 16, 3)), vae, PARAMS, iterations=1)


def test_optimize_nonfinite_diagnostic_names_iteration_and_stroke(vae):
    plan = make_plan(vae, n=3, seed=6)
    target = np.ones((32, 32, 3))

    def poison(i, value, working):
        if i == 0:
            working.actions[1].z.data[:] = np.nan

    with pytest.raises(PlanningError, match=r"iteration 1, stroke 1"):
        optimize(plan, target, vae, PARAMS, iterations=5, batch_size=None,
                 seed=0, callback=poison)


def test_batched_full_window_matches_unbatched_bitwise(vae):
    gt = make_plan(vae, n=3, seed=21)
    with ad.no_grad():
        target = render_plan(gt, vae, PARAMS).data.copy()

    results = []
    for batch_size in (None, 3, 16):
        plan = make_plan(vae, n=3, seed=22)
        best, history = optimize(plan, target, vae, PARAMS, iterations=8,
                                 learning_rate=0.01, batch_size=batch_size, seed=0)
        results.append((best, history))
    ref_best, ref_hist = results[0]
    for best, history in results[1:]:
        assert history["loss"] == ref_hist["loss"]
        assert history["best_loss"] == ref_hist["best_loss"]
        for a, b in zip(best.actions, ref_best.actions):
            for ta, tb in zip(a.tensors(), b.tensors()):
                np.testing.assert_array_equal(ta.data, tb.data)


def test_round_robin_touches_every_stroke(vae):
    gt = make_plan(vae, n=3, seed=31)
    with ad.no_grad():
        target = render_plan(gt, vae, PARAMS).data.copy()
    plan = make_plan(vae, n=3, seed=32)
    init_snaps = [a.snapshot() for a in plan.actions]
    final = {}

    def record(i, value, working):
        if i == 5:
            final["snaps"] = [a.snapshot() for a in working.actions]

    optimize(plan, target, vae, PARAMS, iterations=6,
             learning_rate=0.02, batch_size=1, seed=0, callback=record)
    for snap, init in zip(final["snaps"], init_snaps):
        moved = any(not np.array_equal(cur, arr) for cur, arr in zip(snap, init))
        assert moved


def test_optimize_discretizes_and_freezes_colors(vae):
    gt = make_plan(vae, n=4, seed=41)
    with ad.no_grad():
        target = render_plan(gt, vae, PARAMS).data.copy()
    plan = make_plan(vae, n=4, seed=42)
    best, history = optimize(plan, target, vae, PARAMS, iterations=10,
                             learning_rate=0.01, batch_size=None, n_colors=2, seed=0)
    assert history["discretized_at"] == 9
    palette = history["palette"]
    assert palette.shape == (2, 3)
    colors = {tuple(a.color.data) for a in best.actions}
    assert len(colors) <= 2
    assert colors <= {tuple(row) for row in palette}


# ---------------------------------------------------------------------------
# discretize_colors


def plan_with_colors(colors):
    actions = [StrokeAction(np.zeros(LATENT), (0.5, 0.5, 0.0),
                            np.full(N_POINTS, 0.01), c) for c in colors]
    return PaintingPlan(actions, 16, 16, np.ones(3))


def test_discretize_k1_global_mean():
    plan = plan_with_colors([(0.2, 0.4, 0.6), (0.4, 0.6, 0.8)])
    out, palette = discretize_colors(plan, 1, seed=0)
    np.testing.assert_allclose(palette, [[0.3, 0.5, 0.7]], atol=1e-12)
    for act in out.actions:
        np.testing.assert_allclose(act.color.data, [0.3, 0.5, 0.7], atol=1e-12)


def test_discretize_separated_clusters_exact():
    plan = plan_with_colors([(0, 0, 0)] * 5 + [(1, 1, 1)] * 5)
    out, palette = discretize_colors(plan, 2, seed=0)
    assert sorted(map(tuple, palette)) == [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]
    for act, orig in zip(out.actions, plan.actions):
        np.testing.assert_array_equal(act.color.data, orig.color.data)


def test_discretize_hand_example():
    colors = [(0.1, 0, 0), (0.12, 0, 0), (0.9, 0, 0), (0.88, 0, 0)]
    out, palette = discretize_colors(plan_with_colors(colors), 2, seed=0)
    reds = sorted(row[0] for row in palette)
    assert abs(reds[0] - 0.11) < 1e-12 and abs(reds[1] - 0.89) < 1e-12


def test_discretize_k_exceeds_strokes():
    colors = [(0.1, 0.2, 0.3), (0.1, 0.2, 0.3), (0.5, 0.5, 0.5)]
    plan = plan_with_colors(colors)
    out, palette = discretize_colors(plan, 7, seed=0)
    assert palette.shape == (2, 3)  # distinct colors only
    for act, c in zip(out.actions, colors):
        np.testing.assert_array_equal(act.color.data, c)


def test_discretize_bounds_distinct_colors():
    rng = np.random.default_rng(0)
    plan = plan_with_colors(rng.uniform(0, 1, size=(20, 3)))
    out, palette = discretize_colors(plan, 4, seed=0)
    distinct = {tuple(a.color.data) for a in out.actions}
    assert len(distinct) <= 4
    assert palette.shape[0] == 4


def test_palette_report_format():
    text = palette_report(np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]))
    assert text.startswith("2 paint(s)")
    assert "paint 0: R=0.100000" in text


# ---------------------------------------------------------------------------
# export / import / re-render


def test_export_round_trip(tmp_path, vae):
    gt = make_plan(vae, n=2, seed=51)
    with ad.no_grad():
        target = render_plan(gt, vae, PARAMS).data.copy()
    plan = make_plan(vae, n=2, seed=52)
    best, _ = optimize(plan, target, vae, PARAMS, iterations=6,
                       learning_rate=0.01, batch_size=None, seed=0)
    best.vae_ref = "vae.json"
    best.renderer_ref = "renderer.json"

    path = tmp_path / "plan.json"
    export_plan(best, vae, PARAMS, path)
    loaded = load_plan(path)
    assert loaded.version == "splineplan/1"
    assert loaded.vae_ref == "vae.json" and loaded.renderer_ref == "renderer.json"
    assert len(loaded.strokes) == len(best.actions)

    with ad.no_grad():
        preview = render_plan(best, vae, PARAMS).data.copy()
    rerender = render_exported(loaded, PARAMS)
    assert np.abs(rerender - preview).max() < 1e-9


def test_export_trajectories_are_canvas_frame(tmp_path, vae):
    from splinepaint.renderer import PoseOffset, reorient

    plan = make_plan(vae, n=1, seed=53)
    path = tmp_path / "plan.json"
    export_plan(plan, vae, PARAMS, path)
    loaded = load_plan(path)
    act = plan.actions[0]
    xy = vae.decode(act.z.data[None])[0, :, :2]
    traj = np.column_stack([xy, act.heights.data])
    with ad.no_grad():
        expected = reorient(traj, PoseOffset(*act.delta.data), PARAMS).data
    np.testing.assert_array_equal(loaded.strokes[0][1], expected)


def test_load_plan_rejects_unknown_version(tmp_path):
    path = tmp_path / "plan.json"
    with open(path, "w") as fh:
        json.dump({"version": "splineplan/999", "canvas": {}, "strokes": []}, fh)
    with pytest.raises(ValueError, match="unsupported plan version"):
        load_plan(path)


# ---------------------------------------------------------------------------
# estimator


def test_painting_planner_estimator(vae):
    gt = make_plan(vae, n=2, seed=61)
    with ad.no_grad():
        target = render_plan(gt, vae, PARAMS).data.copy()
    planner = PaintingPlanner(vae=vae, renderer_params=PARAMS, n_strokes=2,
                              iterations=5, learning_rate=0.01, batch_size=None,
                              seed=0)
    assert planner.get_params()["n_strokes"] == 2
    planner.fit(target)
    assert len(planner.plan_) == 2
    assert planner.history_["loss"]
    out = planner.render()
    assert out.shape == target.shape
    assert planner.palette_.shape[1] == 3
