"""Command-line surface for the stroke painting pipeline.

One binary, nine subcommands: ingest pose streams, train the trajectory
model, calibrate the renderer, plan a painting, re-render exported plans,
generate synthetic datasets, run the evaluation suites, and dump latents.
Every command is seeded, echoes its effective configuration as
``config.json`` next to its outputs, and exits nonzero with a one-line
error when a postcondition fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, resolve_config

PROG = "splinepaint"
EVAL_SUITES = ("gradcheck", "recovery", "selfrecon")
SYNTH_KINDS = ("arcs", "zigzags", "circles", "streams", "triples")


def _echo_config(cfg: RunConfig, out_path, is_dir: bool = False) -> None:
    out_dir = out_path if is_dir else (os.path.dirname(os.path.abspath(out_path)))
    cfg.echo(out_dir)


def _polyline_length(traj: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(traj[:, :2], axis=0), axis=1)))


# ---------------------------------------------------------------------------
# subcommand bodies; each returns the process exit code


def cmd_ingest(args, cfg: RunConfig) -> int:
    from .trajectory import ingest_pose_stream, save_trajectories

    trajectories = ingest_pose_stream(
        args.pose_stream, n_points=cfg.n_points,
        contact_threshold=cfg.contact_threshold, min_samples=cfg.min_samples,
        pen_length=cfg.pen_length)
    save_trajectories(args.out, trajectories)
    _echo_config(cfg, args.out)
    mean_len = float(np.mean([_polyline_length(t) for t in trajectories])) if trajectories else 0.0
    print(f"ingested {len(trajectories)} stroke(s) -> {args.out}; "
          f"{cfg.n_points} points each, mean arc length {mean_len:.4f}")
    return 0


def _print_history(history, label: str) -> None:
    for i, value in enumerate(history):
        print(f"{label} {i}: loss {value:.6e}")


def cmd_train_vae(args, cfg: RunConfig) -> int:
    from .trajectory import load_trajectories
    from .vae import TrajectoryVAE

    data = load_trajectories(args.dataset)
    vae = TrajectoryVAE(n_points=cfg.n_points, hidden_sizes=cfg.hidden_sizes,
                        latent_dim=cfg.latent_dim, epochs=cfg.vae_epochs,
                        learning_rate=cfg.vae_learning_rate,
                        kl_weight=cfg.kl_weight, seed=cfg.seed).fit(data)
    _print_history(vae.history_, "epoch")
    vae.save(args.out)
    _echo_config(cfg, args.out)
    print(f"trained on {len(data)} trajectories -> {args.out}")
    return 0


def cmd_finetune_vae(args, cfg: RunConfig) -> int:
    from .trajectory import load_trajectories
    from .vae import TrajectoryVAE

    data = load_trajectories(args.dataset)
    vae = TrajectoryVAE.load(args.base_checkpoint)
    vae.finetune(data, epochs=cfg.vae_epochs)
    _print_history(vae.history_, "epoch")
    vae.save(args.out)
    _echo_config(cfg, args.out)
    print(f"finetuned {args.base_checkpoint} on {len(data)} trajectories -> {args.out}")
    return 0


def cmd_train_renderer(args, cfg: RunConfig) -> int:
    from .renderer import RendererParams, load_triples, train_renderer

    triples = load_triples(args.triples_dir)
    init = RendererParams.load(args.init) if args.init else None
    params, history = train_renderer(
        triples, init=init, epochs=cfg.renderer_epochs,
        batch_size=cfg.renderer_batch_size,
        learning_rate=cfg.renderer_learning_rate,
        stroke_weight=cfg.stroke_weight, seed=cfg.seed)
    _print_history(history, "epoch")
    params.save(args.out)
    _echo_config(cfg, args.out)
    pretty = " ".join(f"{k}={v:.6f}" for k, v in params.to_dict().items())
    print(f"calibrated on {len(triples)} triples -> {args.out}")
    print(pretty)
    return 0


def cmd_plan(args, cfg: RunConfig) -> int:
    from .imageio import load_image, resize_image, save_image
    from .planner import (LossSpec, export_plan, init_plan, optimize,
                          palette_report, render_plan, plan_palette)
    from .renderer import RendererParams
    from .vae import TrajectoryVAE
    from . import autodiff as ad

    vae = TrajectoryVAE.load(args.vae)
    params = RendererParams.load(args.renderer)
    target = load_image(args.target)
    if args.height or args.width:
        target = resize_image(target, args.height or target.shape[0],
                              args.width or target.shape[1])
    height, width = target.shape[:2]

    os.makedirs(args.out_dir, exist_ok=True)
    renderer_copy = os.path.join(args.out_dir, "renderer.json")
    params.save(renderer_copy)

    plan = init_plan(cfg.n_strokes, height, width, np.random.default_rng(cfg.seed),
                     latent_dim=vae.latent_dim, n_points=vae.n_points,
                     background=cfg.background, h_min=cfg.h_min, h_max=cfg.h_max,
                     vae_ref=os.path.abspath(args.vae), renderer_ref="renderer.json")

    def progress(i, value, working):
        if (i + 1) % 100 == 0 or i == 0:
            print(f"iteration {i}: loss {value:.6e}")

    best, history = optimize(
        plan, target, vae, params, LossSpec(), iterations=cfg.iterations,
        learning_rate=cfg.plan_learning_rate,
        batch_size=cfg.plan_batch_size or None, n_colors=cfg.n_colors or None,
        seed=cfg.seed, h_min=cfg.h_min, h_max=cfg.h_max, callback=progress)

    plan_path = os.path.join(args.out_dir, "plan.json")
    export_plan(best, vae, params, plan_path)
    with ad.no_grad():
        preview = render_plan(best, vae, params).data
    save_image(os.path.join(args.out_dir, "preview.png"), preview)
    palette = history["palette"] if history["palette"] is not None else plan_palette(best)
    report = palette_report(palette)
    with open(os.path.join(args.out_dir, "palette.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    cfg.echo(args.out_dir)
    final = history["best_loss"] if history["best_loss"] is not None else float("nan")
    print(f"planned {len(best)} stroke(s) -> {plan_path}; final loss {final:.6e}")
    print(report, end="")
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    from .imageio import save_image
    from .planner import load_plan, render_exported
    from .renderer import RendererParams

    exported = load_plan(args.plan)
    ref = args.renderer or exported.renderer_ref
    if ref is None:
        raise ValueError(f"{args.plan}: no renderer checkpoint reference; pass --renderer")
    candidates = [ref, os.path.join(os.path.dirname(os.path.abspath(args.plan)), ref)]
    path = next((c for c in candidates if os.path.exists(c)), None)
    if path is None:
        raise ValueError(f"renderer checkpoint {ref!r} not found")
    params = RendererParams.load(path)
    out = render_exported(exported, params)
    save_image(args.out, out)
    _echo_config(cfg, args.out)
    print(f"rendered {len(exported.strokes)} stroke(s) -> {args.out}")
    return 0


def cmd_make_synthetic(args, cfg: RunConfig) -> int:
    from .synthetic import make_pose_stream, make_trajectories, make_triples
    from .trajectory import save_trajectories

    if args.kind in ("arcs", "zigzags", "circles"):
        data = make_trajectories(args.kind, cfg.count, seed=cfg.seed,
                                 n_points=cfg.n_points)
        save_trajectories(args.out, data)
        _echo_config(cfg, args.out)
        print(f"wrote {len(data)} {args.kind} -> {args.out}")
    elif args.kind == "streams":
        make_pose_stream(args.out, n_strokes=cfg.count, seed=cfg.seed,
                         pen_length=cfg.pen_length)
        _echo_config(cfg, args.out)
        print(f"wrote pose stream with {cfg.count} stroke(s) -> {args.out}")
    else:
        from .renderer import RendererParams

        params = None
        if args.params:
            params = RendererParams.load(args.params)
        gt = make_triples(args.out, count=cfg.count, size=cfg.size,
                          params=params, seed=cfg.seed)
        gt.save(os.path.join(args.out, "gt_params.json"))
        cfg.echo(args.out)
        pretty = " ".join(f"{k}={v:.6f}" for k, v in gt.to_dict().items())
        print(f"wrote {cfg.count} triples at {cfg.size}x{cfg.size} -> {args.out}")
        print(f"ground truth: {pretty}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from . import evalsuites

    if args.suite == "gradcheck":
        report = evalsuites.run_gradcheck(n_configs=cfg.gradcheck_configs, seed=cfg.seed)
        print(f"gradcheck: {report['checked']} scalars over {report['configs']} configs, "
              f"{report['nonzero_grads']} nonzero, worst rel err {report['worst_rel_err']:.2e}, "
              f"{report['seconds']:.1f}s")
        for f in report["failures"]:
            print(f"  FAIL config {f['config']} {f['scalar']}: "
                  f"analytic {f['analytic']:.6e} vs fd {f['fd']:.6e}")
    elif args.suite == "recovery":
        report = evalsuites.run_recovery(
            count=cfg.count, size=cfg.size, epochs=cfg.renderer_epochs,
            batch_size=cfg.renderer_batch_size,
            learning_rate=cfg.renderer_learning_rate,
            stroke_weight=cfg.stroke_weight, seed=cfg.seed)
        print(f"recovery: loss {report['loss_initial']:.5f} -> {report['loss_final']:.5f} "
              f"in {report['steps']} steps, {report['seconds']:.1f}s")
        for name, rec in report["scalars"].items():
            print(f"  {'ok  ' if rec['ok'] else 'FAIL'} {name}: fitted {rec['fitted']:+.5f} "
                  f"expected {rec['expected']:+.5f} ({rec['mode']} err {rec['err']:.4f}, "
                  f"tol {rec['tol']})")
    else:
        report = evalsuites.run_selfrecon(size=cfg.size, seed=cfg.seed)
        for case in ("single", "multi"):
            rec = report[case]
            print(f"selfrecon {case}: loss {rec['initial']:.6e} -> {rec['final']:.6e} "
                  f"(ratio {rec['ratio']:.4f}, bar {rec['bar']}) "
                  f"{'ok' if rec['ok'] else 'FAIL'}")
        print(f"selfrecon total {report['seconds']:.1f}s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, default=float)
        cfg.echo(args.out)
    print(f"{args.suite}: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_dump_latents(args, cfg: RunConfig) -> int:
    from .trajectory import load_trajectories
    from .vae import TrajectoryVAE

    vae = TrajectoryVAE.load(args.vae)
    data = load_trajectories(args.dataset)
    latents = vae.transform(data)
    doc = {"latent_dim": int(latents.shape[1]), "count": int(latents.shape[0]),
           "latents": latents.tolist()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    _echo_config(cfg, args.out)
    print(f"encoded {latents.shape[0]} trajectories ({latents.shape[1]}-d) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument surface


def _add_common(sub) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int, help="global seed (falls back to SPLINE_SEED)")


def _count_flag(text: str) -> int:
    """Counts where 0 (or "none") disables the feature."""
    return 0 if text.lower() == "none" else int(text)


def _hidden_sizes(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="stroke-based painting pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="pose stream -> trajectory dataset")
    p.add_argument("pose_stream")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n", dest="n_points", type=int)
    p.add_argument("--contact-threshold", dest="contact_threshold", type=float)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--pen-length", dest="pen_length", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("train-vae", help="fit the trajectory model")
    p.add_argument("dataset")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n", dest="n_points", type=int)
    p.add_argument("--epochs", dest="vae_epochs", type=int)
    p.add_argument("--learning-rate", dest="vae_learning_rate", type=float)
    p.add_argument("--kl-weight", dest="kl_weight", type=float)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--hidden-sizes", dest="hidden_sizes", type=_hidden_sizes)
    _add_common(p)
    p.set_defaults(func=cmd_train_vae)

    p = subs.add_parser("finetune-vae", help="continue training from a checkpoint")
    p.add_argument("dataset")
    p.add_argument("--base-checkpoint", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--epochs", dest="vae_epochs", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_finetune_vae)

    p = subs.add_parser("train-renderer", help="calibrate the stroke renderer")
    p.add_argument("triples_dir")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--init", help="starting parameters (JSON checkpoint)")
    p.add_argument("--epochs", dest="renderer_epochs", type=int)
    p.add_argument("--batch-size", dest="renderer_batch_size", type=int)
    p.add_argument("--learning-rate", dest="renderer_learning_rate", type=float)
    p.add_argument("--stroke-weight", dest="stroke_weight", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_train_renderer)

    p = subs.add_parser("plan", help="plan strokes against a target image")
    p.add_argument("target")
    p.add_argument("--vae", required=True)
    p.add_argument("--renderer", required=True)
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-strokes", dest="n_strokes", type=int)
    p.add_argument("--iterations", dest="iterations", type=int)
    p.add_argument("--learning-rate", dest="plan_learning_rate", type=float)
    p.add_argument("--batch-size", dest="plan_batch_size", type=_count_flag)
    p.add_argument("--n-colors", dest="n_colors", type=_count_flag)
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = subs.add_parser("render", help="re-render an exported plan")
    p.add_argument("plan")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--renderer", help="override the plan's renderer reference")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = subs.add_parser("make-synthetic", help="generate synthetic datasets")
    p.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--count", dest="count", type=int)
    p.add_argument("--size", dest="size", type=int)
    p.add_argument("--n", dest="n_points", type=int)
    p.add_argument("--params", help="renderer parameters for triples (JSON checkpoint)")
    _add_common(p)
    p.set_defaults(func=cmd_make_synthetic)

    p = subs.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--suite", required=True, choices=EVAL_SUITES)
    p.add_argument("-o", "--out", help="directory for report.json")
    p.add_argument("--count", dest="count", type=int)
    p.add_argument("--size", dest="size", type=int)
    p.add_argument("--configs", dest="gradcheck_configs", type=int)
    p.add_argument("--epochs", dest="renderer_epochs", type=int)
    p.add_argument("--learning-rate", dest="renderer_learning_rate", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("dump-latents", help="encode a dataset to latent vectors")
    p.add_argument("dataset")
    p.add_argument("--vae", required=True)
    p.add_argument("-o", "--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_dump_latents)

    return parser


CONFIG_FLAGS = (
    "seed", "n_points", "contact_threshold", "min_samples", "pen_length",
    "latent_dim", "hidden_sizes", "vae_epochs", "vae_learning_rate", "kl_weight",
    "renderer_epochs", "renderer_batch_size", "renderer_learning_rate",
    "stroke_weight", "n_strokes", "iterations", "plan_learning_rate",
    "plan_batch_size", "n_colors", "count", "size", "gradcheck_configs",
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        flags = {k: getattr(args, k) for k in CONFIG_FLAGS if hasattr(args, k)}
        cfg = resolve_config(args.config, flags)
        return args.func(args, cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
