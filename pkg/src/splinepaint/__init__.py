"""Stroke trajectory modeling, differentiable rendering, and painting planning."""

from .autodiff import Tape, TapeError, Tensor, backward, no_grad
from .config import RunConfig, resolve_config
from .optim import Adam
from .planner import (
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
    plan_palette,
    render_exported,
    render_plan,
)
from .renderer import (
    CoordinateGrid,
    RendererCalibrator,
    RendererParams,
    RenderTriple,
    colorize,
    load_triples,
    render_stroke,
    save_triple,
    stamp,
    train_renderer,
)
from .synthetic import make_pose_stream, make_trajectories, make_triples
from .trajectory import (
    DEFAULT_N_POINTS,
    TrajectoryResampler,
    TrajectoryStandardizer,
    ingest_pose_stream,
    load_pose_stream,
    load_trajectories,
    resample,
    save_trajectories,
    standardize,
)
from .vae import TrajectoryVAE

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CoordinateGrid",
    "DEFAULT_N_POINTS",
    "ExportedPlan",
    "LossSpec",
    "PaintingPlan",
    "PaintingPlanner",
    "PlanningError",
    "RenderTriple",
    "RendererCalibrator",
    "RendererParams",
    "RunConfig",
    "StrokeAction",
    "Tape",
    "TapeError",
    "Tensor",
    "TrajectoryResampler",
    "TrajectoryStandardizer",
    "TrajectoryVAE",
    "__version__",
    "backward",
    "colorize",
    "discretize_colors",
    "export_plan",
    "ingest_pose_stream",
    "init_plan",
    "load_plan",
    "load_pose_stream",
    "load_trajectories",
    "load_triples",
    "make_pose_stream",
    "make_trajectories",
    "make_triples",
    "no_grad",
    "optimize",
    "palette_report",
    "plan_palette",
    "render_exported",
    "render_plan",
    "render_stroke",
    "resample",
    "resolve_config",
    "save_trajectories",
    "save_triple",
    "stamp",
    "standardize",
    "train_renderer",
]
