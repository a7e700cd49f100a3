"""Run configuration: one flat set of tunables shared by every command.

Values merge in increasing precedence: built-in defaults, a JSON config
file, the ``SPLINE_SEED`` environment variable, then command-line flags.
Unknown keys are rejected rather than ignored so typos cannot silently run
with defaults. Each command echoes its effective configuration as
``config.json`` next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
import os


@dataclasses.dataclass
class RunConfig:
    seed: int = 0

    # pose-stream ingestion
    n_points: int = 32
    contact_threshold: float = 0.005
    min_samples: int = 3
    pen_length: float = 0.15

    # trajectory model
    latent_dim: int = 64
    hidden_sizes: tuple = (256, 128)
    vae_epochs: int = 1500
    vae_learning_rate: float = 1e-3
    kl_weight: float = 1e-3

    # stroke renderer calibration
    renderer_epochs: int = 250
    renderer_batch_size: int = 8
    renderer_learning_rate: float = 0.006
    stroke_weight: float = 5.0

    # painting planner; 0 means "all strokes" / "no color discretization"
    n_strokes: int = 400
    iterations: int = 2000
    plan_learning_rate: float = 0.01
    plan_batch_size: int = 80
    n_colors: int = 0
    h_min: float = 0.0
    h_max: float = 0.02
    background: tuple = (1.0, 1.0, 1.0)

    # synthetic data and evaluation
    count: int = 64
    size: int = 128
    gradcheck_configs: int = 20

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    def replace(self, updates: dict) -> "RunConfig":
        """New config with ``updates`` applied; unknown keys raise."""
        known = set(self.field_names())
        unknown = sorted(set(updates) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        clean = {k: tuple(v) if isinstance(v, list) else v for k, v in updates.items()}
        return dataclasses.replace(self, **clean)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls().replace(_load_doc(path))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, val in out.items():
            if isinstance(val, tuple):
                out[key] = list(val)
        return out

    def echo(self, out_dir) -> None:
        """Write the effective configuration as ``config.json`` in out_dir."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _load_doc(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("expected a JSON object")
    return doc


def resolve_config(config_path=None, flag_values: dict | None = None) -> RunConfig:
    """Flags beat the config file; SPLINE_SEED fills in only an unset seed."""
    doc = {} if config_path is None else _load_doc(config_path)
    try:
        cfg = RunConfig().replace(doc)
    except ValueError as exc:
        raise ValueError(f"{config_path}: {exc}") from exc
    flags = {k: v for k, v in (flag_values or {}).items() if v is not None}
    env_seed = os.environ.get("SPLINE_SEED")
    if env_seed is not None and "seed" not in flags and "seed" not in doc:
        try:
            flags["seed"] = int(env_seed)
        except ValueError as exc:
            raise ValueError(f"SPLINE_SEED: expected an integer, got {env_seed!r}") from exc
    return cfg.replace(flags)
