"""hyprl: hyperbolic representation toolkit for deep RL."""

from ._core import (
    BallConfig,
    DivergenceError,
    DQNConfig,
    EmbedResult,
    GridConfig,
    HyperbolicityReport,
    MetricsRecord,
    PPOConfig,
    ProcGridEnv,
    TrainConfig,
    TrainResult,
    conformal_factor,
    delta_fourpoint,
    delta_rel,
    delta_rel_matrix,
    dist,
    embed_tree,
    expmap0,
    expmap_at,
    gyroplane_affine,
    gyroplane_sdist,
    head_names,
    logmap0,
    mobius_add,
    project_to_ball,
    train_dqn,
    train_ppo,
    tree_metric,
)

__version__ = "0.1.0"

__all__ = [
    "BallConfig",
    "DivergenceError",
    "DQNConfig",
    "EmbedResult",
    "GridConfig",
    "HyperbolicityReport",
    "MetricsRecord",
    "PPOConfig",
    "ProcGridEnv",
    "TrainConfig",
    "TrainResult",
    "conformal_factor",
    "delta_fourpoint",
    "delta_rel",
    "delta_rel_matrix",
    "dist",
    "embed_tree",
    "expmap0",
    "expmap_at",
    "gyroplane_affine",
    "gyroplane_sdist",
    "head_names",
    "logmap0",
    "mobius_add",
    "project_to_ball",
    "train_dqn",
    "train_ppo",
    "tree_metric",
]
