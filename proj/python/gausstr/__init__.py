from ._core import (
    Camera,
    ConfigError,
    DataError,
    NumericError,
    Scene,
    Trainer,
    __version__,
    assemble_covariance,
    ce_loss_value,
    cosine_loss_value,
    depth_loss_value,
    generate_scene,
    iou_report,
    look_at,
    pca_fit,
    pca_project,
    project,
    render,
    set_threads,
    unproject,
    voxelize,
)

EMPTY_CELL = 255

__all__ = [
    "Camera",
    "ConfigError",
    "DataError",
    "EMPTY_CELL",
    "NumericError",
    "Scene",
    "Trainer",
    "__version__",
    "assemble_covariance",
    "ce_loss_value",
    "cosine_loss_value",
    "depth_loss_value",
    "generate_scene",
    "iou_report",
    "look_at",
    "pca_fit",
    "pca_project",
    "project",
    "render",
    "set_threads",
    "unproject",
    "voxelize",
]
