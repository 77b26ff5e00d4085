"""Python bindings for the voxbox segmentation engine."""

import json as _json

from ._voxbox import (
    ChecksumError,
    ConfigError,
    IoError,
    Model,
    NonFiniteError,
    ShapeError,
    VoxboxError,
    cv_split,
    default_config_json,
    dice_ce_loss,
    dsc,
    fnv1a64,
    iou,
    lr_at,
    partition,
    read_features,
    read_nifti,
    reorient_ras,
    selftest,
    sphere_phantom,
    vol_error_pct,
    write_features,
    write_nifti,
)


def model(config=None):
    """Builds a Model from a dict (merged over the defaults' sections) or a JSON string."""
    if config is None or isinstance(config, dict):
        return Model(_json.dumps(config or {}))
    return Model(config)


__all__ = [name for name in dir() if not name.startswith("_")]
