"""Spacing-aware slice interpolation for anisotropic volumes.

Two networks run in sequence: a meta-interpolation network super-resolves
sagittal and coronal slices along z for any integer factor, and a residual
fusion network merges the two views slice by slice.
"""

from .fileio import ContainerError, load_svol, save_svol
from .params import ParamSet, load_params, save_params
from .pipeline import ExperimentConfig, baseline_interp, saint_infer
from .volume import Volume, decimate_z, phantom

__version__ = "0.1.0"

__all__ = [
    "ContainerError",
    "ExperimentConfig",
    "ParamSet",
    "Volume",
    "baseline_interp",
    "decimate_z",
    "load_params",
    "load_svol",
    "phantom",
    "saint_infer",
    "save_params",
    "save_svol",
]
