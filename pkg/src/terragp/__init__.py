"""Heteroscedastic Gaussian-process terrain mapping toolkit.

Two-stage regression for elevation maps with spatially varying sensor
noise: a noise GP is fit to log-variance samples and frozen, then a
terrain GP (exact or sparse variational) conditions its likelihood on
the frozen noise field.  Includes the synthetic-data protocol and the
calibration metrics used to compare against homoscedastic baselines.
"""

__version__ = "0.1.0"

from .datasets import Dataset, NormStats, from_arrays, grid_to_dataset
from .grids import DemGrid, downsample, hillshade, inject_noise, make_grid, read_asc, shadow_uncertainty, write_asc
from .kernels import KernelConfig, eval_kernel, gram
from .methods import MethodConfig, method_defaults
from .metrics import EvalReport, ause, nlpd, rmse, sparsification
from .synth import SynthParams, synth_terrain

__all__ = [
    "Dataset",
    "DemGrid",
    "EvalReport",
    "KernelConfig",
    "MethodConfig",
    "NormStats",
    "SynthParams",
    "ause",
    "downsample",
    "eval_kernel",
    "from_arrays",
    "gram",
    "grid_to_dataset",
    "hillshade",
    "inject_noise",
    "make_grid",
    "method_defaults",
    "nlpd",
    "read_asc",
    "rmse",
    "shadow_uncertainty",
    "sparsification",
    "synth_terrain",
    "write_asc",
]
