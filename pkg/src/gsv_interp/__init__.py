"""Graph-based interpolation of checkerboard-sampled grayscale images."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .graphmodel import (
    BaseInterpolator,
    DenoisingLaplacian,
    DirectedPerturbation,
    EdgeParams,
    MetricMatrix,
    PixelPartition,
    build_bilinear_theta,
    checkerboard_partition,
    signed_weight,
    unsigned_weight,
)
from .imaging import GrayImage, PatchGrid, load_pgm, psnr, read_pgm, save_pgm, ssim, write_pgm
from .linalg import LinalgError, SparseMatrix, bicg_solve, cg_solve, lu_solve
from .mapsolver import SolverParams, dr_run, perturbed_interpolate
from .modelfile import load_model, save_model
from .pipeline import InterpModel, interpolate_image
from .tuner import PatchDataset, TrainConfig, tune

__version__ = "0.1.0"
