"""Block compressive sensing of grayscale images with joint group and
residual sparse coding."""

from .coder import CoderParams, GroupCodes, GroupSplit, code_group, \
    code_group_internal, code_residual, internal_dictionary, split_group
from .config import RunConfig, load_run_config, save_run_config
from .gmm import EmState, GmmComponent, GmmModel, ResidualTrainingSet, \
    collect_residual_groups, component_dictionary, load_model, \
    log_likelihood, responsibilities, save_model, select_component, train_gmm
from .image_io import load_pgm, psnr, save_pgm
from .patches import GroupIndex, PatchGroup, block_match, gather_group, \
    reference_positions, scatter_accumulate
from .sensing import MeasurementMatrix, Measurements, adjoint, \
    generate_measurement_matrix, initial_estimate, load_measurements, \
    sample_image, save_measurements
from .solver import DivergenceError, IterationRecord, SolverConfig, \
    SolverState, alpha_update, b_update, hard_weight_from_config, \
    reconstruct, trace_to_csv, x_gradient, x_update
from .util import CorruptFileError

__version__ = "0.1.0"

__all__ = [
    "CoderParams", "GroupCodes", "GroupSplit", "code_group",
    "code_group_internal", "code_residual", "internal_dictionary",
    "split_group",
    "RunConfig", "load_run_config", "save_run_config",
    "EmState", "GmmComponent", "GmmModel", "ResidualTrainingSet",
    "collect_residual_groups", "component_dictionary", "load_model",
    "log_likelihood", "responsibilities", "save_model", "select_component",
    "train_gmm",
    "load_pgm", "psnr", "save_pgm",
    "GroupIndex", "PatchGroup", "block_match", "gather_group",
    "reference_positions", "scatter_accumulate",
    "MeasurementMatrix", "Measurements", "adjoint",
    "generate_measurement_matrix", "initial_estimate", "load_measurements",
    "sample_image", "save_measurements",
    "DivergenceError", "IterationRecord", "SolverConfig", "SolverState",
    "alpha_update", "b_update", "hard_weight_from_config", "reconstruct",
    "trace_to_csv", "x_gradient", "x_update",
    "CorruptFileError",
    "__version__",
]
