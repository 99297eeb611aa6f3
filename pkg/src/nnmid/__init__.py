"""Identification of nonlinear normal modes from broadband measurements.

The package simulates a nonlinear finite-element beam, identifies a
nonlinear state-space model with frequency-domain subspace methods,
converts it into an undamped modal model and follows its nonlinear normal
modes by shooting and pseudo-arclength continuation. A virtual
phase-resonance test provides an independent check.
"""

from .basis import (NonlinearBasis, PolynomialTerm, SplineBasis, SplineTerm,
                    benchmark_basis, build_spline_basis, polynomial_basis)
from .continuation import (NNMBranch, NNMContinuation, PeriodicSolution, branch_outputs,
                           continue_branch, correct, shoot)
from .errors import NNMError
from .excitation import (MultisineSpec, SteppedSineSchedule, generate_multisine,
                         stepped_sine_signal)
from .fnsi import (FNSI, SpectralData, StateSpaceModel, build_spectra,
                   extract_modal_parameters, mac, nonlinear_coefficients, stabilization,
                   subspace_identify)
from .modal import ModalModel, build_modal_model, modal_model_from_fe
from .model import FEModel, assemble_beam_model
from .phaseres import (appropriation_sweep, compare_backbones, free_decay,
                       wavelet_ridge)
from .simulate import TimeSeriesRecord, add_noise, decimate, newmark_integrate

__version__ = "0.1.0"

__all__ = [
    "FEModel", "assemble_beam_model", "NonlinearBasis", "PolynomialTerm", "SplineBasis",
    "SplineTerm", "benchmark_basis", "build_spline_basis", "polynomial_basis",
    "MultisineSpec", "SteppedSineSchedule", "generate_multisine", "stepped_sine_signal",
    "TimeSeriesRecord", "newmark_integrate", "decimate", "add_noise",
    "FNSI", "SpectralData", "StateSpaceModel", "build_spectra", "subspace_identify",
    "extract_modal_parameters", "mac", "nonlinear_coefficients", "stabilization",
    "ModalModel", "build_modal_model", "modal_model_from_fe",
    "PeriodicSolution", "NNMBranch", "NNMContinuation", "shoot", "correct",
    "continue_branch", "branch_outputs",
    "appropriation_sweep", "free_decay", "wavelet_ridge", "compare_backbones",
    "NNMError",
]
