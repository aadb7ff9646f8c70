"""Sparse, plausible counterfactual explanations via accelerated proximal gradient."""

from .classifier import Classifier, LossConfig, load_model, make_linear, make_mlp, save_model, train_adam
from .metrics import LofIndex, aggregate_report, theta_p
from .numerics import make_rng
from .plausibility import fit_plausibility, kde_fit
from .proximal import Box, Constraint, Penalty
from .solver import CfeResult, NumericalError, SolverConfig, apg_solve

__all__ = [
    "Box", "CfeResult", "Classifier", "Constraint", "LofIndex", "LossConfig", "NumericalError",
    "Penalty", "SolverConfig", "aggregate_report", "apg_solve", "fit_plausibility", "load_model",
    "kde_fit", "make_linear", "make_mlp", "make_rng", "save_model", "theta_p", "train_adam",
]
__version__ = "0.1.0"
