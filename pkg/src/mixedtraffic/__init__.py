"""Mixed nonlocal/local traffic flow: k nonlocal classes transported with
convolution-based speeds, one local class with a Kruzhkov-type flux, coupled
by Picard iteration on adaptive time windows."""

from .config import load_config, load_preset
from .coupler import PicardConfig, PicardReport, evolve, lipschitz_probe, solve_window
from .grid import Grid1D, State, cbv1_norm, l1_norm, state_distance, tv, w11_norm
from .model import (Model, builtin_model, example1_law, forward_kernel,
                    gaussian_kernel, greenshields_c2_law, greenshields_law,
                    validate_hypotheses)

__version__ = "0.1.0"

__all__ = [
    "Grid1D", "State", "l1_norm", "tv", "w11_norm", "cbv1_norm", "state_distance",
    "Model", "builtin_model", "gaussian_kernel", "forward_kernel", "greenshields_law",
    "greenshields_c2_law", "example1_law", "validate_hypotheses",
    "load_config", "load_preset",
    "PicardConfig", "PicardReport", "evolve", "solve_window", "lipschitz_probe",
]
