"""Diffusion-model learning toolkit: Bass/SIR simulation, Fisher information,
closed-form estimators, discrete-time MLE fitting, and seeded scaling studies.
"""

__version__ = "0.1.0"

from .core import (
    DiffusionState,
    JumpKind,
    JumpLedger,
    ModelParams,
    ObservationSet,
    Regime,
    RngStream,
    reconstruct_state,
    validate_params,
)

__all__ = [
    "DiffusionState",
    "JumpKind",
    "JumpLedger",
    "ModelParams",
    "ObservationSet",
    "Regime",
    "RngStream",
    "reconstruct_state",
    "validate_params",
    "__version__",
]
