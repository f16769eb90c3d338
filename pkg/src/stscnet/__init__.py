"""Spiking neural networks with plug-in spatio-temporal synaptic
connection blocks: a numpy training stack with its own reverse-mode
autodiff, event-stream datasets, and a verification suite.

The layering is strictly bottom-up: ``autodiff`` (tape and primitives),
``ops`` (structured differentiable operations), ``neuron`` (the spiking
recurrence), ``synapse`` (the filtering/gating blocks), ``network``
(architecture strings to pipelines), ``training`` (loss, Adam, loops),
``gradcheck`` (finite-difference verification), plus ``events`` /
``datasets`` / ``checkpoint`` / ``config`` for data and run plumbing and
``cli`` for the command-line surface.
"""

from .autodiff import Parameter, Tape, Value
from .config import TrainConfig, default_config
from .errors import (
    CorruptInput,
    InvalidArgument,
    IOFailure,
    NumericError,
    SpecError,
    StateError,
    StscError,
)
from .gradcheck import grad_check, run_suite
from .network import Network, VotingLayer, parse_spec
from .neuron import LIFCell, LIFConfig, lif_forward
from .synapse import STSCConfig, STSCParams, fli_forward, stsc_forward, trf_forward
from .training import TrainResult, ablate, evaluate, train, voting_mse_loss

__version__ = "0.1.0"

__all__ = [
    "Parameter",
    "Tape",
    "Value",
    "TrainConfig",
    "default_config",
    "StscError",
    "InvalidArgument",
    "CorruptInput",
    "IOFailure",
    "SpecError",
    "NumericError",
    "StateError",
    "grad_check",
    "run_suite",
    "Network",
    "VotingLayer",
    "parse_spec",
    "LIFCell",
    "LIFConfig",
    "lif_forward",
    "STSCConfig",
    "STSCParams",
    "trf_forward",
    "fli_forward",
    "stsc_forward",
    "TrainResult",
    "train",
    "evaluate",
    "ablate",
    "voting_mse_loss",
    "__version__",
]
