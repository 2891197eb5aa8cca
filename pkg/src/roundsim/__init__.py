"""Dual-mode round-based distributed algorithm simulator.

The same peer code and experiment document run either as an abstract
synchronous-round simulation in one process or as socket-connected leader
and follower processes, with a programmable Byzantine fault layer and a
reference suite of eight protocols.
"""

from .config import (ChannelSpec, ConcreteSpec, ConfigError, ExperimentConfig,
                     FaultAssignment, ParseError, TopologySpec,
                     UnsupportedAlgorithmError, ValidationError,
                     build_topology, expand_fault_assignments, load_experiment,
                     parse_experiment)
from .engine import (RunSummary, TestResult, run_computation, run_experiment,
                     run_reference_computation)
from .seeds import derive_seed

__version__ = "0.1.0"

__all__ = [
    "ChannelSpec", "ConcreteSpec", "ConfigError", "ExperimentConfig",
    "FaultAssignment", "ParseError", "TopologySpec",
    "UnsupportedAlgorithmError", "ValidationError",
    "build_topology", "expand_fault_assignments", "load_experiment",
    "parse_experiment", "RunSummary", "TestResult", "run_computation",
    "run_experiment", "run_reference_computation", "derive_seed",
    "__version__",
]
