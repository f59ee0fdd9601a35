"""Discrete-event simulator for multitasking terminals on mixed wired/wireless networks."""

from hetsim.markov import ServiceChain, StationaryDistribution, steady_state, validate_chain
from hetsim.admission import AdmissionController, Task
from hetsim.scenario import ScenarioConfig, parse_scenario, reference_scenario, serialize_scenario
from hetsim.netsim import SimulationReport, run_scenario

__all__ = [
    "AdmissionController",
    "ScenarioConfig",
    "ServiceChain",
    "SimulationReport",
    "StationaryDistribution",
    "Task",
    "parse_scenario",
    "reference_scenario",
    "run_scenario",
    "serialize_scenario",
    "steady_state",
    "validate_chain",
]
