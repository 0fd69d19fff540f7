"""Discrete-time queueing simulator with heavy-traffic analysis tools."""

from .analysis import (
    HTPrediction,
    exponential_reference,
    predict_gs,
    predict_lb,
    predict_single,
    predict_switch,
)
from .model import ConfigurationError, InvariantViolation, SlotRecord, step
from .simulate import SimConfig, SimEstimates, run
from .systems import SystemModel, generalized_switch, input_queued_switch, load_balancing, single_server

__all__ = [
    "ConfigurationError", "InvariantViolation", "SlotRecord", "step",
    "HTPrediction", "exponential_reference", "predict_single", "predict_lb", "predict_gs", "predict_switch",
    "SimConfig", "SimEstimates", "run",
    "SystemModel", "single_server", "load_balancing", "generalized_switch", "input_queued_switch",
]
