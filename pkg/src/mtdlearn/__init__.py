"""Finite-memory alarm learning for slotted CDMA machine-type uplinks."""

from .analytics import (
    alarm_success_prob,
    brute_force_throughput,
    expected_delay_no_learning,
    expected_throughput,
    prob_success_at_least,
    prob_success_exact,
    s_max,
)
from .harness import ExperimentSpec, run_sweep, validate
from .mac import run_episode
from .params import SystemParams
from .topology import Topology, sample_deployment

__all__ = [
    "ExperimentSpec",
    "SystemParams",
    "Topology",
    "alarm_success_prob",
    "brute_force_throughput",
    "expected_delay_no_learning",
    "expected_throughput",
    "prob_success_at_least",
    "prob_success_exact",
    "run_episode",
    "run_sweep",
    "s_max",
    "sample_deployment",
    "validate",
]
