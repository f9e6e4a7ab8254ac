"""Macroscopic highway traffic control with platoons as moving bottlenecks.

A numpy library for simulating first-order (kinematic wave) traffic with
capacity drop and controlled vehicle platoons, and for synthesizing platoon
speed commands with iterative LQR, PI and MPC controllers.
"""

from platoonctl.dynamics import (
    BoundaryConditions,
    FundamentalDiagram,
    Grid,
    Platoon,
    TrafficModel,
    TrafficState,
)
from platoonctl.scenario import Scenario, benchmark_scenario
from platoonctl.runner import Metrics, RunResult, run, sweep

__all__ = [
    "BoundaryConditions",
    "FundamentalDiagram",
    "Grid",
    "Platoon",
    "TrafficModel",
    "TrafficState",
    "Scenario",
    "benchmark_scenario",
    "Metrics",
    "RunResult",
    "run",
    "sweep",
]

__version__ = "0.1.0"
