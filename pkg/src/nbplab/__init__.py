"""Neutron branching processes: event-driven simulation, grid oracles on rods,
skeletal decomposition and large-time checks."""
from .cross_sections import (CrossSectionModel, HypothesisReport, ValidationError, gw3_model, rod_model,
                             validate_hypotheses)
from .engine import ParticleSystem, SimConfig, Trajectory, simulate, simulate_many
from .phase_space import Ball, Box, DiscreteVelocities, Interval, PhasePoint, VelocityAnnulus, advect, exit_time
from .rod import EigenTriple, Grid, SurvivalField, power_iteration, solve_w, step_psi
from .skeleton import DressedDynamics, build_down, build_up, reconstruct_mixture
from .stats import TestReport, stream

__all__ = [
    "Ball", "Box", "CrossSectionModel", "DiscreteVelocities", "DressedDynamics", "EigenTriple", "Grid",
    "HypothesisReport", "Interval", "ParticleSystem", "PhasePoint", "SimConfig", "SurvivalField", "TestReport",
    "Trajectory", "ValidationError", "VelocityAnnulus", "advect", "build_down", "build_up", "exit_time",
    "gw3_model", "power_iteration", "reconstruct_mixture", "rod_model", "simulate", "simulate_many", "solve_w",
    "step_psi", "stream", "validate_hypotheses",
]
__version__ = "0.1.0"
