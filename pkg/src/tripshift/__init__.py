"""Exact vehicle scheduling with trip shifting on time-expanded networks."""

from .ddd import DddConfig, IterationRecord, ScheduleSolution, solve_ddd, solve_fd
from .instance import GenParams, Instance, Location, Trip, generate_instance, load_instance, save_instance
from .timenet import TimePointSet, build_full_network, build_partial_network

__version__ = "0.1.0"

__all__ = [
    "DddConfig", "IterationRecord", "ScheduleSolution", "solve_ddd", "solve_fd", "GenParams",
    "Instance", "Location", "Trip", "generate_instance", "load_instance", "save_instance",
    "TimePointSet", "build_full_network", "build_partial_network",
]
