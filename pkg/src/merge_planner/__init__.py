"""Forced highway merging: online estimation of surrounding-vehicle
acceleration bounds, reachability-based occupancy prediction, rule-based
maneuver decisions and nonlinear MPC with dual collision constraints."""

__version__ = "0.1.0"
