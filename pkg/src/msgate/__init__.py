"""Simulation and calibration of continuously parameterized MS gates."""

__version__ = "0.1.0"
