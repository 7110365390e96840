"""Planar magnetic-field odometry with attitude-invariant loop closure.

A ground robot carries a rate gyro and a four-magnetometer array. Field and
gradient readings give pseudomeasurements that tie consecutive poses
together, invariant scalars of the field flag revisited places, and a
sparse batch solver fuses everything over the whole trajectory.
"""
from .errors import MagNavError
from .geometry import Pose2

__version__ = "0.1.0"

__all__ = ["MagNavError", "Pose2", "__version__"]
