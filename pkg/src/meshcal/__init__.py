"""Marker-free hand-eye calibration via robust point-to-plane mesh registration."""

from .errors import CalibrationError
from .estimator import HandEyeCalibrator
from .liegroup import Pose, Twist, exp_se3, log_se3
from .registration import RegistrationConfig, RegistrationReport, register

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "HandEyeCalibrator",
    "Pose",
    "Twist",
    "exp_se3",
    "log_se3",
    "RegistrationConfig",
    "RegistrationReport",
    "register",
    "__version__",
]
