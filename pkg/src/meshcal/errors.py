"""Exception hierarchy shared across the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


# --- Lie group ---

class AngleNearPi(CalibrationError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


# --- Robot model / kinematics ---

class ParseError(CalibrationError):
    """Malformed robot description."""


class KinematicLoop(CalibrationError):
    """Link/joint graph is not a tree."""


class MissingMesh(CalibrationError):
    """Mesh reference could not be resolved or loaded."""


class DimensionMismatch(CalibrationError):
    """Joint vector length does not match the robot model."""


class DegenerateMesh(CalibrationError):
    """Mesh has zero total surface area."""


# --- Sensing ---

class EmptyObservation(CalibrationError):
    """No observed points survived masking across all configurations."""


# --- Registration ---

class DegenerateCentroids(CalibrationError):
    """Per-configuration centroids are collinear or coincident."""


class TooFewCorrespondences(CalibrationError):
    """Fewer than 6 correspondences after distance rejection."""


class IllConditioned(CalibrationError):
    """Weighted normal matrix is numerically singular."""


# --- Evaluation ---

class BehindCamera(CalibrationError):
    """Point has non-positive depth after transformation into camera frame."""


class DegenerateTag(CalibrationError):
    """Detected tag corners collapse to (nearly) a line."""


class InsufficientConfigurations(CalibrationError):
    """Not enough configurations for the requested cross-validation sizes."""


# --- Dataset / CLI ---

class ManifestError(CalibrationError):
    """Dataset manifest is invalid or references missing files."""
