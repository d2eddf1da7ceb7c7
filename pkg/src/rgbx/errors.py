"""Typed errors shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
CheckpointError -> 4. Everything else is a plain bug.
"""


class RgbxError(Exception):
    """Base class for all package errors."""


class ConfigError(RgbxError):
    """Invalid, unknown, or out-of-range configuration."""


class DataError(RgbxError):
    """Dataset generation, validation, or I/O failure."""


class CheckpointError(RgbxError):
    """Checkpoint format, version, or geometry mismatch."""


class ShapeError(RgbxError):
    """Array shape or geometry mismatch between components."""


class ScheduleError(RgbxError):
    """Invalid noise-schedule parameters or timestep out of range."""


class LayoutError(RgbxError):
    """Invalid layout condition (boxes, masks, labels)."""


class CaptionError(RgbxError):
    """Caption tokenization or length-budget violation."""


class PlacementError(DataError):
    """Scene objects could not be placed on the canvas."""
