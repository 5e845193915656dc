"""
Typed errors raised across the engine.

Library code raises these; only cli.py turns them into exit codes.
"""
from typing import Optional


class HarError(Exception):
    """Base class for every error the engine raises on purpose."""


class ShapeError(HarError):
    """Array shapes disagree with each other or with the configuration."""


class ParameterError(HarError):
    """A numeric parameter is outside its allowed range."""


class EmptyFrameError(HarError):
    """A frame carries no points and cannot be aligned."""


class ConfigError(HarError):
    """Invalid or inconsistent configuration."""


class NumericalError(HarError):
    """A NaN or Inf showed up where values must stay finite."""


class StreamError(HarError):
    """The live frame feed broke an ordering or format rule."""


class DatasetError(HarError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, recording: Optional[str] = None):
        self.line = line
        self.recording = recording
        if line is not None:
            message = f"line {line}: {message}"
        if recording is not None:
            message = f"recording {recording}: {message}"
        super().__init__(message)


class ModelFileError(HarError):
    """A model file is corrupt, truncated or from another format version."""

    def __init__(self, message: str, reason: str):
        self.reason = reason
        super().__init__(message)
