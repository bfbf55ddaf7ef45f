"""Exception hierarchy shared by the PaLM engine modules."""

from __future__ import annotations

from typing import Dict, Optional


class PalmError(Exception):
    """Base class for every error raised deliberately by the engine."""


class CorpusError(PalmError):
    """Raised for empty corpora, bad window parameters or vocabulary files."""


class TreeFormatError(CorpusError):
    """Raised when a bracketed tree cannot be read."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(PalmError):
    """Raised for unknown keys or malformed values in a run configuration."""


class CheckpointError(PalmError):
    """Raised when a checkpoint file cannot be read back."""


class VocabularyMismatchError(CheckpointError):
    """Raised when a corpus vocabulary disagrees with a checkpoint."""


class ParseError(PalmError):
    """Raised by decoding and parse evaluation."""


class TrainingDivergedError(PalmError):
    """Raised when a training loss stops being finite."""

    def __init__(self, epoch: int, window_index: int, losses: Dict[str, float]) -> None:
        self.epoch = epoch
        self.window_index = window_index
        self.losses = dict(losses)
        detail = ", ".join(f"{key}={value!r}" for key, value in self.losses.items())
        super().__init__(
            f"non-finite loss at epoch {epoch}, window {window_index}: {detail}"
        )


__all__ = [
    "PalmError",
    "CorpusError",
    "TreeFormatError",
    "ConfigError",
    "CheckpointError",
    "VocabularyMismatchError",
    "ParseError",
    "TrainingDivergedError",
]
