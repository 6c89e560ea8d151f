"""Shared exception types."""


class ConfigError(Exception):
    """Invalid run configuration (bad value, missing file, malformed config line)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class DegenerateInitError(RuntimeError):
    """Point re-initialization found no confident pixels in any view."""
