"""Exception hierarchy shared by every pipeline stage.

Each error carries a short machine-readable ``code`` (e.g. ``"invalid-gps"``)
and the process exit status the CLI maps it to.
"""

from __future__ import annotations


class PipelineError(Exception):
    exit_code = 4

    def __init__(self, code: str, message: str = "") -> None:
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class ShapeError(PipelineError):
    def __init__(self, message: str = "") -> None:
        super().__init__("shape-error", message)
