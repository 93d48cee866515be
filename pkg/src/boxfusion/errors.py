"""Error taxonomy shared across the toolkit.

Everything a caller can fix (bad data, bad parameters, bad configuration)
derives from ValidationError, which itself derives from ValueError so that
plain `except ValueError` keeps working.
"""

from __future__ import annotations


class BoxFusionError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(BoxFusionError, ValueError):
    """Input data or parameter values violate a documented contract."""


class ParseError(ValidationError):
    """An input file is syntactically malformed."""

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        line: int | None = None,
        column: int | None = None,
    ) -> None:
        location = ""
        if path is not None:
            location = str(path)
            if line is not None:
                location += f":{line}"
                if column is not None:
                    location += f":{column}"
            location += ": "
        super().__init__(location + message)
        self.path = path
        self.line = line
        self.column = column


class ConfigError(ValidationError):
    """A pipeline config, profile, or source-weight map is inconsistent."""


class DegenerateDistributionError(ValidationError):
    """A score distribution has no two-class separation to threshold."""


class PipelineError(BoxFusionError):
    """A pipeline stage failed; carries the stage name and the causing error."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
