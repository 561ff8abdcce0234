"""Exception hierarchy shared across the toolkit.

User-facing errors (bad input, bad config, unparseable files) derive from
UserError and map to CLI exit code 1; everything else maps to exit code 2.
"""


class XLAdaptError(Exception):
    """Base class for all toolkit errors."""


class UserError(XLAdaptError):
    """Errors caused by user input; CLI exit code 1."""


class InputError(UserError):
    """Invalid data handed to an operation (empty corpus, NaN weights, ...)."""


class ConfigError(UserError):
    """Invalid configuration value, unknown key, or unsupported parameter."""


class ParseError(UserError):
    """Malformed input file. Carries a line number when one is known."""

    def __init__(self, message: str, line: "int | None" = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ComputeError(XLAdaptError):
    """A computation cannot produce a meaningful result (e.g. zero denominator)."""


class ShapeError(XLAdaptError):
    """Operand dimensions are incompatible."""


class FormatError(UserError):
    """Corrupted or unrecognized binary file content."""


class TemplateError(UserError):
    """Prompt template slot cannot be resolved."""


class ParseFailure(XLAdaptError):
    """Judge output contains no parseable score."""


class RangeError(XLAdaptError):
    """Parsed value lies outside its allowed range."""


class ModelContractError(XLAdaptError):
    """A model callable violated its contract (e.g. unnormalized distribution)."""


class BackendError(XLAdaptError):
    """Judge backend failed after exhausting retries."""


class InternalError(XLAdaptError):
    """Invariant violation that indicates a bug, not bad input."""
