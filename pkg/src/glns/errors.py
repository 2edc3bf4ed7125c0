"""Exception types shared across the package."""


class GlnsError(Exception):
    """Base class for all package errors."""


class ConfigError(GlnsError):
    """Invalid configuration values."""


class InvalidSolutionError(GlnsError):
    """Solution shape does not match the instance (e.g. wrong length)."""


class InfeasibleSolutionError(GlnsError):
    """Solution violates coverage or capacity constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class OperatorError(GlnsError):
    """A destroy/repair operator was called outside its contract."""


class SelectionError(GlnsError):
    """Roulette or parent selection received unusable weights."""


class StateError(GlnsError):
    """Portfolio state indices or dimensions are inconsistent."""


class ParseError(GlnsError):
    """Malformed input text (file or backend response)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class UnsupportedFormatError(GlnsError):
    """File declares a variant this tool does not read."""


class FormatError(GlnsError):
    """File parsed but violates a structural rule of its format."""


class BackendError(GlnsError):
    """Code-generation backend failed after retries."""


class SandboxUnavailableError(GlnsError):
    """Sandbox worker could not be started (infrastructure, not candidate)."""


class SeedingError(GlnsError):
    """Population seeding could not fill every slot."""


class ReplenishError(GlnsError):
    """Replenishment exhausted the backend and no fallback was possible."""
