"""Exception hierarchy shared by all superclt modules."""

from __future__ import annotations


class SuperCLTError(Exception):
    """Base class for every error raised by the package."""


class InputError(SuperCLTError, ValueError):
    """An argument is outside the operation's domain."""


class IndexRangeError(InputError):
    """An eigen-level or Hermite index lies outside the configured truncation."""


class TruncationError(SuperCLTError):
    """A product expansion would need Hermite orders beyond ``k_max``."""


class RegimeError(InputError):
    """A function is not in the spectral class an operation requires."""


class ConfigurationError(InputError):
    """Model or simulation parameters are inconsistent."""


class ResourceError(SuperCLTError):
    """A replica outgrew its population cap.

    ``state`` carries the partial population at the moment of the breach so
    callers can inspect how far the run got.
    """

    def __init__(self, message: str, state=None, replica_id: int | None = None):
        super().__init__(message)
        self.state = state
        self.replica_id = replica_id


class EnsembleResourceError(ResourceError):
    """One or more replicas of an ensemble breached the population cap."""

    def __init__(self, failures: list[ResourceError]):
        ids = ", ".join(str(f.replica_id) for f in failures)
        super().__init__(f"population cap exceeded in replicas [{ids}]")
        self.failures = failures


class InsufficientDataError(SuperCLTError):
    """Too few usable replicas for a statistical check."""
