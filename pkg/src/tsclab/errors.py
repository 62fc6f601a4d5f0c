"""Exception types shared across the package.

Every error carries a stable ``code`` (its class name) so it can be
serialized over the attribute bus and re-raised on the client side.
"""
from typing import List, Optional


class Error(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- scenario ---------------------------------------------------------------

class ParseError(Error):
    """Scenario file is not syntactically valid."""


class Violation:
    """A single validation finding (data, not an exception)."""

    def __init__(self, code: str, message: str, where: str = ""):
        self.code = code
        self.message = message
        self.where = where

    def __repr__(self) -> str:
        loc = f" at {self.where}" if self.where else ""
        return f"Violation({self.code}{loc}: {self.message})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Violation)
            and (self.code, self.message, self.where)
            == (other.code, other.message, other.where)
        )


class ValidationError(Error):
    """Scenario is syntactically valid but semantically broken."""

    def __init__(self, violations: List[Violation]):
        self.violations = violations
        lines = "; ".join(repr(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"{len(violations)} violation(s): {lines}{more}")


class UnknownPreset(Error):
    pass


# --- engine -----------------------------------------------------------------

class ZeroRate(Error):
    pass


class HorizonExceeded(Error):
    pass


class UnknownLane(Error):
    pass


class NoVehicles(Error):
    pass


class BlockedEntry(Error):
    """Probe injection point is occupied."""


# --- signals ----------------------------------------------------------------

class EmptyProgram(Error):
    pass


class UnknownPhase(Error):
    pass


class BadTiming(Error):
    pass


# --- attribute bus ----------------------------------------------------------

class UnknownPath(Error):
    pass


class ReadOnlyPath(Error):
    pass


class BadValue(Error):
    pass


class TransportError(Error):
    pass


# --- facade -----------------------------------------------------------------

class AlreadyStarted(Error):
    pass


class NotStarted(Error):
    pass


class UnknownIntersection(Error):
    pass


class LengthMismatch(Error):
    pass


# --- rl environment ---------------------------------------------------------

class ConfigError(Error):
    pass


class MissingAgentAction(Error):
    pass


class OutOfSpaceAction(Error):
    pass


# --- agents -----------------------------------------------------------------

class PlanMismatch(Error):
    pass


# --- bench ------------------------------------------------------------------

class WorkloadMismatch(Error):
    pass


# --- analysis ---------------------------------------------------------------

class NonPositiveInput(Error):
    pass


class BothZero(Error):
    pass


class WindowOutOfRange(Error):
    pass


class Aperiodic(Error):
    pass


def remote_error(code: str, message: str) -> Error:
    """Rebuild an error from its wire form, falling back to the base class."""
    cls = _CODE_MAP.get(code, Error)
    if cls is ValidationError:
        err: Error = Error(message)  # violation detail is not transported
    else:
        err = cls(message)
    return err


_CODE_MAP = {
    cls.__name__: cls
    for cls in [
        ParseError, ValidationError, UnknownPreset,
        ZeroRate, HorizonExceeded, UnknownLane, NoVehicles, BlockedEntry,
        EmptyProgram, UnknownPhase, BadTiming,
        UnknownPath, ReadOnlyPath, BadValue, TransportError,
        AlreadyStarted, NotStarted, UnknownIntersection, LengthMismatch,
        ConfigError, MissingAgentAction, OutOfSpaceAction,
        PlanMismatch, WorkloadMismatch,
        NonPositiveInput, BothZero, WindowOutOfRange, Aperiodic,
    ]
}
