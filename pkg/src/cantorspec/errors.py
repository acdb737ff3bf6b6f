"""Exception types shared across the package."""

from __future__ import annotations


class CantorSpecError(Exception):
    """Base class for all package errors."""


class NoAdmissibleModulus(CantorSpecError):
    pass


class DegenerateWindow(CantorSpecError):
    pass


class QuadratureNotConverged(CantorSpecError):
    pass


class StrictModeInfeasible(CantorSpecError):
    pass


class TruncationBudgetExceeded(CantorSpecError):
    def __init__(self, message: str, total: float = float("nan"), cap: float = float("nan")):
        super().__init__(message)
        self.total = total
        self.cap = cap


class HypothesisViolated(CantorSpecError):
    def __init__(self, predicate: str, witness: int | None = None, detail: str = ""):
        msg = f"hypothesis {predicate} violated"
        if witness is not None:
            msg += f" at s={witness}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.predicate = predicate
        self.witness = witness


class PreconditionUnmet(CantorSpecError):
    pass


class InsufficientBlocks(CantorSpecError):
    pass


class EvenScale(CantorSpecError):
    pass


class DomainError(CantorSpecError, ValueError):
    pass


class ConfigError(CantorSpecError, ValueError):
    pass
