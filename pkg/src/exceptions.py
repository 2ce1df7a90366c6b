"""
Exception hierarchy for the market solver.

Every error carries enough structure for the CLI to write a machine-readable
error file and choose an exit code.
"""

from typing import Any, Dict, List, Optional


class ScenarioValidationError(ValueError):
    """A scenario violates one or more model invariants."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Scenario validation failed: " + "; ".join(self.errors))

    def details(self) -> Dict[str, Any]:
        return {"errors": self.errors}


class ScenarioParseError(ValueError):
    """An input file could not be parsed."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = f"{self.path}"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")

    def details(self) -> Dict[str, Any]:
        return {"path": self.path, "line": self.line, "column": self.column}


class SolverError(RuntimeError):
    """Base class for follower and leader solver failures."""

    def __init__(self, message: str, residuals: Optional[Dict[str, float]] = None):
        self.residuals = dict(residuals or {})
        super().__init__(message)

    def details(self) -> Dict[str, Any]:
        return {"residuals": self.residuals}


class RayTerminationError(SolverError):
    """Complementary pivoting ended on a secondary ray."""

    def __init__(self, entering: int, ray_norm: float, pivots: int):
        self.entering = entering
        self.ray_norm = ray_norm
        self.pivots = pivots
        super().__init__(
            f"Ray termination after {pivots} pivots (entering variable {entering})",
            residuals={"ray_norm": ray_norm},
        )

    def details(self) -> Dict[str, Any]:
        return {
            "certificate": "secondary_ray",
            "entering": self.entering,
            "ray_norm": self.ray_norm,
            "pivots": self.pivots,
        }


class IterationLimitError(SolverError):
    """An iterative method stopped before meeting its tolerances."""


class InfeasibleGameError(SolverError):
    """The followers' collective feasible set is empty."""


class SearchFailedError(SolverError):
    """Every start of the leader search failed."""

    def __init__(self, diagnostics: List[Dict[str, Any]]):
        self.diagnostics = diagnostics
        super().__init__(f"All {len(diagnostics)} search starts failed")

    def details(self) -> Dict[str, Any]:
        return {"starts": self.diagnostics}


class EnumerationGuardError(ValueError):
    """The requested leader grid is too large to enumerate."""

    def __init__(self, points: int, limit: int):
        self.points = points
        self.limit = limit
        super().__init__(f"Grid of {points} points exceeds the limit of {limit}")

    def details(self) -> Dict[str, Any]:
        return {"points": self.points, "limit": self.limit}


class ExportError(ValueError):
    """The single-level model could not be exported."""

    def details(self) -> Dict[str, Any]:
        return {}
