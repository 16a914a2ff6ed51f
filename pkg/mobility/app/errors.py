from __future__ import annotations


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    pass


class InfeasibleServiceError(ScenarioError):
    pass


class SolverError(Exception):
    pass


class InstanceTooLargeError(SolverError):
    def __init__(self, message: str, *, size: int, bound: int) -> None:
        super().__init__(f"{message} (size={size}, bound={bound})")
        self.size = size
        self.bound = bound


class SubclassSolveError(SolverError):
    """One or more subclasses failed; `failures` keeps (index, origin, destination, error)."""

    def __init__(self, failures: list[tuple[int, str, str, Exception]]) -> None:
        detail = "; ".join(
            f"subclass {index} ({origin}->{destination}): {error}"
            for index, origin, destination, error in failures
        )
        super().__init__(f"subclass solve failed: {detail}")
        self.failures = failures


class MechanismError(Exception):
    def __init__(self, message: str, *, traveler_id: int | None = None) -> None:
        super().__init__(message)
        self.traveler_id = traveler_id


class CoordinationError(Exception):
    pass


class TeamModelError(CoordinationError):
    pass


class InconsistentInformationError(CoordinationError):
    pass


class PlanningTooLargeError(CoordinationError):
    def __init__(self, message: str, *, size: int, bound: int) -> None:
        super().__init__(f"{message} (size={size}, bound={bound})")
        self.size = size
        self.bound = bound


class ProtocolViolationError(CoordinationError):
    pass
