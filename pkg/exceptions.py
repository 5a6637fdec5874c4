from typing import Any


class PdgPlayError(Exception):
    pass


class ValidationError(PdgPlayError):
    pass


class NonFiniteInputError(ValidationError):
    pass


class AgentCountMismatchError(ValidationError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"Expected {expected} agents, got {got}")
        self.expected: int = expected
        self.got: int = got


class GoalMissingError(ValidationError):
    pass


class DataError(PdgPlayError):
    pass


class SchemaError(DataError):
    pass


class DuplicateFrameError(DataError):
    pass


class InsufficientFramesError(DataError):
    pass


class UnclassifiableTrackError(DataError):
    def __init__(self, message, track_id: str) -> None:
        super().__init__(message)
        self.track_id: str = track_id


class SolverError(PdgPlayError):
    def __init__(self, message, report: Any = None) -> None:
        super().__init__(message)
        self.report: Any = report


class SolverDivergenceError(SolverError):
    def __init__(self, message, last_iterate: Any, report: Any = None) -> None:
        super().__init__(message, report)
        self.last_iterate: Any = last_iterate


class AllStartsFailedError(SolverError):
    pass


class CalibrationError(SolverError):
    pass


class ArtifactIOError(PdgPlayError):
    pass
