"""
Custom exceptions for the matrix RL lab
"""
from .logging_config import get_logger
from typing import Any, Optional, Tuple

logger = get_logger(__name__)


class LabError(Exception):
    """Base exception for every failure raised by the lab"""
    init_fields: Tuple[str, ...] = ('message', 'details')

    def __init__(self, message: str, details: Optional[Any] = None):
        self.message = message
        self.details = details
        super().__init__(self.message)
        logger.error(f"{type(self).__name__}: {message}")

    def __reduce__(self):
        # unpickling re-runs __init__ with these attributes
        return type(self), tuple(getattr(self, name) for name in self.init_fields)


class InvalidModel(LabError):
    """Raised when a core does not induce row-stochastic transitions"""
    init_fields = ('reason', 'state', 'action')

    def __init__(self, reason: str, state: Optional[int] = None, action: Optional[int] = None):
        self.reason = reason
        self.state = state
        self.action = action

        message = "Not a valid linear-transition MDP"
        if state is not None:
            message += f" at (s={state}, a={action})"
        message += f": {reason}"

        super().__init__(message, {'reason': reason, 'state': state, 'action': action})


class SingularKPsi(LabError):
    """Raised when the next-state Gram matrix K_psi cannot be inverted"""
    init_fields = ('smallest_singular_value', 'tolerance')

    def __init__(self, smallest_singular_value: float, tolerance: float):
        self.smallest_singular_value = smallest_singular_value
        self.tolerance = tolerance

        message = (
            f"K_psi is singular: smallest singular value {smallest_singular_value:.3e} "
            f"is below {tolerance:.1e}"
        )
        details = {
            'smallest_singular_value': smallest_singular_value,
            'tolerance': tolerance
        }

        super().__init__(message, details)


class InvalidFamily(LabError):
    """Raised when a task family cannot be sampled from"""
    init_fields = ('reason',)

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Invalid task family: {reason}", {'reason': reason})


class DimensionMismatch(LabError):
    """Raised when a vector or matrix has the wrong shape"""
    init_fields = ('what', 'expected', 'actual')

    def __init__(self, what: str, expected: Any, actual: Any):
        self.what = what
        self.expected = expected
        self.actual = actual

        message = f"Dimension mismatch for {what}: expected {expected}, got {actual}"
        super().__init__(message, {'what': what, 'expected': str(expected), 'actual': str(actual)})


class InvalidDelta(LabError):
    """Raised when a confidence parameter lies outside (0, 1)"""
    init_fields = ('delta',)

    def __init__(self, delta: float):
        self.delta = delta
        super().__init__(f"Confidence parameter delta={delta} must lie in (0, 1)", {'delta': delta})


class EmptyHistory(LabError):
    """Raised when a low-bias average is requested with nothing to average"""
    init_fields = ('num_previous', 'current_count')

    def __init__(self, num_previous: int, current_count: int):
        self.num_previous = num_previous
        self.current_count = current_count

        message = (
            f"No estimates to average: {num_previous} previous tasks and "
            f"{current_count} transitions in the current task"
        )
        super().__init__(message, {'num_previous': num_previous, 'current_count': current_count})


class IncompleteLog(LabError):
    """Raised when a feature log cannot be used by a lemma checker"""
    init_fields = ('lemma', 'reason')

    def __init__(self, lemma: str, reason: str):
        self.lemma = lemma
        self.reason = reason
        super().__init__(f"Incomplete feature log for '{lemma}': {reason}", {'lemma': lemma, 'reason': reason})


class ConfigError(LabError):
    """Raised when an experiment configuration is invalid"""
    init_fields = ('field', 'reason', 'original_error')

    def __init__(self, field: str, reason: str, original_error: Optional[Exception] = None):
        self.field = field
        self.reason = reason
        self.original_error = original_error

        message = f"Invalid configuration field '{field}': {reason}"
        if original_error:
            message += f" ({original_error})"

        details = {
            'field': field,
            'reason': reason,
            'original_error': str(original_error) if original_error else None
        }

        super().__init__(message, details)


class IncompatibleRuns(LabError):
    """Raised when run directories cannot be compared"""
    init_fields = ('reason', 'run_dirs')

    def __init__(self, reason: str, run_dirs: Optional[list] = None):
        self.reason = reason
        self.run_dirs = [str(d) for d in (run_dirs or [])]
        super().__init__(f"Runs are not comparable: {reason}", {'reason': reason, 'run_dirs': self.run_dirs})


class OutputError(LabError):
    """Raised when writing or reading run output fails"""
    init_fields = ('output_format', 'output_path', 'original_error')

    def __init__(self, output_format: str, output_path: str, original_error: Optional[Exception] = None):
        self.output_format = output_format
        self.output_path = output_path
        self.original_error = original_error

        message = f"Failed to handle {output_format} output at '{output_path}'"
        if original_error:
            message += f": {str(original_error)}"

        details = {
            'output_format': output_format,
            'output_path': output_path,
            'original_error': str(original_error) if original_error else None
        }

        super().__init__(message, details)


class MetaTrainingAborted(LabError):
    """Raised when a task fails during meta-training; carries the partial record"""
    init_fields = ('stage', 'task_index', 'partial_record', 'original_error')

    def __init__(self, stage: str, task_index: int, partial_record: Any, original_error: Optional[Exception] = None):
        self.stage = stage
        self.task_index = task_index
        self.partial_record = partial_record
        self.original_error = original_error

        message = f"Meta-training aborted in {stage} task {task_index}"
        if original_error:
            message += f": {str(original_error)}"

        details = {
            'stage': stage,
            'task_index': task_index,
            'original_error': str(original_error) if original_error else None
        }

        super().__init__(message, details)
