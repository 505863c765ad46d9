#!/usr/bin/env python3
"""
=============================================================================
ERROR HIERARCHY
=============================================================================

Every failure raised by the library derives from ScopeLabError so callers
(the CLI, the sweep runner) can separate expected domain failures from bugs.

Each error keeps structured context next to the message: the offending row,
case, decision point or config key. The CLI turns these into exit codes:

• ConfigError                → exit 1
• any other ScopeLabError    → exit 2
=============================================================================
"""

from typing import Any, Dict, Optional


class ScopeLabError(Exception):
    """Base class for all library errors."""

    exit_code = 2

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = {k: v for k, v in context.items() if v is not None}

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON reports"""
        return {"error": type(self).__name__, "message": self.message, **self.context}


class EventLogError(ScopeLabError):
    """Malformed event-log content (bad row, non-monotonic case, unknown action)."""

    def __init__(self, message: str, row: Optional[int] = None,
                 case_id: Optional[str] = None, k: Optional[int] = None):
        super().__init__(message, row=row, case_id=case_id, k=k)
        self.row = row
        self.case_id = case_id
        self.k = k


class SchemaError(ScopeLabError):
    """Column or feature-schema problems."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message, column=column)
        self.column = column


class SimulationError(ScopeLabError):
    """Invalid action sequences or intractable enumerations."""


class BaseModelError(ScopeLabError):
    """Invalid training or prediction input for a base regressor."""


class PositivityError(ScopeLabError):
    """An action never observed at a decision point where it must be."""

    def __init__(self, message: str, action: Any = None, k: Optional[int] = None):
        super().__init__(message, action=action, k=k)
        self.action = action
        self.k = k


class TrainingError(ScopeLabError):
    """Backward induction produced unusable values."""

    def __init__(self, message: str, k: Optional[int] = None):
        super().__init__(message, k=k)
        self.k = k


class TuningError(ScopeLabError):
    """Hyperparameter search could not run."""


class GainError(ScopeLabError):
    """Gain is undefined for the given totals."""


class ConfigError(ScopeLabError):
    """Experiment configuration is invalid."""

    exit_code = 1

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message, key=key)
        self.key = key
