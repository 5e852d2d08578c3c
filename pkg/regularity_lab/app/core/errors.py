# regularity_lab/app/core/errors.py
from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_VERDICT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3


class LabError(Exception):
    """
    Base error of the lab; carries the CLI exit code
    """
    exit_code = EXIT_NUMERICAL_FAILURE

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(LabError):
    """
    Invalid experiment configuration; `path` is the dotted key that failed
    """
    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message, {"path": path})
        self.path = path


class NumericalFailure(LabError):
    """
    A numerical routine could not deliver a trustworthy value
    """
    exit_code = EXIT_NUMERICAL_FAILURE


class VerdictFailure(LabError):
    """
    At least one verdict of a run or report failed
    """
    exit_code = EXIT_VERDICT_FAILURE
