import logging
import sys

import pydantic

from config import config
from exceptions import ArtifactIOError, DataError, PdgPlayError, SolverError, ValidationError

logger = logging.getLogger(__name__)

__all__: list[str] = ("EXIT_OK", "exit_code_for", "report_error")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _classify(error: BaseException) -> tuple[int, str]:
    if isinstance(error, (ValidationError, pydantic.ValidationError)):
        return EXIT_INVALID, "validation"
    if isinstance(error, DataError):
        return EXIT_INVALID, "data"
    if isinstance(error, SolverError):
        return EXIT_SOLVER, "solver"
    if isinstance(error, (ArtifactIOError, OSError)):
        return EXIT_IO, "io"
    return EXIT_UNEXPECTED, "unknown"


def exit_code_for(error: BaseException) -> int:
    return _classify(error)[0]


def report_error(error: BaseException, command: str = "") -> int:
    """Print a one-line message for the user and return the process exit code"""
    code, kind = _classify(error)
    title = config.ui.error_messages[kind]
    prefix = f"{command}: " if command else ""
    print(f"{prefix}{title}\n  {error}", file=sys.stderr)
    if isinstance(error, PdgPlayError):
        logger.debug("%s failed", command or "command", exc_info=error)
    else:
        logger.exception("unexpected failure in %s", command or "command", exc_info=error)
    return code
