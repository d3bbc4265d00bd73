import re
import sys
from typing import Optional

from loguru import logger


def escape_tag(s: str) -> str:
    """
    Escape loguru colour tags in a string.

    - `s`: The string to escape.
    """
    return re.sub(r"</?((?:[fb]g\s)?[^<>\s]*)>", r"\\\g<0>", s)


def logger_wrapper(logger_name: str):
    def log(level: str, message: str, exception: Optional[Exception] = None):
        logger.opt(colors=True, exception=exception).log(
            level, f"<m>{escape_tag(logger_name)}</m> | {message}"
        )

    return log


def setup_logging(level: str = "INFO") -> None:
    """
    Route all records to stderr at the given level.

    - `level`: Minimum loguru level name.
    """
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), colorize=None)


log = logger_wrapper("CPCertify")
