"""
Logging for the matrix RL lab

One package logger ("matrix_rl_lab") with a rotating file, an optional
console stream, and a per-run file inside each run directory.
"""
import logging
import logging.handlers
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

PACKAGE_LOGGER = "matrix_rl_lab"
RUN_LOG_NAME = "run.log"

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
RUN_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'


def _level(log_level: Union[str, int]) -> int:
    if isinstance(log_level, int):
        return log_level
    return getattr(logging, str(log_level).upper(), logging.INFO)


def setup_logging(
    log_level: Union[str, int] = "WARNING",
    log_dir: Optional[Union[str, Path]] = None,
    log_file: str = "experiments.log",
    max_file_size_mb: int = 10,
    backup_count: int = 5,
    console_logging: bool = True
) -> logging.Logger:
    """
    Configure the package logger for a command line session

    Args:
        log_level: Level name or number for every handler
        log_dir: Directory of the rotating log (defaults to 'logs' in the project root)
        log_file: Rotating log file name
        max_file_size_mb: Size in MB before rotation
        backup_count: Rotated files to keep
        console_logging: Also log to stderr

    Returns:
        logging.Logger: The package logger
    """
    numeric_level = _level(log_level)
    log_dir = Path(__file__).parent.parent / "logs" if log_dir is None else Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file_path = log_dir / log_file

    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(numeric_level)

    # repeated calls (tests, notebooks) replace the handlers
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    file_handler = logging.handlers.RotatingFileHandler(
        log_file_path,
        maxBytes=max_file_size_mb * 1024 * 1024,
        backupCount=backup_count,
        encoding='utf-8'
    )
    file_handler.setLevel(numeric_level)
    file_handler.setFormatter(logging.Formatter(fmt=FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    logger.addHandler(file_handler)

    if console_logging:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(numeric_level)
        console_handler.setFormatter(logging.Formatter(fmt=CONSOLE_FORMAT, datefmt='%H:%M:%S'))
        logger.addHandler(console_handler)

    logger.info(f"Logging initialized - Level: {logging.getLevelName(numeric_level)}, File: {log_file_path}")
    return logger


@contextmanager
def run_log(run_dir: Union[str, Path], log_level: Union[str, int] = "INFO") -> Iterator[Path]:
    """
    Copy package log records into <run_dir>/run.log while a run executes

    The package logger's own level still gates what reaches the file; it is
    lowered to `log_level` for the duration if it was stricter.

    Yields:
        Path: The run log path
    """
    path = Path(run_dir) / RUN_LOG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger(PACKAGE_LOGGER)
    handler = logging.FileHandler(path, mode='w', encoding='utf-8')
    handler.setLevel(_level(log_level))
    handler.setFormatter(logging.Formatter(fmt=RUN_FORMAT))

    previous = logger.level
    if previous == logging.NOTSET or previous > handler.level:
        logger.setLevel(handler.level)
    logger.addHandler(handler)
    try:
        yield path
    finally:
        logger.removeHandler(handler)
        handler.close()
        logger.setLevel(previous)


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Logger under the package namespace

    Args:
        name: Module name (defaults to the package logger)

    Returns:
        logging.Logger: Logger instance
    """
    if name is None:
        return logging.getLogger(PACKAGE_LOGGER)
    if not name.startswith(PACKAGE_LOGGER):
        name = f"{PACKAGE_LOGGER}.{name}"
    return logging.getLogger(name)
