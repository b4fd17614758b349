import logging
import os
import sys
from .config import config_manager

# Benchmark and preprocessing workers log from separate processes
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(processName)s - %(name)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Libraries that are chatty at INFO
QUIET_LIBRARIES = ("numba", "trimesh")


def _level(name, fallback=None):
    return getattr(logging, str(name).upper(), fallback)


def _attach(root: logging.Logger, handler: logging.Handler, level: int):
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root.addHandler(handler)


def _file_handler(log_file: str) -> logging.Handler | None:
    try:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        return logging.FileHandler(log_file, encoding="utf-8")
    except OSError as e:
        logging.warning(f"Could not open log file '{log_file}': {e}. Logging to stdout only.")
        return None


def _apply_module_levels(levels):
    """Per-module overrides, e.g. ``{asmplan.path_planner: DEBUG}``."""
    if not levels:
        return
    if not isinstance(levels, dict):
        logging.warning(f"Invalid format for 'log_levels' in config (expected a dictionary). Ignoring: {levels}")
        return
    for module_name, level_name in levels.items():
        level = _level(level_name)
        if level is None:
            logging.warning(f"Invalid log level '{level_name}' specified for logger '{module_name}'. Skipping.")
            continue
        logging.getLogger(str(module_name)).setLevel(level)
        logging.info(f"Applied log level {str(level_name).upper()} to logger '{module_name}'")


def setup_logging():
    """Configures the root logger: stdout, an optional file, then per-module levels.

    Safe to call again after the configuration changes; earlier handlers are replaced.
    """
    level_name = str(config_manager.get("log_level", "INFO")).upper()
    level = _level(level_name, logging.INFO)

    root = logging.getLogger()
    root.setLevel(level)
    for handler in root.handlers[:]:
        root.removeHandler(handler)

    _attach(root, logging.StreamHandler(sys.stdout), level)
    log_file = config_manager.get("log_file")
    if log_file:
        handler = _file_handler(log_file)
        if handler is not None:
            _attach(root, handler, level)

    _apply_module_levels(config_manager.get("log_levels", {}))
    for library in QUIET_LIBRARIES:
        logging.getLogger(library).setLevel(logging.WARNING)

    logging.info(f"Root logging level configured: {level_name}")
