import yaml
import logging
import os
import threading

logger = logging.getLogger(__name__)

class ConfigManager:
    """
    Manages loading and accessing of planner configuration from a flat YAML file.

    Values from the file are merged over the defaults and coerced to the type
    declared for each key. CLI flags are layered on top with ``update()``.
    """
    def __init__(self, config_path='config.yaml', defaults=None, required_keys=None, types=None):
        self.config_path = os.path.abspath(config_path)
        self.defaults = defaults if defaults is not None else {}
        self.required_keys = set(required_keys) if required_keys is not None else set()
        self.types = types if types is not None else {}
        self._config = {}
        self._lock = threading.Lock()

        self._load_config() # Initial load

    def _coerce(self, key, value):
        """Converts a value to the declared type for key. Falls back to the default on failure."""
        declared = self.types.get(key)
        if declared is None:
            return value
        default = self.defaults.get(key)
        try:
            if declared == "optional_str":
                return None if value is None or value == "" else str(value)
            if declared is dict:
                if isinstance(value, dict):
                    return {str(k): v for k, v in value.items()}
                raise TypeError(f"expected a mapping, got {type(value).__name__}")
            if declared is int:
                # Reject 2.5 -> 2 silently truncating
                as_float = float(value)
                if not as_float.is_integer():
                    raise ValueError(f"{value} is not an integer")
                return int(as_float)
            if declared is float:
                result = float(value)
                if result != result: # NaN
                    raise ValueError("NaN is not allowed")
                return result
            return declared(value)
        except (ValueError, TypeError) as e:
            logger.warning(f"Invalid value for '{key}': {value!r} ({e}). Using default: {default!r}")
            return default

    def _build(self, overrides):
        """Merges overrides over defaults and coerces every key."""
        new_config = self.defaults.copy()
        new_config.update({str(k): v for k, v in overrides.items()})
        for key in list(new_config.keys()):
            new_config[key] = self._coerce(key, new_config[key])

        # Validation
        missing = {k for k in self.required_keys if new_config.get(k) in (None, "")}
        if missing:
            logger.error(f"Missing or empty required configuration keys: {', '.join(sorted(missing))}")
        return new_config

    def _load_config(self):
        """Loads configuration from the YAML file, merges with defaults, and validates."""
        loaded_config = {}
        try:
            logger.info(f"Attempting to load configuration from: {self.config_path}")
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f)
            if isinstance(data, dict):
                loaded_config = data
            elif data is not None:
                logger.warning(f"Configuration file is not a mapping: {self.config_path}. Using defaults.")
            else:
                logger.warning(f"Configuration file is empty: {self.config_path}. Using defaults.")
        except FileNotFoundError:
            # Library use and tests run without a config file
            logger.warning(f"Configuration file not found: {self.config_path}. Using defaults only.")
        except yaml.YAMLError as e:
            logger.error(f"Error parsing configuration file {self.config_path}: {e}. Using defaults.")
        except Exception as e:
            logger.exception(f"An unexpected error occurred while loading configuration: {e}")

        new_config = self._build(loaded_config)
        with self._lock:
            self._config = new_config
        logger.info("Configuration loaded successfully.")

    def reload(self, config_path=None):
        """Re-reads the configuration, optionally switching to another file."""
        if config_path is not None:
            self.config_path = os.path.abspath(config_path)
        logger.info(f"Reloading configuration from {self.config_path}")
        self._load_config()

    def update(self, overrides):
        """Applies overrides (CLI flags, worker snapshots) on top of the current values."""
        if not overrides:
            return
        with self._lock:
            current = self._config.copy()
        current.update({k: v for k, v in overrides.items() if v is not None})
        new_config = self._build(current)
        with self._lock:
            self._config = new_config
        logger.debug(f"Applied configuration overrides: {sorted(overrides.keys())}")

    def snapshot(self):
        """Returns a plain dict copy of the active configuration (for worker processes)."""
        with self._lock:
            return {k: (v.copy() if isinstance(v, (list, dict)) else v) for k, v in self._config.items()}

    def get(self, key, default=None):
        """Gets a configuration value thread-safely."""
        with self._lock:
            # Return a copy for mutable types like lists to prevent modification
            value = self._config.get(key, default)
            if isinstance(value, (list, dict)):
                return value.copy()
            return value

    def log_loaded_config(self):
        """Logs the currently loaded configuration values."""
        log_config = {}
        with self._lock:
            log_config = self._config.copy() # Work on a copy

        log_output = "--- Current Configuration ---"
        for key, value in sorted(log_config.items()):
            if isinstance(value, dict):
                if value:
                    log_output += f"\n{key}:"
                    for sub_key, sub_value in sorted(value.items()):
                        log_output += f"\n  - {sub_key}: {sub_value}"
                else:
                    log_output += f"\n{key}: {{}} (Empty)"
            else:
                log_output += f"\n{key}: {value}"
        log_output += "\n---------------------------"
        logger.info(log_output)
