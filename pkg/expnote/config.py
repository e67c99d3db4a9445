# expnote/config.py

import os
import json
import logging
import threading
from pathlib import Path
from dataclasses import dataclass, asdict, fields, replace
from typing import Any, Dict, Optional

from .exceptions import ConfigurationError, FileOperationError

logger = logging.getLogger(__name__)

VALID_VARIANTS = ("full", "disabled", "case", "positive", "negative")
VALID_BACKENDS = ("live", "scripted", "cassette")
VALID_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
API_KEY_ENV = "EXPNOTE_API_KEY"

_file_lock = threading.Lock()


@dataclass
class ExperimentConfig:
    """
    Configuration of one ExpNote run.

    Values come from the defaults below, then an optional JSON config file,
    then the EXPNOTE_API_KEY environment variable (the credential is never read
    from or written to the file), then command-line flags.
    """

    # Variant and budgets
    variant: str = "full"
    k: int = 3
    n_train: int = 4
    max_turns: int = 8
    max_format_retries: int = 1
    seed: int = 0

    # Backend selection
    backend: str = "scripted"
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-3.5-turbo"
    api_key: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    timeout_seconds: float = 60.0
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_factor: float = 1.0
    record_cassette: bool = True

    # Paths
    bundle_dir: str = "prompts/lets"
    train_path: str = ""
    test_path: str = ""
    memory_path: str = ""
    out_dir: str = "runs/latest"
    script_path: str = ""
    cassette_path: str = ""

    # Experiment schedule
    train_ratio: float = 0.5
    checkpoint_every: int = 0

    # Logging Configuration
    enable_logging: bool = True
    log_level: str = "INFO"

    @classmethod
    def load(cls, path: Optional[str] = None) -> 'ExperimentConfig':
        """
        Load configuration from a JSON file (if given) and the environment.

        Raises:
            ConfigurationError: If the file is missing or not valid JSON
        """
        config_data: Dict[str, Any] = {}

        if path:
            config_file = Path(path)
            if not config_file.exists():
                raise ConfigurationError(f"Configuration file not found: {config_file}")
            try:
                with open(config_file, 'r', encoding='utf-8') as f:
                    config_data = json.load(f)
                logger.info(f"Configuration loaded from {config_file}")
            except (json.JSONDecodeError, IOError) as e:
                logger.error(f"Failed to load config file: {e}")
                raise ConfigurationError(f"Failed to load configuration file: {e}")
            if not isinstance(config_data, dict):
                raise ConfigurationError("The configuration file must hold a JSON object.")

        config_data.pop('api_key', None)
        api_key = os.getenv(API_KEY_ENV)
        if api_key:
            config_data['api_key'] = api_key

        valid_keys = {f.name for f in fields(cls)}
        unknown = sorted(set(config_data) - valid_keys)
        if unknown:
            logger.warning(f"Ignoring unknown configuration keys: {', '.join(unknown)}")
        filtered_config_data = {k: v for k, v in config_data.items() if k in valid_keys}
        cls._check_types(filtered_config_data)

        return cls(**filtered_config_data)

    @classmethod
    def _check_types(cls, config_data: Dict[str, Any]):
        """Reject file values whose JSON type does not match the field's default."""
        defaults = cls()
        for key, value in config_data.items():
            expected = type(getattr(defaults, key))
            if expected is float:
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            elif expected is int:
                ok = isinstance(value, int) and not isinstance(value, bool)
            else:
                ok = isinstance(value, expected)
            if not ok:
                raise ConfigurationError(
                    f"Configuration key '{key}' must be of type {expected.__name__}, "
                    f"got {type(value).__name__}: {value!r}"
                )

    def with_overrides(self, **overrides: Any) -> 'ExperimentConfig':
        """Return a copy with every non-None override applied."""
        valid_keys = {f.name for f in fields(self)}
        applied = {k: v for k, v in overrides.items() if v is not None and k in valid_keys}
        return replace(self, **applied)

    def to_dict(self) -> Dict[str, Any]:
        """All settings except the credential."""
        data = asdict(self)
        data.pop('api_key', None)
        return data

    def save(self, path: str) -> bool:
        """
        Save configuration (without the credential) as sorted JSON.

        Raises:
            FileOperationError: If save operation fails
        """
        with _file_lock:
            try:
                target = Path(path)
                target.parent.mkdir(parents=True, exist_ok=True)
                with open(target, 'w', encoding='utf-8') as f:
                    json.dump(self.to_dict(), f, indent=4, sort_keys=True)
                logger.info(f"Configuration saved to {target}")
                return True
            except IOError as e:
                logger.error(f"Failed to save config: {e}")
                raise FileOperationError(f"Failed to save configuration: {e}")

    def validate(self) -> tuple[bool, str]:
        """
        Validate all configuration settings.

        Returns:
            tuple[bool, str]: (is_valid, error_message)
        """
        if self.variant not in VALID_VARIANTS:
            return False, f"Invalid variant: {self.variant}. Must be one of: {', '.join(VALID_VARIANTS)}"
        if self.k < 1:
            return False, "k must be a positive integer."
        if self.n_train < 0:
            return False, "n_train cannot be negative."
        if self.max_turns < 1:
            return False, "max_turns must be at least 1."
        if self.max_format_retries < 0:
            return False, "max_format_retries cannot be negative."

        if self.backend not in VALID_BACKENDS:
            return False, f"Invalid backend: {self.backend}. Must be one of: {', '.join(VALID_BACKENDS)}"
        if self.backend == "live":
            if not self._is_valid_string(self.base_url):
                return False, "base_url cannot be empty when using the live backend."
            if not self._is_valid_string(self.model_name):
                return False, "Model name cannot be empty."
        if self.backend == "scripted" and not self._is_valid_string(self.script_path):
            return False, "script_path is required for the scripted backend."
        if self.backend == "cassette" and not self._is_valid_string(self.cassette_path):
            return False, "cassette_path is required for the cassette backend."

        if self.temperature < 0:
            return False, "Temperature cannot be negative."
        if self.max_tokens < 1:
            return False, "max_tokens must be positive."
        if self.timeout_seconds <= 0:
            return False, "Request timeout must be a positive number."
        if self.max_in_flight < 1:
            return False, "max_in_flight must be at least 1."
        if self.max_attempts < 1:
            return False, "max_attempts must be at least 1."
        if self.backoff_factor < 0:
            return False, "backoff_factor cannot be negative."

        if not (0 < self.train_ratio < 1):
            return False, "train_ratio must lie strictly between 0 and 1."
        if self.checkpoint_every < 0:
            return False, "checkpoint_every cannot be negative."
        if self.log_level.upper() not in VALID_LOG_LEVELS:
            return False, f"Invalid log level: {self.log_level}"
        if not self._is_valid_string(self.out_dir):
            return False, "Output directory cannot be empty."

        return True, "Configuration is valid."

    def _is_valid_string(self, value: str) -> bool:
        """Check if a string value is valid (not None or empty)."""
        return value is not None and value.strip() != ""
