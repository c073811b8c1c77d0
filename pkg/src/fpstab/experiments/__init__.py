"""Scenario configs, orchestration and report emission."""

from .config import ScenarioConfig, builtin_names, load_config, parse_config, validate

__all__ = ["ScenarioConfig", "builtin_names", "load_config", "parse_config", "validate"]
