"""Configuration-driven experiment orchestration."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .pipeline import (COMMANDS, StageError, cmd_bias_study, cmd_evaluate, cmd_simulate,
                       cmd_train, stage_seed)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "COMMANDS",
           "StageError", "cmd_bias_study", "cmd_evaluate", "cmd_simulate", "cmd_train",
           "stage_seed"]
