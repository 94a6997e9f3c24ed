"""Configuration, experiment drivers and the command-line entry point."""

from .config import ExperimentConfig, InitPolicy, OdeConfig, PopEmConfig

__all__ = ["ExperimentConfig", "InitPolicy", "OdeConfig", "PopEmConfig"]
