"""Scenario data model, synthetic generator, action labels and file format."""
from .generator import (DEFAULT_WEIGHTS, GenerationError, GeneratorConfig, build_map,
                        class_histogram, generate_scenario, load_generator_config)
from .io import (FORMAT_VERSION, ScenarioParseError, ScenarioVersionError, load_scenario,
                 save_scenario)
from .labels import LaneIndex, label_actions
from .types import *  # noqa: F401,F403
from .types import __all__ as _types_all

__all__ = list(_types_all) + [
    "DEFAULT_WEIGHTS", "GenerationError", "GeneratorConfig", "build_map", "class_histogram",
    "generate_scenario", "load_generator_config", "FORMAT_VERSION", "ScenarioParseError",
    "ScenarioVersionError", "load_scenario", "save_scenario", "LaneIndex", "label_actions",
]
