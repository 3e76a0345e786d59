"""Location verification for vehicular networks from multi-RSU RSS measurements."""

__version__ = "0.1.0"
SCHEMA_VERSION = "1"

from .errors import ConfigError, InfeasibleError
from .scenario import Location, Scenario, GroundTruthSample, default_scenario
from .channel import ChannelParams

__all__ = [
    "ConfigError",
    "InfeasibleError",
    "Location",
    "Scenario",
    "GroundTruthSample",
    "ChannelParams",
    "default_scenario",
]
