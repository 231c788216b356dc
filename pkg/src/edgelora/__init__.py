"""Desk-scale emulator of a LoRaWAN network with edge-processing gateways."""

__version__ = "0.1.0"

from .scenario import ScenarioConfig, load_scenario  # noqa: F401
from .runner import Network  # noqa: F401
