"""Gateway assembly: config, runtime wiring, wire API, CLI, fixtures, simulation."""

from .config import GatewayConfig, load_config
from .runtime import GatewayRuntime, build_runtime

__all__ = ["GatewayConfig", "GatewayRuntime", "build_runtime", "load_config"]
