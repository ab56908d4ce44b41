"""Command line, run configuration and checkpoint container."""

from .checkpoint import (
    load_anchors,
    load_space,
    read_container,
    save_anchors,
    save_space,
    stored_parameter_count,
    write_container,
)
from .config import RunConfig, StitchingConfig, load_config, parse_config
from .main import main

__all__ = [
    "RunConfig", "StitchingConfig", "load_anchors", "load_config", "load_space", "main", "parse_config",
    "read_container", "save_anchors", "save_space", "stored_parameter_count", "write_container",
]
