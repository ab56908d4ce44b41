"""Stitching layers, window enumeration, stitch spaces and stitched execution."""

from .enumerate import WindowSpec, align, enumerate_paired, enumerate_unpaired, windows
from .layer import KAIMING, LEAST_SQUARES, LsInitResult, StitchingLayer, ls_init
from .space import (
    FAST_TO_SLOW,
    SLOW_TO_FAST,
    StitchConfig,
    StitchSpace,
    build_space,
    collect_boundary_features,
    initialize_layers,
    kaiming_init_all,
    ls_init_all,
    stitch_forward,
)

space_build = build_space

__all__ = [
    "FAST_TO_SLOW", "KAIMING", "LEAST_SQUARES", "LsInitResult", "SLOW_TO_FAST", "StitchConfig",
    "StitchSpace", "StitchingLayer", "WindowSpec", "align", "build_space", "collect_boundary_features",
    "enumerate_paired", "enumerate_unpaired", "initialize_layers", "kaiming_init_all", "ls_init",
    "ls_init_all", "space_build", "stitch_forward", "windows",
]
