"""Stitching pretrained anchor networks into an elastic family of sub-networks."""

__version__ = "0.1.0"
