"""Red-teaming toolkit for point-promptable segmentation models."""

__version__ = "0.1.0"
