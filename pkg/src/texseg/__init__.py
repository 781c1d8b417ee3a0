"""Seed-driven texture region detection and segmentation."""
from ._accel import BACKEND
from .detector import DetectorConfig, LabelGrid, SeedSpec, detect
from .raster import Rect, load_image, save_image

__all__ = ["BACKEND", "DetectorConfig", "LabelGrid", "Rect", "SeedSpec", "detect", "load_image", "save_image"]
__version__ = "0.1.0"
