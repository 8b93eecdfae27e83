"""Training-patch sampling, augmentation, tiled inference and accuracy
assessment for land-cover segmentation."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, PatchforgeError
from .raster import GeoTransform, Raster, Window, load_raster, write_raster
from .vector import ClassCatalog, Feature, FeatureSet, load_features

__all__ = [
    "ClassCatalog",
    "ConfigError",
    "DataError",
    "Feature",
    "FeatureSet",
    "GeoTransform",
    "PatchforgeError",
    "Raster",
    "Window",
    "load_features",
    "load_raster",
    "write_raster",
]
