"""Color-based authentication of bee-pollen loads from RGB images."""

from .ensemble import (
    AmbiguityReport,
    Decision,
    PollenAuthenticator,
    PollenDictionary,
    classify_instance,
    classify_sample,
    detect_ambiguity,
    load_dictionary,
    merge_classes,
    save_dictionary,
    train_dictionary,
)
from .evaluation import (
    OUTLIER,
    ConfusionMatrix,
    MetricReport,
    binary_metrics,
    confusion,
    multiclass_metrics,
)
from .imaging import Luv, RGBRaster, load_image, luv_distance, rgb_to_luv, to_grayscale
from .meanshift import ColorInstance, MeanShiftParams
from .oneclass import OneClassModel, OneClassNearestNeighbor, train_oneclass
from .pipeline import LoadColorExtractor

__version__ = "0.1.0"

__all__ = [
    "AmbiguityReport", "ColorInstance", "ConfusionMatrix", "Decision", "LoadColorExtractor",
    "Luv", "MeanShiftParams", "MetricReport", "OUTLIER", "OneClassModel",
    "OneClassNearestNeighbor", "PollenAuthenticator", "PollenDictionary", "RGBRaster",
    "binary_metrics", "classify_instance", "classify_sample", "confusion", "detect_ambiguity",
    "load_dictionary", "load_image", "luv_distance", "merge_classes", "multiclass_metrics",
    "rgb_to_luv", "save_dictionary", "to_grayscale", "train_dictionary", "train_oneclass",
]
