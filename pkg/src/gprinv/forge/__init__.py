"""Synthetic scene, survey, clutter and dataset generation."""
from .clutter import ClutterParams, synthesize_clutter
from .dataset import generate_dataset, load_manifest, load_volume_set
from .preprocess import mean_subtraction, normalize01, resize_trilinear, time_zero_correction
from .scene import Scene, SubsurfaceObject, rasterize_permittivity, sample_scene
from .survey import SurveyConfig, forward_model, ricker, simulate_raw

__all__ = [
    "ClutterParams", "Scene", "SubsurfaceObject", "SurveyConfig", "forward_model", "generate_dataset",
    "load_manifest", "load_volume_set", "mean_subtraction", "normalize01", "rasterize_permittivity",
    "resize_trilinear", "ricker", "sample_scene", "simulate_raw", "synthesize_clutter", "time_zero_correction",
]
