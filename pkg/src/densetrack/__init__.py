"""Coarse-to-fine dense 3D point tracking on synthetic RGB-D video."""

from . import kernels
from .core import Intrinsics, RgbdVideo, SampleSet, Schedule, TrackState, load_tracks, save_tracks
from .synth import SceneConfig, generate_scene, oracle_refiner
from .tracker import EngineConfig, EngineWeights, run_tracking

__version__ = "0.1.0"

__all__ = [
    "kernels", "Intrinsics", "RgbdVideo", "SampleSet", "Schedule", "TrackState", "load_tracks", "save_tracks",
    "SceneConfig", "generate_scene", "oracle_refiner", "EngineConfig", "EngineWeights", "run_tracking",
]
