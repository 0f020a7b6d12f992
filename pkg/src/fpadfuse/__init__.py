"""Fingerprint presentation-attack detection by jointly trained handcrafted
and convolutional features, with ISO 30107-style evaluation."""

from .fusion import DyffpadConfig, DyffpadModel, build_model, load_weights, save_weights
from .imgproc import GrayImage
from .lpq import LpqConfig, lpq_histogram
from .quality import QualityConfig, quality_vector

__all__ = [
    "DyffpadConfig",
    "DyffpadModel",
    "GrayImage",
    "LpqConfig",
    "QualityConfig",
    "build_model",
    "load_weights",
    "lpq_histogram",
    "quality_vector",
    "save_weights",
]

__version__ = "0.1.0"
