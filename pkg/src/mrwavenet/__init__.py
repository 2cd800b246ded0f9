"""Multiresolution convolutional seizure detection for scalp EEG, in plain numpy."""
from .model import MREEGWaveNet, ModelConfig, feature_length

__all__ = ["MREEGWaveNet", "ModelConfig", "feature_length"]
__version__ = "0.1.0"
