"""Audio-visual target-speaker extraction with inter-speaker attention."""

from .extractor import ExtractorConfig, ExtractorModel, extract
from .objectives import si_snr, snr
from .trainer import TrainConfig, fit

__all__ = ["ExtractorConfig", "ExtractorModel", "extract", "si_snr", "snr", "TrainConfig", "fit"]
__version__ = "0.1.0"
