"""Compression and acceleration of small neural networks for detection and CSI feedback."""
from .accounting import cost_report, count_flops, count_weights, storage_bytes
from .errors import (ConfigError, DataError, DimensionError, NNCommError, NumericError,
                     ParseError, StateError)
from .graph import ModelGraph
from .persistence import load_model, save_model
from .training import Schedule, fit
from .zoo import (DetectionConfig, FeedbackConfig, build_convcsinet, build_convsqucsinet,
                  build_csinet_plus_like, build_fullycon, fire_module)

__version__ = "0.1.0"
