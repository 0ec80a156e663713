"""decrob: adversarial robustness evaluation for channel decoders."""

from .channel import SnrContext, modulate, snr_to_sigma2, transmit
from .codes import (
    LinearCode,
    build_polar,
    encode,
    hard_demodulate,
    load_alist,
    load_bundled,
    syndrome,
)
from .decoders import (
    DecodeResult,
    DecoderHandle,
    MinSumDecoder,
    MLOracleDecoder,
    SCDecoder,
    SumProductDecoder,
)
from .smoothing import SmoothingConfig, beta_bound, grad_backprop_mc, grad_stein, smoothed_loss

__all__ = [
    "SnrContext", "modulate", "snr_to_sigma2", "transmit",
    "LinearCode", "build_polar", "encode", "hard_demodulate", "load_alist",
    "load_bundled", "syndrome",
    "DecodeResult", "DecoderHandle", "MinSumDecoder", "MLOracleDecoder",
    "SCDecoder", "SumProductDecoder",
    "SmoothingConfig", "beta_bound", "grad_backprop_mc", "grad_stein", "smoothed_loss",
]

__version__ = "0.1.0"
