"""Desk-scale speech enhancement: corpus synthesis, a small
waveform-to-waveform denoising network with hand-rolled training,
dynamic INT8 quantization, and deployment benchmarking."""

from . import audio_io, bench, dataset, dsp, errors, metrics, net, quant, train

__version__ = "0.1.0"

__all__ = [
    "audio_io",
    "bench",
    "dataset",
    "dsp",
    "errors",
    "metrics",
    "net",
    "quant",
    "train",
    "__version__",
]
