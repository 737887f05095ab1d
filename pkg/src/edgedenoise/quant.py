"""Dynamic INT8 post-training quantization of conv/deconv layers.

Scheme: symmetric per-tensor quantization, zero-point 0, range +/-127
(scale = max|t| / 127), which keeps the integer kernels free of
zero-point cross terms. Weights are stored INT8 with one scale per
tensor; biases stay FP32; the LSTM stack is left in FP32 (the quantized
set is the linear/convolution layers only). Activation scales are
computed per forward call from the live input.

The integer multiply-accumulate is exact: quantized weights and inputs
are integer-valued, products are bounded by 127*127, and layers whose
worst-case accumulation 127*127*in_channels*kernel could exceed the
signed 32-bit range are rejected (AccumulatorOverflow). Within that
bound every intermediate fits a float64 mantissa exactly, so the
float64 tensor ops used here are bit-equivalent to int32 arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip, round_half_away
from .errors import (
    AccumulatorOverflowError,
    ArchitectureMismatchError,
    NonFiniteError,
    ShapeMismatchError,
    TooShortError,
)
from .net import (
    LstmLayerParams,
    LstmParams,
    Model,
    ModelConfig,
    TensorRecord,
    _check_2d,
    _conv_windows,
    _padded_length,
    init_model,
    lstm_forward,
    min_valid_length,
    model_forward,
    read_container,
    write_container,
)

INT32_LIMIT = 2**31
_MAX_ABS_Q = 127


@dataclass
class QuantizedTensor:
    """INT8 payload plus its per-tensor scale and original shape."""

    values: np.ndarray
    scale: float
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ShapeMismatchError(f"scale must be positive, got {self.scale}")
        self.values = np.asarray(self.values, dtype=np.int8).reshape(self.shape)


def quantize_tensor(t: np.ndarray) -> QuantizedTensor:
    """Symmetric per-tensor INT8 quantization.

    scale = max|t| / 127; values = clamp(round_half_away(t/scale), -127, 127).
    An all-zero tensor gets scale 1.0 and zero values.

    Raises:
        NonFiniteError: tensor contains NaN or infinity.
    """
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("cannot quantize non-finite values")
    peak = float(np.max(np.abs(t), initial=0.0))
    scale = peak / _MAX_ABS_Q if peak > 0.0 else 1.0
    q = np.clip(round_half_away(t / scale), -_MAX_ABS_Q, _MAX_ABS_Q)
    return QuantizedTensor(values=q.astype(np.int8), scale=scale, shape=t.shape)


def dequantize_tensor(qt: QuantizedTensor) -> np.ndarray:
    """values * scale in the original shape; error is at most scale/2."""
    return qt.values.astype(np.float64) * qt.scale


def dynamic_activation_scale(x: np.ndarray) -> float:
    """Per-call activation scale max|x| / 127; zero input maps to 1.0.

    Raises:
        NonFiniteError: input contains NaN or infinity.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot scale non-finite activations")
    peak = float(np.max(np.abs(x), initial=0.0))
    return peak / _MAX_ABS_Q if peak > 0.0 else 1.0


@dataclass
class QuantizedConvLayer:
    """INT8 conv weights [out x in x k] + FP32 bias and stride."""

    weight: QuantizedTensor
    bias: np.ndarray
    stride: int


@dataclass
class QuantizedDeconvLayer:
    """INT8 transposed-conv weights [in x out x k] + FP32 bias and stride."""

    weight: QuantizedTensor
    bias: np.ndarray
    stride: int


@dataclass
class QuantizedModel:
    """Source model with conv/deconv weights INT8; LSTM untouched FP32."""

    config: ModelConfig
    encoder: list[QuantizedConvLayer]
    lstm: LstmParams
    decoder: list[QuantizedDeconvLayer]


def _check_accumulator(in_channels: int, kernel: int) -> None:
    # worst case: every product at magnitude 127*127, in_channels*kernel terms
    if _MAX_ABS_Q * _MAX_ABS_Q * in_channels * kernel >= INT32_LIMIT:
        raise AccumulatorOverflowError(
            f"in_channels*kernel = {in_channels * kernel} can overflow a 32-bit "
            f"accumulator; refusing the integer kernel"
        )


def _quantize_input(x: np.ndarray) -> tuple[np.ndarray, float]:
    scale = dynamic_activation_scale(x)
    q = np.clip(round_half_away(x / scale), -_MAX_ABS_Q, _MAX_ABS_Q)
    return q, scale


def quantized_conv1d_forward(
    x: np.ndarray, qlayer: QuantizedConvLayer, apply_activation: bool = True
) -> np.ndarray:
    """Integer-path strided convolution.

    Quantizes the input with a dynamic scale, multiply-accumulates
    int8 x int8 products in 32-bit integer range, rescales by
    input_scale * weight_scale, adds the FP32 bias, then ReLU.

    Raises:
        ShapeMismatchError: channel/length mismatch.
        AccumulatorOverflowError: kernel too large for 32-bit accumulation.
    """
    x = _check_2d(x, "quantized conv input")
    out_ch, in_ch, k = qlayer.weight.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(f"expected {in_ch} input channels, got {x.shape[0]}")
    if x.shape[1] < k:
        raise ShapeMismatchError(f"time length {x.shape[1]} < kernel {k}")
    _check_accumulator(in_ch, k)
    xq, x_scale = _quantize_input(x)
    wq = qlayer.weight.values.astype(np.float64)
    win = _conv_windows(xq, k, qlayer.stride)
    acc = np.tensordot(wq, win, axes=([1, 2], [0, 2]))  # exact integer MAC
    z = acc * (x_scale * qlayer.weight.scale) + qlayer.bias[:, None]
    return np.maximum(z, 0.0) if apply_activation else z


def quantized_deconv1d_forward(
    x: np.ndarray, qlayer: QuantizedDeconvLayer, apply_activation: bool = True
) -> np.ndarray:
    """Integer-path transposed convolution (same scheme as the conv path)."""
    x = _check_2d(x, "quantized deconv input")
    in_ch, out_ch, k = qlayer.weight.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(f"expected {in_ch} input channels, got {x.shape[0]}")
    _check_accumulator(in_ch, k)
    xq, x_scale = _quantize_input(x)
    wq = qlayer.weight.values.astype(np.float64)
    t_in = x.shape[1]
    s = qlayer.stride
    acc = np.zeros((out_ch, (t_in - 1) * s + k))
    for j in range(k):
        acc[:, j : j + s * (t_in - 1) + 1 : s] += wq[:, :, j].T @ xq
    z = acc * (x_scale * qlayer.weight.scale) + qlayer.bias[:, None]
    return np.maximum(z, 0.0) if apply_activation else z


def quantize_model(model: Model) -> QuantizedModel:
    """Duplicate a model with every conv/deconv weight quantized.

    Biases and LSTM parameters are copied in FP32; the source model is
    not touched. Layer order and shapes are preserved.
    """
    encoder = [
        QuantizedConvLayer(
            weight=quantize_tensor(l.weight), bias=l.bias.copy(), stride=l.stride
        )
        for l in model.encoder
    ]
    decoder = [
        QuantizedDeconvLayer(
            weight=quantize_tensor(l.weight), bias=l.bias.copy(), stride=l.stride
        )
        for l in model.decoder
    ]
    lstm = LstmParams(
        [
            LstmLayerParams(l.w_x.copy(), l.w_h.copy(), l.bias.copy())
            for l in model.lstm.layers
        ]
    )
    return QuantizedModel(config=model.config, encoder=encoder, lstm=lstm, decoder=decoder)


def quantized_model_forward(qmodel: QuantizedModel, waveform: np.ndarray) -> np.ndarray:
    """Forward pass of a quantized model; mirrors the FP32 forward exactly
    (padding, skip connections, linear final layer), with conv/deconv
    layers running on the integer path and the LSTM in FP32."""
    x = _check_2d(waveform, "model input")
    if x.shape[0] != 1:
        raise ShapeMismatchError(f"expected [1 x T] waveform, got shape {x.shape}")
    cfg = qmodel.config
    t_in = x.shape[1]
    if t_in < min_valid_length(cfg):
        raise TooShortError(
            f"input length {t_in} < minimum {min_valid_length(cfg)} for depth {cfg.depth}"
        )
    padded = _padded_length(cfg, t_in)
    if padded != t_in:
        x = np.pad(x, ((0, 0), (0, padded - t_in)))

    enc_outputs = []
    h = x
    for layer in qmodel.encoder:
        h = quantized_conv1d_forward(h, layer, apply_activation=True)
        enc_outputs.append(h)

    h = lstm_forward(h, qmodel.lstm)

    depth = cfg.depth
    d = h + enc_outputs[-1]
    for j, layer in enumerate(qmodel.decoder):
        last = j == depth - 1
        z = quantized_deconv1d_forward(d, layer, apply_activation=not last)
        d = z if last else z + enc_outputs[depth - 2 - j]
    return d[:, :t_in]


def forward_any(model: Model | QuantizedModel, waveform: np.ndarray) -> np.ndarray:
    """Dispatch a forward pass to the FP32 or quantized implementation."""
    if isinstance(model, Model):
        return model_forward(model, waveform)
    return quantized_model_forward(model, waveform)


def enhance_clip(model: Model | QuantizedModel, clip: AudioClip) -> AudioClip:
    """Denoise one clip; output keeps the input rate and length."""
    out = forward_any(model, clip.samples[None, :])
    return AudioClip(out[0], clip.rate)


def _tensor_records(qmodel: QuantizedModel) -> list[TensorRecord]:
    records = []
    for i, layer in enumerate(qmodel.encoder):
        records.append(
            TensorRecord(
                f"enc{i}.weight", "i8", layer.weight.shape, layer.weight.values,
                scale=layer.weight.scale,
            )
        )
        records.append(TensorRecord(f"enc{i}.bias", "f32", layer.bias.shape, layer.bias))
    for i, layer in enumerate(qmodel.lstm.layers):
        records.append(TensorRecord(f"lstm{i}.w_x", "f32", layer.w_x.shape, layer.w_x))
        records.append(TensorRecord(f"lstm{i}.w_h", "f32", layer.w_h.shape, layer.w_h))
        records.append(TensorRecord(f"lstm{i}.bias", "f32", layer.bias.shape, layer.bias))
    for i, layer in enumerate(qmodel.decoder):
        records.append(
            TensorRecord(
                f"dec{i}.weight", "i8", layer.weight.shape, layer.weight.values,
                scale=layer.weight.scale,
            )
        )
        records.append(TensorRecord(f"dec{i}.bias", "f32", layer.bias.shape, layer.bias))
    return records


def model_footprint(model: Model | QuantizedModel) -> int:
    """Serialized-parameter byte count.

    FP32 tensors cost 4 bytes per element; INT8 tensors cost 1 byte per
    element plus 4 bytes for the scale. This is the deterministic proxy
    for resident memory used everywhere in reports.
    """
    if isinstance(model, Model):
        return sum(4 * arr.size for _, arr in model.param_items())
    total = 0
    for rec in _tensor_records(model):
        n = int(np.prod(rec.shape)) if rec.shape else 1
        total += n + 4 if rec.dtype == "i8" else 4 * n
    return total


def conv_weight_footprint(model: Model | QuantizedModel, min_params: int = 0) -> int:
    """Bytes held by conv/deconv weight tensors with >= min_params elements.

    Used for the quantization-shrink accounting, which is defined over
    the layers that actually get quantized (weights, not biases).
    """
    total = 0
    if isinstance(model, Model):
        for layer in model.encoder + model.decoder:
            if layer.weight.size >= min_params:
                total += 4 * layer.weight.size
        return total
    for layer in list(model.encoder) + list(model.decoder):
        n = layer.weight.values.size
        if n >= min_params:
            total += n + 4
    return total


def save_quantized_checkpoint(qmodel: QuantizedModel, path) -> None:
    """Serialize a quantized model in the shared checkpoint container."""
    config = {"kind": "int8", "model": qmodel.config.resolved()}
    write_container(path, config, _tensor_records(qmodel))


def load_quantized_checkpoint(path) -> QuantizedModel:
    """Load a checkpoint written by save_quantized_checkpoint.

    Raises:
        ArchitectureMismatchError: wrong kind or tensors inconsistent
            with the stored config.
    """
    from .net import _config_from_dict  # shared private helper

    config, records = read_container(path)
    if config.get("kind") != "int8":
        raise ArchitectureMismatchError(f"checkpoint kind {config.get('kind')!r} is not int8")
    cfg = _config_from_dict(config["model"])
    template = init_model(cfg, seed=0)
    by_name = {r.name: r for r in records}

    def take(name: str, dtype: str, shape: tuple[int, ...]) -> TensorRecord:
        rec = by_name.pop(name, None)
        if rec is None or rec.dtype != dtype or rec.shape != shape:
            raise ArchitectureMismatchError(
                f"tensor {name} missing or mis-typed in quantized checkpoint"
            )
        return rec

    encoder = []
    for i, layer in enumerate(template.encoder):
        w = take(f"enc{i}.weight", "i8", layer.weight.shape)
        b = take(f"enc{i}.bias", "f32", layer.bias.shape)
        encoder.append(
            QuantizedConvLayer(
                weight=QuantizedTensor(w.data, w.scale, w.shape),
                bias=b.data.copy(),
                stride=layer.stride,
            )
        )
    lstm_layers = []
    for i, layer in enumerate(template.lstm.layers):
        wx = take(f"lstm{i}.w_x", "f32", layer.w_x.shape)
        wh = take(f"lstm{i}.w_h", "f32", layer.w_h.shape)
        b = take(f"lstm{i}.bias", "f32", layer.bias.shape)
        lstm_layers.append(LstmLayerParams(wx.data.copy(), wh.data.copy(), b.data.copy()))
    decoder = []
    for i, layer in enumerate(template.decoder):
        w = take(f"dec{i}.weight", "i8", layer.weight.shape)
        b = take(f"dec{i}.bias", "f32", layer.bias.shape)
        decoder.append(
            QuantizedDeconvLayer(
                weight=QuantizedTensor(w.data, w.scale, w.shape),
                bias=b.data.copy(),
                stride=layer.stride,
            )
        )
    if by_name:
        raise ArchitectureMismatchError(
            f"quantized checkpoint has unexpected tensors {sorted(by_name)}"
        )
    return QuantizedModel(config=cfg, encoder=encoder, lstm=LstmParams(lstm_layers),
                          decoder=decoder)


def load_any_checkpoint(path) -> Model | QuantizedModel:
    """Load a checkpoint of either kind, dispatching on its metadata."""
    from .net import load_checkpoint

    config, _ = read_container(path)
    kind = config.get("kind")
    if kind == "fp32":
        return load_checkpoint(path)
    if kind == "int8":
        return load_quantized_checkpoint(path)
    raise ArchitectureMismatchError(f"unknown checkpoint kind {kind!r}: {path}")
