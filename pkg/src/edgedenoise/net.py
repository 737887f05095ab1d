"""Waveform-domain denoising network with exact reverse-mode gradients.

Architecture: a strided 1-D convolution encoder, an LSTM bottleneck, and
a transposed-convolution decoder with additive skip connections from
each encoder level to the matching decoder input. The final decoder
layer is linear so outputs can be negative audio.

Conventions (used throughout this package):
  - Activations are [channels x time] float64 arrays; waveforms are
    [1 x T].
  - Conv weights are [out x in x k]; forward is valid (no-pad) strided
    cross-correlation.
  - Transposed-conv weights are [in x out x k]; deconv with weight V is
    the exact adjoint of conv with weight V.transpose(1, 0, 2).
  - LSTM gates are stacked (input, forget, candidate, output) along the
    first axis; one bias vector of length 4H per layer; initial states
    zero; unidirectional.

Encoder level i has base_channels * 2**(i-1) channels; the LSTM hidden
size must equal the bottleneck channel count so its output can be added
to the bottleneck skip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import (
    ArchitectureMismatchError,
    CorruptHeaderError,
    InternalInvariantError,
    InvalidConfigError,
    ShapeMismatchError,
    StaleCacheError,
    TooShortError,
)

CHECKPOINT_MAGIC = b"EDGE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the desk-scale model."""

    depth: int = 4
    base_channels: int = 16
    kernel_size: int = 8
    stride: int = 4
    lstm_layers: int = 2
    lstm_hidden: int | None = None
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise InvalidConfigError(f"depth must be >= 1, got {self.depth}")
        if self.stride < 1:
            raise InvalidConfigError(f"stride must be >= 1, got {self.stride}")
        if self.kernel_size < 1:
            raise InvalidConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.stride > self.kernel_size:
            # stride beyond the kernel skips input samples outright and
            # leaves uncovered gaps in the transposed pass
            raise InvalidConfigError(
                f"stride {self.stride} must not exceed kernel_size {self.kernel_size}"
            )
        if self.base_channels < 1:
            raise InvalidConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.lstm_layers < 1:
            raise InvalidConfigError(f"lstm_layers must be >= 1, got {self.lstm_layers}")
        if self.activation != "relu":
            raise InvalidConfigError(f"unsupported activation: {self.activation!r}")
        if self.lstm_hidden is not None and self.lstm_hidden != self.bottleneck_channels:
            raise InvalidConfigError(
                f"lstm_hidden must equal the bottleneck channel count "
                f"{self.bottleneck_channels} (additive skip), got {self.lstm_hidden}"
            )

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2 ** (self.depth - 1)

    def channel_sizes(self) -> list[int]:
        """Channel count at levels 0..depth (level 0 is the waveform)."""
        return [1] + [self.base_channels * 2**i for i in range(self.depth)]

    def resolved(self) -> dict:
        """Config as a plain dict with lstm_hidden made explicit."""
        return {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "lstm_layers": self.lstm_layers,
            "lstm_hidden": self.bottleneck_channels,
            "activation": self.activation,
        }


@dataclass
class ConvLayerParams:
    """Strided convolution layer: weight [out x in x k], bias [out]."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int

    def __post_init__(self) -> None:
        if self.weight.ndim != 3 or self.bias.ndim != 1:
            raise ShapeMismatchError("conv weight must be 3-D and bias 1-D")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeMismatchError(
                f"bias length {self.bias.shape[0]} != out channels {self.weight.shape[0]}"
            )
        if self.stride < 1:
            raise InvalidConfigError(f"stride must be >= 1, got {self.stride}")


@dataclass
class DeconvLayerParams:
    """Transposed convolution layer: weight [in x out x k], bias [out]."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int

    def __post_init__(self) -> None:
        if self.weight.ndim != 3 or self.bias.ndim != 1:
            raise ShapeMismatchError("deconv weight must be 3-D and bias 1-D")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ShapeMismatchError(
                f"bias length {self.bias.shape[0]} != out channels {self.weight.shape[1]}"
            )
        if self.stride < 1:
            raise InvalidConfigError(f"stride must be >= 1, got {self.stride}")


@dataclass
class LstmLayerParams:
    """One LSTM layer: w_x [4H x in], w_h [4H x H], bias [4H]."""

    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        four_h = self.w_x.shape[0]
        if four_h % 4 != 0:
            raise ShapeMismatchError(f"gate dimension {four_h} is not 4*hidden")
        h = four_h // 4
        if self.w_h.shape != (four_h, h):
            raise ShapeMismatchError(f"w_h must be [{four_h} x {h}], got {self.w_h.shape}")
        if self.bias.shape != (four_h,):
            raise ShapeMismatchError(f"bias must be [{four_h}], got {self.bias.shape}")

    @property
    def hidden(self) -> int:
        return self.w_x.shape[0] // 4


@dataclass
class LstmParams:
    """Stack of unidirectional LSTM layers applied in order."""

    layers: list[LstmLayerParams]


@dataclass
class Model:
    """Full parameter set: encoder convs, LSTM stack, decoder deconvs.

    mutations counts in-place parameter updates (see mark_mutated); the
    forward cache is stamped with it so a backward pass against updated
    parameters is rejected instead of silently computing wrong gradients.
    """

    config: ModelConfig
    encoder: list[ConvLayerParams]
    lstm: LstmParams
    decoder: list[DeconvLayerParams]
    mutations: int = field(default=0, repr=False, compare=False)

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in declaration order: encoder, LSTM, decoder."""
        items = []
        for i, layer in enumerate(self.encoder):
            items.append((f"enc{i}.weight", layer.weight))
            items.append((f"enc{i}.bias", layer.bias))
        for i, layer in enumerate(self.lstm.layers):
            items.append((f"lstm{i}.w_x", layer.w_x))
            items.append((f"lstm{i}.w_h", layer.w_h))
            items.append((f"lstm{i}.bias", layer.bias))
        for i, layer in enumerate(self.decoder):
            items.append((f"dec{i}.weight", layer.weight))
            items.append((f"dec{i}.bias", layer.bias))
        return items

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.param_items())

    def mark_mutated(self) -> None:
        """Record an in-place parameter update, invalidating forward caches."""
        self.mutations += 1

    def copy(self) -> "Model":
        return Model(
            config=self.config,
            encoder=[
                ConvLayerParams(l.weight.copy(), l.bias.copy(), l.stride)
                for l in self.encoder
            ],
            lstm=LstmParams(
                [
                    LstmLayerParams(l.w_x.copy(), l.w_h.copy(), l.bias.copy())
                    for l in self.lstm.layers
                ]
            ),
            decoder=[
                DeconvLayerParams(l.weight.copy(), l.bias.copy(), l.stride)
                for l in self.decoder
            ],
        )


def init_model(cfg: ModelConfig, seed: int) -> Model:
    """Build a model with uniform(-a, a) weights, a = sqrt(1/fan_in).

    fan_in is in_channels*kernel for conv/deconv, the input width for
    LSTM input weights, and the hidden width for LSTM recurrent weights.
    Biases start at zero. Draws happen in declaration order, so the
    result is bit-identical for a given (cfg, seed).

    Raises:
        InvalidConfigError: inconsistent configuration.
    """
    rng = np.random.default_rng(seed)
    chans = cfg.channel_sizes()
    k, s = cfg.kernel_size, cfg.stride

    def uniform(shape: tuple, fan_in: int) -> np.ndarray:
        a = np.sqrt(1.0 / fan_in)
        return rng.uniform(-a, a, size=shape)

    encoder = [
        ConvLayerParams(
            weight=uniform((chans[i + 1], chans[i], k), chans[i] * k),
            bias=np.zeros(chans[i + 1]),
            stride=s,
        )
        for i in range(cfg.depth)
    ]
    hidden = cfg.bottleneck_channels
    lstm_layers = []
    for i in range(cfg.lstm_layers):
        in_width = hidden  # layer 0 input is the bottleneck, also `hidden` wide
        lstm_layers.append(
            LstmLayerParams(
                w_x=uniform((4 * hidden, in_width), in_width),
                w_h=uniform((4 * hidden, hidden), hidden),
                bias=np.zeros(4 * hidden),
            )
        )
    decoder = [
        DeconvLayerParams(
            weight=uniform((chans[i + 1], chans[i], k), chans[i + 1] * k),
            bias=np.zeros(chans[i]),
            stride=s,
        )
        for i in reversed(range(cfg.depth))
    ]
    return Model(config=cfg, encoder=encoder, lstm=LstmParams(lstm_layers), decoder=decoder)


def _check_2d(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"{what} must be [channels x time], got shape {x.shape}")
    return x


def _conv_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [in, t_out, k] view: window t starts at sample t*stride
    return sliding_window_view(x, k, axis=1)[:, ::stride, :]


def conv1d_forward(
    x: np.ndarray, layer: ConvLayerParams, apply_activation: bool = True
) -> np.ndarray:
    """Valid strided cross-correlation plus bias, then ReLU.

    out[o, t] = relu(b[o] + sum_{i,j} W[o,i,j] * x[i, t*stride + j]);
    out_time = floor((T - k)/stride) + 1.

    Args:
        x: Input [in_channels x T], T >= kernel length.
        layer: Parameters.
        apply_activation: Skip the ReLU when False (linear output).

    Raises:
        ShapeMismatchError: channel mismatch or T < kernel length.
    """
    x = _check_2d(x, "conv input")
    out_ch, in_ch, k = layer.weight.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(f"expected {in_ch} input channels, got {x.shape[0]}")
    if x.shape[1] < k:
        raise ShapeMismatchError(f"time length {x.shape[1]} < kernel {k}")
    win = _conv_windows(x, k, layer.stride)
    z = np.tensordot(layer.weight, win, axes=([1, 2], [0, 2])) + layer.bias[:, None]
    return np.maximum(z, 0.0) if apply_activation else z


def _conv_backward(
    layer: ConvLayerParams, x: np.ndarray, gz: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the pre-activation map: returns (gw, gb, gx)."""
    _out_ch, _in_ch, k = layer.weight.shape
    s = layer.stride
    win = _conv_windows(x, k, s)
    gw = np.tensordot(gz, win, axes=([1], [1]))
    gb = gz.sum(axis=1)
    gx = np.zeros_like(x)
    t_out = gz.shape[1]
    for j in range(k):
        gx[:, j : j + s * (t_out - 1) + 1 : s] += layer.weight[:, :, j].T @ gz
    return gw, gb, gx


def deconv1d_forward(
    x: np.ndarray, layer: DeconvLayerParams, apply_activation: bool = True
) -> np.ndarray:
    """Transposed convolution (adjoint of conv1d_forward's linear map).

    out[o, t*stride + j] += W[i, o, j] * x[i, t], plus bias;
    out_time = (T - 1)*stride + k. The final decoder layer is called
    with apply_activation=False so audio can be negative.

    Raises:
        ShapeMismatchError: channel mismatch.
    """
    x = _check_2d(x, "deconv input")
    in_ch, out_ch, k = layer.weight.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(f"expected {in_ch} input channels, got {x.shape[0]}")
    t_in = x.shape[1]
    s = layer.stride
    z = np.zeros((out_ch, (t_in - 1) * s + k))
    for j in range(k):
        z[:, j : j + s * (t_in - 1) + 1 : s] += layer.weight[:, :, j].T @ x
    z += layer.bias[:, None]
    return np.maximum(z, 0.0) if apply_activation else z


def _deconv_backward(
    layer: DeconvLayerParams, x: np.ndarray, gz: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the pre-activation map: returns (gw, gb, gx)."""
    _in_ch, _out_ch, k = layer.weight.shape
    s = layer.stride
    gzwin = _conv_windows(gz, k, s)  # gzwin[o, t, j] = gz[o, t*s + j]
    gw = np.tensordot(x, gzwin, axes=([1], [1]))
    gb = gz.sum(axis=1)
    gx = np.tensordot(layer.weight, gzwin, axes=([1, 2], [0, 2]))
    return gw, gb, gx


def _lstm_layer_forward(x: np.ndarray, lp: LstmLayerParams) -> tuple[np.ndarray, dict]:
    """Run one layer over [in x T]; returns (h_seq [H x T], backward cache)."""
    h_dim = lp.hidden
    t_len = x.shape[1]
    ax = lp.w_x @ x + lp.bias[:, None]  # input contribution, all steps at once
    gi = np.empty((h_dim, t_len))
    gf = np.empty((h_dim, t_len))
    gg = np.empty((h_dim, t_len))
    go = np.empty((h_dim, t_len))
    c_prev_seq = np.empty((h_dim, t_len))
    h_prev_seq = np.empty((h_dim, t_len))
    tanh_c = np.empty((h_dim, t_len))
    h_seq = np.empty((h_dim, t_len))
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(t_len):
        a = ax[:, t] + lp.w_h @ h
        i = expit(a[:h_dim])
        f = expit(a[h_dim : 2 * h_dim])
        g = np.tanh(a[2 * h_dim : 3 * h_dim])
        o = expit(a[3 * h_dim :])
        h_prev_seq[:, t] = h
        c_prev_seq[:, t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gi[:, t] = i
        gf[:, t] = f
        gg[:, t] = g
        go[:, t] = o
        tanh_c[:, t] = tc
        h_seq[:, t] = h
    cache = {
        "x": x,
        "i": gi,
        "f": gf,
        "g": gg,
        "o": go,
        "c_prev": c_prev_seq,
        "h_prev": h_prev_seq,
        "tanh_c": tanh_c,
    }
    return h_seq, cache


def _lstm_layer_backward(
    lp: LstmLayerParams, cache: dict, gh_seq: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (g_wx, g_wh, g_bias, g_input) for one layer."""
    h_dim = lp.hidden
    i, f, g, o = cache["i"], cache["f"], cache["g"], cache["o"]
    tanh_c, c_prev, h_prev = cache["tanh_c"], cache["c_prev"], cache["h_prev"]
    t_len = gh_seq.shape[1]
    da_seq = np.empty((4 * h_dim, t_len))
    dh_next = np.zeros(h_dim)
    dc_next = np.zeros(h_dim)
    for t in reversed(range(t_len)):
        dh = gh_seq[:, t] + dh_next
        do = dh * tanh_c[:, t]
        dc = dh * o[:, t] * (1.0 - tanh_c[:, t] ** 2) + dc_next
        di = dc * g[:, t]
        dg = dc * i[:, t]
        df = dc * c_prev[:, t]
        dc_next = dc * f[:, t]
        da = np.concatenate(
            [
                di * i[:, t] * (1.0 - i[:, t]),
                df * f[:, t] * (1.0 - f[:, t]),
                dg * (1.0 - g[:, t] ** 2),
                do * o[:, t] * (1.0 - o[:, t]),
            ]
        )
        da_seq[:, t] = da
        dh_next = lp.w_h.T @ da
    g_wx = da_seq @ cache["x"].T
    g_wh = da_seq @ h_prev.T
    g_bias = da_seq.sum(axis=1)
    g_input = lp.w_x.T @ da_seq
    return g_wx, g_wh, g_bias, g_input


def lstm_forward(seq: np.ndarray, params: LstmParams) -> np.ndarray:
    """Run the LSTM stack over a [channels x time] sequence.

    Standard recurrence per layer: sigmoid gates i, f, o; tanh candidate
    g; c_t = f*c + i*g; h_t = o*tanh(c_t); zero initial states.

    Raises:
        ShapeMismatchError: input width does not match layer 0.
    """
    x = _check_2d(seq, "lstm input")
    for lp in params.layers:
        if x.shape[0] != lp.w_x.shape[1]:
            raise ShapeMismatchError(
                f"lstm layer expects {lp.w_x.shape[1]} channels, got {x.shape[0]}"
            )
        x, _ = _lstm_layer_forward(x, lp)
    return x


def min_valid_length(cfg: ModelConfig) -> int:
    """Smallest input length the encoder chain accepts without padding up.

    Inverting the per-level shape rule out = (T - k)/s + 1 from a
    one-frame bottleneck: L_0 = 1, L_{i+1} = (L_i - 1)*stride + kernel,
    applied depth times.
    """
    length = 1
    for _ in range(cfg.depth):
        length = (length - 1) * cfg.stride + cfg.kernel_size
    return length


def _padded_length(cfg: ModelConfig, t: int) -> int:
    """Smallest valid encoder input length >= t.

    Valid lengths form the arithmetic progression
    min_valid_length + m * stride**depth, m >= 0.
    """
    base = min_valid_length(cfg)
    step = cfg.stride**cfg.depth
    m = 0 if t <= base else -((t - base) // -step)
    length = base + m * step
    probe = length
    for _ in range(cfg.depth):
        if probe < cfg.kernel_size or (probe - cfg.kernel_size) % cfg.stride:
            raise InternalInvariantError(f"padded length {length} fails shape algebra")
        probe = (probe - cfg.kernel_size) // cfg.stride + 1
    return length


@dataclass
class ForwardCache:
    """Activations saved by model_forward for the matching backward pass."""

    model_id: int
    mutations: int
    input_len: int
    padded_len: int
    enc_inputs: list[np.ndarray]
    enc_preacts: list[np.ndarray]
    lstm_caches: list[dict]
    dec_inputs: list[np.ndarray]
    dec_preacts: list[np.ndarray]


def model_forward(
    model: Model, waveform: np.ndarray, return_cache: bool = False
) -> np.ndarray | tuple[np.ndarray, ForwardCache]:
    """Denoise a [1 x T] waveform; output has the same shape.

    The input is zero-padded to the smallest length the encoder chain
    accepts (see _padded_length) and the output trimmed back to T.
    Decoder layer j's input is the previous output plus the encoder
    output at the mirrored level; the first decoder input is
    lstm_output + bottleneck; the final decoder layer is linear.

    Args:
        model: Parameters.
        waveform: [1 x T] array, T >= min_valid_length(config).
        return_cache: Also return the ForwardCache for model_backward.

    Raises:
        TooShortError: T below the documented minimum.
        ShapeMismatchError: input not [1 x T].
    """
    x = _check_2d(waveform, "model input")
    if x.shape[0] != 1:
        raise ShapeMismatchError(f"expected [1 x T] waveform, got shape {x.shape}")
    t_in = x.shape[1]
    if t_in < min_valid_length(model.config):
        raise TooShortError(
            f"input length {t_in} < minimum {min_valid_length(model.config)} "
            f"for depth {model.config.depth}"
        )
    padded_len = _padded_length(model.config, t_in)
    if padded_len != t_in:
        x = np.pad(x, ((0, 0), (0, padded_len - t_in)))

    enc_inputs: list[np.ndarray] = []
    enc_preacts: list[np.ndarray] = []
    h = x
    for layer in model.encoder:
        enc_inputs.append(h)
        z = conv1d_forward(h, layer, apply_activation=False)
        enc_preacts.append(z)
        h = np.maximum(z, 0.0)

    enc_outputs_tail = h  # bottleneck output, reused for the first skip
    lstm_caches: list[dict] = []
    for lp in model.lstm.layers:
        h, cache = _lstm_layer_forward(h, lp)
        lstm_caches.append(cache)

    dec_inputs: list[np.ndarray] = []
    dec_preacts: list[np.ndarray] = []
    d = h + enc_outputs_tail
    depth = model.config.depth
    for j, layer in enumerate(model.decoder):
        dec_inputs.append(d)
        z = deconv1d_forward(d, layer, apply_activation=False)
        dec_preacts.append(z)
        if j == depth - 1:
            d = z  # final layer stays linear
        else:
            skip = np.maximum(enc_preacts[depth - 2 - j], 0.0)
            d = np.maximum(z, 0.0) + skip

    out = d[:, :t_in]
    if not return_cache:
        return out
    cache = ForwardCache(
        model_id=id(model),
        mutations=model.mutations,
        input_len=t_in,
        padded_len=padded_len,
        enc_inputs=enc_inputs,
        enc_preacts=enc_preacts,
        lstm_caches=lstm_caches,
        dec_inputs=dec_inputs,
        dec_preacts=dec_preacts,
    )
    return out, cache


def model_backward(
    model: Model, cached_forward: ForwardCache, grad_output: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the forward pass.

    Args:
        model: The model that produced cached_forward.
        cached_forward: Cache from model_forward(..., return_cache=True).
        grad_output: Upstream gradient, [1 x T] matching the forward input.

    Returns:
        (grads, grad_input): grads keyed like Model.param_items();
        grad_input is [1 x T].

    Raises:
        StaleCacheError: cache from another model instance or parameters
            were updated since the forward pass.
        ShapeMismatchError: grad_output shape mismatch.
    """
    if cached_forward.model_id != id(model) or cached_forward.mutations != model.mutations:
        raise StaleCacheError(
            "forward cache does not match current parameters; rerun model_forward"
        )
    g = _check_2d(grad_output, "grad_output")
    if g.shape != (1, cached_forward.input_len):
        raise ShapeMismatchError(
            f"grad_output shape {g.shape} != (1, {cached_forward.input_len})"
        )
    if cached_forward.padded_len != cached_forward.input_len:
        g = np.pad(g, ((0, 0), (0, cached_forward.padded_len - cached_forward.input_len)))

    depth = model.config.depth
    grads: dict[str, np.ndarray] = {}
    # gradient accumulating at each encoder layer's post-ReLU output
    enc_out_grads: list[np.ndarray | None] = [None] * depth

    for j in reversed(range(depth)):
        layer = model.decoder[j]
        z = cached_forward.dec_preacts[j]
        if j == depth - 1:
            gz = g
        else:
            gz = g * (z > 0.0)
            enc_grad = g  # skip branch shares the decoder input gradient
            lvl = depth - 2 - j
            enc_out_grads[lvl] = (
                enc_grad if enc_out_grads[lvl] is None else enc_out_grads[lvl] + enc_grad
            )
        gw, gb, g = _deconv_backward(layer, cached_forward.dec_inputs[j], gz)
        grads[f"dec{j}.weight"] = gw
        grads[f"dec{j}.bias"] = gb

    # g now sits on (lstm output + bottleneck skip)
    bottleneck_grad = g
    gh = g
    for li in reversed(range(len(model.lstm.layers))):
        lp = model.lstm.layers[li]
        g_wx, g_wh, g_bias, gh = _lstm_layer_backward(lp, cached_forward.lstm_caches[li], gh)
        grads[f"lstm{li}.w_x"] = g_wx
        grads[f"lstm{li}.w_h"] = g_wh
        grads[f"lstm{li}.bias"] = g_bias
    g = gh + bottleneck_grad  # bottleneck output feeds both LSTM and skip

    for i in reversed(range(depth)):
        layer = model.encoder[i]
        z = cached_forward.enc_preacts[i]
        gz = g * (z > 0.0)
        gw, gb, g = _conv_backward(layer, cached_forward.enc_inputs[i], gz)
        grads[f"enc{i}.weight"] = gw
        grads[f"enc{i}.bias"] = gb
        if i > 0 and enc_out_grads[i - 1] is not None:
            g = g + enc_out_grads[i - 1]

    return grads, g[:, : cached_forward.input_len]


@dataclass
class TensorRecord:
    """One tensor in a checkpoint: payload plus its layout metadata."""

    name: str
    dtype: str  # "f32" | "i8"
    shape: tuple[int, ...]
    data: np.ndarray
    scale: float | None = None


def write_container(path: str | Path, config: dict, records: list[TensorRecord]) -> None:
    """Write the checkpoint container.

    Layout: magic "EDGE", u32 format version, u32 JSON length, JSON
    metadata (config + tensor table), then raw little-endian payloads in
    table order (f32 tensors as float32, i8 as int8). The JSON is dumped
    with sorted keys so identical inputs give identical bytes.
    """
    table = []
    for r in records:
        entry: dict = {"name": r.name, "dtype": r.dtype, "shape": list(r.shape)}
        if r.dtype == "i8":
            entry["scale"] = r.scale
        table.append(entry)
    blob = json.dumps({"config": config, "tensors": table}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for r in records:
            arr = np.ascontiguousarray(r.data.reshape(r.shape))
            if r.dtype == "f32":
                f.write(arr.astype("<f4").tobytes())
            elif r.dtype == "i8":
                f.write(arr.astype(np.int8).tobytes())
            else:
                raise InternalInvariantError(f"unknown tensor dtype {r.dtype!r}")


def read_container(path: str | Path) -> tuple[dict, list[TensorRecord]]:
    """Read a checkpoint container written by write_container.

    Raises:
        FileNotFoundError: path does not exist.
        CorruptHeaderError: bad magic, version, or truncated payload.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptHeaderError(f"not a checkpoint file: {path}")
    version, blob_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CorruptHeaderError(f"unsupported checkpoint version {version}: {path}")
    if len(raw) < 12 + blob_len:
        raise CorruptHeaderError(f"truncated checkpoint metadata: {path}")
    try:
        meta = json.loads(raw[12 : 12 + blob_len].decode("utf-8"))
        table = meta["tensors"]
        config = meta["config"]
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptHeaderError(f"malformed checkpoint metadata {path}: {exc}") from exc

    records = []
    offset = 12 + blob_len
    for entry in table:
        shape = tuple(int(d) for d in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["dtype"] == "f32":
            nbytes = 4 * count
            if offset + nbytes > len(raw):
                raise CorruptHeaderError(f"truncated tensor payload in {path}")
            data = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4").reshape(shape)
            records.append(TensorRecord(entry["name"], "f32", shape, data.astype(np.float64)))
        elif entry["dtype"] == "i8":
            nbytes = count
            if offset + nbytes > len(raw):
                raise CorruptHeaderError(f"truncated tensor payload in {path}")
            data = np.frombuffer(raw[offset : offset + nbytes], dtype=np.int8).reshape(shape)
            records.append(
                TensorRecord(entry["name"], "i8", shape, data.copy(), float(entry["scale"]))
            )
        else:
            raise CorruptHeaderError(f"unknown tensor dtype {entry['dtype']!r} in {path}")
        offset += nbytes
    return config, records


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Serialize an FP32 model; parameters are stored as float32."""
    records = [
        TensorRecord(name, "f32", arr.shape, arr) for name, arr in model.param_items()
    ]
    write_container(path, {"kind": "fp32", "model": model.config.resolved()}, records)


def _config_from_dict(d: dict) -> ModelConfig:
    try:
        return ModelConfig(
            depth=int(d["depth"]),
            base_channels=int(d["base_channels"]),
            kernel_size=int(d["kernel_size"]),
            stride=int(d["stride"]),
            lstm_layers=int(d["lstm_layers"]),
            lstm_hidden=int(d["lstm_hidden"]) if d.get("lstm_hidden") is not None else None,
            activation=d.get("activation", "relu"),
        )
    except KeyError as exc:
        raise ArchitectureMismatchError(f"checkpoint config missing field {exc}") from exc


def load_checkpoint(path: str | Path) -> Model:
    """Load an FP32 checkpoint written by save_checkpoint.

    Raises:
        ArchitectureMismatchError: container holds a quantized model or
            tensors inconsistent with the stored config.
        CorruptHeaderError: unreadable container.
    """
    config, records = read_container(path)
    if config.get("kind") != "fp32":
        raise ArchitectureMismatchError(
            f"checkpoint kind {config.get('kind')!r} is not an FP32 model: {path}"
        )
    cfg = _config_from_dict(config["model"])
    model = init_model(cfg, seed=0)
    by_name = {r.name: r for r in records}
    for name, arr in model.param_items():
        rec = by_name.pop(name, None)
        if rec is None:
            raise ArchitectureMismatchError(f"checkpoint missing tensor {name}: {path}")
        if rec.dtype != "f32" or rec.shape != arr.shape:
            raise ArchitectureMismatchError(
                f"tensor {name} has dtype/shape {rec.dtype}/{rec.shape}, "
                f"expected f32/{arr.shape}: {path}"
            )
        arr[...] = rec.data
    if by_name:
        raise ArchitectureMismatchError(
            f"checkpoint has unexpected tensors {sorted(by_name)}: {path}"
        )
    return model
