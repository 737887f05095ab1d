"""Training: composite waveform loss, Adam, epoch loop, gradient checking.

The objective is alpha*MSE + beta*MAE + gamma computed on raw waveforms
over the full segment. gamma is kept as a literal additive constant even
though it contributes nothing to gradients, so reported loss values sit
on the documented floor (0.2 with default constants when estimate equals
target).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import read_wav
from .dataset import load_manifest
from .errors import (
    EmptyDatasetError,
    InternalInvariantError,
    InvalidConfigError,
    NonFiniteError,
    ShapeMismatchError,
)
from .net import Model, model_backward, model_forward, save_checkpoint


@dataclass(frozen=True)
class LossConfig:
    """Composite loss weights: alpha*MSE + beta*MAE + gamma."""

    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfigError("alpha and beta must be >= 0")


@dataclass(frozen=True)
class OptimConfig:
    """Adam hyperparameters and loop controls."""

    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")


def complex_loss(
    estimate: np.ndarray, target: np.ndarray, cfg: LossConfig | None = None
) -> float:
    """alpha*mean((e-t)^2) + beta*mean(|e-t|) + gamma.

    Symmetric in (estimate, target); equals gamma exactly when they match.

    Raises:
        ShapeMismatchError: shapes differ.
    """
    if cfg is None:
        cfg = LossConfig()
    e = np.asarray(estimate, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if e.shape != t.shape:
        raise ShapeMismatchError(f"shape mismatch: {e.shape} vs {t.shape}")
    diff = e - t
    return float(cfg.alpha * np.mean(diff**2) + cfg.beta * np.mean(np.abs(diff)) + cfg.gamma)


def complex_loss_grad(
    estimate: np.ndarray, target: np.ndarray, cfg: LossConfig | None = None
) -> np.ndarray:
    """Gradient of complex_loss with respect to the estimate.

    Per element: (2*alpha*(e-t) + beta*sign(e-t)) / N with sign(0) = 0;
    gamma contributes nothing.

    Raises:
        ShapeMismatchError: shapes differ.
    """
    if cfg is None:
        cfg = LossConfig()
    e = np.asarray(estimate, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if e.shape != t.shape:
        raise ShapeMismatchError(f"shape mismatch: {e.shape} vs {t.shape}")
    diff = e - t
    return (2.0 * cfg.alpha * diff + cfg.beta * np.sign(diff)) / diff.size


@dataclass
class AdamState:
    """First/second moment estimates plus the bias-correction step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: OptimConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to params in place.

    Returns the same (params, state) objects for chaining. Callers that
    hold a Model over these arrays must call model.mark_mutated() after
    updating (train_epoch does).

    Raises:
        ShapeMismatchError: grads missing a parameter or shaped differently.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient for {name!r} missing or mis-shaped "
                f"({None if g is None else g.shape} vs {p.shape})"
            )
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return params, state


@dataclass
class TrainStatsRow:
    epoch: int
    mean_loss: float
    seconds: float


@dataclass
class TrainStats:
    rows: list[TrainStatsRow] = field(default_factory=list)
    checkpoint_path: str = ""


@dataclass
class TrainingSet:
    """In-memory (noisy, clean) waveform pairs loaded from a corpus tree."""

    pairs: list[tuple[np.ndarray, np.ndarray]]
    ids: list[str]

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "TrainingSet":
        """Load noisy/<id>.wav and clean/<id>.wav beside the manifest."""
        manifest_path = Path(manifest_path)
        manifest = load_manifest(manifest_path)
        root = manifest_path.parent
        pairs = []
        ids = []
        for e in manifest.entries:
            noisy = read_wav(root / "noisy" / f"{e.clean_id}.wav")
            clean = read_wav(root / "clean" / f"{e.clean_id}.wav")
            pairs.append((noisy.samples[None, :], clean.samples[None, :]))
            ids.append(e.clean_id)
        return cls(pairs=pairs, ids=ids)


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def train_epoch(
    model: Model,
    dataset: TrainingSet,
    loss_cfg: LossConfig,
    optim_cfg: OptimConfig,
    state: AdamState | None = None,
    epoch: int = 1,
) -> TrainStatsRow:
    """One pass over the dataset: shuffle, batch, update; returns mean loss.

    The shuffle is seeded by (optim seed, epoch) so reruns are
    bit-identical. Batch gradients are summed in batch index order and
    averaged; the final short batch is kept. Losses are recorded before
    the update that batch triggers.

    Raises:
        EmptyDatasetError: dataset has no pairs.
        NonFiniteError: training produced a non-finite loss.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("training set is empty")
    if state is None:
        state = AdamState.for_params(model.param_dict())
    start = time.perf_counter()
    rng = np.random.default_rng([optim_cfg.seed, epoch])
    order = rng.permutation(len(dataset))
    params = model.param_dict()

    losses = []
    for batch in _batches(order, optim_cfg.batch_size):
        acc: dict[str, np.ndarray] | None = None
        for idx in batch:
            noisy, clean = dataset.pairs[int(idx)]
            out, cache = model_forward(model, noisy, return_cache=True)
            losses.append(complex_loss(out, clean, loss_cfg))
            grad_out = complex_loss_grad(out, clean, loss_cfg)
            grads, _ = model_backward(model, cache, grad_out)
            if acc is None:
                acc = grads
            else:
                for k in acc:
                    acc[k] += grads[k]
        assert acc is not None
        scale = 1.0 / len(batch)
        for k in acc:
            acc[k] *= scale
        adam_step(params, acc, state, optim_cfg)
        model.mark_mutated()

    mean_loss = float(np.mean(losses))
    if not np.isfinite(mean_loss):
        raise NonFiniteError(f"epoch {epoch} mean loss is not finite: {mean_loss}")
    return TrainStatsRow(epoch=epoch, mean_loss=mean_loss, seconds=time.perf_counter() - start)


def train(
    model: Model,
    dataset: TrainingSet,
    loss_cfg: LossConfig,
    optim_cfg: OptimConfig,
    checkpoint_path: str | Path,
    log_path: str | Path | None = None,
    progress=None,
) -> TrainStats:
    """Run optim_cfg.epochs epochs, write the checkpoint and a CSV log.

    The log has columns (epoch, mean_loss, seconds). progress, when
    given, is called with each TrainStatsRow as epochs finish.
    """
    state = AdamState.for_params(model.param_dict())
    stats = TrainStats(checkpoint_path=str(checkpoint_path))
    for epoch in range(1, optim_cfg.epochs + 1):
        row = train_epoch(model, dataset, loss_cfg, optim_cfg, state=state, epoch=epoch)
        stats.rows.append(row)
        if progress is not None:
            progress(row)
    save_checkpoint(model, checkpoint_path)
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "mean_loss", "seconds"])
            for row in stats.rows:
                writer.writerow([row.epoch, repr(row.mean_loss), f"{row.seconds:.3f}"])
    return stats


def _min_abs_preact(model: Model, x: np.ndarray) -> float:
    _, cache = model_forward(model, x, return_cache=True)
    smallest = np.inf
    for z in cache.enc_preacts + cache.dec_preacts[:-1]:  # last decoder layer is linear
        if z.size:
            smallest = min(smallest, float(np.min(np.abs(z))))
    return smallest


def gradient_check(
    model: Model,
    sample: tuple[np.ndarray, np.ndarray],
    loss_cfg: LossConfig | None = None,
    epsilon: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter of a copy of the model on one (input, target)
    pair. Relative error is |a - n| / max(|a|, |n|), taken as 0 when both
    magnitudes are below 1e-8 (the both-zero case, and gradients beneath
    what a central difference at this epsilon can resolve).

    Kink avoidance, as the loss and ReLU are non-differentiable at zero:
    before checking, biases of the copy are nudged (+2*margin on any
    channel holding a pre-activation within margin = 10*epsilon of zero,
    re-evaluated up to 25 times) and target elements within margin of
    the output are pushed margin away, so no finite difference steps
    across a kink. The caller's model and sample are never modified.

    Intended for tiny models (<= ~10^4 parameters); cost is two forward
    passes per parameter.
    """
    if loss_cfg is None:
        loss_cfg = LossConfig()
    x, target = sample
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).copy()
    work = model.copy()
    margin = 10.0 * epsilon

    for _ in range(25):
        _, cache = model_forward(work, x, return_cache=True)
        nudged = False
        for layers, preacts in (
            (work.encoder, cache.enc_preacts),
            (work.decoder, cache.dec_preacts[:-1]),
        ):
            for layer, z in zip(layers, preacts):
                near = np.any(np.abs(z) < margin, axis=1)
                if np.any(near):
                    layer.bias[near] += 2.0 * margin
                    nudged = True
        if nudged:
            work.mark_mutated()
        else:
            break
    else:
        raise InternalInvariantError("could not move pre-activations off ReLU kinks")

    out, cache = model_forward(work, x, return_cache=True)
    near = np.abs(out - target) < margin
    target[near] = out[near] - margin  # push the MAE kink away
    grads, _ = model_backward(work, cache, complex_loss_grad(out, target, loss_cfg))

    worst = 0.0
    for name, p in work.param_dict().items():
        analytic = grads[name]
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            work.mark_mutated()
            plus = complex_loss(model_forward(work, x), target, loss_cfg)
            flat[idx] = orig - epsilon
            work.mark_mutated()
            minus = complex_loss(model_forward(work, x), target, loss_cfg)
            flat[idx] = orig
            work.mark_mutated()
            numeric = (plus - minus) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[idx])
            denom = max(abs(a), abs(numeric))
            if denom >= 1e-8:
                worst = max(worst, abs(a - numeric) / denom)
    return worst
