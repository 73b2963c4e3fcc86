"""Toy training loop: AdamW on binary cross-entropy over synthetic pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .layers import Module
from .metrics import Confusion, confusion, metrics
from .model import ChangeModel, ModelConfig
from .tensor import Tensor, bce_with_logits, no_grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 42
    n_val: int = 50
    early_stop_f1: float | None = None
    threshold: float = 0.5

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.n_val < 0:
            raise ConfigError("n_val must be non-negative")


class AdamW:
    """Adam with decoupled weight decay. The decay term multiplies the
    parameter directly and is not folded into the gradient moments."""

    def __init__(self, module: Module, lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._params = list(module.named_parameters())
        self._m = [np.zeros_like(p.data) for _, p in self._params]
        self._v = [np.zeros_like(p.data) for _, p in self._params]
        self._t = 0

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self._t
        bias2 = 1.0 - b2 ** self._t
        for i, (_, p) in enumerate(self._params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * g * g
            m_hat = self._m[i] / bias1
            v_hat = self._v[i] / bias2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.data.dtype)


def _first_non_finite(model: Module, loss: Tensor) -> str | None:
    if not np.isfinite(loss.data).all():
        return "loss"
    for name, p in model.named_parameters():
        if not np.isfinite(p.data).all():
            return name
        if p.grad is not None and not np.isfinite(p.grad).all():
            return f"{name}.grad"
    return None


def check_finite(model: Module, loss: Tensor, step: int) -> None:
    """Raise TrainingDiverged naming the first non-finite tensor, if any."""
    bad = _first_non_finite(model, loss)
    if bad is not None:
        raise TrainingDiverged(f"non-finite values in '{bad}' at step {step}")


def _batches(n: int, batch_size: int, order: np.ndarray | None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def evaluate_f1(model: ChangeModel, x: np.ndarray, y: np.ndarray,
                batch_size: int = 32, threshold: float = 0.5) -> float:
    """Micro-averaged F1 of thresholded predictions over the given arrays."""
    total = Confusion(0, 0, 0, 0)
    with no_grad():
        for sel in _batches(x.shape[0], batch_size, None):
            out = model(Tensor(x[sel, 0]), Tensor(x[sel, 1]))
            pred = (out.probabilities.data > threshold).astype(np.uint8)
            total = total + confusion(pred, y[sel].astype(np.uint8))
    return metrics(total)["f1"]


def train(model: ChangeModel, x: np.ndarray, y: np.ndarray,
          config: TrainConfig | None = None,
          optimizer: AdamW | None = None) -> list[dict]:
    """Train on (n, 2, 3, H, W) pairs against (n, 1, H, W) masks.

    The last ``n_val`` samples are held out for validation; the rest are
    shuffled each epoch with the config seed. Returns one record per epoch:
    ``{"epoch", "train_loss", "val_f1"}``. Training stops early once
    ``val_f1 >= early_stop_f1`` when that bound is set.
    """
    config = config or TrainConfig()
    config.validate()
    if x.ndim != 5 or x.shape[1] != 2:
        raise ConfigError(f"expected pairs of shape (n, 2, 3, H, W), got {x.shape}")
    if y.shape[0] != x.shape[0]:
        raise ConfigError(f"{x.shape[0]} pairs but {y.shape[0]} masks")
    n_val = min(config.n_val, x.shape[0] - 1) if x.shape[0] > 1 else 0
    n_train = x.shape[0] - n_val
    x_train, y_train = x[:n_train], y[:n_train]
    x_val, y_val = x[n_train:], y[n_train:]

    opt = optimizer or AdamW(model, lr=config.learning_rate, betas=config.betas,
                             weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        losses = []
        for sel in _batches(n_train, config.batch_size, order):
            step += 1
            opt.zero_grad()
            out = model(Tensor(x_train[sel, 0]), Tensor(x_train[sel, 1]))
            loss = bce_with_logits(out.logits, Tensor(y_train[sel]))
            check_finite(model, loss, step)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        val_f1 = (evaluate_f1(model, x_val, y_val, config.batch_size,
                              config.threshold)
                  if n_val else float("nan"))
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(losses)),
                        "val_f1": val_f1})
        if (config.early_stop_f1 is not None and n_val
                and val_f1 >= config.early_stop_f1):
            break
    return history


_ABLATION_ARMS: tuple[tuple[str, dict], ...] = (
    ("full", {}),
    ("no_edm", {"use_edm": False}),
    ("no_swsa", {"use_swsa": False}),
    ("no_egsa", {"use_egsa": False}),
)


def ablation_run(x: np.ndarray, y: np.ndarray, dataset_sha256: str,
                 base_config: ModelConfig,
                 train_config: TrainConfig | None = None,
                 model_seed: int = 0) -> list[dict]:
    """Train each ablation arm on the same data and report one row per arm.

    Every row carries the dataset hash so a reader can verify all arms saw
    identical inputs.
    """
    from .profiling import count_params

    train_config = train_config or TrainConfig()
    rows = []
    for arm, flags in _ABLATION_ARMS:
        config = base_config.with_flags(**flags)
        model = ChangeModel(config, seed=model_seed)
        history = train(model, x, y, train_config)
        rows.append({
            "arm": arm,
            "use_edm": config.use_edm,
            "use_swsa": config.use_swsa,
            "use_egsa": config.use_egsa,
            "params": count_params(config).total,
            "dataset_sha256": dataset_sha256,
            "epochs_run": len(history),
            "final_train_loss": history[-1]["train_loss"],
            "final_val_f1": history[-1]["val_f1"],
        })
    return rows
