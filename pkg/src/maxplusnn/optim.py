"""Optimizers and the two-phase training protocol.

Both optimizers consume the (name, param, mask, decay) slots that
ModelParams.trainable() yields. Masked entries carry zero state and receive
zero update, so pruned linear weights and inactive tropical entries never
move. Weight decay is the coupled L2-gradient form and applies only to
slots flagged for decay (the linear weight matrices); shrinking max-plus
weights toward zero has no meaning in the semiring, so they never decay.

train() runs the configured phases in order, carrying parameters across the
boundary but giving each phase a fresh optimizer, and returns the model
restored to its lowest-validation-loss state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, TropicalParam, sigmoid_bce, softmax_ce
from .heads import ModelParams, forward
from .metrics import accuracy, pr_auc_macro, roc_auc_macro

__all__ = [
    "DivergenceError",
    "TrainPhase",
    "TrainConfig",
    "TrainResult",
    "Adam",
    "SGDNesterov",
    "adam_step",
    "sgd_nesterov_step",
    "make_optimizer",
    "train",
    "evaluate",
]

_SHUFFLE_STREAM = 12

OPTIMIZERS = ("adam", "sgd_nesterov")


class DivergenceError(RuntimeError):
    """A gradient or validation loss stopped being finite."""


@dataclass(frozen=True)
class TrainPhase:
    optimizer: str
    lr: float
    epochs: int

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}, expected {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ValueError(f"epochs must be a positive integer, got {self.epochs!r}")


@dataclass(frozen=True)
class TrainConfig:
    phases: tuple
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(
            p if isinstance(p, TrainPhase) else TrainPhase(*p) for p in self.phases))
        if not self.phases:
            raise ValueError("need at least one phase")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size!r}")

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.phases)


def _param_array(p) -> np.ndarray:
    return p.values if isinstance(p, TropicalParam) else p.data


def _effective_grad(name, p, mask, decay, weight_decay) -> np.ndarray:
    g = p.grad
    if g is None:
        g = np.zeros_like(_param_array(p))
    if not np.isfinite(g).all():
        raise DivergenceError(f"non-finite gradient in {name}")
    if decay and weight_decay:
        g = g + weight_decay * _param_array(p)
    if mask is not None:
        g = np.where(mask, g, 0.0)
    return g


def adam_step(data: np.ndarray, grad: np.ndarray, state: dict, lr: float, *,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              mask=None) -> None:
    """One Adam update on a single array, in place. ``state`` holds m, v, t
    and is created on first use; ``grad`` must already include any decay."""
    if not state:
        state["m"] = np.zeros_like(data)
        state["v"] = np.zeros_like(data)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    m_hat = state["m"] / (1.0 - beta1 ** t)
    v_hat = state["v"] / (1.0 - beta2 ** t)
    update = -lr * m_hat / (np.sqrt(v_hat) + eps)
    if mask is not None:
        update = np.where(mask, update, 0.0)
    data += update


def sgd_nesterov_step(data: np.ndarray, grad: np.ndarray, state: dict, lr: float,
                      momentum: float, *, mask=None) -> None:
    """One Nesterov-momentum SGD update on a single array, in place:
    buf <- mu*buf + g, then step along g + mu*buf."""
    if not state:
        state["buf"] = np.zeros_like(data)
    state["buf"] = momentum * state["buf"] + grad
    step = grad + momentum * state["buf"] if momentum else state["buf"]
    if mask is not None:
        step = np.where(mask, step, 0.0)
    data -= lr * step


class _SlotOptimizer:
    """Shared slot bookkeeping: per-slot state dicts keyed by name."""

    kind = "base"

    def __init__(self, slots, lr: float, weight_decay: float = 0.0):
        self.slots = [tuple(s) for s in slots]
        names = [s[0] for s in self.slots]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate slot names: {names}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = {name: {} for name in names}

    def state_dict(self) -> dict:
        out = {"kind": self.kind}
        for name, st in self.state.items():
            out[name] = {k: (v.copy() if isinstance(v, np.ndarray) else v)
                         for k, v in st.items()}
        return out

    def load_state_dict(self, d: dict) -> None:
        for name in self.state:
            st = d.get(name, {})
            self.state[name] = {k: (v.copy() if isinstance(v, np.ndarray) else v)
                                for k, v in st.items()}


class Adam(_SlotOptimizer):
    kind = "adam"

    def __init__(self, slots, lr: float, weight_decay: float = 0.0, *,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(slots, lr, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self) -> None:
        for name, p, mask, decay in self.slots:
            g = _effective_grad(name, p, mask, decay, self.weight_decay)
            adam_step(_param_array(p), g, self.state[name], self.lr,
                      beta1=self.beta1, beta2=self.beta2, eps=self.eps, mask=mask)


class SGDNesterov(_SlotOptimizer):
    kind = "sgd_nesterov"

    def __init__(self, slots, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        super().__init__(slots, lr, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum

    def step(self) -> None:
        for name, p, mask, decay in self.slots:
            g = _effective_grad(name, p, mask, decay, self.weight_decay)
            sgd_nesterov_step(_param_array(p), g, self.state[name], self.lr,
                              self.momentum, mask=mask)


def make_optimizer(phase: TrainPhase, model: ModelParams, config: TrainConfig):
    slots = list(model.trainable())
    if phase.optimizer == "adam":
        return Adam(slots, phase.lr, weight_decay=config.weight_decay)
    return SGDNesterov(slots, phase.lr, momentum=config.momentum,
                       weight_decay=config.weight_decay)


def _batch_loss(tape: Tape, model: ModelParams, dataset, idx, *,
                training: bool, allow_bottom: bool = False):
    x = Tensor(dataset.features[idx].T)
    logits = forward(model, x, tape, training=training, allow_bottom=allow_bottom)
    if dataset.task == "multilabel":
        loss = sigmoid_bce(tape, logits, dataset.targets[idx].T.astype(np.float64))
    else:
        loss = softmax_ce(tape, logits, dataset.targets[idx])
    return logits, loss


def evaluate(model: ModelParams, dataset, split: str = "test", *,
             batch_size: int = 1024, allow_bottom: bool = False) -> dict:
    """Loss plus task metrics on one split, in eval mode (running BN stats).

    Multilabel: macro roc_auc / pr_auc over tags. Multiclass: accuracy.
    """
    idx = dataset.splits[split]
    if idx.size == 0:
        raise ValueError(f"split {split!r} is empty")
    chunks = []
    for s in range(0, idx.size, batch_size):
        part = idx[s:s + batch_size]
        out = forward(model, Tensor(dataset.features[part].T),
                      training=False, allow_bottom=allow_bottom)
        chunks.append(out.data)
    logits = np.concatenate(chunks, axis=1)
    tape = Tape()
    wrapped = Tensor(logits)
    if dataset.task == "multilabel":
        loss = sigmoid_bce(tape, wrapped, dataset.targets[idx].T.astype(np.float64))
        scores = logits.T
        labels = dataset.targets[idx]
        return {"loss": float(loss.data),
                "roc_auc": roc_auc_macro(scores, labels),
                "pr_auc": pr_auc_macro(scores, labels)}
    loss = softmax_ce(tape, wrapped, dataset.targets[idx])
    return {"loss": float(loss.data),
            "accuracy": accuracy(logits.T, dataset.targets[idx])}


@dataclass
class TrainResult:
    model: ModelParams
    best_epoch: int
    best_val_loss: float
    curves: list = field(default_factory=list)
    diverged: bool = False
    divergence_note: str | None = None
    optimizer_state: dict | None = None

    @property
    def metric_name(self) -> str:
        for key in self.curves[0] if self.curves else ():
            if key.startswith("val_") and key != "val_loss":
                return key[4:]
        return "loss"


def train(model: ModelParams, dataset, config: TrainConfig) -> TrainResult:
    """Run all phases, tracking per-epoch curves and the best-validation
    snapshot. On divergence (non-finite gradient or validation loss) training
    stops and the best state so far is kept."""
    train_idx = dataset.splits["train"]
    if train_idx.size == 0:
        raise ValueError("train split is empty")
    if dataset.splits.get("val") is None or dataset.splits["val"].size == 0:
        raise ValueError("val split is empty")
    best_state = model.snapshot()
    best_val = np.inf
    best_epoch = 0
    curves: list = []
    diverged = False
    note = None
    epoch = 0
    opt = None

    for phase in config.phases:
        opt = make_optimizer(phase, model, config)
        for _ in range(phase.epochs):
            epoch += 1
            rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch])
            order = train_idx[rng.permutation(train_idx.size)]
            losses = []
            try:
                for s in range(0, order.size, config.batch_size):
                    batch = order[s:s + config.batch_size]
                    if batch.size < 2 and model.spec.batchnorm:
                        continue  # BN train mode cannot normalize one sample
                    model.zero_grads()
                    tape = Tape()
                    _, loss = _batch_loss(tape, model, dataset, batch, training=True)
                    tape.backward(loss)
                    opt.step()
                    losses.append(float(loss.data))
            except DivergenceError as err:
                diverged, note = True, str(err)
            if not diverged:
                try:
                    val = evaluate(model, dataset, "val")
                except ValueError as err:
                    # non-finite activations surface as a Tensor validation error
                    diverged, note = True, f"epoch {epoch}: {err}"
                else:
                    if not np.isfinite(val["loss"]):
                        diverged, note = True, f"validation loss {val['loss']} at epoch {epoch}"
            if diverged:
                break
            row = {"epoch": epoch, "phase": phase.optimizer,
                   "train_loss": float(np.mean(losses)) if losses else np.nan,
                   "val_loss": val["loss"]}
            row.update({f"val_{k}": v for k, v in val.items() if k != "loss"})
            curves.append(row)
            if val["loss"] < best_val:
                best_val = val["loss"]
                best_epoch = epoch
                best_state = model.snapshot()
        if diverged:
            break

    model.restore(best_state)
    return TrainResult(model, best_epoch, float(best_val), curves,
                       diverged, note,
                       opt.state_dict() if opt is not None else None)
