"""Central-finite-difference verification of the backward pass.

Max-type ops are only differentiable away from argmax ties, so inputs are
drawn, audited for the distance to the nearest tie, and redrawn when any
margin falls below a safety threshold; the accepted draw is guaranteed not
to flip a winner under +-h probes. Batch-norm running statistics are saved
and restored around every probe so the loss stays a pure function of the
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, TropicalParam, sigmoid_bce
from .heads import HeadSpec, ModelParams, build_head, forward

__all__ = ["GradCheckResult", "gradcheck_head", "gradcheck_all"]

_INPUT_STREAM = 31


@dataclass(frozen=True)
class GradCheckResult:
    variant: str
    max_rel_err: float
    worst_param: str
    checked: int
    resamples: int

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_rel_err < threshold


def _loss_value(model: ModelParams, x: np.ndarray, targets: np.ndarray) -> float:
    running = {k: v.copy() for k, v in model.running.items()}
    tape = Tape()
    logits = forward(model, Tensor(x), tape, training=True)
    loss = sigmoid_bce(tape, logits, targets)
    for k, v in running.items():
        model.running[k][...] = v
    return float(loss.data)


def _active_indices(param, mask):
    base = param.values if isinstance(param, TropicalParam) else param.data
    if mask is None:
        return base, np.ndindex(base.shape)
    return base, zip(*np.nonzero(mask))


def gradcheck_head(spec: HeadSpec, seed: int = 0, *, h: float = 1e-6,
                   batch: int = 5, margin: float = 1e-3,
                   max_resamples: int = 8) -> GradCheckResult:
    """Compare backward() with central differences over every active
    parameter of one head. Returns the worst relative error; the caller
    chooses the pass threshold."""
    model = build_head(spec)
    rng = np.random.default_rng([seed, _INPUT_STREAM])
    x = targets = None
    resamples = 0
    for attempt in range(max_resamples):
        x = rng.uniform(-2.0, 2.0, size=(spec.d_in, batch))
        targets = rng.integers(0, 2, size=(spec.d_out, batch)).astype(np.float64)
        margins: list = []
        running = {k: v.copy() for k, v in model.running.items()}
        forward(model, Tensor(x), training=True, margins=margins)
        for k, v in running.items():
            model.running[k][...] = v
        if not margins or min(margins) > margin:
            break
        resamples += 1
    else:
        raise RuntimeError(f"{spec.variant}: every draw landed within {margin} of a "
                           f"max-type tie; widen the margins or change the seed")

    # Analytic gradients at the accepted draw.
    running = {k: v.copy() for k, v in model.running.items()}
    model.zero_grads()
    tape = Tape()
    logits = forward(model, Tensor(x), tape, training=True)
    loss = sigmoid_bce(tape, logits, targets)
    tape.backward(loss)
    for k, v in running.items():
        model.running[k][...] = v

    worst = 0.0
    worst_param = ""
    checked = 0
    for name, param, mask, _ in model.trainable():
        base, indices = _active_indices(param, mask)
        grad = param.grad if param.grad is not None else np.zeros_like(base)
        for idx in indices:
            original = base[idx]
            base[idx] = original + h
            up = _loss_value(model, x, targets)
            base[idx] = original - h
            down = _loss_value(model, x, targets)
            base[idx] = original
            numeric = (up - down) / (2.0 * h)
            analytic = float(grad[idx])
            scale = max(abs(analytic), abs(numeric))
            if scale < 1e-7:
                err = 0.0  # both zero within finite-difference noise
            else:
                err = abs(analytic - numeric) / scale
            checked += 1
            if err > worst:
                worst = err
                worst_param = f"{name}{[int(i) for i in idx]}"
    return GradCheckResult(spec.variant, worst, worst_param, checked, resamples)


def gradcheck_all(d_in: int = 8, d_hidden: int = 6, d_out: int = 4, *,
                  seed: int = 0, batchnorm: bool = True, h: float = 1e-6) -> list:
    """Run gradcheck_head for all five variants at the given dims."""
    from .heads import VARIANTS
    results = []
    for variant in VARIANTS:
        spec = HeadSpec(variant, d_in, d_hidden, d_out, batchnorm=batchnorm, seed=seed)
        results.append(gradcheck_head(spec, seed=seed, h=h))
    return results
