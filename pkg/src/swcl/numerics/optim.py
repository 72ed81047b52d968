"""SGD with Nesterov momentum and the two learning-rate schedules in use."""

from __future__ import annotations

import math

import numpy as np


class SGD:
    """Nesterov SGD with coupled L2 weight decay on non-bias parameters.

    Update rule (PyTorch convention)::

        g <- g + wd * p
        v <- momentum * v + g
        p <- p - lr * (g + momentum * v)
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0, nesterov: bool = True):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name in sorted(params):
            g = grads[name]
            if self.weight_decay and not name.endswith("bias"):
                g = g + self.weight_decay * params[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            update = g + self.momentum * v if self.nesterov else v
            params[name] -= lr * update


def step_decay_lr(base_lr: float, epoch: int, total_epochs: int,
                  milestones=(0.7, 0.8, 0.9), factor: float = 0.1) -> float:
    """Piecewise-constant schedule dropping by ``factor`` at each milestone fraction."""
    drops = sum(1 for m in milestones if epoch >= int(round(m * total_epochs)))
    return base_lr * factor**drops


def warmup_cosine_lr(base_lr: float, step: int, total_steps: int, warmup_steps: int) -> float:
    """Linear warmup to ``base_lr`` then cosine decay towards 0."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
