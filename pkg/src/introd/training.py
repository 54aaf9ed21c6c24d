"""Minibatch SGD loop shared by the teacher and the student."""
import numpy as np

from .exceptions import InvalidInputError, TrainingDivergedError
from .numcore import sgd_step


def run_sgd(params, loss_and_grad, n_samples, cfg, rng):
    """Optimise ``params`` (a dict of float arrays, each updated in place).

    ``loss_and_grad(idx)`` returns the mean loss over the rows ``idx`` and a
    gradient dict keyed like ``params``.  Returns the per-epoch mean loss.
    Batches are visited in a seeded order and reduced serially, so results are
    bitwise reproducible.
    """
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.split(epoch).permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_grad(idx)
            except InvalidInputError:
                # non-finite logits from parameters that have already blown up
                raise TrainingDivergedError("non-finite forward pass", epoch=epoch) from None
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite loss", epoch=epoch)
            for k in params:
                try:
                    new, velocity[k] = sgd_step(params[k], grads[k], velocity[k], cfg)
                    params[k][...] = new
                except TrainingDivergedError:
                    raise TrainingDivergedError(f"non-finite gradient for {k}", epoch=epoch) from None
            total += loss * len(idx)
        curve.append(total / n_samples)
    return curve
