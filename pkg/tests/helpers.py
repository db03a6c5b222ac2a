"""Shared oracles for the unit and acceptance suites."""

import numpy as np

from specpipe.model import ModelConfig, forward, hybrid_loss, init_params, loss_and_grads


def random_gradcheck_case(rng, lam):
    kind = "cnn" if rng.random() < 0.75 else "linear"
    shape = (int(rng.integers(1, 4)), int(rng.integers(4, 10)), int(rng.integers(4, 10)))
    widths = tuple(int(w) for w in rng.integers(2, 5, size=int(rng.integers(1, 4))))
    cfg = ModelConfig(shape, kind, widths, embed_dim=int(rng.integers(2, 6)), n_classes=int(rng.integers(2, 4)))
    params = init_params(cfg, int(rng.integers(2**31)))
    # zero biases leave units exactly on the ReLU kink (and all-dead nets give
    # a zero embedding); check at a generic point instead
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    b = int(rng.integers(2, 7))
    x = rng.normal(size=(b,) + shape)
    y = rng.integers(0, cfg.n_classes, size=b)
    w = rng.uniform(0.5, 2.0, size=cfg.n_classes)
    margin = float(rng.uniform(0.5, 2.0))
    return params, x, y, w, lam, margin


def gradcheck(params, x, y, w, lam, margin, h=1e-6):
    """Worst relative error between analytic and central-difference gradients."""
    _, grads = loss_and_grads(params, x, y, w, lam, margin)

    def f():
        logits, emb = forward(params, x)
        return hybrid_loss(logits, emb, y, w, lam, margin)

    worst = 0.0
    for k, p in params.items():
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            down = f()
            p[i] = old
            num[i] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(num), np.linalg.norm(grads[k]), 1e-8)
        worst = max(worst, np.linalg.norm(num - grads[k]) / scale)
    return worst
