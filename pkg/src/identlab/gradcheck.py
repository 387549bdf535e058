"""Central finite-difference checks for the hand-written encoder gradients."""

from __future__ import annotations

import numpy as np

from .contrastive import EncoderPair, pair_loss_and_grads


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def numeric_pair_gradients(pair: EncoderPair, xb, tb, h: float = 1e-5):
    """Finite-difference gradients, same layout as ``pair_loss_and_grads``."""
    params = pair.params()
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = pair_loss_and_grads(pair, xb, tb)[0]
            flat[i] = old - h
            down = pair_loss_and_grads(pair, xb, tb)[0]
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * h)
        out.append(g)
    old = pair.log_tau
    pair.log_tau = old + h
    up = pair_loss_and_grads(pair, xb, tb)[0]
    pair.log_tau = old - h
    down = pair_loss_and_grads(pair, xb, tb)[0]
    pair.log_tau = old
    return out, (up - down) / (2.0 * h)


def check_pair_gradients(pair: EncoderPair, xb, tb, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and numeric gradients, taken
    over every parameter tensor and ``log_tau``.

    ``floor`` keeps entries whose true gradient is ~0 from dominating.
    """
    _, analytic, dlt = pair_loss_and_grads(pair, xb, tb)
    numeric, nlt = numeric_pair_gradients(pair, xb, tb, h)
    errs = [_rel_err(a, n, floor) for a, n in zip(analytic, numeric)]
    errs.append(_rel_err(np.array([dlt]), np.array([nlt]), floor))
    return max(errs)
