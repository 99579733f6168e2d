"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from catchvqa.tensor.tensor import Tensor


def _leaf(p):
    return p.tensor if hasattr(p, "tensor") else p


def grad_check(f, params, eps=1e-4, max_coords=None, seed=0, floor=1.0):
    """Largest ``|analytic - numeric| / max(floor, |analytic|, |numeric|)``.

    The default floor of 1 makes tiny gradients count in absolute terms; a
    small floor gives a plain relative error.

    ``f`` takes no arguments and returns a scalar :class:`Tensor`; ``params``
    are Tensors or Parameters it depends on. With ``max_coords`` set, that
    many coordinates per parameter are sampled instead of all of them.
    """
    leaves = [_leaf(p) for p in params]
    for t in leaves:
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(leaves, analytic):
        n = t.data.size
        if max_coords is None or max_coords >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        base = t.data
        for c in coords:
            idx = np.unravel_index(int(c), base.shape)
            plus = base.copy()
            plus[idx] += eps
            t.data = plus
            fp = _value(f())
            minus = base.copy()
            minus[idx] -= eps
            t.data = minus
            fm = _value(f())
            t.data = base
            numeric = (fp - fm) / (2.0 * eps)
            a = float(ga[idx])
            err = abs(a - numeric) / max(floor, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


def _value(out):
    return float(out.data) if isinstance(out, Tensor) else float(out)
