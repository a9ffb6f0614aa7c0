"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """|a − n| / max(|a|, |n|, floor); the floor absorbs O(h²) noise on near-zero entries."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _activation_pattern(f: Callable[[], float]):
    ag.kink_log = []
    try:
        value = f()
        return value, tuple(ag.kink_log)
    finally:
        ag.kink_log = None


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5,
                 indices: Optional[Iterable] = None, skip_kinks: bool = False) -> dict:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x``.

    ``x`` is perturbed in place and restored.  With ``skip_kinks``, entries
    whose ±h probes change any ReLU activation pattern are left out: the
    function is not differentiable across that interval.
    """
    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    base = _activation_pattern(f)[1] if skip_kinks else None
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up, up_pat = _activation_pattern(f) if skip_kinks else (f(), None)
        flat[i] = orig - h
        down, down_pat = _activation_pattern(f) if skip_kinks else (f(), None)
        flat[i] = orig
        if skip_kinks and not (up_pat == base == down_pat):
            continue
        out[int(i)] = (up - down) / (2 * h)
    return out


def check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
          samples_per_tensor: Optional[int] = None, rng: Optional[np.random.Generator] = None,
          skip_kinks: bool = False) -> float:
    """Max relative error between backward() and central differences.

    ``loss_fn`` rebuilds the graph from scratch on each call.  With
    ``samples_per_tensor`` only that many random entries of each tensor are
    probed.
    """
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss_fn().backward()
    analytic = [p.grad.reshape(-1).copy() for p in params]

    def f() -> float:
        return float(loss_fn().data)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, a in zip(params, analytic):
        n = p.data.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            idx = range(n)
        else:
            idx = rng.choice(n, size=samples_per_tensor, replace=False)
        num = numeric_grad(f, p, h, idx, skip_kinks=skip_kinks)
        if not num:
            continue
        keys = list(num)
        err = rel_error(a[keys], np.array([num[k] for k in keys]))
        worst = max(worst, float(err.max()))
    return worst
