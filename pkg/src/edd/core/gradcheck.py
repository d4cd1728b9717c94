"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .functional import trace_kinks
from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-3, entries=None) -> np.ndarray:
    """d f / d t by central differences; ``f`` must re-run the forward pass.

    ``entries`` restricts the probe to those flat indices (others stay 0).
    """
    g = np.zeros(t.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _pattern(f: Callable[[], Tensor]) -> tuple[float, tuple[bytes, ...]]:
    with trace_kinks() as log:
        value = float(f().data)
    return value, tuple(log)


def smooth_entries(f: Callable[[], Tensor], t: Tensor, h: float, candidates) -> list[int]:
    """Flat indices whose +-h stencil keeps every ReLU/max-pool pattern unchanged.

    Across a kink the central difference estimates a chord, not the derivative.
    """
    flat = t.data.reshape(-1)
    _, base = _pattern(f)
    ok = []
    for i in candidates:
        orig = flat[i]
        flat[i] = orig + h
        _, up = _pattern(f)
        flat[i] = orig - h
        _, down = _pattern(f)
        flat[i] = orig
        if up == base and down == base:
            ok.append(int(i))
    return ok


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
) -> dict[str, float]:
    """Relative error between backward() and finite differences for each tensor.

    Tensors should be float64; float32 round-off swamps a 1e-3 step. With
    ``max_entries`` only a random subset of each tensor's entries is probed.
    ``skip_kinks`` probes only entries whose stencil stays inside one linear
    region of every ReLU / max-pool.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    backward(f())
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.grad = None
    out = {}
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        entries = None
        if skip_kinks:
            cand = rng.permutation(t.size)
            smooth = smooth_entries(f, t, h, cand[: 4 * max_entries] if max_entries else cand)
            if not smooth:
                raise RuntimeError(f"every probed entry of {t.name} straddles a kink")
            entries = np.sort(smooth[:max_entries] if max_entries else smooth)
        elif max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        num = numerical_grad(f, t, h, entries)
        if entries is not None:
            a = a.reshape(-1)[entries]
            num = num.reshape(-1)[entries]
        out[t.name or f"t{i}"] = relative_error(a, num)
    return out
