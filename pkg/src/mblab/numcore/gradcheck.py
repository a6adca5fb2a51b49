"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    kinks: list[tuple[int, int]] = field(default_factory=list)

    def __float__(self) -> float:
        return float(self.max_rel_error)


def finite_diff_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    *,
    wrt: Sequence[int] | None = None,
    max_coords: int | None = None,
    seed: int = 0,
    kink_tol: float = 1e-2,
) -> GradCheckResult:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``fn`` receives one Tensor per entry of ``inputs`` and may return any
    shape; it is reduced to a scalar through a fixed random projection so
    the whole Jacobian participates. The error per coordinate is
    ``|analytic - central| / max(1, |central|)``.

    Coordinates where the one-sided differences disagree by more than
    ``kink_tol`` sit on a non-differentiable point (e.g. ReLU at 0); they
    are reported in ``kinks`` and excluded from the maximum.
    """
    if h <= 0:
        raise ValueError(f"finite_diff_check: step h must be positive, got {h}")
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)

    probe = fn(*[Tensor(a) for a in arrays])
    projection = rng.standard_normal(probe.shape)

    def scalar(values: list[np.ndarray]) -> float:
        return float((fn(*[Tensor(v) for v in values]).data * projection).sum())

    leaves = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = fn(*leaves)
    (out * Tensor(projection)).sum().backward()

    worst = 0.0
    checked = 0
    kinks: list[tuple[int, int]] = []
    f0 = scalar(arrays)
    for i in wrt:
        analytic = leaves[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = scalar(arrays)
            flat[c] = orig - h
            fm = scalar(arrays)
            flat[c] = orig
            forward = (fp - f0) / h
            backward = (f0 - fm) / h
            central = (fp - fm) / (2 * h)
            if abs(forward - backward) > kink_tol * max(1.0, abs(central)):
                kinks.append((i, int(c)))
                continue
            err = abs(analytic.reshape(-1)[c] - central) / max(1.0, abs(central))
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, checked, kinks)
