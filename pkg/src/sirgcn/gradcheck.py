"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    coordinates: int
    max_rel_error: float
    worst_param: int
    worst_index: tuple
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _sample(params: Sequence[Tensor], count: int, rng: np.random.Generator) -> list[tuple[int, tuple]]:
    sizes = np.array([p.data.size for p in params])
    flat = rng.choice(sizes.sum(), size=min(count, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for f in np.sort(flat):
        k = int(np.searchsorted(bounds, f, side="right"))
        local = int(f - (bounds[k - 1] if k else 0))
        out.append((k, np.unravel_index(local, params[k].shape)))
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                    num_coords: int = 100, step: float = 1e-5, tolerance: float = 1e-4,
                    floor: float = 1e-6, rng: Optional[np.random.Generator] = None
                    ) -> GradCheckResult:
    """Compare analytic and central-difference derivatives of a scalar loss.

    ``loss_fn`` rebuilds the graph from the current parameter values on each
    call. Relative error is ``|a - n| / max(|a|, |n|, floor)``. When the
    parameters hold fewer than ``num_coords`` entries, all of them are checked.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = (0.0, -1, ())
    coords = _sample(params, num_coords, rng)
    for k, idx in coords:
        p = params[k]
        orig = p.data[idx]
        p.data[idx] = orig + step
        up = loss_fn().item()
        p.data[idx] = orig - step
        down = loss_fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * step)
        a = analytic[k][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if err > worst[0]:
            worst = (err, k, tuple(int(i) for i in idx))
    return GradCheckResult(len(coords), worst[0], worst[1], worst[2], tolerance)
