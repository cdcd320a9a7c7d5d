"""Multiset distances, sum-hash embeddings and kernel property checks.

For a pointwise distance ``d`` and equinumerous multisets ``A``, ``B`` the
multiset distance is

    D^2(A, B) = sum_{a,b} d(a, b) - 1/2 sum_{a,a'} d(a, a') - 1/2 sum_{b,b'} d(b, b')

and the sum-hash is ``G(A) = sum_a g(a)``. When ``d(x, y) = ||g(x) - g(y)||^2``
the two agree: ``D^2(A, B) = ||G(A) - G(B)||^2``. The checks here verify that
identity for the analytically matched pairs, the conditional positive
definiteness of ``-d`` and the base-point shift that turns ``-d`` into a
positive semidefinite kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .layers import MlpBlock
from .tensor import Tensor

DEFAULT_GRID = (-2.0, 2.0, 201)
MATCHED_PAIRS = {("squared_euclidean", "identity"), ("squared_score", "neg_square")}


class DomainError(ValueError):
    """Arguments outside the domain where an operation is defined."""


def _as_rows(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True, eq=False)
class Multiset:
    """Bag of equal-width real vectors; one element per row.

    A 1-D input is read as a multiset of scalars.
    """

    elements: np.ndarray

    def __post_init__(self):
        arr = _as_rows(self.elements)
        if arr.ndim != 2:
            raise DomainError("multiset elements must be vectors of a common width")
        object.__setattr__(self, "elements", arr)

    def __len__(self) -> int:
        return self.elements.shape[0]

    @property
    def width(self) -> int:
        return self.elements.shape[1]

    def canonical(self) -> np.ndarray:
        """Rows in lexicographic order, a representation independent of input order."""
        if len(self) == 0:
            return self.elements
        order = np.lexsort(self.elements.T[::-1])
        return self.elements[order]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Multiset):
            return NotImplemented
        return (self.elements.shape == other.elements.shape
                and np.array_equal(self.canonical(), other.canonical()))

    __hash__ = None


class DistanceMetric:
    """Pointwise distance with a vectorised pairwise evaluator.

    Construction runs a randomized self-test of identity, positivity and
    symmetry on sample points; the triangle inequality is sampled and the
    violation count is kept in ``triangle_violations`` without failing, since
    the squared Euclidean distance (the canonical choice) is only a semimetric.
    """

    def __init__(self, kind: str, pairwise: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 samples: Optional[np.ndarray] = None, self_test: bool = True):
        self.kind = kind
        self._pairwise = pairwise
        self.triangle_violations = 0
        if self_test:
            self._self_test(samples)

    @classmethod
    def squared_euclidean(cls) -> "DistanceMetric":
        def pairwise(a, b):
            diff = a[:, None, :] - b[None, :, :]
            return np.einsum("ijk,ijk->ij", diff, diff)
        return cls("squared_euclidean", pairwise)

    @classmethod
    def squared_score(cls) -> "DistanceMetric":
        """d(h, h') = ||h*h - h'*h'||^2; blind to the sign of each coordinate."""
        def pairwise(a, b):
            diff = (a * a)[:, None, :] - (b * b)[None, :, :]
            return np.einsum("ijk,ijk->ij", diff, diff)
        return cls("squared_score", pairwise)

    @classmethod
    def tabulated(cls, points, table) -> "DistanceMetric":
        """Distance on a finite set given by a symmetric matrix over ``points``."""
        pts = _as_rows(points)
        tab = np.asarray(table, dtype=np.float64)
        if tab.shape != (len(pts), len(pts)):
            raise DomainError("table must be square with one row per point")

        def locate(x):
            idx = []
            for row in x:
                hit = np.flatnonzero((pts == row).all(axis=1))
                if hit.size == 0:
                    raise DomainError(f"point {row.tolist()} is not in the metric's domain")
                idx.append(hit[0])
            return np.asarray(idx)

        return cls("custom-tabulated", lambda a, b: tab[np.ix_(locate(a), locate(b))],
                   samples=pts)

    def pairwise(self, a, b) -> np.ndarray:
        return self._pairwise(_as_rows(a), _as_rows(b))

    def __call__(self, x, y) -> float:
        return float(self.pairwise(np.atleast_1d(x)[None, :], np.atleast_1d(y)[None, :])[0, 0])

    def _self_test(self, samples: Optional[np.ndarray]) -> None:
        if samples is None:
            rng = np.random.default_rng(20240601)
            samples = rng.uniform(-2.0, 2.0, size=(12, 3))
        dm = self.pairwise(samples, samples)
        distinct = ~np.eye(len(samples), dtype=bool)
        for i in range(len(samples)):
            for j in range(len(samples)):
                if i != j and np.array_equal(samples[i], samples[j]):
                    distinct[i, j] = False
        scale = 1.0 + np.abs(dm).max()
        if np.any(np.abs(np.diag(dm)) > 1e-12 * scale):
            raise DomainError(f"{self.kind}: d(x, x) != 0")
        if np.any(dm[distinct] <= 0):
            raise DomainError(f"{self.kind}: d(x, y) <= 0 for distinct x, y")
        if np.any(np.abs(dm - dm.T) > 1e-12 * scale):
            raise DomainError(f"{self.kind}: not symmetric")
        lhs = dm[:, None, :]
        rhs = dm[:, :, None] + dm[None, :, :]
        self.triangle_violations = int(np.count_nonzero(lhs > rhs + 1e-12 * scale))


class FeatureMap:
    """Elementwise feature map ``g`` applied to each multiset element."""

    def __init__(self, kind: str, fn: Callable[[np.ndarray], np.ndarray],
                 in_dim: Optional[int] = None, out_dim: Optional[int] = None):
        self.kind = kind
        self._fn = fn
        self.in_dim = in_dim
        self.out_dim = out_dim

    @classmethod
    def identity(cls) -> "FeatureMap":
        return cls("identity", lambda h: h)

    @classmethod
    def neg_square(cls) -> "FeatureMap":
        return cls("neg_square", lambda h: -h * h)

    @classmethod
    def mlp(cls, block: MlpBlock) -> "FeatureMap":
        return cls("mlp", lambda h: block(Tensor(h)).data, block.in_dim, block.out_dim)

    @classmethod
    def affine_shift(cls, block: MlpBlock, shift: float = 1.0) -> "FeatureMap":
        """g(h) = MLP(h + shift)."""
        return cls("affine_shift", lambda h: block(Tensor(h + shift)).data,
                   block.in_dim, block.out_dim)

    def __call__(self, h) -> np.ndarray:
        rows = _as_rows(h)
        if self.in_dim is not None and rows.shape[1] != self.in_dim:
            raise DomainError(f"{self.kind}: expected width {self.in_dim}, got {rows.shape[1]}")
        return self._fn(rows)


def _multiset(h) -> Multiset:
    return h if isinstance(h, Multiset) else Multiset(h)


def multiset_distance_sq(d: DistanceMetric, h1, h2) -> float:
    a, b = _multiset(h1), _multiset(h2)
    if len(a) == 0 or len(b) == 0:
        raise DomainError("multisets must be non-empty")
    if len(a) != len(b):
        raise DomainError(f"multisets must be equinumerous ({len(a)} vs {len(b)})")
    if a.width != b.width:
        raise DomainError("multisets must share the element width")
    ea, eb = a.elements, b.elements
    return float(d.pairwise(ea, eb).sum() - 0.5 * d.pairwise(ea, ea).sum()
                 - 0.5 * d.pairwise(eb, eb).sum())


def multiset_hash(g: FeatureMap, h) -> np.ndarray:
    """G(H) = sum over elements of g(h), summed in canonical element order."""
    ms = _multiset(h)
    if len(ms) == 0:
        raise DomainError("multiset must be non-empty")
    emb = g(ms.canonical())
    out = np.zeros(emb.shape[1])
    for row in emb:
        out += row
    return out


def _random_pair(rng: np.random.Generator, size: int, width: int) -> tuple[Multiset, Multiset]:
    return (Multiset(rng.uniform(-2.0, 2.0, size=(size, width))),
            Multiset(rng.uniform(-2.0, 2.0, size=(size, width))))


def verify_embedding_identity(d: DistanceMetric, g: FeatureMap, trials: int = 200,
                              sizes: Sequence[int] = range(1, 9),
                              widths: Sequence[int] = range(1, 5), seed: int = 0,
                              pairs: Optional[Sequence[tuple]] = None) -> dict:
    """Compare D^2 with ||G(A) - G(B)||^2 over random equinumerous pairs.

    Passes when every residual is at most ``1e-9 * (1 + D^2)``.
    """
    if (d.kind, g.kind) not in MATCHED_PAIRS:
        raise DomainError(f"({d.kind}, {g.kind}) is not a matched metric/feature-map pair")
    rng = np.random.default_rng(seed)
    sizes, widths = list(sizes), list(widths)
    if pairs is None:
        pairs = []
        for _ in range(trials):
            size = sizes[int(rng.integers(len(sizes)))]
            width = widths[int(rng.integers(len(widths)))]
            pairs.append(_random_pair(rng, size, width))
    max_res = max_ratio = 0.0
    for a, b in pairs:
        dsq = multiset_distance_sq(d, a, b)
        gap = multiset_hash(g, a) - multiset_hash(g, b)
        res = abs(dsq - float(gap @ gap))
        max_res = max(max_res, res)
        max_ratio = max(max_ratio, res / (1.0 + abs(dsq)))
    return {"metric": d.kind, "map": g.kind, "trials": len(pairs),
            "max_residual": max_res, "max_scaled_residual": max_ratio,
            "pass": bool(max_ratio <= 1e-9)}


def _zero_sum(rng: np.random.Generator, n: int) -> np.ndarray:
    c = rng.standard_normal(n)
    return c - c.mean()


def cpd_quadratic_form(d: DistanceMetric, points, c) -> float:
    """sum_ij c_i c_j (-d(h_i, h_j))."""
    pts = _as_rows(points)
    c = np.asarray(c, dtype=np.float64)
    return float(-(c @ d.pairwise(pts, pts) @ c))


def cpd_quadratic_check(d: DistanceMetric, num_points: int = 5, trials: int = 1000,
                        seed: int = 0, width: int = 2) -> dict:
    """Minimum of sum_ij c_i c_j (-d(h_i, h_j)) over random points and zero-sum ``c``.

    Each trial is scaled by ``scale = 1 + sum_ij |c_i c_j d_ij|``; the check
    passes when every form is at least ``-1e-9 * scale``.
    """
    rng = np.random.default_rng(seed)
    worst = np.inf
    worst_scaled = np.inf
    for _ in range(trials):
        pts = rng.uniform(-2.0, 2.0, size=(num_points, width))
        c = _zero_sum(rng, num_points)
        dm = d.pairwise(pts, pts)
        form = cpd_quadratic_form(d, pts, c)
        scale = 1.0 + float(np.abs(np.outer(c, c) * dm).sum())
        worst = min(worst, form)
        worst_scaled = min(worst_scaled, form / scale)
    return {"metric": d.kind, "check": "cpd_quadratic_form", "trials": trials,
            "min_form": worst, "min_scaled_form": worst_scaled,
            "pass": bool(worst_scaled >= -1e-9)}


def cpd_to_pd_shift(d: DistanceMetric, base_point) -> Callable:
    """k(x, y) = 1/2 [k~(x, y) - k~(x, x0) - k~(x0, y) + k~(x0, x0)] with k~ = -d.

    The returned callable evaluates the kernel matrix between two point sets.
    """
    x0 = _as_rows(np.atleast_1d(base_point)).reshape(1, -1)

    def kernel(x, y) -> np.ndarray:
        xr, yr = _as_rows(x), _as_rows(y)
        if xr.shape[1] != x0.shape[1] and x0.shape[1] == 1:
            base = np.repeat(x0, xr.shape[1], axis=1)
        else:
            base = x0
        return 0.5 * (-d.pairwise(xr, yr) + d.pairwise(xr, base) + d.pairwise(base, yr)
                      - d.pairwise(base, base))

    return kernel


def cpd_pd_check(d: DistanceMetric, num_points: int = 6, trials: int = 100, seed: int = 0,
                 width: int = 2) -> dict:
    """Smallest Gram eigenvalue of the shifted kernel over random point sets."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(trials):
        pts = rng.uniform(-2.0, 2.0, size=(num_points, width))
        base = rng.uniform(-2.0, 2.0, size=width)
        gram = cpd_to_pd_shift(d, base)(pts, pts)
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (gram + gram.T)).min()))
    return {"metric": d.kind, "check": "cpd_pd_shift", "trials": trials,
            "min_eigenvalue": worst, "pass": bool(worst >= -1e-9)}


@dataclass
class ContourGrid:
    """``values[i, j] = g(axis[i]) + g(axis[j])`` for a scalar feature map."""

    map_kind: str
    axis: np.ndarray
    values: np.ndarray = field(repr=False)

    def rows(self):
        for i, h1 in enumerate(self.axis):
            for j, h2 in enumerate(self.axis):
                yield float(h1), float(h2), float(self.values[i, j])

    def write_tsv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("h1\th2\tG\n")
            for h1, h2, val in self.rows():
                fh.write(f"{h1!r}\t{h2!r}\t{val!r}\n")
        return path


def emit_contour_grid(g: FeatureMap, pair_count: int = 2, grid=DEFAULT_GRID) -> ContourGrid:
    """Hash of a two-neighbour multiset {h_v1, h_v2} over a square grid."""
    if pair_count != 2:
        raise DomainError("contour grids are defined for exactly two neighbours")
    lo, hi, res = grid
    axis = np.linspace(lo, hi, int(res))
    emb = g(axis)
    if emb.shape != (axis.size, 1):
        raise DomainError(f"{g.kind}: contour grids need a scalar-to-scalar feature map")
    col = emb[:, 0]
    return ContourGrid(g.kind, axis, col[:, None] + col[None, :])


def kernel_suite(seed: int = 0, trials: int = 200) -> list[dict]:
    """Identity, CPD and base-point-shift checks for both built-in metrics."""
    pairs = [(DistanceMetric.squared_euclidean(), FeatureMap.identity()),
             (DistanceMetric.squared_score(), FeatureMap.neg_square())]
    reports = []
    for d, g in pairs:
        reports.append(verify_embedding_identity(d, g, trials=trials, seed=seed))
        reports.append(cpd_quadratic_check(d, num_points=5, trials=1000, seed=seed))
        reports.append(cpd_pd_check(d, num_points=6, trials=100, seed=seed))
    return reports
