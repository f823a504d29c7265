"""Discrete probability measures, push-forwards, products and exact Wasserstein-1 transport."""
from __future__ import annotations
import json
import numpy as np
import ot  # type: ignore[import-untyped]
from numpy.typing import NDArray, ArrayLike
from scipy.optimize import linear_sum_assignment  # type: ignore[import-untyped]
from scipy.spatial.distance import cdist  # type: ignore[import-untyped]
from typing import Callable, NamedTuple
from .mf_types import Immutable, freeze, pickle_register
from .util import ConfigError, DimensionError, MeasureError

__all__ = (
    'Atom',
    'DiscreteMeasure',
    'TransportPlan',
    'marginal',
    'pair_with_test',
    'product_measure',
    'pushforward',
    'uniform_measure',
    'w1_distance'
)

FloatArray = NDArray[np.float64]
Point = FloatArray

MASS_TOL = 1e-12
PLAN_TOL = 1e-10
# Network simplex iteration cap; desk problems stay far below it.
EMD_MAX_ITER = 10_000_000

FIRST = 'first'
SECOND = 'second'


class Atom(NamedTuple):
    """Single weighted Dirac location."""

    location: Point
    weight: float


class DiscreteMeasure(Immutable):
    """
    Weighted atoms in `R^ambient_dim`.

    The first `coord_split` coordinates are spatial, the rest are values.
    Atom order is kept exactly as given; nothing is merged except by `marginal`.
    """

    __slots__ = ('locations', 'weights', 'coord_split', '_hash')

    locations: FloatArray
    weights: FloatArray
    coord_split: int

    def __init__(self, locations: ArrayLike, weights: ArrayLike, coord_split: int) -> None:
        """Initialize."""

        loc = np.asarray(locations, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        if loc.ndim == 1:
            loc = loc.reshape(-1, 1) if w.size != 1 else loc.reshape(1, -1)
        if loc.ndim != 2 or loc.shape[0] == 0 or loc.shape[1] == 0:
            raise MeasureError('A measure needs at least one atom with at least one coordinate')
        if w.shape != (loc.shape[0],):
            raise DimensionError(f'{loc.shape[0]} atoms but {w.size} weights')
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            raise MeasureError('Atom locations and weights must be finite')
        if np.any(w < 0):
            raise MeasureError('Atom weights must be nonnegative')
        total = float(w.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise MeasureError(f'Total mass {total!r} is not 1 within {MASS_TOL}')
        if not 0 < coord_split <= loc.shape[1]:
            raise DimensionError(f'coord_split {coord_split} invalid for ambient dimension {loc.shape[1]}')

        super().__init__(locations=freeze(loc), weights=freeze(w), coord_split=int(coord_split))

    @property
    def ambient_dim(self) -> int:
        """Dimension of every atom location."""

        return int(self.locations.shape[1])

    @property
    def value_dim(self) -> int:
        """Number of value coordinates."""

        return self.ambient_dim - self.coord_split

    @property
    def spatial(self) -> FloatArray:
        """Spatial coordinates `x_j`."""

        return self.locations[:, :self.coord_split]

    @property
    def values(self) -> FloatArray:
        """Value coordinates `y_j`."""

        return self.locations[:, self.coord_split:]

    def __len__(self) -> int:
        """Atom count."""

        return int(self.locations.shape[0])

    def atoms(self) -> list[Atom]:
        """Atoms in order."""

        return [Atom(loc, float(w)) for loc, w in zip(self.locations, self.weights)]

    def is_uniform(self) -> bool:
        """All weights equal."""

        return bool(np.all(self.weights == self.weights[0]))

    def with_locations(self, locations: ArrayLike, coord_split: int | None = None) -> DiscreteMeasure:
        """Same weights, new locations."""

        return DiscreteMeasure(locations, self.weights, self.coord_split if coord_split is None else coord_split)

    def to_json(self) -> str:
        """Serialize as `{"dim", "split", "atoms": [{"x", "w"}]}`."""

        return json.dumps(
            {
                'dim': self.ambient_dim,
                'split': self.coord_split,
                'atoms': [{'x': loc.tolist(), 'w': float(w)} for loc, w in zip(self.locations, self.weights)]
            }
        )

    @classmethod
    def from_json(cls, text: str) -> DiscreteMeasure:
        """Load a measure written by `to_json`."""

        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Invalid measure JSON: {e.msg}', text, e.pos) from e
        try:
            dim = int(data['dim'])
            locations = np.array([a['x'] for a in data['atoms']], dtype=np.float64).reshape(-1, dim)
            weights = np.array([a['w'] for a in data['atoms']], dtype=np.float64)
            split = int(data['split'])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f'Malformed measure JSON: {e}') from e
        return cls(locations, weights, split)


def uniform_measure(locations: ArrayLike, coord_split: int) -> DiscreteMeasure:
    """Measure with weight `1/N` on each of the given locations."""

    loc = np.asarray(locations, dtype=np.float64)
    if loc.ndim == 1:
        loc = loc.reshape(-1, 1)
    n = loc.shape[0]
    if n == 0:
        raise MeasureError('A measure needs at least one atom')
    return DiscreteMeasure(loc, np.full(n, 1.0 / n), coord_split)


class TransportPlan(Immutable):
    """Sparse coupling witnessing a W1 value."""

    __slots__ = ('source_index', 'target_index', 'mass', 'cost', '_hash')

    source_index: NDArray[np.int64]
    target_index: NDArray[np.int64]
    mass: FloatArray
    cost: float

    def __init__(self, source_index: ArrayLike, target_index: ArrayLike, mass: ArrayLike, cost: float) -> None:
        """Initialize."""

        super().__init__(
            source_index=np.asarray(source_index, dtype=np.int64),
            target_index=np.asarray(target_index, dtype=np.int64),
            mass=np.asarray(mass, dtype=np.float64),
            cost=float(cost)
        )

    def dense(self, n_source: int, n_target: int) -> FloatArray:
        """Dense `n_source x n_target` coupling matrix."""

        plan = np.zeros((n_source, n_target))
        np.add.at(plan, (self.source_index, self.target_index), self.mass)
        return plan


def pushforward(
    mu: DiscreteMeasure,
    f: Callable[[Point], ArrayLike],
    coord_split: int | None = None
) -> DiscreteMeasure:
    """
    Map every atom location through `f`, keeping weights and order.

    `coord_split` defaults to the old split, clipped to the new dimension.
    """

    mapped = [np.atleast_1d(np.asarray(f(loc), dtype=np.float64)) for loc in mu.locations]
    dims = {m.shape for m in mapped}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionError(f'Push-forward map produced inconsistent output shapes {sorted(dims)}')
    locations = np.stack(mapped)
    split = min(mu.coord_split, locations.shape[1]) if coord_split is None else coord_split
    return DiscreteMeasure(locations, mu.weights, split)


def _w1_sorted_line(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """North-west corner coupling of sorted atoms; optimal on the line."""

    a = mu.locations[:, 0]
    b = nu.locations[:, 0]
    ia = np.argsort(a, kind='stable')
    ib = np.argsort(b, kind='stable')
    wa = mu.weights[ia].copy()
    wb = nu.weights[ib].copy()
    i = j = 0
    src, tgt, mass = [], [], []
    while i < len(wa) and j < len(wb):
        m = min(wa[i], wb[j])
        if m > 0:
            src.append(ia[i])
            tgt.append(ib[j])
            mass.append(m)
        wa[i] -= m
        wb[j] -= m
        # Advance whichever side is exhausted; ties advance both.
        if wa[i] <= 1e-15 and i < len(wa):
            i += 1
        if j < len(wb) and wb[j] <= 1e-15:
            j += 1
    src_a = np.asarray(src, dtype=np.int64)
    tgt_a = np.asarray(tgt, dtype=np.int64)
    mass_a = np.asarray(mass)
    cost = float(np.sum(mass_a * np.abs(a[src_a] - b[tgt_a])))
    return cost, TransportPlan(src_a, tgt_a, mass_a, cost)


def w1_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """
    Exact Wasserstein-1 distance under the Euclidean ground metric.

    Uniform measures of equal size reduce to an assignment problem. Everything
    else goes to the network simplex. On the line the sorted coupling is used.
    """

    if mu.ambient_dim != nu.ambient_dim:
        raise DimensionError(f'Cannot compare measures in R^{mu.ambient_dim} and R^{nu.ambient_dim}')

    if mu.ambient_dim == 1:
        return _w1_sorted_line(mu, nu)

    cost_matrix = cdist(mu.locations, nu.locations, metric='euclidean')

    if len(mu) == len(nu) and mu.is_uniform() and nu.is_uniform():
        rows, cols = linear_sum_assignment(cost_matrix)
        mass = np.full(len(rows), 1.0 / len(mu))
        cost = float(cost_matrix[rows, cols].sum() / len(mu))
        return cost, TransportPlan(rows, cols, mass, cost)

    plan = ot.emd(
        np.ascontiguousarray(mu.weights),
        np.ascontiguousarray(nu.weights),
        cost_matrix,
        numItermax=EMD_MAX_ITER
    )
    src, tgt = np.nonzero(plan > 0)
    mass = plan[src, tgt]
    cost = float(np.sum(mass * cost_matrix[src, tgt]))
    return cost, TransportPlan(src, tgt, mass, cost)


def product_measure(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    """
    Tensor product `mu ⊗ nu`.

    Atom `(s, r)` is listed with `s` outer and `r` inner and carries weight `w_s * w_r`.
    The spatial split is the one of `mu`.
    """

    n, k = len(mu), len(nu)
    locations = np.concatenate(
        [np.repeat(mu.locations, k, axis=0), np.tile(nu.locations, (n, 1))],
        axis=1
    )
    weights = np.outer(mu.weights, nu.weights).ravel()
    total = weights.sum()
    if abs(total - 1.0) > 0.5 * MASS_TOL:
        weights = weights / total
    return DiscreteMeasure(locations, weights, mu.coord_split)


def pair_with_test(mu: DiscreteMeasure, phi: Callable[[Point], ArrayLike]) -> FloatArray:
    """Return `<mu, phi> = sum_j w_j phi(z_j)`."""

    evaluated = np.stack([np.atleast_1d(np.asarray(phi(loc), dtype=np.float64)) for loc in mu.locations])
    return np.asarray(mu.weights @ evaluated, dtype=np.float64)


def marginal(prod: DiscreteMeasure, which: str, split: int, coord_split: int | None = None) -> DiscreteMeasure:
    """
    Project a product measure onto its first `split` coordinates or the rest.

    Atoms landing on identical locations are merged in first-occurrence order.
    """

    if not 0 < split < prod.ambient_dim:
        raise DimensionError(f'Split {split} invalid for ambient dimension {prod.ambient_dim}')
    if which == FIRST:
        part = prod.locations[:, :split]
        default_split = min(prod.coord_split, split)
    elif which == SECOND:
        part = prod.locations[:, split:]
        default_split = part.shape[1]
    else:
        raise ValueError(f"Marginal must be '{FIRST}' or '{SECOND}', not {which!r}")

    _, first, inverse = np.unique(part, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    merged = np.bincount(inverse, weights=prod.weights)
    order = np.argsort(first, kind='stable')
    return DiscreteMeasure(
        part[first[order]],
        merged[order],
        default_split if coord_split is None else coord_split
    )


pickle_register(DiscreteMeasure)
pickle_register(TransportPlan)
