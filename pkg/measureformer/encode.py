"""Sampling schemes, graph tokenization, the mollifier regularizer `R_tau` and the decoder `F_eps`."""
from __future__ import annotations
import csv
import io
from functools import lru_cache
import numpy as np
from numpy.typing import NDArray, ArrayLike
from scipy import ndimage  # type: ignore[import-untyped]
from typing import Callable
from .measure import DiscreteMeasure
from .mf_types import Immutable, freeze, pickle_register
from .util import ConfigError, DimensionError, ResolutionError, ValueBoundError

__all__ = (
    'CUBE',
    'TORUS',
    'Domain',
    'Mollifier',
    'SampledFunction',
    'SamplingScheme',
    'decode_feps',
    'grid_nodes',
    'interior_cutoff',
    'mollifier_eval',
    'mollify_grid',
    'parse_scheme',
    'regularize_rtau',
    'sample_points',
    'standard_mollifier',
    'token_sequence',
    'tokenize'
)

FloatArray = NDArray[np.float64]

CUBE = 'cube'
TORUS = 'torus'

GRID = 'grid'
JITTER = 'jitter'
UNIFORM = 'uniform'
GAUSS = 'gauss'

SCHEMES = (GRID, JITTER, UNIFORM, GAUSS)
SCHEME_DEFAULTS = {GRID: 0.0, JITTER: 1.0, UNIFORM: 0.0, GAUSS: 0.15}

VALUE_TOL = 1e-9
QUADRATURE_NODES = 10001
# Number of queries decoded per block.
DECODE_BLOCK = 256


class Domain(Immutable):
    """Unit cube or unit torus with a value bound `L`."""

    __slots__ = ('dim', 'kind', 'value_bound', '_hash')

    dim: int
    kind: str
    value_bound: float

    def __init__(self, dim: int, kind: str = CUBE, value_bound: float = 1.0) -> None:
        """Initialize."""

        if dim not in (1, 2):
            raise ValueError(f'Only 1-D and 2-D domains are supported, not {dim}')
        if kind not in (CUBE, TORUS):
            raise ValueError(f"Domain kind must be '{CUBE}' or '{TORUS}', not {kind!r}")
        if not value_bound > 0:
            raise ValueError('Value bound must be positive')
        super().__init__(dim=int(dim), kind=kind, value_bound=float(value_bound))

    @property
    def volume(self) -> float:
        """Lebesgue volume, always 1 for the exposed domains."""

        return 1.0

    @property
    def periodic(self) -> bool:
        """Torus domains wrap."""

        return self.kind == TORUS

    def distance_to_boundary(self, points: ArrayLike) -> FloatArray:
        """Distance of each point to the cube boundary; infinite on the torus."""

        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.periodic:
            return np.full(pts.shape[0], np.inf)
        return np.asarray(np.min(np.minimum(pts, 1.0 - pts), axis=1), dtype=np.float64)

    def wrap(self, points: ArrayLike) -> FloatArray:
        """Map points into the domain (modulo 1 on the torus)."""

        pts = np.asarray(points, dtype=np.float64)
        return np.mod(pts, 1.0) if self.periodic else pts


class Mollifier(Immutable):
    """
    Normalized bump `rho_1(t) = c exp(-1 / (1 - t^2))` on `(-1, 1)`.

    The constant is fixed so the trapezoid rule on `quadrature_nodes`
    equally spaced nodes of `[-1, 1]` integrates the profile to one.
    """

    __slots__ = ('constant', 'quadrature_nodes', '_hash')

    constant: float
    quadrature_nodes: int

    def __init__(self, constant: float, quadrature_nodes: int) -> None:
        """Initialize."""

        super().__init__(constant=float(constant), quadrature_nodes=int(quadrature_nodes))

    @staticmethod
    def bump(t: ArrayLike) -> FloatArray:
        """Unnormalized profile, zero for `|t| >= 1`."""

        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        ti = t[inside]
        out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
        return out

    def profile(self, t: ArrayLike) -> FloatArray:
        """Normalized one dimensional profile."""

        return self.constant * self.bump(t)

    def __call__(self, x: ArrayLike) -> FloatArray:
        """Product form `rho(x) = prod_i rho_1(x_i)` over the last axis."""

        return np.asarray(np.prod(self.profile(x), axis=-1), dtype=np.float64)

    def quadrature(self) -> tuple[FloatArray, float]:
        """Nodes and step of the stored quadrature."""

        nodes = np.linspace(-1.0, 1.0, self.quadrature_nodes)
        return nodes, 2.0 / (self.quadrature_nodes - 1)


@lru_cache(maxsize=8)
def standard_mollifier(quadrature_nodes: int = QUADRATURE_NODES) -> Mollifier:
    """Build the mollifier normalized on `quadrature_nodes` nodes."""

    nodes = np.linspace(-1.0, 1.0, quadrature_nodes)
    step = 2.0 / (quadrature_nodes - 1)
    return Mollifier(1.0 / float(np.sum(Mollifier.bump(nodes)) * step), quadrature_nodes)


def mollifier_eval(m: Mollifier, x: ArrayLike) -> float:
    """Value of `rho` at a single point."""

    return float(m(np.atleast_1d(np.asarray(x, dtype=np.float64))))


def grid_nodes(domain: Domain, resolution: int) -> FloatArray:
    """
    Grid nodes in row-major order, one row per node.

    Cube grids use cell centers `(k + 1/2) / M`, torus grids use `k / M`.
    """

    shift = 0.0 if domain.periodic else 0.5
    axis = (np.arange(resolution) + shift) / resolution
    mesh = np.meshgrid(*([axis] * domain.dim), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def _interpolate_grid(values: FloatArray, points: FloatArray, periodic: bool) -> FloatArray:
    """Multilinear interpolation of grid `values` of shape `(M,)*d + (n,)`."""

    res = values.shape[0]
    dim = values.ndim - 1
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != dim:
        raise DimensionError(f'Expected {dim}-D points, got {pts.shape[1]}-D')
    if periodic:
        t = np.mod(pts, 1.0) * res
        # Points exactly on nodes must land on them bit for bit.
        near = np.rint(t)
        t = np.where(np.abs(t - near) < 1e-9, near, t)
        base = np.floor(t)
        frac = t - base
        lo = np.mod(base.astype(np.int64), res)
        hi = np.mod(lo + 1, res)
    else:
        t = np.clip(pts * res - 0.5, 0.0, res - 1.0)
        near = np.rint(t)
        t = np.where(np.abs(t - near) < 1e-9, near, t)
        base = np.minimum(np.floor(t), res - 2.0) if res > 1 else np.zeros_like(t)
        frac = t - base
        lo = base.astype(np.int64)
        hi = np.minimum(lo + 1, res - 1)

    out = np.zeros((pts.shape[0], values.shape[-1]))
    for corner in range(1 << dim):
        weight = np.ones(pts.shape[0])
        index = []
        for axis in range(dim):
            if corner >> axis & 1:
                weight = weight * frac[:, axis]
                index.append(hi[:, axis])
            else:
                weight = weight * (1.0 - frac[:, axis])
                index.append(lo[:, axis])
        out += weight[:, None] * values[tuple(index)]
    return out


class SampledFunction(Immutable):
    """
    A bounded function `h: Omega -> R^n` held on a regular grid.

    An optional `evaluator` gives exact point values; otherwise values
    off the grid come from multilinear interpolation.
    """

    __slots__ = ('domain', 'values', 'evaluator', '_hash')

    domain: Domain
    values: FloatArray
    evaluator: Callable[[FloatArray], FloatArray] | None

    def __init__(
        self,
        domain: Domain,
        values: ArrayLike,
        evaluator: Callable[[FloatArray], FloatArray] | None = None
    ) -> None:
        """Initialize."""

        grid = np.asarray(values, dtype=np.float64)
        if grid.ndim == domain.dim:
            grid = grid[..., None]
        if grid.ndim != domain.dim + 1 or len(set(grid.shape[:-1])) != 1:
            raise DimensionError(f'Grid of shape {grid.shape} does not fit a {domain.dim}-D domain')
        sup = float(np.max(np.abs(grid))) if grid.size else 0.0
        if sup > domain.value_bound + VALUE_TOL:
            raise ValueBoundError(f'Sup norm {sup:.6g} exceeds the value bound {domain.value_bound:.6g}')
        super().__init__(domain=domain, values=freeze(grid), evaluator=evaluator)

    @classmethod
    def from_callable(
        cls,
        domain: Domain,
        func: Callable[[FloatArray], ArrayLike],
        resolution: int
    ) -> SampledFunction:
        """Sample `func` (rows of points to rows of values) on the grid and keep it as the evaluator."""

        def evaluator(points: FloatArray) -> FloatArray:
            out = np.asarray(func(np.atleast_2d(points)), dtype=np.float64)
            return out.reshape(len(np.atleast_2d(points)), -1)

        nodes = grid_nodes(domain, resolution)
        vals = evaluator(nodes)
        grid = vals.reshape((resolution,) * domain.dim + (vals.shape[-1],))
        return cls(domain, grid, evaluator)

    @property
    def resolution(self) -> int:
        """Grid points per axis."""

        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        """Value dimension `n`."""

        return int(self.values.shape[-1])

    def nodes(self) -> FloatArray:
        """Grid nodes in the order of `values.reshape(-1, n)`."""

        return grid_nodes(self.domain, self.resolution)

    def with_values(self, values: ArrayLike, domain: Domain | None = None) -> SampledFunction:
        """New grid on the same (or given) domain; the evaluator is dropped."""

        return SampledFunction(self.domain if domain is None else domain, values)

    def __call__(self, points: ArrayLike) -> FloatArray:
        """Values at `points`, shape `(len(points), n)`."""

        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.evaluator is not None:
            return np.asarray(self.evaluator(pts), dtype=np.float64).reshape(pts.shape[0], -1)
        return _interpolate_grid(self.values, pts, self.domain.periodic)

    def to_csv(self) -> str:
        """Row-major CSV: a `M,d,n` header, their values, then one row per node."""

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(['M', 'd', 'n'])
        writer.writerow([self.resolution, self.domain.dim, self.channels])
        for row in self.values.reshape(-1, self.channels):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind: str = TORUS, value_bound: float = 1.0) -> SampledFunction:
        """Read a grid written by `to_csv`."""

        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2 or [c.strip() for c in rows[0]] != ['M', 'd', 'n']:
            raise ConfigError("Grid CSV must start with the header 'M,d,n'", text, 0)
        try:
            res, dim, channels = (int(c) for c in rows[1])
            data = np.array([[float(c) for c in row] for row in rows[2:] if row], dtype=np.float64)
        except ValueError as e:
            raise ConfigError(f'Malformed grid CSV: {e}') from e
        if data.shape != (res ** dim, channels):
            raise ConfigError(f'Grid CSV holds {data.shape} values, expected {(res ** dim, channels)}')
        return cls(Domain(dim, kind, value_bound), data.reshape((res,) * dim + (channels,)))


class SamplingScheme(Immutable):
    """
    How input points are drawn.

    `grid` and `jitter` need a perfect d-th power point count. `param` is the
    jitter fraction of a cell for `jitter` and the standard deviation for
    `gauss`. Gaussian clouds are not regularly distributed; they serve as a
    stress test only.
    """

    __slots__ = ('kind', 'seed', 'param', '_hash')

    kind: str
    seed: int
    param: float

    def __init__(self, kind: str, seed: int = 0, param: float | None = None) -> None:
        """Initialize."""

        if kind not in SCHEMES:
            raise ConfigError(f"Unknown sampling scheme {kind!r}; expected one of {', '.join(SCHEMES)}")
        super().__init__(kind=kind, seed=int(seed), param=float(SCHEME_DEFAULTS[kind] if param is None else param))

    def with_seed(self, seed: int) -> SamplingScheme:
        """Same scheme, another seed."""

        return SamplingScheme(self.kind, seed, self.param)


def parse_scheme(text: str, seed: int = 0) -> SamplingScheme:
    """Parse `grid|jitter|uniform|gauss[:param]`."""

    kind, sep, param = text.strip().partition(':')
    if sep and not param:
        raise ConfigError(f'Missing scheme parameter in {text!r}', text, len(text))
    try:
        value = float(param) if param else None
    except ValueError as e:
        raise ConfigError(f'Invalid scheme parameter {param!r}', text, len(kind) + 1) from e
    return SamplingScheme(kind, seed, value)


def _grid_side(n_points: int, dim: int) -> int:
    side = int(round(n_points ** (1.0 / dim)))
    if side ** dim != n_points:
        raise ConfigError(f'{n_points} points is not a perfect power of {dim}')
    return side


def sample_points(domain: Domain, scheme: SamplingScheme, n_points: int) -> FloatArray:
    """Draw `n_points` points in the domain as rows of an array; deterministic per seed."""

    if n_points < 1:
        raise ValueError('At least one point is required')
    rng = np.random.default_rng(scheme.seed)
    dim = domain.dim

    if scheme.kind in (GRID, JITTER):
        side = _grid_side(n_points, dim)
        centers = grid_nodes(Domain(dim, CUBE, domain.value_bound), side)
        if scheme.kind == GRID:
            return centers
        offsets = (rng.random((n_points, dim)) - 0.5) * (scheme.param / side)
        return domain.wrap(centers + offsets)

    if scheme.kind == UNIFORM:
        return rng.random((n_points, dim))

    pts = 0.5 + scheme.param * rng.standard_normal((n_points, dim))
    if domain.periodic:
        return np.mod(pts, 1.0)
    return np.clip(pts, VALUE_TOL, 1.0 - VALUE_TOL)


def tokenize(h: SampledFunction, points: ArrayLike, tau: float | None = None) -> DiscreteMeasure:
    """
    Empirical graph measure `M_N(h)` or `M_{N,tau}(h) = M_N(R_tau h)`.

    Atoms are `(x_j, h(x_j))` with weight `1/N`. Values within `1e-9` of the
    bound are clamped onto it; anything further out is an error.
    """

    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != h.domain.dim:
        raise DimensionError(f'Expected {h.domain.dim}-D points, got {pts.shape[1]}-D')
    source = h if tau is None else regularize_rtau(h, tau)
    values = source(pts)
    bound = h.domain.value_bound
    if np.any(np.abs(values) > bound + VALUE_TOL) or not np.all(np.isfinite(values)):
        raise ValueBoundError(f'Token values leave [-{bound:g}, {bound:g}]')
    values = np.clip(values, -bound, bound)
    n = pts.shape[0]
    return DiscreteMeasure(np.concatenate([pts, values], axis=1), np.full(n, 1.0 / n), h.domain.dim)


@lru_cache(maxsize=64)
def _grid_kernel(resolution: int, tau: float) -> FloatArray:
    """Discrete `rho_tau` taps at spacing `1/M`, normalized to unit sum."""

    reach = int(np.ceil(tau * resolution))
    offsets = np.arange(-reach, reach + 1) / resolution
    taps = standard_mollifier().profile(offsets / tau)
    taps = taps / taps.sum()
    return freeze(taps)


def _convolve(values: FloatArray, resolution: int, tau: float, periodic: bool) -> FloatArray:
    """Separable `rho_tau` convolution over every spatial axis."""

    kernel = _grid_kernel(resolution, tau)
    out = np.asarray(values, dtype=np.float64)
    mode = 'wrap' if periodic else 'constant'
    for axis in range(out.ndim - 1):
        out = ndimage.convolve1d(out, kernel, axis=axis, mode=mode, cval=0.0)
    return out


def _check_tau(domain: Domain, resolution: int, tau: float) -> None:
    if not tau > 0:
        raise ValueError('tau must be positive')
    if not domain.periodic and tau >= 0.125:
        raise ValueError(f'tau = {tau:g} leaves no interior region dist > 4 tau')
    if resolution * tau < 8.0 - 1e-9:
        raise ResolutionError(f'Grid resolution {resolution} is below 8 / tau = {8.0 / tau:g}')


def interior_cutoff(domain: Domain, tau: float, resolution: int) -> FloatArray:
    """Grid values of `chi_tau = rho_tau * 1_{dist > 4 tau}`, shape `(M,)*d`."""

    _check_tau(domain, resolution, tau)
    shape = (resolution,) * domain.dim
    if domain.periodic:
        return np.ones(shape)
    nodes = grid_nodes(domain, resolution)
    indicator = (domain.distance_to_boundary(nodes) > 4.0 * tau).astype(np.float64)
    return _convolve(indicator.reshape(shape + (1,)), resolution, tau, False)[..., 0]


def mollify_grid(h: SampledFunction, tau: float) -> SampledFunction:
    """Plain grid convolution `rho_tau * h` (zero extension on the cube)."""

    _check_tau(h.domain, h.resolution, tau)
    return h.with_values(_convolve(h.values, h.resolution, tau, h.domain.periodic))


def regularize_rtau(h: SampledFunction, tau: float) -> SampledFunction:
    """
    Mollifier regularization `R_tau h = rho_tau * (h chi_tau)` on the grid of `h`.

    The result vanishes within `tau` of the cube boundary; on the torus the
    cutoff is identically one.
    """

    chi = interior_cutoff(h.domain, tau, h.resolution)
    cut = h.values * chi[..., None]
    return h.with_values(_convolve(cut, h.resolution, tau, h.domain.periodic))


def decode_feps(mu: DiscreteMeasure, queries: ArrayLike, eps: float, domain: Domain | None = None) -> FloatArray:
    """
    Mollifier decoder `(F_eps mu)(x) = (vol / eps^d) sum_j w_j rho((x_j - x) / eps) y_j`.

    Returns an array of shape `(len(queries), n)`. Offsets wrap on a torus domain.
    """

    if not eps > 0:
        raise ValueError('eps must be positive')
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d = mu.coord_split
    if q.shape[1] != d:
        raise DimensionError(f'Expected {d}-D queries, got {q.shape[1]}-D')
    rho = standard_mollifier()
    volume = 1.0 if domain is None else domain.volume
    periodic = domain is not None and domain.periodic
    weighted = mu.weights[:, None] * mu.values
    scale = volume / eps ** d

    out = np.zeros((q.shape[0], mu.value_dim))
    for start in range(0, q.shape[0], DECODE_BLOCK):
        block = q[start:start + DECODE_BLOCK]
        diff = mu.spatial[None, :, :] - block[:, None, :]
        if periodic:
            diff = diff - np.rint(diff)
        out[start:start + DECODE_BLOCK] = scale * (rho(diff / eps) @ weighted)
    return out


def token_sequence(
    gamma: DiscreteMeasure,
    points: ArrayLike,
    eps: float,
    domain: Domain | None = None
) -> FloatArray:
    """
    Read a graph measure back as tokens `(x_i, (F_eps gamma)(x_i))`.

    Returns one row per point, shape `(N, d + n)`, in the order of `points`.
    """

    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.hstack([pts, decode_feps(gamma, pts, eps, domain)])


pickle_register(Domain)
pickle_register(Mollifier)
pickle_register(SamplingScheme)


