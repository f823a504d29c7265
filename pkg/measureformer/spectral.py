"""Dirichlet sine eigenbasis, the spectral regularizer `S_{eta,K}`, the `K(eta)` schedule and the smooth clip."""
from __future__ import annotations
import csv
import io
import itertools
import math
from functools import lru_cache
import numpy as np
from numpy.typing import NDArray, ArrayLike
from .measure import DiscreteMeasure
from .mf_types import Immutable, freeze, pickle_register
from .util import ConfigError, DimensionError

__all__ = (
    'SineBasis',
    'SmoothClip',
    'SpectralConfig',
    'SpectralFunction',
    'basis_eigenpairs',
    'k_schedule',
    'measure_moments',
    'project_pk',
    's_eta_k',
    'smooth_clip',
    'spectral_proxy_norm'
)

FloatArray = NDArray[np.float64]

QUADRATURE_RESOLUTION = {1: 512, 2: 128}
# Relative slack when taking the ceiling of an exact power.
CEIL_SLACK = 1e-9


class SineBasis(Immutable):
    """
    First `count` eigenpairs of `I - Laplacian` with Dirichlet conditions on the unit cube.

    `psi_k(x) = prod_i sqrt(2) sin(k_i pi x_i)` with `lambda_k = 1 + pi^2 |k|^2`.
    Ties in `lambda` are ordered lexicographically by multi-index.
    """

    __slots__ = ('dim', 'count', 'indices', 'eigenvalues', 'quadrature_resolution', '_hash')

    dim: int
    count: int
    indices: NDArray[np.int64]
    eigenvalues: FloatArray
    quadrature_resolution: int

    def __init__(
        self,
        dim: int,
        count: int,
        indices: ArrayLike,
        eigenvalues: ArrayLike,
        quadrature_resolution: int
    ) -> None:
        """Initialize."""

        super().__init__(
            dim=int(dim),
            count=int(count),
            indices=freeze(indices, np.int64),
            eigenvalues=freeze(eigenvalues),
            quadrature_resolution=int(quadrature_resolution)
        )

    def evaluate(self, points: ArrayLike) -> FloatArray:
        """Matrix `psi_k(x_p)` of shape `(len(points), count)`."""

        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != self.dim:
            raise DimensionError(f'Expected {self.dim}-D points, got {pts.shape[1]}-D')
        out = np.ones((pts.shape[0], self.count))
        for axis in range(self.dim):
            out *= math.sqrt(2.0) * np.sin(np.pi * pts[:, axis, None] * self.indices[None, :, axis])
        return out

    def quadrature(self) -> tuple[FloatArray, float]:
        """Midpoint nodes and cell volume."""

        res = self.quadrature_resolution
        axis = (np.arange(res) + 0.5) / res
        mesh = np.meshgrid(*([axis] * self.dim), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1), 1.0 / res ** self.dim

    def gram(self) -> FloatArray:
        """Gram matrix under the stored midpoint quadrature."""

        nodes, cell = self.quadrature()
        psi = self.evaluate(nodes)
        return np.asarray(cell * psi.T @ psi, dtype=np.float64)

    def weyl_constant(self) -> float:
        """Smallest `C` with `lambda_j <= C j^(2/d)` over the stored indices."""

        j = np.arange(1, self.count + 1, dtype=np.float64)
        return float(np.max(self.eigenvalues / j ** (2.0 / self.dim)))

    def truncate(self, count: int) -> SineBasis:
        """The first `count` eigenpairs."""

        if not 1 <= count <= self.count:
            raise ValueError(f'Cannot truncate a {self.count}-term basis to {count}')
        return SineBasis(self.dim, count, self.indices[:count], self.eigenvalues[:count], self.quadrature_resolution)


@lru_cache(maxsize=32)
def basis_eigenpairs(d: int, K: int) -> SineBasis:
    """First `K` Dirichlet eigenpairs in `d` dimensions."""

    if K < 1:
        raise ValueError('K must be at least 1')
    if d < 1:
        raise ValueError('d must be at least 1')
    # Every index in [1, s]^d has |k|^2 <= d s^2, so larger axis values cannot rank in the first K.
    side = math.ceil(K ** (1.0 / d))
    while side ** d < K:
        side += 1
    bound = math.ceil(side * math.sqrt(d))
    candidates = sorted(
        itertools.product(range(1, bound + 1), repeat=d),
        key=lambda k: (sum(i * i for i in k), k)
    )[:K]
    indices = np.array(candidates, dtype=np.int64).reshape(K, d)
    eigenvalues = 1.0 + np.pi ** 2 * np.sum(indices.astype(np.float64) ** 2, axis=1)
    return SineBasis(d, K, indices, eigenvalues, QUADRATURE_RESOLUTION.get(d, 64))


class SpectralConfig(Immutable):
    """Parameters `r`, `eta`, `K` and channel count of `S_{eta,K}`."""

    __slots__ = ('r', 'eta', 'K', 'n_channels', '_hash')

    r: int
    eta: float
    K: int
    n_channels: int

    def __init__(self, r: int, eta: float, K: int, n_channels: int = 1) -> None:
        """Initialize."""

        if r < 1 or r % 2:
            raise ConfigError(f'r must be an even positive integer, not {r}')
        if eta < 0 or not math.isfinite(eta):
            raise ConfigError(f'eta must be a finite nonnegative number, not {eta}')
        if K < 1 or n_channels < 1:
            raise ConfigError('K and n_channels must be positive')
        super().__init__(r=int(r), eta=float(eta), K=int(K), n_channels=int(n_channels))


class SpectralFunction(Immutable):
    """`sum_k c_k psi_k` with a `(K, n)` coefficient matrix."""

    __slots__ = ('basis', 'coefficients', '_hash')

    basis: SineBasis
    coefficients: FloatArray

    def __init__(self, basis: SineBasis, coefficients: ArrayLike) -> None:
        """Initialize."""

        coeffs = np.asarray(coefficients, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[0] != basis.count:
            raise DimensionError(f'Coefficients of shape {coeffs.shape} do not match a {basis.count}-term basis')
        super().__init__(basis=basis, coefficients=freeze(coeffs))

    def __call__(self, points: ArrayLike) -> FloatArray:
        """Values at `points`, shape `(len(points), n)`."""

        return np.asarray(self.basis.evaluate(points) @ self.coefficients, dtype=np.float64)

    def to_csv(self) -> str:
        """Rows `(k_1, ..., k_d, channel, value)`."""

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow([f'k_{i + 1}' for i in range(self.basis.dim)] + ['channel', 'value'])
        for row, index in enumerate(self.basis.indices):
            for channel in range(self.coefficients.shape[1]):
                writer.writerow([*index.tolist(), channel, repr(float(self.coefficients[row, channel]))])
        return buf.getvalue()


def measure_moments(mu: DiscreteMeasure, basis: SineBasis, volume: float = 1.0) -> FloatArray:
    """Exact moments `vol sum_j w_j psi_k(x_j) y_j` as a `(K, n)` matrix."""

    if mu.coord_split != basis.dim:
        raise DimensionError(f'Measure has {mu.coord_split} spatial coordinates, basis has {basis.dim}')
    psi = basis.evaluate(mu.spatial)
    return np.asarray(volume * psi.T @ (mu.weights[:, None] * mu.values), dtype=np.float64)


def _check_basis(cfg: SpectralConfig, basis: SineBasis) -> None:
    if basis.count < cfg.K:
        raise ValueError(f'Basis holds {basis.count} eigenpairs but K = {cfg.K}')


def s_eta_k(mu: DiscreteMeasure, cfg: SpectralConfig, basis: SineBasis) -> SpectralFunction:
    """
    Spectral regularizer `S_{eta,K}`.

    Coefficients are the moments filtered by `(1 + eta lambda_k^r)^-1`, which
    solves the Tikhonov problem over the span of the first `K` eigenfunctions.
    """

    _check_basis(cfg, basis)
    head = basis.truncate(cfg.K)
    moments = measure_moments(mu, head)
    if moments.shape[1] != cfg.n_channels:
        raise DimensionError(f'Measure has {moments.shape[1]} value channels, config expects {cfg.n_channels}')
    filters = 1.0 / (1.0 + cfg.eta * head.eigenvalues ** cfg.r)
    return SpectralFunction(head, moments * filters[:, None])


def project_pk(mu: DiscreteMeasure, basis: SineBasis, K: int) -> SpectralFunction:
    """Plain projection `P_K`, the `eta = 0` regularizer."""

    head = basis.truncate(K)
    return SpectralFunction(head, measure_moments(mu, head))


def k_schedule(eta: float, d: int, r: int) -> int:
    """Truncation `K(eta) = ceil(eta^(-d / (4 r)))` for `0 < eta <= 1`."""

    if not 0 < eta <= 1:
        raise ValueError(f'eta must lie in (0, 1], not {eta}')
    value = eta ** (-d / (4.0 * r))
    return max(1, math.ceil(value * (1.0 - CEIL_SLACK)))


def spectral_proxy_norm(coefficients: ArrayLike, basis: SineBasis, s: float) -> float:
    """Truncated dual-norm proxy `sum_k lambda_k^-s |c_k|^2`."""

    coeffs = np.asarray(coefficients, dtype=np.float64)
    coeffs = coeffs.reshape(coeffs.shape[0], -1)
    lam = basis.eigenvalues[:coeffs.shape[0]]
    return float(np.sum(lam[:, None] ** (-s) * coeffs ** 2))


class SmoothClip(Immutable):
    """
    Odd C^1 saturation onto `[-L1, L1]`.

    Identity on `|y| <= (L + L1) / 2`; beyond the plateau a scaled `tanh`
    joins with unit slope and approaches `L1`.
    """

    __slots__ = ('inner', 'outer', '_hash')

    inner: float
    outer: float

    def __init__(self, inner: float, outer: float) -> None:
        """Initialize."""

        if not 0 < inner < outer:
            raise ConfigError(f'Clip bounds need 0 < L < L1, got L = {inner}, L1 = {outer}')
        super().__init__(inner=float(inner), outer=float(outer))

    @property
    def plateau(self) -> float:
        """Half width of the identity region."""

        return 0.5 * (self.inner + self.outer)

    @property
    def _reach(self) -> float:
        return self.outer - self.plateau

    def __call__(self, y: ArrayLike) -> FloatArray:
        """Apply componentwise."""

        y = np.asarray(y, dtype=np.float64)
        a = np.abs(y)
        p = self.plateau
        delta = self._reach
        tail = np.sign(y) * (p + delta * np.tanh((a - p) / delta))
        return np.asarray(np.where(a <= p, y, tail), dtype=np.float64)

    def derivative(self, y: ArrayLike) -> FloatArray:
        """Componentwise derivative."""

        y = np.asarray(y, dtype=np.float64)
        a = np.abs(y)
        t = np.tanh((a - self.plateau) / self._reach)
        return np.asarray(np.where(a <= self.plateau, 1.0, 1.0 - t * t), dtype=np.float64)


def smooth_clip(y: ArrayLike, clip: SmoothClip) -> FloatArray:
    """Apply `clip` componentwise."""

    return clip(y)


pickle_register(SineBasis)
pickle_register(SpectralConfig)
pickle_register(SpectralFunction)
pickle_register(SmoothClip)
