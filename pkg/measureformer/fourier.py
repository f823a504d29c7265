"""
Fixed random one-layer Fourier operator on the torus and the random input fields fed to it.

The operator lifts a scalar field pointwise, keeps the Fourier modes with
`|m_i| < modes` on every axis, mixes hidden channels per mode, returns to
physical space, applies `tanh` and projects pointwise back to one channel.
"""
from __future__ import annotations
import itertools
import json
import math
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Any
from .encode import TORUS, Domain, SampledFunction, _interpolate_grid, grid_nodes
from .mf_types import Immutable, freeze, pickle_register
from .util import ConfigError, DimensionError, ResolutionError

__all__ = (
    'FourierTeacher',
    'RandomFieldSampler',
    'interpolate_periodic',
    'sample_field',
    'spectral_hidden',
    'teacher_apply'
)

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

TANH = 'tanh'
MANIFEST_FORMAT = 'measureformer-fourier-teacher'
INPUT_BOUND = 1.0


def _centered_axis(modes: int) -> NDArray[np.int64]:
    """Retained frequencies on one axis, `-(modes - 1) .. modes - 1`."""

    return np.arange(-(modes - 1), modes, dtype=np.int64)


class FourierTeacher(Immutable):
    """
    One spectral layer between a pointwise lift and a two-layer pointwise projection.

    `spectral` has shape `(2 modes - 1,) * dim + (width, width)` indexed by the
    centered frequency grid; its entry at `-m` is the conjugate of the entry at
    `m`, so real fields map to real fields.
    """

    __slots__ = (
        'dim', 'modes', 'width', 'projection', 'seed', 'activation',
        'lift_weight', 'lift_bias', 'spectral', 'proj_weight', 'proj_bias', 'out_weight', 'out_bias', '_hash'
    )

    dim: int
    modes: int
    width: int
    projection: int
    seed: int
    activation: str
    lift_weight: FloatArray
    lift_bias: FloatArray
    spectral: ComplexArray
    proj_weight: FloatArray
    proj_bias: FloatArray
    out_weight: FloatArray
    out_bias: float

    def __init__(
        self,
        dim: int,
        modes: int,
        width: int,
        projection: int,
        seed: int,
        activation: str,
        lift_weight: ArrayLike,
        lift_bias: ArrayLike,
        spectral: ArrayLike,
        proj_weight: ArrayLike,
        proj_bias: ArrayLike,
        out_weight: ArrayLike,
        out_bias: float
    ) -> None:
        """Initialize."""

        if activation != TANH:
            raise ConfigError(f"Only the '{TANH}' activation is supported, not {activation!r}")
        spec = np.asarray(spectral, dtype=np.complex128)
        if spec.shape != (2 * modes - 1,) * dim + (width, width):
            raise DimensionError(f'Spectral weights of shape {spec.shape} do not match the layout')
        super().__init__(
            dim=int(dim),
            modes=int(modes),
            width=int(width),
            projection=int(projection),
            seed=int(seed),
            activation=activation,
            lift_weight=freeze(lift_weight),
            lift_bias=freeze(lift_bias),
            spectral=freeze(spec, np.complex128),
            proj_weight=freeze(proj_weight),
            proj_bias=freeze(proj_bias),
            out_weight=freeze(out_weight),
            out_bias=float(out_bias)
        )

    @classmethod
    def from_seed(
        cls,
        dim: int = 1,
        modes: int = 4,
        width: int = 8,
        projection: int = 32,
        seed: int = 0
    ) -> FourierTeacher:
        """Draw every weight from `seed`; the same arguments give bit-identical weights."""

        if dim not in (1, 2):
            raise ConfigError(f'Teacher dimension must be 1 or 2, not {dim}')
        if min(modes, width, projection) < 1:
            raise ConfigError('Teacher modes and widths must be positive')
        rng = np.random.default_rng(seed)
        shape = (2 * modes - 1,) * dim + (width, width)
        raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (2.0 / math.sqrt(2.0 * width))
        axes = tuple(range(dim))
        spectral = 0.5 * (raw + np.conj(np.flip(raw, axis=axes)))
        return cls(
            dim, modes, width, projection, seed, TANH,
            rng.standard_normal(width),
            0.1 * rng.standard_normal(width),
            spectral,
            rng.standard_normal((projection, width)) / math.sqrt(width),
            0.1 * rng.standard_normal(projection),
            rng.standard_normal(projection) / math.sqrt(projection),
            0.0
        )

    @classmethod
    def full_scale(cls, seed: int = 0) -> FourierTeacher:
        """2-D teacher with 6 modes per axis, hidden width 16 and projection width 128."""

        return cls.from_seed(2, 6, 16, 128, seed)

    def without_biases(self) -> FourierTeacher:
        """Same weights with the lift and projection biases set to zero."""

        return FourierTeacher(
            self.dim, self.modes, self.width, self.projection, self.seed, self.activation,
            self.lift_weight, np.zeros(self.width), self.spectral,
            self.proj_weight, np.zeros(self.projection), self.out_weight, 0.0
        )

    def parameter_count(self) -> int:
        """
        Number of independent real parameters.

        Conjugate pairs of spectral weights count once; the zero mode is real.
        """

        lift = 2 * self.width
        spectral = self.width * self.width * (2 * self.modes - 1) ** self.dim
        project = self.projection * self.width + 2 * self.projection + 1
        return lift + spectral + project

    @property
    def output_bound(self) -> float:
        """Bound on `|A(h)|` from the saturated projection, `sum |w| + |b|`."""

        return float(np.sum(np.abs(self.out_weight)) + abs(self.out_bias))

    @property
    def min_resolution(self) -> int:
        """Smallest grid the retained modes fit on."""

        return 2 * self.modes + 2

    def manifest(self) -> dict[str, Any]:
        """Settings that rebuild this teacher."""

        return {
            'format': MANIFEST_FORMAT,
            'dim': self.dim,
            'modes': self.modes,
            'width': self.width,
            'projection': self.projection,
            'activation': self.activation,
            'seed': self.seed,
            'parameters': self.parameter_count()
        }

    def to_json(self) -> str:
        """Serialize the manifest."""

        return json.dumps(self.manifest(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> FourierTeacher:
        """Rebuild from a manifest written by `to_json`."""

        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Invalid teacher manifest: {e.msg}', text, e.pos) from e
        if not isinstance(data, dict) or data.get('format') != MANIFEST_FORMAT:
            raise ConfigError(f"Teacher manifest must be an object with format '{MANIFEST_FORMAT}'")
        if data.get('activation', TANH) != TANH:
            raise ConfigError(f"Unsupported teacher activation {data['activation']!r}")
        try:
            return cls.from_seed(
                int(data['dim']), int(data['modes']), int(data['width']), int(data['projection']), int(data['seed'])
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f'Incomplete teacher manifest: {e}') from e


def _grid(h: SampledFunction, teacher: FourierTeacher) -> FloatArray:
    if h.domain.dim != teacher.dim:
        raise DimensionError(f'{h.domain.dim}-D field passed to a {teacher.dim}-D teacher')
    if h.channels != 1:
        raise DimensionError(f'The teacher maps scalar fields, got {h.channels} channels')
    if h.resolution < teacher.min_resolution:
        raise ResolutionError(
            f'Grid resolution {h.resolution} is below 2 * modes + 2 = {teacher.min_resolution}'
        )
    return h.values[..., 0]


def spectral_hidden(h: SampledFunction, teacher: FourierTeacher) -> tuple[ComplexArray, float]:
    """
    Hidden field after the spectral multiply, before the activation.

    Returns the complex grid of shape `(M,) * d + (width,)` and the largest
    imaginary part relative to the sup norm of its real part.
    """

    grid = _grid(h, teacher)
    res = grid.shape[0]
    axes = tuple(range(teacher.dim))
    lifted = grid[..., None] * teacher.lift_weight + teacher.lift_bias
    coeffs = np.fft.fftn(lifted, axes=axes)
    index = np.ix_(*([np.mod(_centered_axis(teacher.modes), res)] * teacher.dim))
    mixed = np.zeros_like(coeffs)
    mixed[index] = np.einsum('...oi,...i->...o', teacher.spectral, coeffs[index])
    hidden = np.fft.ifftn(mixed, axes=axes)
    scale = float(np.max(np.abs(hidden.real))) if hidden.size else 0.0
    residue = float(np.max(np.abs(hidden.imag))) / scale if scale > 0 else float(np.max(np.abs(hidden.imag)))
    return hidden, residue


def teacher_apply(h: SampledFunction, teacher: FourierTeacher) -> SampledFunction:
    """Apply the teacher to a scalar torus field on its own grid."""

    hidden, _ = spectral_hidden(h, teacher)
    act = np.tanh(hidden.real)
    inner = np.tanh(act @ teacher.proj_weight.T + teacher.proj_bias)
    out = inner @ teacher.out_weight + teacher.out_bias
    return SampledFunction(Domain(teacher.dim, TORUS, teacher.output_bound), out[..., None])


class RandomFieldSampler(Immutable):
    """
    Truncated periodic Gaussian Fourier fields.

    Each frequency `m` in a half space of `[-max_frequency, max_frequency]^d`
    gets independent cosine and sine coefficients with standard deviation
    `(1 + |m|)^-decay`. The field is rescaled to sup norm `sup_norm` on the grid.
    """

    __slots__ = ('dim', 'resolution', 'max_frequency', 'decay', 'sup_norm', 'seed', '_hash')

    dim: int
    resolution: int
    max_frequency: int
    decay: float
    sup_norm: float
    seed: int

    def __init__(
        self,
        dim: int = 1,
        resolution: int = 64,
        max_frequency: int = 8,
        decay: float = 2.0,
        sup_norm: float = 0.9,
        seed: int = 0
    ) -> None:
        """Initialize."""

        if dim not in (1, 2):
            raise ConfigError(f'Field dimension must be 1 or 2, not {dim}')
        if resolution < 2 * max_frequency + 1:
            raise ResolutionError(f'Resolution {resolution} cannot hold frequency {max_frequency}')
        if not 0 < sup_norm <= INPUT_BOUND:
            raise ConfigError(f'Target sup norm must lie in (0, {INPUT_BOUND:g}]')
        super().__init__(
            dim=int(dim),
            resolution=int(resolution),
            max_frequency=int(max_frequency),
            decay=float(decay),
            sup_norm=float(sup_norm),
            seed=int(seed)
        )

    def with_seed(self, seed: int) -> RandomFieldSampler:
        """Same sampler, another seed."""

        return RandomFieldSampler(self.dim, self.resolution, self.max_frequency, self.decay, self.sup_norm, seed)

    def frequencies(self) -> NDArray[np.int64]:
        """Half-space frequencies, one per row, zero excluded."""

        span = range(-self.max_frequency, self.max_frequency + 1)
        rows = [m for m in itertools.product(span, repeat=self.dim) if m > (0,) * self.dim]
        return np.array(rows, dtype=np.int64).reshape(-1, self.dim)


def sample_field(sampler: RandomFieldSampler) -> SampledFunction:
    """
    Draw one field; deterministic per seed.

    Off-grid values come from the trigonometric series itself, scaled by the
    same factor as the grid.
    """

    rng = np.random.default_rng(sampler.seed)
    freqs = sampler.frequencies()
    std = (1.0 + np.linalg.norm(freqs, axis=1)) ** (-sampler.decay)
    cos_coeffs = std * rng.standard_normal(len(freqs))
    sin_coeffs = std * rng.standard_normal(len(freqs))

    def series(points: FloatArray) -> FloatArray:
        phase = 2.0 * np.pi * np.atleast_2d(points) @ freqs.T
        return np.asarray(np.cos(phase) @ cos_coeffs + np.sin(phase) @ sin_coeffs, dtype=np.float64)

    domain = Domain(sampler.dim, TORUS, INPUT_BOUND)
    raw = series(grid_nodes(domain, sampler.resolution))
    peak = float(np.max(np.abs(raw)))
    factor = sampler.sup_norm / peak if peak > 0 else 0.0

    def evaluator(points: FloatArray) -> FloatArray:
        return factor * series(points)[:, None]

    grid = (raw * factor).reshape((sampler.resolution,) * sampler.dim + (1,))
    return SampledFunction(domain, grid, evaluator)


def interpolate_periodic(h: SampledFunction | ArrayLike, points: ArrayLike) -> FloatArray:
    """
    Periodic multilinear interpolation of grid values; exact at nodes.

    `h` is a torus `SampledFunction` or a raw grid of shape `(M,) * d` or `(M,) * d + (n,)`.
    """

    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if isinstance(h, SampledFunction):
        grid = np.asarray(h.values)
    else:
        grid = np.asarray(h, dtype=np.float64)
        if grid.ndim == pts.shape[1]:
            grid = grid[..., None]
    return _interpolate_grid(grid, pts, True)


pickle_register(FourierTeacher)
pickle_register(RandomFieldSampler)
