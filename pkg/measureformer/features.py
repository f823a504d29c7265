"""Coordinate features, model configuration and the parameter helpers both trained models share."""
from __future__ import annotations
import json
import math
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Any, Mapping
from .diff import Tape, Tensor
from .mf_types import Immutable, pickle_register
from .spectral import SmoothClip
from .util import ConfigError

__all__ = (
    'SAME_DOMAIN',
    'QUERY',
    'ModelConfig',
    'PositionalFeatures',
    'gaussian_matrix',
    'linear',
    'positional_features'
)

FloatArray = NDArray[np.float64]

SAME_DOMAIN = 'same-domain'
QUERY = 'query'
MODES = (SAME_DOMAIN, QUERY)

N_FREQUENCIES = 6


class PositionalFeatures(Immutable):
    """
    Fixed sinusoidal coordinate map with `omega_m = 16^((m - 1) / 5)`.

    Entries are ordered axis by axis, and frequency by frequency within an
    axis, as `(sin, cos)` pairs. Only `omega_1` is an integer, so the map is
    not 1-periodic.
    """

    __slots__ = ('dim', 'frequencies', '_hash')

    dim: int
    frequencies: FloatArray

    def __init__(self, dim: int, n_frequencies: int = N_FREQUENCIES) -> None:
        """Initialize."""

        m = np.arange(1, n_frequencies + 1, dtype=np.float64)
        super().__init__(dim=int(dim), frequencies=16.0 ** ((m - 1.0) / 5.0))

    @property
    def width(self) -> int:
        """Output dimension, `2 * d * len(frequencies)`."""

        return 2 * self.dim * len(self.frequencies)

    def __call__(self, points: ArrayLike) -> FloatArray:
        """Features of each row of `points`, shape `(len(points), width)`."""

        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        phase = 2.0 * np.pi * pts[:, :, None] * self.frequencies[None, None, :]
        pairs = np.stack([np.sin(phase), np.cos(phase)], axis=-1)
        return pairs.reshape(pts.shape[0], -1)


def positional_features(x: ArrayLike, n_frequencies: int = N_FREQUENCIES) -> FloatArray:
    """Feature vector of a single point."""

    point = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return PositionalFeatures(point.size, n_frequencies)(point[None, :])[0]


class ModelConfig(Immutable):
    """Architecture of a trained same-domain or query model."""

    __slots__ = (
        'mode', 'dim', 'channels', 'embed', 'heads', 'key_dim', 'n_layers', 'query_blocks',
        'query_mlp_blocks', 'mlp_hidden', 'output_bound', 'clip_margin', 'n_frequencies', '_hash'
    )

    mode: str
    dim: int
    channels: int
    embed: int
    heads: int
    key_dim: int
    n_layers: int
    query_blocks: int
    query_mlp_blocks: int
    mlp_hidden: int
    output_bound: float
    clip_margin: float
    n_frequencies: int

    def __init__(
        self,
        mode: str = SAME_DOMAIN,
        dim: int = 1,
        channels: int = 1,
        embed: int = 32,
        heads: int = 2,
        key_dim: int = 0,
        n_layers: int = 2,
        query_blocks: int = 1,
        query_mlp_blocks: int = 2,
        mlp_hidden: int = 0,
        output_bound: float = 4.0,
        clip_margin: float = 1.0,
        n_frequencies: int = N_FREQUENCIES
    ) -> None:
        """Initialize."""

        if mode not in MODES:
            raise ConfigError(f"Model mode must be one of {', '.join(MODES)}, not {mode!r}")
        if min(dim, channels, embed, heads, n_layers, n_frequencies) < 1:
            raise ConfigError('Model sizes must be positive')
        if embed % heads:
            raise ConfigError(f'Embedding {embed} is not divisible by {heads} heads')
        if mode == QUERY and query_blocks < 1:
            raise ConfigError('Query mode needs at least one product attention block')
        if output_bound <= 0 or clip_margin <= 0:
            raise ConfigError('Output bound and clip margin must be positive')
        super().__init__(
            mode=mode,
            dim=int(dim),
            channels=int(channels),
            embed=int(embed),
            heads=int(heads),
            key_dim=int(key_dim) if key_dim > 0 else int(embed // heads),
            n_layers=int(n_layers),
            query_blocks=int(query_blocks),
            query_mlp_blocks=int(query_mlp_blocks),
            mlp_hidden=int(mlp_hidden) if mlp_hidden > 0 else 2 * int(embed),
            output_bound=float(output_bound),
            clip_margin=float(clip_margin),
            n_frequencies=int(n_frequencies)
        )

    @property
    def head_dim(self) -> int:
        """Value width of each head."""

        return self.embed // self.heads

    @property
    def features(self) -> PositionalFeatures:
        """Coordinate feature map."""

        return PositionalFeatures(self.dim, self.n_frequencies)

    @property
    def clip(self) -> SmoothClip:
        """Final output clip."""

        return SmoothClip(self.output_bound, self.output_bound + self.clip_margin)

    def as_dict(self) -> dict[str, Any]:
        """Plain field mapping."""

        return {k: getattr(self, k) for k in self._fields()}

    def to_json(self) -> str:
        """Serialize."""

        return json.dumps(self.as_dict(), indent=1)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ModelConfig:
        """Build from a decoded JSON object."""

        unknown = set(data) - set(cls.__slots__[:-1])
        if unknown:
            raise ConfigError(f"Unknown model settings: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f'Invalid model settings: {e}') from e


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int) -> FloatArray:
    """I.i.d. normal entries with standard deviation `1 / sqrt(cols)`."""

    return rng.standard_normal((rows, cols)) / math.sqrt(cols)


def linear(tape: Tape, x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Rowwise affine map `x W^T + b` with `W` stored as `(out, in)`."""

    out = tape.matmul(x, tape.transpose(weight))
    return out if bias is None else tape.add(out, bias)


pickle_register(PositionalFeatures)
pickle_register(ModelConfig)
