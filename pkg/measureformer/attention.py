"""
Measure-theoretic multi-head attention with coordinate passthrough.

Every layer keeps the first `d` coordinates of a token untouched and updates
the value part from the whole measure, so graph measures stay graph measures.
The same tape code drives plain numpy evaluation and training.
"""
from __future__ import annotations
import math
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Mapping, Sequence
from .diff import Tape, Tensor
from .encode import Domain, token_sequence
from .features import SAME_DOMAIN, ModelConfig, gaussian_matrix, linear
from .measure import DiscreteMeasure, uniform_measure
from .mf_types import Immutable, ParamDict, pickle_register
from .spectral import SmoothClip
from .util import DEBUG, ConfigError, DimensionError, MeasureError

__all__ = (
    'HeadParams',
    'LayerParams',
    'MlpParams',
    'SameDomainModel',
    'StackConfig',
    'attend_head',
    'default_widths',
    'init_stack',
    'layer_forward',
    'mlp_forward',
    'sequence_forward',
    'stack_forward',
    'warp'
)

FloatArray = NDArray[np.float64]

TANH = 'tanh'
LINEAR = 'linear'
ACTIVATIONS = (TANH, LINEAR)


class HeadParams(Immutable):
    """Query, key, value and output matrices of one head, all stored `(out, in)`."""

    __slots__ = ('query', 'key', 'value', 'output', '_hash')

    query: FloatArray
    key: FloatArray
    value: FloatArray
    output: FloatArray

    def __init__(self, query: ArrayLike, key: ArrayLike, value: ArrayLike, output: ArrayLike) -> None:
        """Initialize."""

        q, k, v, w = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (query, key, value, output))
        if q.shape != k.shape or q.shape[0] < 1:
            raise DimensionError(f'Query {q.shape} and key {k.shape} must share a positive key dimension')
        if v.shape[1] != q.shape[1] or w.shape[1] != v.shape[0]:
            raise DimensionError(f'Value {v.shape} and output {w.shape} do not chain with query {q.shape}')
        if not all(np.all(np.isfinite(a)) for a in (q, k, v, w)):
            raise ConfigError('Head matrices must be finite')
        super().__init__(query=q, key=k, value=v, output=w)

    @property
    def key_dim(self) -> int:
        """Logit scaling dimension."""

        return int(self.query.shape[0])


class LayerParams(Immutable):
    """Residual map `W_L` and the heads of one attention layer."""

    __slots__ = ('residual', 'heads', 'spatial_dim', '_hash')

    residual: FloatArray
    heads: tuple[HeadParams, ...]
    spatial_dim: int

    def __init__(self, residual: ArrayLike, heads: Sequence[HeadParams], spatial_dim: int) -> None:
        """Initialize."""

        res = np.atleast_2d(np.asarray(residual, dtype=np.float64))
        for head in heads:
            if head.output.shape[0] != res.shape[0] or head.query.shape[1] != res.shape[1]:
                raise DimensionError(
                    f'Head output {head.output.shape} or input width does not match residual {res.shape}'
                )
        if not 0 <= spatial_dim <= res.shape[1]:
            raise DimensionError(f'Spatial dimension {spatial_dim} exceeds token width {res.shape[1]}')
        super().__init__(residual=res, heads=tuple(heads), spatial_dim=int(spatial_dim))

    @property
    def in_width(self) -> int:
        """Value width `d'` of incoming tokens."""

        return int(self.residual.shape[1]) - self.spatial_dim

    @property
    def out_width(self) -> int:
        """Value width `d''` of outgoing tokens."""

        return int(self.residual.shape[0])

    def to_params(self, prefix: str) -> list[tuple[str, FloatArray]]:
        """Flat named entries."""

        out = [(f'{prefix}.residual', self.residual)]
        for h, head in enumerate(self.heads):
            out.extend(
                (f'{prefix}.head{h}.{part}', getattr(head, part)) for part in ('query', 'key', 'value', 'output')
            )
        return out

    @classmethod
    def from_params(cls, params: Mapping[str, FloatArray], prefix: str, spatial_dim: int) -> LayerParams:
        """Rebuild from flat named entries."""

        heads = []
        h = 0
        while f'{prefix}.head{h}.query' in params:
            heads.append(HeadParams(*(params[f'{prefix}.head{h}.{p}'] for p in ('query', 'key', 'value', 'output'))))
            h += 1
        return cls(params[f'{prefix}.residual'], heads, spatial_dim)


class MlpParams(Immutable):
    """
    Token-wise MLP `H` acting on the full token.

    The activation sits between layers, never after the last one. With
    `residual` set, the incoming value part is added to `H(z)`.
    """

    __slots__ = ('weights', 'biases', 'activation', 'spatial_dim', 'residual', '_hash')

    weights: tuple[FloatArray, ...]
    biases: tuple[FloatArray, ...]
    activation: str
    spatial_dim: int
    residual: bool

    def __init__(
        self,
        weights: Sequence[ArrayLike],
        biases: Sequence[ArrayLike],
        activation: str = TANH,
        spatial_dim: int = 0,
        residual: bool = False
    ) -> None:
        """Initialize."""

        ws = tuple(np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in weights)
        bs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in biases)
        if not ws or len(ws) != len(bs):
            raise DimensionError('An MLP needs one bias per weight matrix and at least one layer')
        for i, (w, b) in enumerate(zip(ws, bs)):
            if b.shape != (w.shape[0],):
                raise DimensionError(f'Bias {i} has shape {b.shape}, weight {i} has {w.shape}')
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise DimensionError(
                    f'Weight {i} expects width {w.shape[1]}, previous layer gives {ws[i - 1].shape[0]}'
                )
        if activation not in ACTIVATIONS:
            raise ConfigError(f'Unknown activation {activation!r}')
        if residual and ws[-1].shape[0] != ws[0].shape[1] - spatial_dim:
            raise DimensionError('A residual MLP must return the incoming value width')
        super().__init__(
            weights=ws,
            biases=bs,
            activation=activation,
            spatial_dim=int(spatial_dim),
            residual=bool(residual)
        )

    @property
    def widths(self) -> tuple[int, ...]:
        """Layer sizes from input to output."""

        return (int(self.weights[0].shape[1]), *(int(w.shape[0]) for w in self.weights))

    def to_params(self, prefix: str) -> list[tuple[str, FloatArray]]:
        """Flat named entries."""

        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f'{prefix}.weight{i}', w))
            out.append((f'{prefix}.bias{i}', b))
        return out

    @classmethod
    def from_params(
        cls,
        params: Mapping[str, FloatArray],
        prefix: str,
        spatial_dim: int,
        activation: str = TANH,
        residual: bool = False
    ) -> MlpParams:
        """Rebuild from flat named entries."""

        weights, biases = [], []
        i = 0
        while f'{prefix}.weight{i}' in params:
            weights.append(params[f'{prefix}.weight{i}'])
            biases.append(params[f'{prefix}.bias{i}'])
            i += 1
        return cls(weights, biases, activation, spatial_dim, residual)


def default_widths(d: int, n: int, n_layers: int) -> tuple[int, ...]:
    """Width schedule `d_1 = n`, interior `4d + 4n`, `d_{L+1} = n`."""

    return (n, *([4 * d + 4 * n] * (n_layers - 1)), n)


class StackConfig(Immutable):
    """
    Shape of a graph-preserving stack.

    Layer `l` maps value width `widths[l]` to `widths[l + 1]` by attention,
    then a token-wise MLP keeps that width. `y0` enables the warp.
    """

    __slots__ = ('spatial_dim', 'widths', 'heads', 'key_dim', 'head_dim', 'mlp_hidden', 'y0', 'clip', '_hash')

    spatial_dim: int
    widths: tuple[int, ...]
    heads: int
    key_dim: int
    head_dim: int
    mlp_hidden: int
    y0: tuple[float, ...] | None
    clip: SmoothClip

    def __init__(
        self,
        spatial_dim: int,
        widths: Sequence[int],
        clip: SmoothClip,
        y0: Sequence[float] | None = None,
        heads: int = 1,
        key_dim: int = 4,
        head_dim: int = 4,
        mlp_hidden: int = 8
    ) -> None:
        """Initialize."""

        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f'Width schedule {widths} needs at least two positive entries')
        if widths[0] != widths[-1]:
            raise ConfigError(f'Width schedule must start and end at n, got {widths}')
        if y0 is not None:
            y0 = tuple(float(v) for v in y0)
            if len(y0) != widths[0]:
                raise ConfigError(f'Warp constant has {len(y0)} entries, expected {widths[0]}')
            if max(abs(v) for v in y0) > clip.inner:
                raise ConfigError('Warp constant must lie in [-L, L]^n')
        if min(spatial_dim, heads, key_dim, head_dim, mlp_hidden) < 1:
            raise ConfigError('Stack sizes must be positive')
        super().__init__(
            spatial_dim=int(spatial_dim),
            widths=widths,
            heads=int(heads),
            key_dim=int(key_dim),
            head_dim=int(head_dim),
            mlp_hidden=int(mlp_hidden),
            y0=y0,
            clip=clip
        )

    @property
    def n_layers(self) -> int:
        """Number of (attention, MLP) pairs."""

        return len(self.widths) - 1

    @property
    def channels(self) -> int:
        """Value width `n` at both ends."""

        return self.widths[0]


def init_stack(config: StackConfig, seed: int = 0) -> ParamDict:
    """Gaussian weights with standard deviation `1 / sqrt(fan_in)` and zero biases."""

    rng = np.random.default_rng(seed)
    d = config.spatial_dim
    entries = []  # type: list[tuple[str, FloatArray]]
    for layer in range(config.n_layers):
        width_in = d + config.widths[layer]
        width_out = config.widths[layer + 1]
        entries.append((f'layer{layer}.residual', gaussian_matrix(rng, width_out, width_in)))
        for h in range(config.heads):
            prefix = f'layer{layer}.head{h}'
            entries.append((f'{prefix}.query', gaussian_matrix(rng, config.key_dim, width_in)))
            entries.append((f'{prefix}.key', gaussian_matrix(rng, config.key_dim, width_in)))
            entries.append((f'{prefix}.value', gaussian_matrix(rng, config.head_dim, width_in)))
            entries.append((f'{prefix}.output', gaussian_matrix(rng, width_out, config.head_dim)))
        entries.append((f'mlp{layer}.weight0', gaussian_matrix(rng, config.mlp_hidden, d + width_out)))
        entries.append((f'mlp{layer}.bias0', np.zeros(config.mlp_hidden)))
        entries.append((f'mlp{layer}.weight1', gaussian_matrix(rng, width_out, config.mlp_hidden)))
        entries.append((f'mlp{layer}.bias1', np.zeros(width_out)))
    return ParamDict(entries)


# Tape building blocks


def head_attention(
    tape: Tape,
    tokens: Tensor,
    context: Tensor,
    weights: ArrayLike,
    query: Tensor,
    key: Tensor,
    value: Tensor
) -> tuple[Tensor, Tensor]:
    """
    One softmax head of `tokens` against the atoms `context` with measure `weights`.

    Returns the attended values and the logits.
    """

    w = np.asarray(weights, dtype=np.float64)
    if not np.any(w > 0):
        raise MeasureError('Attention over a measure whose weights are all zero')
    scale = 1.0 / math.sqrt(query.shape[0])
    q = linear(tape, tokens, query)
    k = linear(tape, context, key)
    logits = tape.scale(tape.matmul(q, tape.transpose(k)), scale)
    p = tape.measure_softmax(logits, w)
    return tape.matmul(p, linear(tape, context, value)), logits


def attention_update(
    tape: Tape,
    inputs: Tensor,
    context: Tensor,
    weights: ArrayLike,
    P: Mapping[str, Tensor],
    prefix: str
) -> Tensor:
    """Value update `W_L z + sum_h W^h Att^h(z)` for every row of `inputs`."""

    value = linear(tape, inputs, P[f'{prefix}.residual'])
    h = 0
    while f'{prefix}.head{h}.query' in P:
        att, _ = head_attention(
            tape, inputs, context, weights,
            P[f'{prefix}.head{h}.query'], P[f'{prefix}.head{h}.key'], P[f'{prefix}.head{h}.value']
        )
        value = tape.add(value, linear(tape, att, P[f'{prefix}.head{h}.output']))
        h += 1
    return value


def mlp_update(
    tape: Tape,
    inputs: Tensor,
    P: Mapping[str, Tensor],
    prefix: str,
    activation: str = TANH
) -> Tensor:
    """`H(z)` for every row of `inputs`."""

    out = inputs
    i = 0
    while f'{prefix}.weight{i}' in P:
        if i:
            out = tape.tanh(out) if activation == TANH else out
        out = linear(tape, out, P[f'{prefix}.weight{i}'], P[f'{prefix}.bias{i}'])
        i += 1
    return out


def _stack_tape(
    tape: Tape,
    tokens: Tensor,
    weights: ArrayLike,
    P: Mapping[str, Tensor],
    config: StackConfig,
    flags: int = 0
) -> Tensor:
    """Diamond composition of every layer followed by the clip."""

    d = config.spatial_dim
    x = tape.columns(tokens, 0, d)
    if config.y0 is not None:
        tokens = tape.concat([x, tape.constant(np.tile(np.asarray(config.y0), (tokens.shape[0], 1)))])
    for layer in range(config.n_layers):
        # The current tokens are the atoms of the pushed-forward measure.
        values = attention_update(tape, tokens, tokens, weights, P, f'layer{layer}')
        tokens = tape.concat([x, values])
        tokens = tape.concat([x, mlp_update(tape, tokens, P, f'mlp{layer}')])
        if flags & DEBUG:  # pragma: no cover
            print(f'## LAYER {layer}: tokens {tokens.shape}, max |value| {np.max(np.abs(tokens.value[:, d:])):.4g}')
    return tape.concat([x, tape.smooth_clip(tape.columns(tokens, d, tokens.shape[1]), config.clip)])


# Public numpy entry points


def _row(z: ArrayLike) -> FloatArray:
    return np.atleast_2d(np.asarray(z, dtype=np.float64))


def attend_head(mu: DiscreteMeasure, z: ArrayLike, head: HeadParams, scale_dim: int | None = None) -> FloatArray:
    """
    Measure attention `sum_j p_j V z_j` of token `z` against `mu`.

    `scale_dim` defaults to the key dimension of the head.
    """

    token = _row(z)
    if token.shape[1] != mu.ambient_dim or head.query.shape[1] != mu.ambient_dim:
        raise DimensionError(f'Token width {token.shape[1]} and head width must match atoms in R^{mu.ambient_dim}')
    tape = Tape(record=False)
    query = head.query if scale_dim is None else head.query * math.sqrt(head.key_dim / scale_dim)
    att, _ = head_attention(
        tape, tape.constant(token), tape.constant(mu.locations), mu.weights,
        tape.constant(query), tape.constant(head.key), tape.constant(head.value)
    )
    return att.value[0]


def layer_forward(mu: DiscreteMeasure, z: ArrayLike, layer: LayerParams) -> FloatArray:
    """`(pi_d z, W_L z + sum_h W^h Att^h(z))`; the first `d` entries are copied from `z`."""

    token = _row(z)
    if token.shape[1] != layer.residual.shape[1]:
        raise DimensionError(f'Token width {token.shape[1]} does not match layer width {layer.residual.shape[1]}')
    tape = Tape(record=False)
    P = {k: tape.constant(v) for k, v in layer.to_params('layer')}
    value = attention_update(tape, tape.constant(token), tape.constant(mu.locations), mu.weights, P, 'layer')
    return np.concatenate([token[0, :layer.spatial_dim], value.value[0]])


def mlp_forward(z: ArrayLike, mlp: MlpParams) -> FloatArray:
    """`(pi_d z, H(z))`, plus the incoming value part for residual MLPs."""

    token = _row(z)
    if token.shape[1] != mlp.widths[0]:
        raise DimensionError(f'Token width {token.shape[1]} does not match MLP input width {mlp.widths[0]}')
    tape = Tape(record=False)
    P = {k: tape.constant(v) for k, v in mlp.to_params('mlp')}
    out = mlp_update(tape, tape.constant(token), P, 'mlp', mlp.activation).value[0]
    if mlp.residual:
        out = out + token[0, mlp.spatial_dim:]
    return np.concatenate([token[0, :mlp.spatial_dim], out])


def warp(z: ArrayLike, y0: ArrayLike, spatial_dim: int) -> FloatArray:
    """`w_{y0}(x, y) = (x, y0)`."""

    token = np.asarray(z, dtype=np.float64)
    return np.concatenate([token[..., :spatial_dim], np.broadcast_to(np.asarray(y0, dtype=np.float64),
                                                                      token.shape[:-1] + (len(y0),))], axis=-1)


def stack_forward(mu: DiscreteMeasure, config: StackConfig, params: ParamDict, flags: int = 0) -> DiscreteMeasure:
    """
    Push `mu` through the full graph-preserving stack.

    Layer `l` attends over the measure produced by layers `1..l-1`. With a
    warp constant the value parts of both tokens and measure are replaced
    by `y0` first, so the output depends on `mu` only through its spatial
    coordinates and weights.
    """

    if mu.coord_split != config.spatial_dim or mu.value_dim != config.channels:
        raise DimensionError(
            f'Measure splits as {mu.coord_split}+{mu.value_dim}, stack expects '
            f'{config.spatial_dim}+{config.channels}'
        )
    tape = Tape(record=False)
    P = {k: tape.constant(v) for k, v in params.items()}
    out = _stack_tape(tape, tape.constant(mu.locations), mu.weights, P, config, flags)
    return DiscreteMeasure(out.value, mu.weights, mu.coord_split)


def sequence_forward(
    tokens: ArrayLike,
    config: StackConfig,
    params: ParamDict,
    eps: float | None = None,
    domain: Domain | None = None,
    flags: int = 0
) -> FloatArray:
    """
    Run the stack on a token sequence through its uniform measure.

    The rows of `tokens` become equally weighted atoms and the stack pushes
    that measure forward. Without `eps` the pushed atoms come back in input
    order, which is the classical per-token transformer output. With `eps`
    the output measure is decoded at the input points instead.
    """

    seq = np.atleast_2d(np.asarray(tokens, dtype=np.float64))
    out = stack_forward(uniform_measure(seq, config.spatial_dim), config, params, flags)
    if eps is None:
        return np.array(out.locations)
    return token_sequence(out, seq[:, :config.spatial_dim], eps, domain)


class SameDomainModel:
    """
    Lift, graph-preserving layers, pointwise readout, clip.

    Tokens are `(x_j, r_j)`; every block sees `(phi(x_j), r_j)` and updates `r_j` only.
    """

    def __init__(self, config: ModelConfig, params: ParamDict) -> None:
        """Initialize."""

        if config.mode != SAME_DOMAIN:
            raise ConfigError(f"Expected a '{SAME_DOMAIN}' configuration, got '{config.mode}'")
        self.config = config
        self.params = params

    @staticmethod
    def init_params(config: ModelConfig, seed: int = 0) -> ParamDict:
        """Initial parameters; attention residuals start as the identity on the latent part."""

        rng = np.random.default_rng(seed)
        return ParamDict(encoder_entries(rng, config, config.n_layers, 'layer') + readout_entries(rng, config))

    @classmethod
    def initial(cls, config: ModelConfig, seed: int = 0) -> SameDomainModel:
        """Model with freshly initialized parameters."""

        return cls(config, cls.init_params(config, seed))

    def forward(self, tape: Tape, P: Mapping[str, Tensor], points: ArrayLike, values: ArrayLike) -> Tensor:
        """Predictions at the input points, shape `(N, n)`."""

        pts = _row(points).reshape(-1, self.config.dim)
        latent = encode_tokens(tape, P, self.config, pts, values, self.config.n_layers, 'layer')
        return readout(tape, P, self.config, latent)

    def predict(self, points: ArrayLike, values: ArrayLike) -> FloatArray:
        """Numpy predictions at the input points."""

        tape = Tape(record=False)
        return self.forward(tape, tape.parameters(self.params), points, values).value

    def predict_measure(self, mu: DiscreteMeasure) -> DiscreteMeasure:
        """Output graph measure `(x_j, prediction_j)` with the input weights."""

        out = self.predict(mu.spatial, mu.values)
        return DiscreteMeasure(np.concatenate([mu.spatial, out], axis=1), mu.weights, mu.coord_split)


# Shared encoder pieces for both trained models


def encoder_entries(
    rng: np.random.Generator,
    config: ModelConfig,
    n_layers: int,
    prefix: str
) -> list[tuple[str, FloatArray]]:
    """Lift plus `n_layers` residual (attention, MLP) pairs."""

    feat = config.features.width
    E = config.embed
    width_in = feat + E
    entries = [
        ('lift.weight', gaussian_matrix(rng, E, feat + config.channels)),
        ('lift.bias', np.zeros(E))
    ]
    for layer in range(n_layers):
        name = f'{prefix}{layer}'
        entries.append((f'{name}.residual', np.concatenate([np.zeros((E, feat)), np.eye(E)], axis=1)))
        for h in range(config.heads):
            entries.append((f'{name}.head{h}.query', gaussian_matrix(rng, config.key_dim, width_in)))
            entries.append((f'{name}.head{h}.key', gaussian_matrix(rng, config.key_dim, width_in)))
            entries.append((f'{name}.head{h}.value', gaussian_matrix(rng, config.head_dim, width_in)))
            entries.append((f'{name}.head{h}.output', gaussian_matrix(rng, E, config.head_dim) / config.heads))
        entries.append((f'{name}.mlp.weight0', gaussian_matrix(rng, config.mlp_hidden, width_in)))
        entries.append((f'{name}.mlp.bias0', np.zeros(config.mlp_hidden)))
        entries.append((f'{name}.mlp.weight1', gaussian_matrix(rng, E, config.mlp_hidden)))
        entries.append((f'{name}.mlp.bias1', np.zeros(E)))
    return entries


def readout_entries(rng: np.random.Generator, config: ModelConfig) -> list[tuple[str, FloatArray]]:
    """Pointwise affine readout from the latent width to `n`."""

    return [
        ('readout.weight', gaussian_matrix(rng, config.channels, config.embed)),
        ('readout.bias', np.zeros(config.channels))
    ]


def encode_tokens(
    tape: Tape,
    P: Mapping[str, Tensor],
    config: ModelConfig,
    points: FloatArray,
    values: ArrayLike,
    n_layers: int,
    prefix: str,
    weights: ArrayLike | None = None
) -> Tensor:
    """Latent `r_j` after the lift and `n_layers` residual layers, shape `(N, E)`; uniform weights by default."""

    vals = np.asarray(values, dtype=np.float64).reshape(points.shape[0], config.channels)
    w = _uniform(points) if weights is None else np.asarray(weights, dtype=np.float64)
    phi = tape.constant(config.features(points))
    latent = linear(tape, tape.constant(np.concatenate([phi.value, vals], axis=1)), P['lift.weight'], P['lift.bias'])
    for layer in range(n_layers):
        name = f'{prefix}{layer}'
        tokens = tape.concat([phi, latent])
        latent = attention_update(tape, tokens, tokens, w, P, name)
        latent = tape.add(latent, mlp_update(tape, tape.concat([phi, latent]), P, f'{name}.mlp'))
    return latent


def readout(tape: Tape, P: Mapping[str, Tensor], config: ModelConfig, latent: Tensor) -> Tensor:
    """Affine readout followed by the smooth clip."""

    return tape.smooth_clip(linear(tape, latent, P['readout.weight'], P['readout.bias']), config.clip)


def _uniform(points: FloatArray) -> FloatArray:
    return np.full(points.shape[0], 1.0 / points.shape[0])


pickle_register(HeadParams)
pickle_register(LayerParams)
pickle_register(MlpParams)
pickle_register(StackConfig)
