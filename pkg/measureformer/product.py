"""Product-measure tokens, fiber lifting, product-space attention, cross-attention and the query model."""
from __future__ import annotations
import csv
import io
import itertools
import math
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Mapping
from .attention import (
    HeadParams, attend_head, encode_tokens, encoder_entries, head_attention, mlp_update, readout, readout_entries
)
from .diff import Tape, Tensor
from .features import QUERY, ModelConfig, gaussian_matrix, linear
from .measure import DiscreteMeasure, product_measure
from .mf_types import Immutable, ParamDict, pickle_register
from .util import ConfigError, DimensionError, MeasureError

__all__ = (
    'INPUT_SELF',
    'INPUT_TO_QUERY',
    'QUERY_SELF',
    'QUERY_TO_INPUT',
    'AttentionCounter',
    'BlockMatrices',
    'ProductToken',
    'QueryBatch',
    'QueryModel',
    'cross_attend',
    'fiber_lift',
    'product_attend',
    'query_forward',
    'readout_value',
    'reduced_attend'
)

FloatArray = NDArray[np.float64]

INPUT_SELF = 0x1
QUERY_SELF = 0x2
QUERY_TO_INPUT = 0x4
INPUT_TO_QUERY = 0x8

PATTERNS = (INPUT_SELF, QUERY_SELF, QUERY_TO_INPUT, INPUT_TO_QUERY)

READOUT_TOL = 1e-9


class ProductToken(Immutable):
    """Token `xi = (s, r)` with input part `s = (x, y)` and query part `r = (x', y')`."""

    __slots__ = ('s', 'r', '_hash')

    s: FloatArray
    r: FloatArray

    def __init__(self, s: ArrayLike, r: ArrayLike) -> None:
        """Initialize."""

        super().__init__(s=np.asarray(s, dtype=np.float64).ravel(), r=np.asarray(r, dtype=np.float64).ravel())

    @property
    def vector(self) -> FloatArray:
        """`(s, r)` as one vector."""

        return np.concatenate([self.s, self.r])


class BlockMatrices(Immutable):
    """
    Column blocks of product-space query, key and value matrices.

    `Q~ = [Q_s Q_r]`, `K~ = [K_s K_r]`, `V~ = [V_s V_r]`.
    """

    __slots__ = ('q_s', 'q_r', 'k_s', 'k_r', 'v_s', 'v_r', '_hash')

    q_s: FloatArray
    q_r: FloatArray
    k_s: FloatArray
    k_r: FloatArray
    v_s: FloatArray
    v_r: FloatArray

    def __init__(
        self,
        q_s: ArrayLike,
        q_r: ArrayLike,
        k_s: ArrayLike,
        k_r: ArrayLike,
        v_s: ArrayLike,
        v_r: ArrayLike
    ) -> None:
        """Initialize."""

        blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in (q_s, q_r, k_s, k_r, v_s, v_r)]
        qs, qr, ks, kr, vs, vr = blocks
        if qs.shape != ks.shape or qr.shape != kr.shape or qs.shape[0] != qr.shape[0]:
            raise DimensionError('Query and key blocks must agree in shape')
        if vs.shape[0] != vr.shape[0] or vs.shape[1] != qs.shape[1] or vr.shape[1] != qr.shape[1]:
            raise DimensionError('Value blocks do not match the query and key blocks')
        super().__init__(q_s=qs, q_r=qr, k_s=ks, k_r=kr, v_s=vs, v_r=vr)

    @classmethod
    def from_pattern(
        cls,
        pattern: int,
        query: ArrayLike,
        key: ArrayLike,
        value: ArrayLike,
        input_width: int,
        query_width: int
    ) -> BlockMatrices:
        """
        Place `query`, `key` and `value` into the blocks a pattern allows; the rest are zero.

        The query matrix acts on `s` for `INPUT_SELF` and `INPUT_TO_QUERY` and on `r`
        otherwise; key and value act on the side being attended to.
        """

        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        k = np.atleast_2d(np.asarray(key, dtype=np.float64))
        v = np.atleast_2d(np.asarray(value, dtype=np.float64))
        zs_k = np.zeros((q.shape[0], input_width))
        zr_k = np.zeros((q.shape[0], query_width))
        zs_v = np.zeros((v.shape[0], input_width))
        zr_v = np.zeros((v.shape[0], query_width))
        if pattern == INPUT_SELF:
            return cls(q, zr_k, k, zr_k, v, zr_v)
        if pattern == QUERY_SELF:
            return cls(zs_k, q, zs_k, k, zs_v, v)
        if pattern == QUERY_TO_INPUT:
            return cls(zs_k, q, k, zr_k, v, zr_v)
        if pattern == INPUT_TO_QUERY:
            return cls(q, zr_k, zs_k, k, zs_v, v)
        raise ValueError(f'Unknown block pattern {pattern!r}')

    @classmethod
    def cross(cls, q_r: ArrayLike, k_s: ArrayLike, v_s: ArrayLike, query_width: int) -> BlockMatrices:
        """Cross-constrained blocks: `Q_s = 0`, `K_r = 0`, `V_r = 0`."""

        ks = np.atleast_2d(np.asarray(k_s, dtype=np.float64))
        return cls.from_pattern(QUERY_TO_INPUT, q_r, ks, v_s, ks.shape[1], query_width)

    @property
    def input_width(self) -> int:
        """Width of `s`."""

        return int(self.q_s.shape[1])

    @property
    def query_width(self) -> int:
        """Width of `r`."""

        return int(self.q_r.shape[1])

    def is_cross(self) -> bool:
        """True when the blocks satisfy the cross-attention restriction."""

        return not (np.any(self.q_s) or np.any(self.k_r) or np.any(self.v_r))

    def head(self) -> HeadParams:
        """Full product-space matrices as a head (identity output)."""

        value = np.hstack([self.v_s, self.v_r])
        return HeadParams(
            np.hstack([self.q_s, self.q_r]),
            np.hstack([self.k_s, self.k_r]),
            value,
            np.eye(value.shape[0])
        )


class AttentionCounter:
    """Running count of evaluated attention logits."""

    def __init__(self) -> None:
        """Initialize."""

        self.logits = 0

    def add(self, count: int) -> None:
        """Record `count` logits."""

        self.logits += int(count)


def fiber_lift(mu: DiscreteMeasure, query_point: ArrayLike) -> DiscreteMeasure:
    """`mu ⊗ delta_(x', 0)`: one product atom per atom of `mu`, weights unchanged."""

    xq = np.atleast_1d(np.asarray(query_point, dtype=np.float64))
    anchor = np.concatenate([xq, np.zeros(mu.value_dim)])[None, :]
    return product_measure(mu, DiscreteMeasure(anchor, [1.0], xq.size))


def product_attend(
    tilde_mu: DiscreteMeasure,
    xi: ProductToken | ArrayLike,
    blocks: BlockMatrices,
    scale_dim: int | None = None
) -> FloatArray:
    """Product-space head: softmax over product atoms of `<Q~ xi, K~ xi'>`, averaging `V~ xi'`."""

    token = xi.vector if isinstance(xi, ProductToken) else np.asarray(xi, dtype=np.float64)
    if tilde_mu.ambient_dim != blocks.input_width + blocks.query_width:
        raise DimensionError(
            f'Product atoms live in R^{tilde_mu.ambient_dim}, blocks expect '
            f'{blocks.input_width}+{blocks.query_width}'
        )
    return attend_head(tilde_mu, token, blocks.head(), scale_dim)


def cross_attend(
    r: ArrayLike,
    mu: DiscreteMeasure,
    q_r: ArrayLike,
    k_s: ArrayLike,
    v_s: ArrayLike,
    scale_dim: int | None = None
) -> FloatArray:
    """Cross-attention of a query token `r` against the atoms of `mu`."""

    query = np.atleast_2d(np.asarray(q_r, dtype=np.float64))
    key = np.atleast_2d(np.asarray(k_s, dtype=np.float64))
    value = np.atleast_2d(np.asarray(v_s, dtype=np.float64))
    token = np.atleast_2d(np.asarray(r, dtype=np.float64))
    if key.shape[1] != mu.ambient_dim or query.shape[1] != token.shape[1]:
        raise DimensionError('Cross-attention blocks do not match the token or the atoms')
    if scale_dim is not None:
        query = query * math.sqrt(query.shape[0] / scale_dim)
    tape = Tape(record=False)
    att, _ = head_attention(
        tape, tape.constant(token), tape.constant(mu.locations), mu.weights,
        tape.constant(query), tape.constant(key), tape.constant(value)
    )
    return att.value[0]


def reduced_attend(
    pattern: int,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    xi: ProductToken,
    blocks: BlockMatrices,
    scale_dim: int | None = None
) -> FloatArray:
    """
    Single-sum form that product attention over `mu ⊗ nu` collapses to under `pattern`.

    Input self-attention sums over `mu` from `s`; query self-attention sums over
    `nu` from `r`; the two cross directions sum over the opposite factor.
    """

    if pattern == INPUT_SELF:
        return cross_attend(xi.s, mu, blocks.q_s, blocks.k_s, blocks.v_s, scale_dim)
    if pattern == QUERY_SELF:
        return cross_attend(xi.r, nu, blocks.q_r, blocks.k_r, blocks.v_r, scale_dim)
    if pattern == QUERY_TO_INPUT:
        return cross_attend(xi.r, mu, blocks.q_r, blocks.k_s, blocks.v_s, scale_dim)
    if pattern == INPUT_TO_QUERY:
        return cross_attend(xi.s, nu, blocks.q_s, blocks.k_r, blocks.v_r, scale_dim)
    raise ValueError(f'Unknown block pattern {pattern!r}')


def readout_value(tilde_mu_out: DiscreteMeasure, channels: int = 1) -> FloatArray:
    """
    Common query value `y'` of a single-query fiber.

    All atoms must agree on it; disagreement means the stack mixed fibers.
    """

    values = tilde_mu_out.locations[:, -channels:]
    spread = float(np.max(np.abs(values - values[0]))) if len(values) else 0.0
    if spread > READOUT_TOL:
        raise MeasureError(f'Fiber atoms disagree on the query value by {spread:.3g}')
    return values[0].copy()


class QueryBatch(Immutable):
    """
    Query points `x'`, one per row.

    The CSV form starts with a `x1,...,xd` header and holds one point per row.
    Written predictions append `y1,...,yn` columns; reading such a file back
    keeps the `x` columns only.
    """

    __slots__ = ('points', '_hash')

    points: FloatArray

    def __init__(self, points: ArrayLike, dim: int | None = None) -> None:
        """Initialize."""

        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1 and dim is not None:
            pts = pts.reshape(-1, dim)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DimensionError(f'Query points must form a (K, d) array, got shape {pts.shape}')
        if dim is not None and pts.shape[1] != dim:
            raise DimensionError(f'Expected {dim}-D query points, got {pts.shape[1]}-D')
        if not np.all(np.isfinite(pts)):
            raise ConfigError('Query points must be finite')
        super().__init__(points=pts)

    @property
    def dim(self) -> int:
        """Spatial dimension `d`."""

        return int(self.points.shape[1])

    def __len__(self) -> int:
        """Query count `K`."""

        return int(self.points.shape[0])

    def columns(self, channels: int = 0) -> list[str]:
        """`x1..xd`, then `y1..yn` when `channels` is positive."""

        return self.columns_for(self.dim, channels)

    def rows(self, values: ArrayLike) -> list[tuple[float, ...]]:
        """`(x', value)` rows for predictions of shape `(K, n)`."""

        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(len(self), -1) if len(self) else vals.reshape(0, 1)
        if vals.ndim != 2 or vals.shape[0] != len(self):
            raise DimensionError(f'{len(self)} queries but predictions of shape {vals.shape}')
        return [tuple(float(v) for v in row) for row in np.hstack([self.points, vals])]

    def to_csv(self, values: ArrayLike | None = None) -> str:
        """Query points, with prediction columns when `values` is given."""

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        if values is None:
            writer.writerow(self.columns())
            rows = [tuple(float(v) for v in row) for row in self.points]  # type: list[tuple[float, ...]]
        else:
            rows = self.rows(values)
            writer.writerow(self.columns(len(rows[0]) - self.dim if rows else 0))
        for row in rows:
            writer.writerow([repr(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dim: int | None = None) -> QueryBatch:
        """Read points written by `to_csv`; errors point at the offending row."""

        lines = text.splitlines(keepends=True)
        starts = [0, *itertools.accumulate(len(line) for line in lines)]
        rows = list(csv.reader(io.StringIO(text)))
        header = [c.strip() for c in rows[0]] if rows else []
        width = sum(1 for _ in itertools.takewhile(lambda c: c.startswith('x'), header))
        if not width or header != cls.columns_for(width, len(header) - width):
            raise ConfigError("Query CSV must start with a header 'x1,...,xd'", text, 0)
        if dim is not None and width != dim:
            raise ConfigError(f'Query CSV holds {width}-D points, expected {dim}-D', text, 0)
        points = []
        for i, row in enumerate(rows[1:], 1):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f'Query row {i} has {len(row)} fields, expected {len(header)}', text, starts[i])
            try:
                points.append([float(c) for c in row[:width]])
            except ValueError as e:
                raise ConfigError(f'Malformed query row {i}: {e}', text, starts[i]) from e
        return cls(np.asarray(points, dtype=np.float64).reshape(-1, width))

    @staticmethod
    def columns_for(dim: int, channels: int = 0) -> list[str]:
        """Header names for `dim` coordinates and `channels` values."""

        return [f'x{i + 1}' for i in range(dim)] + [f'y{i + 1}' for i in range(channels)]


class QueryModel:
    """
    Input branch, pointwise query branch, fiberwise cross-constrained product attention, readout.

    Each query `x'_k` gets its own fiber `((x_j, r_j), (x'_k, y'))` over the
    encoded input; the input part passes through unchanged and only `y'` is
    updated. Fibers never interact.
    """

    def __init__(self, config: ModelConfig, params: ParamDict) -> None:
        """Initialize."""

        if config.mode != QUERY:
            raise ConfigError(f"Expected a '{QUERY}' configuration, got '{config.mode}'")
        self.config = config
        self.params = params

    @staticmethod
    def init_params(config: ModelConfig, seed: int = 0) -> ParamDict:
        """Initial parameters."""

        rng = np.random.default_rng(seed)
        feat = config.features.width
        E = config.embed
        width = feat + E
        entries = encoder_entries(rng, config, config.n_layers, 'input')
        entries += [
            ('query.weight0', gaussian_matrix(rng, E, feat)),
            ('query.bias0', np.zeros(E)),
            ('query.weight1', gaussian_matrix(rng, E, E)),
            ('query.bias1', np.zeros(E))
        ]
        for block in range(config.query_blocks):
            for h in range(config.heads):
                prefix = f'fiber{block}.head{h}'
                entries.append((f'{prefix}.query', gaussian_matrix(rng, config.key_dim, width)))
                entries.append((f'{prefix}.key', gaussian_matrix(rng, config.key_dim, width)))
                entries.append((f'{prefix}.value', gaussian_matrix(rng, config.head_dim, width)))
                entries.append((f'{prefix}.output', gaussian_matrix(rng, E, config.head_dim) / config.heads))
        for m in range(config.query_mlp_blocks):
            entries.append((f'fiber_mlp{m}.weight0', gaussian_matrix(rng, config.mlp_hidden, width)))
            entries.append((f'fiber_mlp{m}.bias0', np.zeros(config.mlp_hidden)))
            entries.append((f'fiber_mlp{m}.weight1', gaussian_matrix(rng, E, config.mlp_hidden)))
            entries.append((f'fiber_mlp{m}.bias1', np.zeros(E)))
        return ParamDict(entries + readout_entries(rng, config))

    @classmethod
    def initial(cls, config: ModelConfig, seed: int = 0) -> QueryModel:
        """Model with freshly initialized parameters."""

        return cls(config, cls.init_params(config, seed))

    def fiber_outputs(
        self,
        tape: Tape,
        P: Mapping[str, Tensor],
        points: ArrayLike,
        values: ArrayLike,
        queries: ArrayLike,
        weights: ArrayLike | None = None,
        counter: AttentionCounter | None = None
    ) -> list[Tensor]:
        """Clipped readouts of every fiber atom, one `(N, n)` tensor per query."""

        cfg = self.config
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64)).reshape(-1, cfg.dim)
        qs = np.atleast_2d(np.asarray(queries, dtype=np.float64)).reshape(-1, cfg.dim)
        n_atoms = pts.shape[0]
        w = np.full(n_atoms, 1.0 / n_atoms) if weights is None else np.asarray(weights, dtype=np.float64)
        features = cfg.features

        latent = encode_tokens(tape, P, cfg, pts, values, cfg.n_layers, 'input', w)
        inputs = tape.concat([tape.constant(features(pts)), latent])

        # Keys and values depend on the input part only and are shared by all fibers.
        keys, vals = {}, {}
        for block in range(cfg.query_blocks):
            for h in range(cfg.heads):
                prefix = f'fiber{block}.head{h}'
                keys[prefix] = linear(tape, inputs, P[f'{prefix}.key'])
                vals[prefix] = linear(tape, inputs, P[f'{prefix}.value'])
        scale = 1.0 / math.sqrt(cfg.key_dim)

        out = []
        for k in range(qs.shape[0]):
            phi = tape.constant(features(qs[k:k + 1]))
            hidden = tape.tanh(linear(tape, phi, P['query.weight0'], P['query.bias0']))
            # Query value starts at 0 and receives the pointwise query encoding.
            y = tape.repeat_rows(linear(tape, hidden, P['query.weight1'], P['query.bias1']), n_atoms)
            phi_fiber = tape.repeat_rows(phi, n_atoms)
            for block in range(cfg.query_blocks):
                r = tape.concat([phi_fiber, y])
                for h in range(cfg.heads):
                    prefix = f'fiber{block}.head{h}'
                    logits = tape.scale(
                        tape.matmul(linear(tape, r, P[f'{prefix}.query']), tape.transpose(keys[prefix])), scale
                    )
                    if counter is not None:
                        counter.add(logits.size)
                    att = tape.matmul(tape.measure_softmax(logits, w), vals[prefix])
                    y = tape.add(y, linear(tape, att, P[f'{prefix}.output']))
            for m in range(cfg.query_mlp_blocks):
                y = tape.add(y, mlp_update(tape, tape.concat([phi_fiber, y]), P, f'fiber_mlp{m}'))
            out.append(readout(tape, P, cfg, y))
        return out

    def forward(
        self,
        tape: Tape,
        P: Mapping[str, Tensor],
        points: ArrayLike,
        values: ArrayLike,
        queries: ArrayLike,
        weights: ArrayLike | None = None
    ) -> list[Tensor]:
        """One `(1, n)` prediction per query, taken from the first fiber atom."""

        return [tape.rows(f, 0, 1) for f in self.fiber_outputs(tape, P, points, values, queries, weights)]

    def predict(self, points: ArrayLike, values: ArrayLike, queries: ArrayLike) -> FloatArray:
        """Numpy predictions at the queries, shape `(K, n)`."""

        tape = Tape(record=False)
        rows = self.forward(tape, tape.parameters(self.params), points, values, queries)
        return np.concatenate([r.value for r in rows], axis=0)


def query_forward(
    mu: DiscreteMeasure,
    queries: QueryBatch | ArrayLike,
    model: QueryModel,
    counter: AttentionCounter | None = None
) -> FloatArray:
    """
    Values at each query: lift a fiber, run the product stack, read out the common `y'`.

    Returns an array of shape `(K, n)`.
    """

    cfg = model.config
    if mu.coord_split != cfg.dim or mu.value_dim != cfg.channels:
        raise DimensionError(
            f'Measure splits as {mu.coord_split}+{mu.value_dim}, model expects {cfg.dim}+{cfg.channels}'
        )
    points = queries.points if isinstance(queries, QueryBatch) else queries
    qs = np.atleast_2d(np.asarray(points, dtype=np.float64)).reshape(-1, cfg.dim)
    tape = Tape(record=False)
    fibers = model.fiber_outputs(tape, tape.parameters(model.params), mu.spatial, mu.values, qs, mu.weights, counter)
    out = []
    for xq, fiber in zip(qs, fibers):
        lifted = fiber_lift(mu, xq)
        final = lifted.with_locations(np.concatenate([lifted.locations[:, :-cfg.channels], fiber.value], axis=1))
        out.append(readout_value(final, cfg.channels))
    return np.stack(out) if out else np.zeros((0, cfg.channels))


pickle_register(ProductToken)
pickle_register(BlockMatrices)
pickle_register(QueryBatch)
