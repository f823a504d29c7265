"""
Batch experiments behind the command line.

Each experiment turns its settings into a `Table`, a list of embedded
`Check`s and an optional plot description; `cli.run` writes them out.
"""
from __future__ import annotations
import json
import logging
import math
import time
import numpy as np
from numpy.typing import NDArray
from pathlib import Path
from typing import Any, Callable, Mapping, NamedTuple, Sequence
from .attention import SameDomainModel, StackConfig, attention_update, default_widths, init_stack, stack_forward
from .diff import Tape, Tensor, grad_check
from .encode import CUBE, Domain, SampledFunction, SamplingScheme, decode_feps, parse_scheme, sample_points, tokenize
from .features import QUERY, SAME_DOMAIN, ModelConfig
from .fourier import FourierTeacher, RandomFieldSampler, sample_field, spectral_hidden, teacher_apply
from .measure import DiscreteMeasure, product_measure, uniform_measure, w1_distance
from .mf_types import ParamDict
from .product import (
    INPUT_SELF, INPUT_TO_QUERY, PATTERNS, QUERY_SELF, QUERY_TO_INPUT, BlockMatrices, ProductToken, QueryBatch,
    QueryModel, cross_attend, product_attend, query_forward, reduced_attend
)
from .report import BAR, LOGLOG, SEMILOGY, Table
from .spectral import SmoothClip, SpectralConfig, basis_eigenpairs, k_schedule, s_eta_k
from .training import (
    PREDICT_STREAM, InterpolationPredictor, Metrics, ModelPredictor, Sample, TeacherPredictor, TrainConfig,
    ZeroPredictor, batch_loss, build_model, evaluate, load_checkpoint, load_config, save_checkpoint, train
)
from .util import ConfigError

__all__ = (
    'COMMANDS',
    'Check',
    'Context',
    'Experiment',
    'Outcome',
    'PlotSpec'
)

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

PATTERN_NAMES = {
    INPUT_SELF: 'input-self',
    QUERY_SELF: 'query-self',
    QUERY_TO_INPUT: 'query-to-input',
    INPUT_TO_QUERY: 'input-to-query'
}

DESK_TEACHER = {'modes': 4, 'width': 8, 'projection': 32, 'seed': 0}
CHECKPOINT_KEYS = {SAME_DOMAIN: 'same_domain_checkpoint', QUERY: 'query_checkpoint'}


class Check(NamedTuple):
    """One embedded assertion."""

    name: str
    passed: bool
    detail: str


class PlotSpec(NamedTuple):
    """How to draw the table."""

    x: str
    ys: Sequence[str]
    kind: str
    title: str
    reference: Sequence[float] | None = None


class Outcome(NamedTuple):
    """Everything an experiment produces."""

    table: Table
    checks: list[Check]
    plot: PlotSpec | None


class Context:
    """Resolved settings, seed and output location of one run."""

    def __init__(self, settings: Mapping[str, Any], seed: int, out: Path, full_scale: bool = False) -> None:
        """Initialize."""

        self.settings = dict(settings)
        self.seed = seed
        self.out = out
        self.full_scale = full_scale

    def __getitem__(self, key: str) -> Any:
        """Setting lookup."""

        return self.settings[key]

    def teacher(self) -> FourierTeacher:
        """Teacher described by the `teacher` setting."""

        spec = {**DESK_TEACHER, **self.settings.get('teacher', {})}
        if self.full_scale:
            return FourierTeacher.full_scale(int(spec['seed']))
        try:
            return FourierTeacher.from_seed(1, int(spec['modes']), int(spec['width']), int(spec['projection']),
                                            int(spec['seed']))
        except (TypeError, ValueError) as e:
            raise ConfigError(f'Invalid teacher settings: {e}') from e

    def checkpoint(self, mode: str) -> Path:
        """Checkpoint path for a mode, from the settings or the output directory."""

        key = 'checkpoint' if 'checkpoint' in self.settings else CHECKPOINT_KEYS[mode]
        given = self.settings.get(key)
        path = self.out / f'checkpoint-{mode}.json' if not given else Path(given)
        if not path.exists():
            raise ConfigError(f"Checkpoint '{path}' not found; run 'train' with mode '{mode}' first")
        return path


class Experiment(NamedTuple):
    """Defaults and body of a command."""

    defaults: Mapping[str, Any]
    body: Callable[[Context], Outcome]
    summary: str


def _check(name: str, passed: bool, detail: str) -> Check:
    logger.info('%s %s: %s', 'PASS' if passed else 'FAIL', name, detail)
    return Check(name, bool(passed), detail)


def _ordered(values: Sequence[float], tolerance: float) -> tuple[bool, int]:
    """Nondecreasing up to at most one adjacent inversion of relative size `tolerance`."""

    inversions = [
        (a, b) for a, b in zip(values, values[1:]) if b < a
    ]
    ok = len(inversions) <= 1 and all(a <= b * (1.0 + tolerance) for a, b in inversions)
    return ok, len(inversions)


# Measure-level experiments


def _w1_convergence(ctx: Context) -> Outcome:
    domain = Domain(1, CUBE, 2.0)

    def h(x: FloatArray) -> FloatArray:
        return np.asarray(np.sin(2.0 * np.pi * x) + np.cos(6.0 * np.pi * x), dtype=np.float64)

    func = SampledFunction.from_callable(domain, h, 16)
    grid = SamplingScheme('grid')

    def measure(n: int) -> DiscreteMeasure:
        return tokenize(func, sample_points(domain, grid, n))

    table = Table(['N', 'reference', 'w1', 'bound', 'N_times_w1'])
    sizes = [int(n) for n in ctx['sizes']]
    for n in sizes:
        ref = int(ctx['reference'])
        if n * ref > int(ctx['max_plan']):
            ref = int(ctx['capped_reference'])
        start = time.perf_counter()
        w1, _ = w1_distance(measure(n), measure(ref))
        logger.debug('W1 at N=%d against %d in %.2fs', n, ref, time.perf_counter() - start)
        table.add(n, ref, w1, 3.0 / n, n * w1)
    w1s = table.column('w1')
    checks = [
        _check('strictly decreasing', all(b < a for a, b in zip(w1s, w1s[1:])), f'W1 = {w1s}'),
        _check('W1 <= 3/N', all(w <= 3.0 / n for w, n in zip(w1s, sizes)),
               f'fitted C = max N W1 = {max(table.column("N_times_w1")):.4g}')
    ]
    plot = PlotSpec('N', ['w1'], LOGLOG, 'W1 tokenization convergence', [3.0 / n for n in sizes])
    return Outcome(table, checks, plot)


def _decode_convergence(ctx: Context) -> Outcome:
    domain = Domain(1, CUBE, 1.0)

    def h(x: FloatArray) -> FloatArray:
        return np.asarray(0.5 * np.sin(2.0 * np.pi * x) + 0.3 * np.cos(4.0 * np.pi * x), dtype=np.float64)

    n = int(ctx['n_points'])
    func = SampledFunction.from_callable(domain, h, 16)
    mu = tokenize(func, sample_points(domain, SamplingScheme('grid'), n))
    lo, hi = ctx['interior']
    queries = np.linspace(lo, hi, int(ctx['n_queries']))[:, None]
    exact = h(queries)
    table = Table(['eps', 'sup_error'])
    for eps in ctx['eps']:
        err = float(np.max(np.abs(decode_feps(mu, queries, float(eps), domain) - exact)))
        table.add(float(eps), err)
    errs = table.column('sup_error')
    ratio = errs[0] / errs[1] if len(errs) > 1 and errs[1] > 0 else math.nan
    rmin, rmax = ctx['ratio_range']
    checks = [_check('error ratio', rmin <= ratio <= rmax, f'ratio {ratio:.4g}, expected [{rmin}, {rmax}]')]
    return Outcome(table, checks, PlotSpec('eps', ['sup_error'], LOGLOG, 'Mollifier decoder convergence'))


def _spectral_convergence(ctx: Context) -> Outcome:
    d, r = 1, int(ctx['r'])
    coeffs = np.asarray(ctx['coefficients'], dtype=np.float64)
    etas = [float(e) for e in ctx['etas']]
    ks = [k_schedule(eta, d, r) for eta in etas]
    basis = basis_eigenpairs(d, max(max(ks), len(coeffs)))
    head = basis.truncate(len(coeffs))

    def h(x: FloatArray) -> FloatArray:
        return np.asarray(head.evaluate(x) @ coeffs, dtype=np.float64)[:, None]

    domain = Domain(d, CUBE, 1.0)
    func = SampledFunction.from_callable(domain, h, 16)
    mu = tokenize(func, sample_points(domain, SamplingScheme('grid'), int(ctx['n_points'])))
    nodes, cell = basis.quadrature()
    exact = h(nodes)
    table = Table(['eta', 'K', 'closed_form_K', 'l2_error'])
    for eta, k in zip(etas, ks):
        approx = s_eta_k(mu, SpectralConfig(r, eta, k), basis)(nodes)
        err = math.sqrt(cell * float(np.sum((approx - exact) ** 2)))
        table.add(eta, k, math.ceil(eta ** (-d / (4.0 * r)) - 1e-12), err)
    errs = table.column('l2_error')
    checks = [
        _check('monotone decreasing', all(b < a for a, b in zip(errs, errs[1:])), f'errors {errs}'),
        _check('final error', errs[-1] < float(ctx['final_tolerance']), f'{errs[-1]:.4g}'),
        _check('K schedule', table.column('K') == table.column('closed_form_K'), f'K = {table.column("K")}')
    ]
    return Outcome(table, checks, PlotSpec('eta', ['l2_error'], LOGLOG, 'Spectral regularizer convergence'))


def _graph_check(ctx: Context) -> Outcome:
    rng = np.random.default_rng(ctx.seed)
    clip = SmoothClip(1.0, 2.0)
    table = Table(['trial', 'dim', 'max_coordinate_drift', 'max_warp_difference'])
    for trial in range(int(ctx['trials'])):
        d = int(rng.integers(1, 3))
        n_atoms = int(rng.integers(2, 9))
        widths = default_widths(d, 1, 2)
        config = StackConfig(d, widths, clip, heads=2)
        params = init_stack(config, int(rng.integers(0, 2 ** 31)))
        x = rng.random((n_atoms, d))
        weights = rng.random(n_atoms) + 0.1
        weights /= weights.sum()
        mu = DiscreteMeasure(np.hstack([x, rng.uniform(-1, 1, (n_atoms, 1))]), weights, d)
        out = stack_forward(mu, config, params)
        drift = float(np.max(np.abs(out.spatial - mu.spatial))) if not np.array_equal(out.spatial, mu.spatial) else 0.0
        warped = StackConfig(d, widths, clip, y0=(0.3,), heads=2)
        other = DiscreteMeasure(np.hstack([x, rng.uniform(-1, 1, (n_atoms, 1))]), weights, d)
        a = stack_forward(mu, warped, params).values
        b = stack_forward(other, warped, params).values
        table.add(trial, d, drift, float(np.max(np.abs(a - b))))
    drifts = table.column('max_coordinate_drift')
    warps = table.column('max_warp_difference')
    checks = [
        _check('coordinates preserved', max(drifts) == 0.0, f'max drift {max(drifts):.3g}'),
        _check('warp independence', max(warps) <= 1e-12, f'max difference {max(warps):.3g}')
    ]
    return Outcome(table, checks, None)


# Attention-level experiments


def _random_measure(rng: np.random.Generator, n: int, width: int, split: int) -> DiscreteMeasure:
    w = rng.random(n) + 0.05
    return DiscreteMeasure(rng.standard_normal((n, width)), w / w.sum(), split)


def _relative(a: FloatArray, b: FloatArray) -> float:
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-12)


def _crossattn_check(ctx: Context) -> Outcome:
    rng = np.random.default_rng(ctx.seed)
    s_width, r_width, key_dim, value_dim = 2, 2, 3, 2
    worst = 0.0
    for _ in range(int(ctx['instances'])):
        n = int(rng.integers(1, int(ctx['max_atoms']) + 1))
        k = int(rng.integers(1, int(ctx['max_atoms']) + 1))
        mu = _random_measure(rng, n, s_width, 1)
        nu = _random_measure(rng, k, r_width, 1)
        blocks = BlockMatrices.cross(
            rng.standard_normal((key_dim, r_width)),
            rng.standard_normal((key_dim, s_width)),
            rng.standard_normal((value_dim, s_width)),
            r_width
        )
        xi = ProductToken(rng.standard_normal(s_width), rng.standard_normal(r_width))
        product = product_attend(product_measure(mu, nu), xi, blocks)
        direct = cross_attend(xi.r, mu, blocks.q_r, blocks.k_s, blocks.v_s)
        worst = max(worst, _relative(product, direct))

    table = Table(['pattern', 'instances', 'max_relative_error'])
    table.add(PATTERN_NAMES[QUERY_TO_INPUT], int(ctx['instances']), worst)
    tol = float(ctx['tolerance'])
    checks = [_check('cross-attention identity', worst <= tol, f'max relative error {worst:.3g}')]
    for pattern in PATTERNS:
        mu = _random_measure(rng, 3, s_width, 1)
        nu = _random_measure(rng, 3, r_width, 1)
        blocks = BlockMatrices.from_pattern(
            pattern,
            rng.standard_normal((key_dim, s_width if pattern in (INPUT_SELF, INPUT_TO_QUERY) else r_width)),
            rng.standard_normal((key_dim, s_width if pattern in (INPUT_SELF, QUERY_TO_INPUT) else r_width)),
            rng.standard_normal((value_dim, s_width if pattern in (INPUT_SELF, QUERY_TO_INPUT) else r_width)),
            s_width,
            r_width
        )
        xi = ProductToken(rng.standard_normal(s_width), rng.standard_normal(r_width))
        full = product_attend(product_measure(mu, nu), xi, blocks)
        err = _relative(full, reduced_attend(pattern, mu, nu, xi, blocks))
        table.add(PATTERN_NAMES[pattern], 1, err)
        checks.append(_check(f'{PATTERN_NAMES[pattern]} reduction', err <= tol, f'relative error {err:.3g}'))
    return Outcome(table, checks, None)


def _gradcheck(ctx: Context) -> Outcome:
    rng = np.random.default_rng(ctx.seed)
    step = float(ctx['step'])
    table = Table(['case', 'parameters', 'max_relative_error', 'tolerance'])

    config = StackConfig(1, (1, 1), SmoothClip(1.0, 2.0), heads=2)
    layer = ParamDict((k, v) for k, v in init_stack(config, ctx.seed).items() if k.startswith('layer0.'))
    tokens = rng.uniform(-1.0, 1.0, (3, 2))
    weights = np.full(3, 1.0 / 3.0)
    target = rng.uniform(-1.0, 1.0, (3, 1))

    def layer_loss(tape: Tape, P: Mapping[str, Tensor]) -> Tensor:
        x = tape.constant(tokens)
        return tape.square_error(attention_update(tape, x, x, weights, P, 'layer0'), target)

    table.add('attention layer', layer.size, grad_check(layer_loss, layer, step), float(ctx['layer_tolerance']))

    model_config = ModelConfig(QUERY, embed=int(ctx['embed']), heads=2)
    model = QueryModel.initial(model_config, ctx.seed)
    sample = Sample(
        np.array([[0.2], [0.7]]), np.array([[0.3], [-0.5]]), np.array([[0.45]]), np.array([[0.1]])
    )

    def query_loss(tape: Tape, P: Mapping[str, Tensor]) -> Tensor:
        return batch_loss(model, tape, P, [sample])

    err = grad_check(query_loss, model.params, step)
    table.add('query loss', model.params.size, err, float(ctx['query_tolerance']))
    checks = [
        _check(name, err < tol, f'max relative error {err:.3g} (tolerance {tol:g})')
        for name, _, err, tol in table.rows
    ]
    return Outcome(table, checks, None)


def _permutation_check(ctx: Context) -> Outcome:
    teacher = ctx.teacher()
    dim = teacher.dim
    rng = np.random.default_rng(ctx.seed)
    field = sample_field(RandomFieldSampler(dim, seed=ctx.seed))
    points = rng.random((int(ctx['n_points']), dim))
    values = field(points)
    queries = rng.random((int(ctx['n_queries']), dim))
    perm = rng.permutation(len(points))
    table = Table(['model', 'max_difference'])

    same = SameDomainModel.initial(ModelConfig(SAME_DOMAIN, dim=dim), ctx.seed)
    diff = float(np.max(np.abs(same.predict(points[perm], values[perm]) - same.predict(points, values)[perm])))
    table.add(SAME_DOMAIN, diff)
    query = QueryModel.initial(ModelConfig(QUERY, dim=dim), ctx.seed)
    shuffled = query.predict(points[perm], values[perm], queries)
    diff = float(np.max(np.abs(shuffled - query.predict(points, values, queries))))
    table.add(QUERY, diff)
    tol = float(ctx['tolerance'])
    checks = [_check(f'{name} permutation invariance', d <= tol, f'max difference {d:.3g}') for name, d in table.rows]
    return Outcome(table, checks, None)


# Teacher and training experiments


def _teacher_check(ctx: Context) -> Outcome:
    teacher = ctx.teacher()
    field = sample_field(RandomFieldSampler(teacher.dim, seed=ctx.seed))
    out = teacher_apply(field, teacher)
    shift = tuple(int(s) for s in ctx['shift'][:teacher.dim])
    axes = tuple(range(teacher.dim))
    shifted = teacher_apply(field.with_values(np.roll(field.values, shift, axis=axes)), teacher)
    equivariance = float(np.max(np.abs(shifted.values - np.roll(out.values, shift, axis=axes))))
    _, residue = spectral_hidden(field, teacher)
    again = FourierTeacher.from_json(teacher.to_json())
    deterministic = again == teacher

    table = Table(['quantity', 'value'])
    table.add('parameters', teacher.parameter_count())
    table.add('translation_equivariance', equivariance)
    table.add('imaginary_residue', residue)
    table.add('seed_determinism', int(deterministic))
    tol = float(ctx['tolerance'])
    checks = [
        _check('translation equivariance', equivariance <= tol, f'{equivariance:.3g}'),
        _check('realness', residue <= tol, f'{residue:.3g}'),
        _check('seed determinism', deterministic, 'rebuilt weights are bit-identical' if deterministic else 'mismatch')
    ]
    return Outcome(table, checks, None)


def _train_config(ctx: Context) -> TrainConfig:
    settings = {k: v for k, v in ctx.settings.items() if k not in ('teacher', 'train_config')}
    settings['seed'] = ctx.seed
    path = ctx.settings.get('train_config')
    try:
        if path:
            base = load_config(str(path)).as_dict()
            if 'mode' in settings and 'model' not in settings:
                base['model']['mode'] = settings['mode']
            return TrainConfig(**{**base, **settings})
        mode = settings.pop('mode', SAME_DOMAIN)
        if ctx.full_scale:
            return TrainConfig.full_scale(mode, **settings)
        return TrainConfig.desk(mode, **settings)
    except TypeError as e:
        raise ConfigError(f'Invalid training settings: {e}') from e


def _train(ctx: Context) -> Outcome:
    cfg = _train_config(ctx)
    teacher = ctx.teacher()
    logger.info('training %s model for %d steps (%d parameters in the teacher)', cfg.mode, cfg.steps,
                teacher.parameter_count())
    start = time.perf_counter()
    result = train(cfg, teacher)
    elapsed = time.perf_counter() - start
    path = ctx.out / f'checkpoint-{cfg.mode}.json'
    save_checkpoint(str(path), cfg.model, result.params, result.optimizer)
    logger.info('saved %s after %.1fs', path, elapsed)
    table = Table(['step', 'lr', 'loss'], [tuple(row) for row in result.history])
    losses = table.column('loss')
    checks = []
    if len(losses) > 1:
        checks.append(_check('loss decreased', losses[-1] < losses[0], f'{losses[0]:.4g} -> {losses[-1]:.4g}'))
    return Outcome(table, checks, PlotSpec('step', ['loss'], SEMILOGY, f'{cfg.mode} training loss'))


def _metrics_row(name: str, m: Metrics) -> tuple[Any, ...]:
    return (name, m.rel_l2, m.l2_half_width, m.rel_linf, m.linf_half_width, m.median)


METRIC_COLUMNS = ['model', 'rel_l2', 'rel_l2_half_width', 'rel_linf', 'rel_linf_half_width', 'median_rel_l2']


def _eval(ctx: Context) -> Outcome:
    mode = ctx['mode']
    model, _ = load_checkpoint(str(ctx.checkpoint(mode)))
    teacher = ctx.teacher()
    untrained = build_model(model.config, seed=ctx.seed)
    args = (teacher, int(ctx['n_functions']), int(ctx['n_points']), int(ctx['n_queries']), ctx['scheme'], ctx.seed)
    trained = evaluate(ModelPredictor(model), *args)
    initial = evaluate(ModelPredictor(untrained), *args)
    table = Table(METRIC_COLUMNS)
    table.add(*_metrics_row('trained', trained))
    table.add(*_metrics_row('untrained', initial))
    table.add(*_metrics_row('teacher', evaluate(TeacherPredictor(teacher), *args)))
    table.add(*_metrics_row('zero', evaluate(ZeroPredictor(), *args)))
    bound, ratio = float(ctx['max_rel_l2']), float(ctx['max_ratio'])
    checks = [
        _check('held-out rel L2', trained.rel_l2 < bound, f'{trained.rel_l2:.4g} (bound {bound:g})'),
        _check('improvement over initialization', trained.rel_l2 < ratio * initial.rel_l2,
               f'{trained.rel_l2:.4g} vs {initial.rel_l2:.4g}')
    ]
    return Outcome(table, checks, PlotSpec('model', ['rel_l2', 'rel_linf'], BAR, f'{mode} held-out errors'))


def _query_model(ctx: Context) -> QueryModel:
    model, _ = load_checkpoint(str(ctx.checkpoint(QUERY)))
    if not isinstance(model, QueryModel):
        raise ConfigError('Expected a query-mode checkpoint')
    return model


def _resolution_transfer(ctx: Context) -> Outcome:
    predictor = ModelPredictor(_query_model(ctx))
    teacher = ctx.teacher()
    table = Table(['N', 'rel_l2', 'rel_l2_half_width', 'median_rel_l2'])
    for n in ctx['sizes']:
        m = evaluate(
            predictor, teacher, int(ctx['n_functions']), int(n), int(ctx['n_queries']), ctx['scheme'], ctx.seed
        )
        table.add(int(n), m.rel_l2, m.l2_half_width, m.median)
    medians = table.column('median_rel_l2')
    ok, count = _ordered(medians[::-1], float(ctx['tolerance']))
    checks = [_check('median nonincreasing in N', ok, f'medians {medians}, {count} inversion(s)')]
    return Outcome(table, checks, PlotSpec('N', ['median_rel_l2', 'rel_l2'], LOGLOG, 'Resolution transfer'))


def _sampling_robustness(ctx: Context) -> Outcome:
    predictor = ModelPredictor(_query_model(ctx))
    teacher = ctx.teacher()
    table = Table(['scheme', 'rel_l2', 'rel_l2_half_width', 'median_rel_l2'])
    for name in ctx['schemes']:
        scheme = parse_scheme(name)
        m = evaluate(predictor, teacher, int(ctx['n_functions']), int(ctx['n_points']), int(ctx['n_queries']),
                     scheme, ctx.seed)
        table.add(scheme.kind, m.rel_l2, m.l2_half_width, m.median)
    medians = table.column('median_rel_l2')
    ok, count = _ordered(medians, float(ctx['tolerance']))
    checks = [_check('sampling ordering', ok, f'medians {medians}, {count} inversion(s)')]
    return Outcome(table, checks, PlotSpec('scheme', ['median_rel_l2'], BAR, 'Sampling robustness'))


def _interpolation_baseline(ctx: Context) -> Outcome:
    query = _query_model(ctx)
    same, _ = load_checkpoint(str(ctx.checkpoint(SAME_DOMAIN)))
    if not isinstance(same, SameDomainModel):
        raise ConfigError('Expected a same-domain checkpoint')
    teacher = ctx.teacher()
    args = (teacher, int(ctx['n_functions']), int(ctx['n_points']), int(ctx['n_queries']), ctx['scheme'], ctx.seed)
    table = Table(METRIC_COLUMNS)
    table.add(*_metrics_row('query', evaluate(ModelPredictor(query), *args)))
    baseline = InterpolationPredictor(same, int(ctx['grid']))
    table.add(*_metrics_row('same-domain+interpolation', evaluate(baseline, *args)))
    return Outcome(table, [], PlotSpec('model', ['rel_l2', 'rel_linf'], BAR, 'Query model vs interpolation'))


def _predict(ctx: Context) -> Outcome:
    model = _query_model(ctx)
    if not ctx['queries']:
        raise ConfigError("Setting 'queries' must name a query CSV file")
    path = Path(ctx['queries'])
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read queries '{path}': {e.strerror or e}") from e
    cfg = model.config
    batch = QueryBatch.from_csv(text, cfg.dim)
    if not len(batch):
        raise ConfigError(f"Query file '{path}' holds no points")
    rng = np.random.default_rng([ctx.seed, PREDICT_STREAM, int(ctx['function'])])
    field_seed, point_seed = (int(s) for s in rng.integers(0, 2 ** 63 - 1, size=2))
    field = sample_field(RandomFieldSampler(cfg.dim, seed=field_seed))
    points = sample_points(field.domain, parse_scheme(ctx['scheme'], point_seed), int(ctx['n_points']))
    mu = uniform_measure(np.hstack([points, field(points)]), cfg.dim)
    values = query_forward(mu, batch, model)
    out = ctx.out / 'predictions.csv'
    out.write_text(batch.to_csv(values), encoding='utf-8')
    logger.info('wrote %d predictions to %s', len(batch), out)
    bound = cfg.clip.outer
    peak = float(np.max(np.abs(values)))
    checks = [_check('predictions bounded', peak <= bound, f'max |y| {peak:.4g} (bound {bound:g})')]
    return Outcome(Table(batch.columns(cfg.channels), batch.rows(values)), checks, None)


EVAL_DEFAULTS = {'n_functions': 8, 'n_queries': 64, 'scheme': 'uniform', 'teacher': DESK_TEACHER}

COMMANDS = {
    'w1-convergence': Experiment(
        {'sizes': [16, 64, 256, 1024], 'reference': 4096, 'capped_reference': 2048, 'max_plan': 1 << 21},
        _w1_convergence,
        'W1 distance of grid tokenizations to a fine reference'
    ),
    'decode-convergence': Experiment(
        {'n_points': 4096, 'eps': [0.1, 0.05], 'interior': [0.25, 0.75], 'n_queries': 101, 'ratio_range': [2.5, 6.0]},
        _decode_convergence,
        'Interior sup error of the mollifier decoder'
    ),
    'spectral-convergence': Experiment(
        {
            'r': 2,
            'etas': [1e-1, 1e-2, 1e-3, 1e-4],
            'coefficients': [0.5, 0.02, 0.005, 0.002, 0.001],
            'n_points': 4096,
            'final_tolerance': 1e-2
        },
        _spectral_convergence,
        'L2 error of the spectral regularizer along the K(eta) schedule'
    ),
    'gradcheck': Experiment(
        {'step': 1e-5, 'embed': 8, 'layer_tolerance': 1e-5, 'query_tolerance': 1e-4},
        _gradcheck,
        'Tape gradients against central differences'
    ),
    'crossattn-check': Experiment(
        {'instances': 500, 'max_atoms': 8, 'tolerance': 1e-10},
        _crossattn_check,
        'Product attention against its single-sum reductions'
    ),
    'graph-check': Experiment({'trials': 100}, _graph_check, 'Coordinate passthrough and warp independence'),
    'permutation-check': Experiment(
        {'n_points': 16, 'n_queries': 4, 'tolerance': 1e-12, 'teacher': DESK_TEACHER},
        _permutation_check,
        'Token order invariance of both models'
    ),
    'teacher-check': Experiment(
        {'shift': [5, 3], 'tolerance': 1e-10, 'teacher': DESK_TEACHER},
        _teacher_check,
        'Equivariance, realness and determinism of the teacher'
    ),
    'train': Experiment({'teacher': DESK_TEACHER}, _train, 'Train a model online'),
    'eval': Experiment(
        {**EVAL_DEFAULTS, 'mode': SAME_DOMAIN, 'n_functions': 16, 'n_points': 64, 'max_rel_l2': 0.25, 'max_ratio': 0.6},
        _eval,
        'Held-out errors of a trained model'
    ),
    'resolution-transfer': Experiment(
        {**EVAL_DEFAULTS, 'sizes': [32, 64, 128, 256], 'tolerance': 0.05},
        _resolution_transfer,
        'Query model errors as the input sample count grows'
    ),
    'sampling-robustness': Experiment(
        {**EVAL_DEFAULTS, 'schemes': ['grid', 'jitter', 'uniform', 'gauss'], 'n_points': 64, 'tolerance': 0.1},
        _sampling_robustness,
        'Query model errors under different input samplings'
    ),
    'interpolation-baseline': Experiment(
        {**EVAL_DEFAULTS, 'n_points': 64, 'n_queries': 256, 'grid': 64},
        _interpolation_baseline,
        'Query model against same-domain prediction plus interpolation'
    ),
    'predict': Experiment(
        {'queries': '', 'function': 0, 'n_points': 64, 'scheme': 'uniform'},
        _predict,
        'Query model predictions at points read from a CSV file'
    )
}

# Keys accepted beyond the defaults.
EXTRA_KEYS = {
    'train': set(TrainConfig.__slots__[:-1]) - {'seed'} | {'train_config'},
    'eval': {'checkpoint'},
    'resolution-transfer': {'checkpoint'},
    'sampling-robustness': {'checkpoint'},
    'interpolation-baseline': {'query_checkpoint', 'same_domain_checkpoint'},
    'predict': {'checkpoint'}
}


def resolve_settings(command: str, text: str | None) -> dict[str, Any]:
    """Command defaults overlaid with a JSON object; unknown keys are errors."""

    settings = json.loads(json.dumps(COMMANDS[command].defaults))
    if text is None:
        return settings
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f'Invalid configuration: {e.msg}', text, e.pos) from e
    if not isinstance(data, dict):
        raise ConfigError('Configuration must be a JSON object', text, 0)
    allowed = set(settings) | EXTRA_KEYS.get(command, set())
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f'Unknown setting {key!r} for {command}', text, max(text.find(f'"{key}"'), 0))
        if key == 'teacher' and isinstance(value, dict):
            settings[key] = {**settings.get(key, {}), **value}
        else:
            settings[key] = value
    return settings


def run_experiment(
    command: str,
    settings: Mapping[str, Any],
    seed: int,
    out: Path,
    full_scale: bool = False
) -> Outcome:
    """Run one experiment body."""

    return COMMANDS[command].body(Context(settings, seed, out, full_scale))


def summarize(outcome: Outcome) -> list[str]:
    """One line per check."""

    return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in outcome.checks]
