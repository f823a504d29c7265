"""Online training against the Fourier teacher, evaluation metrics and checkpoints."""
from __future__ import annotations
import json
import logging
import math
import warnings
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Any, Mapping, NamedTuple, Protocol, Sequence, Union
from .attention import SameDomainModel
from .diff import Tape, Tensor, backward_grads
from .encode import TORUS, Domain, SampledFunction, SamplingScheme, grid_nodes, parse_scheme, sample_points
from .features import QUERY, SAME_DOMAIN, ModelConfig
from .fourier import FourierTeacher, RandomFieldSampler, interpolate_periodic, sample_field, teacher_apply
from .mf_types import Immutable, ParamDict, freeze, pickle_register
from .product import QueryModel
from .util import DEBUG, ConfigError, TrainingError

__all__ = (
    'Adam',
    'HistoryRow',
    'InterpolationPredictor',
    'Metrics',
    'ModelPredictor',
    'Predictor',
    'Sample',
    'TeacherPredictor',
    'TrainConfig',
    'TrainResult',
    'ZeroPredictor',
    'batch_loss',
    'build_model',
    'evaluate',
    'load_checkpoint',
    'load_config',
    'loss_value',
    'lr_at',
    'make_batch',
    'save_checkpoint',
    'train'
)

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Model = Union[SameDomainModel, QueryModel]

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
HISTORY_EVERY = 10
CONFIDENCE_Z = 1.96
ZERO_TARGET = 1e-12
# Separate seed streams so evaluation never reuses training functions.
TRAIN_STREAM = 0
EVAL_STREAM = 1
PREDICT_STREAM = 2
CHECKPOINT_FORMAT = 'measureformer-checkpoint'


class TrainConfig(Immutable):
    """Online training settings plus the architecture being trained."""

    __slots__ = (
        'mode', 'steps', 'batch', 'warmup', 'peak_lr', 'final_lr', 'k_train', 'n_points', 'scheme', 'seed',
        'resolution', 'max_frequency', 'bare_sum', 'model', '_hash'
    )

    mode: str
    steps: int
    batch: int
    warmup: int
    peak_lr: float
    final_lr: float
    k_train: int
    n_points: int
    scheme: str
    seed: int
    resolution: int
    max_frequency: int
    bare_sum: bool
    model: ModelConfig

    def __init__(
        self,
        mode: str = SAME_DOMAIN,
        steps: int = 2000,
        batch: int = 8,
        warmup: int = 100,
        peak_lr: float = 1e-3,
        final_lr: float = 1e-4,
        k_train: int = 8,
        n_points: int = 64,
        scheme: str = 'uniform',
        seed: int = 0,
        resolution: int = 64,
        max_frequency: int = 8,
        bare_sum: bool = False,
        model: ModelConfig | Mapping[str, Any] | None = None
    ) -> None:
        """Initialize."""

        if model is None:
            model = ModelConfig(mode=mode)
        elif not isinstance(model, ModelConfig):
            model = ModelConfig.from_mapping({'mode': mode, **model})
        if model.mode != mode:
            raise ConfigError(f"Training mode '{mode}' does not match model mode '{model.mode}'")
        if steps < 0 or batch < 1 or k_train < 1 or n_points < 1:
            raise ConfigError('Steps must be nonnegative and batch, k_train and n_points positive')
        if warmup < 0 or (steps > 0 and warmup >= steps):
            raise ConfigError(f'Warmup {warmup} must be smaller than the step count {steps}')
        if not (peak_lr > 0 and final_lr > 0):
            raise ConfigError('Learning rates must be positive')
        parse_scheme(scheme)
        super().__init__(
            mode=mode,
            steps=int(steps),
            batch=int(batch),
            warmup=int(warmup),
            peak_lr=float(peak_lr),
            final_lr=float(final_lr),
            k_train=int(k_train),
            n_points=int(n_points),
            scheme=scheme,
            seed=int(seed),
            resolution=int(resolution),
            max_frequency=int(max_frequency),
            bare_sum=bool(bare_sum),
            model=model
        )

    @classmethod
    def desk(cls, mode: str = SAME_DOMAIN, **overrides: Any) -> TrainConfig:
        """1-D desk-scale run."""

        return cls(mode=mode, **overrides)

    @classmethod
    def full_scale(cls, mode: str = SAME_DOMAIN, **overrides: Any) -> TrainConfig:
        """2-D run with the large architecture."""

        settings = {
            'steps': 20000,
            'batch': 32,
            'warmup': 1000,
            'k_train': 16,
            'n_points': 625,
            'model': ModelConfig(mode=mode, dim=2, embed=144, heads=4, n_layers=2)
        }  # type: dict[str, Any]
        settings.update(overrides)
        return cls(mode=mode, **settings)

    @property
    def dim(self) -> int:
        """Spatial dimension."""

        return self.model.dim

    def sampling(self, seed: int = 0) -> SamplingScheme:
        """Input point scheme with a given seed."""

        return parse_scheme(self.scheme, seed)

    def sampler(self, seed: int = 0) -> RandomFieldSampler:
        """Input field sampler with a given seed."""

        return RandomFieldSampler(self.dim, self.resolution, self.max_frequency, seed=seed)

    def as_dict(self) -> dict[str, Any]:
        """Plain field mapping with the model expanded."""

        out = {k: getattr(self, k) for k in self._fields()}
        out['model'] = self.model.as_dict()
        return out

    def to_json(self) -> str:
        """Serialize."""

        return json.dumps(self.as_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> TrainConfig:
        """Build from JSON text; errors point at the offending key."""

        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f'Invalid training configuration: {e.msg}', text, e.pos) from e
        if not isinstance(data, dict):
            raise ConfigError('Training configuration must be a JSON object', text, 0)
        known = set(cls.__slots__[:-1])
        for key in data:
            if key not in known:
                raise ConfigError(f'Unknown training setting {key!r}', text, max(text.find(f'"{key}"'), 0))
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f'Invalid training settings: {e}') from e


def load_config(path: str) -> TrainConfig:
    """Read a `TrainConfig` from a JSON file."""

    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read training configuration '{path}': {e.strerror or e}") from e
    return TrainConfig.from_json(text)


class Sample(NamedTuple):
    """One training or evaluation function: input tokens, queries and teacher targets."""

    points: FloatArray
    values: FloatArray
    queries: FloatArray
    targets: FloatArray


def build_model(config: ModelConfig, params: ParamDict | None = None, seed: int = 0) -> Model:
    """Model for `config.mode`, freshly initialized when `params` is omitted."""

    cls = QueryModel if config.mode == QUERY else SameDomainModel
    return cls(config, cls.init_params(config, seed) if params is None else params)


def _draw_sample(
    teacher: FourierTeacher,
    sampler: RandomFieldSampler,
    scheme: SamplingScheme,
    n_points: int,
    n_queries: int,
    at_inputs: bool,
    query_seed: int
) -> tuple[SampledFunction, Sample]:
    field = sample_field(sampler)
    domain = field.domain
    points = sample_points(domain, scheme, n_points)
    if at_inputs:
        queries = points
    else:
        queries = np.random.default_rng(query_seed).random((n_queries, domain.dim))
    targets = interpolate_periodic(teacher_apply(field, teacher), queries)
    return field, Sample(points, field(points), queries, targets)


def make_batch(cfg: TrainConfig, teacher: FourierTeacher, step: int) -> list[Sample]:
    """Fresh functions and fresh point clouds for one step; deterministic in `(seed, step)`."""

    rng = np.random.default_rng([cfg.seed, TRAIN_STREAM, step])
    seeds = rng.integers(0, 2 ** 63 - 1, size=(cfg.batch, 3))
    out = []
    for field_seed, point_seed, query_seed in seeds:
        _, sample = _draw_sample(
            teacher,
            cfg.sampler(int(field_seed)),
            cfg.sampling(int(point_seed)),
            cfg.n_points,
            cfg.k_train,
            cfg.mode == SAME_DOMAIN,
            int(query_seed)
        )
        out.append(sample)
    return out


def _predictions(model: Model, tape: Tape, P: Mapping[str, Tensor], sample: Sample) -> list[Tensor]:
    if isinstance(model, QueryModel):
        return model.forward(tape, P, sample.points, sample.values, sample.queries)
    return [model.forward(tape, P, sample.points, sample.values)]


def batch_loss(
    model: Model,
    tape: Tape,
    P: Mapping[str, Tensor],
    batch: Sequence[Sample],
    bare_sum: bool = False
) -> Tensor:
    """Squared error of every prediction in `batch`, divided by the query count unless `bare_sum`."""

    total = None  # type: Tensor | None
    count = 0
    for sample in batch:
        preds = _predictions(model, tape, P, sample)
        rows = np.split(sample.targets, len(preds)) if len(preds) > 1 else [sample.targets]
        for pred, target in zip(preds, rows):
            term = tape.square_error(pred, target)
            total = term if total is None else tape.add(total, term)
        count += len(sample.queries)
    if total is None:
        raise TrainingError('Empty batch')
    return total if bare_sum else tape.scale(total, 1.0 / count)


def loss_value(params: ParamDict, batch: Sequence[Sample], config: ModelConfig, bare_sum: bool = False) -> float:
    """
    Squared error over every query of every function in the batch.

    The sum is divided by the total query count `P K` unless `bare_sum` is set.
    """

    if bare_sum:
        warnings.warn('Bare-sum loss ties the learning rate to the batch size', stacklevel=2)
    model = build_model(config, params)
    tape = Tape(record=False)
    value = float(batch_loss(model, tape, tape.parameters(params), batch, bare_sum).value)
    if not math.isfinite(value):
        raise TrainingError('Loss is not finite')
    return value


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to the peak rate, then cosine decay to the final rate at the last step."""

    if not 0 <= step < max(cfg.steps, 1):
        raise ValueError(f'Step {step} outside [0, {cfg.steps})')
    if step < cfg.warmup:
        return cfg.peak_lr * step / cfg.warmup
    span = cfg.steps - 1 - cfg.warmup
    t = (step - cfg.warmup) / span if span > 0 else 1.0
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


class Adam:
    """Adam with bias correction; moments are kept per parameter name."""

    def __init__(self, params: ParamDict, beta1: float = BETA1, beta2: float = BETA2, eps: float = ADAM_EPS) -> None:
        """Initialize."""

        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: ParamDict, grads: Mapping[str, FloatArray], lr: float) -> ParamDict:
        """One step in parameter insertion order."""

        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        out = []
        for name, value in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            out.append((name, value - lr * m_hat / (np.sqrt(v_hat) + self.eps)))
        return ParamDict(out)

    def state(self) -> dict[str, Any]:
        """Serializable moments and step."""

        return {
            'step': self.step,
            'm': json.loads(ParamDict(self.m).to_json()),
            'v': json.loads(ParamDict(self.v).to_json())
        }

    def load_state(self, state: Mapping[str, Any]) -> None:
        """Restore moments written by `state`."""

        self.step = int(state['step'])
        self.m = dict(ParamDict.from_json(json.dumps(state['m'])).items())
        self.v = dict(ParamDict.from_json(json.dumps(state['v'])).items())


class HistoryRow(NamedTuple):
    """Loss record."""

    step: int
    lr: float
    loss: float


class TrainResult(NamedTuple):
    """Final parameters, loss history and optimizer."""

    params: ParamDict
    history: list[HistoryRow]
    optimizer: Adam


def train(
    cfg: TrainConfig,
    teacher: FourierTeacher,
    params: ParamDict | None = None,
    flags: int = 0
) -> TrainResult:
    """
    Adam over freshly generated batches; deterministic per seed.

    Loss is recorded every ten steps and after the last step.
    """

    if teacher.dim != cfg.dim:
        raise ConfigError(f'{teacher.dim}-D teacher cannot train a {cfg.dim}-D model')
    if cfg.resolution < teacher.min_resolution:
        raise ConfigError(f'Teacher grid {cfg.resolution} is below the required {teacher.min_resolution}')
    model = build_model(cfg.model, params, cfg.seed)
    params = model.params
    optimizer = Adam(params)
    history = []
    for step in range(cfg.steps):
        lr = lr_at(step, cfg)
        batch = make_batch(cfg, teacher, step)
        tape = Tape()
        loss = batch_loss(model, tape, tape.parameters(params), batch, cfg.bare_sum)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError('Loss diverged', step, lr)
        grads = backward_grads(tape, loss)
        try:
            params = optimizer.update(params, grads, lr)
        except ValueError as e:
            raise TrainingError(f'Parameters diverged: {e}', step, lr) from e
        model.params = params
        if step % HISTORY_EVERY == 0 or step == cfg.steps - 1:
            history.append(HistoryRow(step, lr, value))
            logger.info('step %d lr %.3e loss %.6g', step, lr, value)
        if flags & DEBUG:  # pragma: no cover
            print(f'## STEP {step}: loss {value:.6g}, lr {lr:.3e}')
    return TrainResult(params, history, optimizer)


# Evaluation


class Predictor(Protocol):
    """Anything that predicts teacher outputs at query points from an input sample."""

    at_inputs: bool

    def predict(self, field: SampledFunction, points: FloatArray, queries: FloatArray) -> FloatArray:
        """Predictions of shape `(K, n)`."""


class ModelPredictor:
    """A trained model; same-domain models predict at the input points."""

    def __init__(self, model: Model) -> None:
        """Initialize."""

        self.model = model
        self.at_inputs = isinstance(model, SameDomainModel)

    def predict(self, field: SampledFunction, points: FloatArray, queries: FloatArray) -> FloatArray:
        """Predict."""

        values = field(points)
        if isinstance(self.model, QueryModel):
            return self.model.predict(points, values, queries)
        return self.model.predict(points, values)


class TeacherPredictor:
    """The teacher itself."""

    at_inputs = False

    def __init__(self, teacher: FourierTeacher) -> None:
        """Initialize."""

        self.teacher = teacher

    def predict(self, field: SampledFunction, points: FloatArray, queries: FloatArray) -> FloatArray:
        """Predict."""

        return interpolate_periodic(teacher_apply(field, self.teacher), queries)


class ZeroPredictor:
    """Always zero."""

    at_inputs = False

    def predict(self, field: SampledFunction, points: FloatArray, queries: FloatArray) -> FloatArray:
        """Predict."""

        return np.zeros((len(queries), field.channels))


class InterpolationPredictor:
    """
    Same-domain model run on a regular torus grid, interpolated to the queries.

    The input points handed to `predict` are ignored in favor of the grid.
    """

    at_inputs = False

    def __init__(self, model: SameDomainModel, resolution: int) -> None:
        """Initialize."""

        self.model = model
        self.resolution = resolution

    def predict(self, field: SampledFunction, points: FloatArray, queries: FloatArray) -> FloatArray:
        """Predict."""

        domain = Domain(self.model.config.dim, TORUS, field.domain.value_bound)
        nodes = grid_nodes(domain, self.resolution)
        grid = self.model.predict(nodes, field(nodes))
        shape = (self.resolution,) * domain.dim + (grid.shape[1],)
        return interpolate_periodic(grid.reshape(shape), queries)


class Metrics(Immutable):
    """Per-function relative errors with means and 95% half-widths."""

    __slots__ = ('rel_l2', 'rel_linf', 'samples', 'linf_samples', 'l2_half_width', 'linf_half_width', '_hash')

    rel_l2: float
    rel_linf: float
    samples: FloatArray
    linf_samples: FloatArray
    l2_half_width: float
    linf_half_width: float

    def __init__(
        self,
        rel_l2: float,
        rel_linf: float,
        samples: ArrayLike,
        linf_samples: ArrayLike,
        l2_half_width: float,
        linf_half_width: float
    ) -> None:
        """Initialize."""

        super().__init__(
            rel_l2=float(rel_l2),
            rel_linf=float(rel_linf),
            samples=freeze(samples),
            linf_samples=freeze(linf_samples),
            l2_half_width=float(l2_half_width),
            linf_half_width=float(linf_half_width)
        )

    @classmethod
    def from_samples(cls, l2: ArrayLike, linf: ArrayLike) -> Metrics:
        """Means and normal-approximation half-widths of per-function errors."""

        a = np.asarray(l2, dtype=np.float64)
        b = np.asarray(linf, dtype=np.float64)
        if not a.size:
            return cls(math.nan, math.nan, a, b, math.nan, math.nan)
        return cls(float(np.mean(a)), float(np.mean(b)), a, b, _half_width(a), _half_width(b))

    @property
    def median(self) -> float:
        """Median relative L2 error."""

        return float(np.median(self.samples)) if self.samples.size else math.nan


def _half_width(x: FloatArray) -> float:
    if x.size < 2:
        return 0.0
    return float(CONFIDENCE_Z * np.std(x, ddof=1) / math.sqrt(x.size))


def evaluate(
    predictor: Predictor,
    teacher: FourierTeacher,
    n_functions: int,
    n_points: int,
    n_queries: int,
    scheme: SamplingScheme | str = 'uniform',
    seed: int = 0,
    sampler: RandomFieldSampler | None = None
) -> Metrics:
    """
    Relative errors on held-out functions.

    Norms are empirical quadratures over the evaluation points. Functions
    whose targets vanish are skipped with a warning.
    """

    sampler = RandomFieldSampler(teacher.dim) if sampler is None else sampler
    if isinstance(scheme, str):
        scheme = parse_scheme(scheme)
    l2, linf = [], []
    for i in range(n_functions):
        rng = np.random.default_rng([seed, EVAL_STREAM, i])
        field_seed, point_seed, query_seed = (int(s) for s in rng.integers(0, 2 ** 63 - 1, size=3))
        field, sample = _draw_sample(
            teacher,
            sampler.with_seed(field_seed),
            scheme.with_seed(point_seed),
            n_points,
            n_queries,
            predictor.at_inputs,
            query_seed
        )
        target = sample.targets
        pred = np.asarray(predictor.predict(field, sample.points, sample.queries), dtype=np.float64)
        norm = float(np.linalg.norm(target))
        if norm < ZERO_TARGET:
            warnings.warn(f'Skipping held-out function {i}: target is zero', stacklevel=2)
            continue
        err = pred.reshape(target.shape) - target
        l2.append(float(np.linalg.norm(err)) / norm)
        linf.append(float(np.max(np.abs(err))) / float(np.max(np.abs(target))))
    return Metrics.from_samples(l2, linf)


# Checkpoints


def save_checkpoint(path: str, config: ModelConfig, params: ParamDict, optimizer: Adam | None = None) -> None:
    """Write the model settings, parameter manifest and optional optimizer state as JSON."""

    data = {
        'format': CHECKPOINT_FORMAT,
        'model': config.as_dict(),
        'params': json.loads(params.to_json()),
        'optimizer': None if optimizer is None else optimizer.state()
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=1)


def load_checkpoint(path: str) -> tuple[Model, Adam | None]:
    """Rebuild a model, and its optimizer when one was saved."""

    with open(path, encoding='utf-8') as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f'Invalid checkpoint: {e.msg}', text, e.pos) from e
    if not isinstance(data, dict) or data.get('format') != CHECKPOINT_FORMAT:
        raise ConfigError(f"Checkpoint must declare format '{CHECKPOINT_FORMAT}'")
    config = ModelConfig.from_mapping(data['model'])
    params = ParamDict.from_json(json.dumps(data['params']))
    model = build_model(config, params)
    optimizer = None
    if data.get('optimizer') is not None:
        optimizer = Adam(params)
        optimizer.load_state(data['optimizer'])
    return model, optimizer


pickle_register(TrainConfig)
pickle_register(Metrics)
