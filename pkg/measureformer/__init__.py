"""
Measureformer.

Function graph transformers on discrete measures: graph tokenization of
sampled functions, spectral regularization, measure attention and its
query-conditioned product form, a Fourier teacher operator and a small
training and evaluation harness.

MIT License

Copyright (c) 2026 The Measureformer Authors

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
from __future__ import annotations
from .__meta__ import __version__, __version_info__  # noqa: F401
from .attention import SameDomainModel, StackConfig, init_stack, sequence_forward, stack_forward
from .encode import (
    CUBE, TORUS, Domain, SampledFunction, decode_feps, parse_scheme, regularize_rtau, sample_points, token_sequence,
    tokenize
)
from .encode import _grid_kernel, standard_mollifier
from .features import QUERY, SAME_DOMAIN, ModelConfig
from .fourier import FourierTeacher, RandomFieldSampler, sample_field, teacher_apply
from .measure import DiscreteMeasure, marginal, product_measure, pushforward, uniform_measure, w1_distance
from .mf_types import ParamDict
from .product import QueryBatch, QueryModel, cross_attend, product_attend, query_forward, reduced_attend
from .spectral import SmoothClip, SpectralConfig, basis_eigenpairs, k_schedule, project_pk, s_eta_k
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train
from .util import (  # noqa: F401
    DEBUG, ConfigError, DimensionError, GradientError, MeasureError, MeasureformerError, ResolutionError,
    TrainingError, ValueBoundError
)

__all__ = (
    'CUBE', 'DEBUG', 'QUERY', 'SAME_DOMAIN', 'TORUS',
    'ConfigError', 'DimensionError', 'DiscreteMeasure', 'Domain', 'FourierTeacher',
    'GradientError', 'MeasureError', 'MeasureformerError', 'ModelConfig', 'ParamDict',
    'QueryBatch', 'QueryModel', 'RandomFieldSampler', 'ResolutionError', 'SameDomainModel', 'SampledFunction',
    'SmoothClip', 'SpectralConfig', 'StackConfig', 'TrainConfig', 'TrainingError', 'ValueBoundError',
    'basis_eigenpairs', 'cross_attend', 'decode_feps', 'evaluate', 'init_stack', 'k_schedule', 'load_checkpoint',
    'marginal', 'parse_scheme', 'product_attend', 'product_measure', 'project_pk', 'purge',
    'pushforward', 'query_forward', 'reduced_attend', 'regularize_rtau', 's_eta_k', 'sample_field',
    'sample_points', 'save_checkpoint', 'sequence_forward', 'stack_forward', 'teacher_apply', 'token_sequence',
    'tokenize', 'train',
    'uniform_measure', 'w1_distance'
)


def purge() -> None:
    """Clear cached mollifiers, convolution kernels and sine bases."""

    standard_mollifier.cache_clear()
    _grid_kernel.cache_clear()
    basis_eigenpairs.cache_clear()
