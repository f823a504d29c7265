"""Utility."""
from __future__ import annotations
import re

DEBUG = 0x00001

RE_SOURCE_LINE_SPLIT = re.compile(r'(?:\r\n|(?!\r\n)[\n\r])|$')


class MeasureformerError(Exception):
    """Base error for the package."""


class MeasureError(MeasureformerError):
    """Invalid measure data."""


class DimensionError(MeasureError):
    """Shapes or dimensions do not agree."""


class ValueBoundError(MeasureformerError):
    """Token values fall outside `[-L, L]`."""


class ResolutionError(MeasureformerError):
    """Grid too coarse for the requested operation."""


class GradientError(MeasureformerError):
    """Invalid backward pass or gradient check."""


class TrainingError(MeasureformerError):
    """Training diverged."""

    def __init__(self, msg: str, step: int | None = None, lr: float | None = None) -> None:
        """Initialize."""

        self.step = step
        self.lr = lr
        if step is not None:
            msg = f'{msg} (step {step}, lr {lr:.3e})' if lr is not None else f'{msg} (step {step})'
        super().__init__(msg)


class ConfigError(MeasureformerError):
    """Invalid configuration."""

    def __init__(self, msg: str, source: str | None = None, index: int | None = None) -> None:
        """Initialize."""

        self.line = None  # type: int | None
        self.col = None  # type: int | None
        self.context = None  # type: str | None

        if source is not None and index is not None:
            self.context, self.line, self.col = get_source_context(source, index)
            msg = f'{msg}\n  line {self.line}:\n{self.context}'

        super().__init__(msg)


def get_source_context(source: str, index: int) -> tuple[str, int, int]:
    """
    Render the line holding `index` with a marker and a caret under the column.

    Neighbouring lines are shown indented so a broken JSON config reads in place.
    """

    index = max(0, min(index, len(source)))
    last = 0
    current_line = 1
    col = 1
    line = 1
    marked = False
    text = []  # type: list[str]

    for m in RE_SOURCE_LINE_SPLIT.finditer(source):
        linetext = source[last:m.start(0)]
        if text:
            text.append('\n')
        if not marked and index <= m.start(0):
            marked = True
            col = index - last + 1
            line = current_line
            text.append(f'--> {linetext}\n')
            text.append(' ' * (col + 3) + '^')
        else:
            text.append(f'    {linetext}')
        current_line += 1
        last = m.end(0)
        if not m.group(0):
            break

    return ''.join(text), line, col
