"""CSV tables with a reproducibility header, and SVG figures."""
from __future__ import annotations
import csv
import hashlib
import json
import math
from pathlib import Path
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
from typing import Any, Mapping, Sequence  # noqa: E402

__all__ = (
    'Table',
    'config_hash',
    'plot_svg',
    'write_csv'
)

HASH_PREFIX = 16

LINE = 'line'
LOGLOG = 'loglog'
SEMILOGY = 'semilogy'
BAR = 'bar'
PLOT_KINDS = (LINE, LOGLOG, SEMILOGY, BAR)


class Table:
    """Named columns and rows of plain values."""

    def __init__(self, columns: Sequence[str], rows: Sequence[Sequence[Any]] = ()) -> None:
        """Initialize."""

        self.columns = list(columns)
        self.rows = []  # type: list[list[Any]]
        for row in rows:
            self.add(*row)

    def add(self, *row: Any) -> None:
        """Append a row."""

        if len(row) != len(self.columns):
            raise ValueError(f'Row of length {len(row)} does not match {len(self.columns)} columns')
        self.rows.append(list(row))

    def column(self, name: str) -> list[Any]:
        """Values of one column."""

        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def __len__(self) -> int:
        """Row count."""

        return len(self.rows)


def config_hash(settings: Mapping[str, Any]) -> str:
    """Leading hex digits of the SHA-256 of canonical JSON."""

    text = json.dumps(settings, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:HASH_PREFIX]


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, table: Table, settings: Mapping[str, Any], seed: int) -> None:
    """Header comment `# config_hash=... seed=...`, the column row, then the rows."""

    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(f'# config_hash={config_hash(settings)} seed={seed}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])


def plot_svg(
    path: str | Path,
    table: Table,
    x: str,
    ys: Sequence[str],
    kind: str = LINE,
    title: str = '',
    reference: Sequence[float] | None = None
) -> None:
    """
    Plot columns `ys` against `x` and save as SVG.

    `bar` draws one group per row labelled by `x`; `reference` adds a dashed
    comparison curve over the same abscissae.
    """

    if kind not in PLOT_KINDS:
        raise ValueError(f'Unknown plot kind {kind!r}')
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = table.column(x)
    if kind == BAR:
        width = 0.8 / max(len(ys), 1)
        for i, name in enumerate(ys):
            ax.bar([j + i * width for j in range(len(xs))], table.column(name), width=width, label=name)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(xs))])
        ax.set_xticklabels([str(v) for v in xs])
    else:
        draw = {LINE: ax.plot, LOGLOG: ax.loglog, SEMILOGY: ax.semilogy}[kind]
        for name in ys:
            vals = [v if isinstance(v, (int, float)) and math.isfinite(v) else math.nan for v in table.column(name)]
            draw(xs, vals, 'o-', label=name)
        if reference is not None:
            draw(xs, list(reference), 'k--', label='reference')
    ax.set_xlabel(x)
    if title:
        ax.set_title(title)
    ax.grid(True, which='both', alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(str(path), format='svg')
    plt.close(fig)
