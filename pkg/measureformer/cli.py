"""
Command line runner.

Every command writes `<command>.csv` and, where a figure applies,
`<command>.svg` into the output directory. Exit status is 0 when every
embedded check passes, 1 when one fails and 2 for bad input.
"""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence
from .__meta__ import __version__
from .experiments import COMMANDS, Outcome, resolve_settings, run_experiment, summarize
from .mf_types import Immutable, pickle_register
from .report import plot_svg, write_csv
from .util import ConfigError, MeasureformerError

__all__ = (
    'EXIT_BAD_INPUT',
    'EXIT_FAILED',
    'EXIT_OK',
    'ExperimentSpec',
    'main',
    'run'
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2


class ExperimentSpec(Immutable):
    """Command, configuration file, output directory, seed and run flags."""

    __slots__ = ('command', 'config', 'out', 'seed', 'force', 'full_scale', '_hash')

    command: str
    config: str | None
    out: str
    seed: int
    force: bool
    full_scale: bool

    def __init__(
        self,
        command: str,
        config: str | None = None,
        out: str = 'results',
        seed: int = 0,
        force: bool = False,
        full_scale: bool = False
    ) -> None:
        """Initialize."""

        if command not in COMMANDS:
            raise ConfigError(f"Unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f'Seed {seed} is not an unsigned 64-bit integer')
        super().__init__(
            command=command,
            config=config,
            out=str(out),
            seed=int(seed),
            force=bool(force),
            full_scale=bool(full_scale)
        )


def _write(spec: ExperimentSpec, outcome: Outcome, settings: dict[str, Any]) -> None:
    out = Path(spec.out)
    hashed = {'command': spec.command, 'full_scale': spec.full_scale, **settings}
    write_csv(out / f'{spec.command}.csv', outcome.table, hashed, spec.seed)
    if outcome.plot is not None and len(outcome.table):
        p = outcome.plot
        plot_svg(out / f'{spec.command}.svg', outcome.table, p.x, p.ys, p.kind, p.title, p.reference)


def run(command: str, spec: ExperimentSpec) -> int:
    """Run one experiment and write its artifacts; returns the exit status."""

    try:
        if command != spec.command:
            raise ConfigError(f'Command {command!r} does not match the experiment {spec.command!r}')
        text = None
        if spec.config is not None:
            try:
                text = Path(spec.config).read_text(encoding='utf-8')
            except OSError as e:
                raise ConfigError(f"Cannot read configuration '{spec.config}': {e}") from e
        settings = resolve_settings(command, text)
        out = Path(spec.out)
        target = out / f'{command}.csv'
        if target.exists() and not spec.force:
            raise ConfigError(f"'{target}' exists; pass --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
        outcome = run_experiment(command, settings, spec.seed, out, spec.full_scale)
    except ConfigError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_BAD_INPUT
    except MeasureformerError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_FAILED

    _write(spec, outcome, settings)
    for line in summarize(outcome):
        print(line)
    return EXIT_OK if all(c.passed for c in outcome.checks) else EXIT_FAILED


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='measureformer',
        description='Function graph transformer experiments.'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument(
        'command',
        choices=list(COMMANDS),
        metavar='command',
        help='One of: ' + ', '.join(COMMANDS)
    )
    parser.add_argument('--config', default=None, help='JSON file overriding the command defaults')
    parser.add_argument('--out', default='results', help='Output directory (default: results)')
    parser.add_argument('--seed', type=int, default=0, help='Unsigned 64-bit seed (default: 0)')
    parser.add_argument('--force', action='store_true', help='Overwrite existing artifacts')
    parser.add_argument('--full-scale', action='store_true', help='Use the 2-D configuration')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point."""

    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        # Help and version exit cleanly; argparse errors are bad input.
        return EXIT_OK if not e.code else EXIT_BAD_INPUT

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(levelname)s %(name)s: %(message)s'
    )
    try:
        spec = ExperimentSpec(args.command, args.config, args.out, args.seed, args.force, args.full_scale)
    except ConfigError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_BAD_INPUT
    return run(args.command, spec)


pickle_register(ExperimentSpec)
