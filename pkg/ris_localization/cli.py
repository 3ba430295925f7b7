import argparse
import logging
import sys
import time
from pathlib import Path

import yaml
from iblutil.util import setup_logger

from ris_localization.experiments import (
    SweepSpec,
    complexity_report,
    placement_heatmap,
    placement_lattice,
    run_sweep,
)
from ris_localization.functions.errors import ConfigError
from ris_localization.functions.utils import load_config

logger = logging.getLogger('ris_localization')

COMMANDS = ('run', 'heatmap', 'complexity', 'validate')


def parse_config(path, seed=None):
    """
    Read and validate a run configuration file on top of the packaged defaults.

    Parameters
    ----------
    path: str, pathlib.Path or None
        YAML configuration, the packaged defaults alone if None
    seed: int or None
        Overrides experiment.seed

    Returns
    -------
    RunConfig
    """
    overrides = {'experiment': {'seed': seed}} if seed is not None else None
    return load_config(path, overrides=overrides)


def _write_summary(path, config, command, timings, elapsed):
    with open(path, 'w') as summary:
        summary.write(f'command: {command}\n')
        summary.write(f'total wall-clock: {elapsed:.3f} s\n\n')
        summary.write('resolved configuration:\n')
        summary.write(yaml.safe_dump(config.to_dict(), default_flow_style=None, sort_keys=False))
        if timings:
            summary.write('\nwall-clock per sweep point:\n')
            for value, seconds in timings.items():
                summary.write(f'  {value}: {seconds:.3f} s\n')


def run(config, command='run', out=None):
    """
    Execute one subcommand with a validated configuration and write its outputs.

    Parameters
    ----------
    config: RunConfig
    command: str
        run, heatmap, complexity or validate
    out: str, pathlib.Path or None
        Output directory, config.output.directory if None

    Returns
    -------
    int
        Exit status, 0 on success
    """
    if command not in COMMANDS:
        logger.error(f'Unknown command {command}, options are {list(COMMANDS)}')
        return 2
    if command == 'validate':
        logger.info('Configuration is valid')
        return 0

    output_dir = Path(out if out is not None else config.output.directory)
    prefix = config.output.prefix
    start = time.perf_counter()
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        if command == 'complexity':
            experiment = config.experiment
            table = complexity_report(experiment.complexity_n_ris, config.waveform.n_subcarriers,
                                      experiment.complexity_n_blocks)
            table.to_csv(output_dir.joinpath(f'{prefix}_complexity.csv'), index=False)
            timings = {}
        else:
            if command == 'run':
                result = run_sweep(SweepSpec.from_config(config))
            else:
                experiment = config.experiment
                grid = placement_lattice(experiment.heatmap_extent, experiment.lattice_step)
                result = placement_heatmap(grid, config)
            result.to_csv(output_dir.joinpath(f'{prefix}_results.csv'))
            if config.output.save_trials:
                result.trials.to_csv(output_dir.joinpath(f'{prefix}_trials.csv'), index=False, float_format='%.9g')
            timings = result.timings
        _write_summary(output_dir.joinpath(f'{prefix}_summary.txt'), config, command, timings,
                       time.perf_counter() - start)
    except ConfigError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 1
    except OSError as e:
        logger.error(f'Cannot write results to {output_dir}: {e}')
        return 1
    logger.info(f'{command} finished in {time.perf_counter() - start:.2f} s, results in {output_dir}')
    return 0


def _parser():
    parser = argparse.ArgumentParser(prog='ris-localization',
                                     description='Monte Carlo simulation of RIS-aided mmWave localization')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command, text in [('run', 'run the configured sweep'), ('heatmap', 'RIS placement heatmap'),
                          ('complexity', 'complexity table of the recovery algorithms'),
                          ('validate', 'check the configuration and exit')]:
        sub = subparsers.add_parser(command, help=text)
        sub.add_argument('--config', default=None, help='YAML configuration file')
        sub.add_argument('--seed', type=int, default=None, help='overrides experiment.seed')
        sub.add_argument('--out', default=None, help='output directory, overrides output.directory')
        sub.add_argument('--verbose', action='store_true', help='debug logging')
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    setup_logger('ris_localization', level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = parse_config(args.config, seed=args.seed)
    except ConfigError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 1
    return run(config, args.command, out=args.out)


if __name__ == '__main__':
    sys.exit(main())
