# Copyright 2019-2023 The Van Valen Lab at the California Institute of
# Technology (Caltech), with support from the Paul Allen Family Foundation,
# Google, & National Institutes of Health (NIH) under Grant U24CA224309-01.
# All rights reserved.
#
# Licensed under a modified Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.github.com/vanvalenlab/sdlc-sim/LICENSE
#
# The Work provided may be used for non-commercial academic purposes only.
# For any other use of the Work, including commercial use, please contact:
# vanvalenlab@gmail.com
#
# Neither the name of Caltech nor the names of its contributors may be used
# to endorse or promote products derived from this software without specific
# prior written permission.
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================

"""Command-line front end: run, validate, sweep and optimize scenarios"""

import argparse
import logging
import sys

import pandas as pd

from sdlc_sim._version import __version__
from sdlc_sim.engine import NoProgressError
from sdlc_sim.metrics import merge_replications
from sdlc_sim.optimizer import (BudgetExhaustedError, InfeasibleCapacityError,
                                StabilityCriterion, optimize)
from sdlc_sim.scenario import (ScenarioParseError, ScenarioValidationError,
                               build_paper_scenario, feasibility_errors,
                               load_scenario_file, set_parameter,
                               with_project_limit)
from sdlc_sim.simulation import run_replications
from sdlc_sim.utils import results_utils


EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NO_PROGRESS = 2
EXIT_BUDGET_EXHAUSTED = 3

DEFAULT_SEED = 42
DEFAULT_REPLICATIONS = 5


def _load(args):
    if args.scenario is None:
        config = build_paper_scenario()
    else:
        config = load_scenario_file(args.scenario,
                                    check_feasibility=not args.allow_infeasible)
    if getattr(args, 'projects', None) is not None:
        config = with_project_limit(config, args.projects)
    return config


def _seed(args, config):
    if args.seed is not None:
        return args.seed
    return config.seed if config.seed is not None else DEFAULT_SEED


def _replications(args, config):
    if args.replications is not None:
        return args.replications
    if config.replications is not None:
        return config.replications
    return DEFAULT_REPLICATIONS


def _simulate(config, args):
    seed = _seed(args, config)
    stats = run_replications(config, seed, _replications(args, config),
                             parallel=args.parallel, progress=args.progress)
    report = merge_replications(stats, config, seed)
    results_utils.write_report(report, args.out)
    results_utils.write_timeseries(stats[0], args.out)
    sys.stdout.write(results_utils.format_summary(report))
    return EXIT_OK


def cmd_paper(args):
    """Runs the built-in Waterfall scenario."""
    return _simulate(_load(args), args)


def cmd_run(args):
    return _simulate(_load(args), args)


def cmd_validate(args):
    """Validates a scenario file without writing anything."""
    _load(args)
    sys.stdout.write('{}: valid\n'.format(args.scenario))
    return EXIT_OK


def _parse_values(text):
    values = [v.strip() for v in text.split(',') if v.strip()]
    if not values:
        raise ValueError('--values must list at least one value')
    return [float(v) for v in values]


def _sweep_row(value, replication, status, summary=None, pool_names=()):
    row = {'value': value, 'replication': replication, 'status': status}
    summary = summary or {}
    for key in ('received', 'delivered', 'arrival_art_mean',
                'delivery_art_mean', 'flow_time_mean'):
        row[key] = summary.get(key)
    for name in pool_names:
        pool = summary.get('pools', {}).get(name, {})
        row['avg_busy.' + name] = pool.get('avg_busy')
        row['mean_wait.' + name] = pool.get('mean_wait')
    return row


def cmd_sweep(args):
    """Runs every value of one scenario parameter.

    Writes one `sweep.csv` row per value and replication. Values that make
    the scenario infeasible or block a run are kept with their status.
    """
    values = _parse_values(args.values)
    base = _load(args)
    seed = _seed(args, base)
    replications = _replications(args, base)

    rows = []
    for value in values:
        config = set_parameter(base, args.param, value)
        if feasibility_errors(config):
            logging.warning('%s=%s is infeasible', args.param, value)
            rows.extend(_sweep_row(value, i, 'infeasible', pool_names=config.pool_names)
                        for i in range(replications))
            continue
        try:
            stats = run_replications(config, seed, replications,
                                     parallel=args.parallel, progress=args.progress)
        except NoProgressError as err:
            logging.warning('%s=%s made no progress: %s', args.param, value, err)
            rows.extend(_sweep_row(value, i, 'no_progress', pool_names=config.pool_names)
                        for i in range(replications))
            continue
        rows.extend(_sweep_row(value, s.replication, 'ok', s.summary(), config.pool_names)
                    for s in stats)

    df_sweep = pd.DataFrame(rows)
    path = results_utils.write_sweep(df_sweep, args.out)
    sys.stdout.write('Wrote {} rows to {}\n'.format(len(df_sweep), path))
    return EXIT_OK


def cmd_optimize(args):
    """Searches the smallest capacities meeting the stability criterion."""
    config = _load(args)
    criterion = StabilityCriterion(
        epsilon=args.epsilon,
        max_wait=args.max_wait,
        replications=args.replications or StabilityCriterion.replications,
        projects_per_rep=args.projects or StabilityCriterion.projects_per_rep)
    seed = _seed(args, config)

    result = optimize(config, criterion, master_seed=seed,
                      max_evaluations=args.max_evaluations,
                      parallel=args.parallel, progress=args.progress)
    results_utils.write_optimization(result, args.out)

    best = next(e for e in result.evaluations if e.capacities == result.capacities)
    lines = ['Capacities: ' + ', '.join(
        '{}={}'.format(name, c) for name, c in zip(config.pool_names, result.capacities))]
    lines.append('Evaluations: {} ({} simulated projects)'.format(
        len(result.evaluations), result.total_projects))
    for evaluation in result.evaluations:
        lines.append('  {} {}'.format(
            list(evaluation.capacities), 'pass' if evaluation.passed else
            'fail: ' + '; '.join(evaluation.reasons)))
    lines.append('Arrival ArT mean: {:.2f}  Delivery ArT mean: {:.2f}'.format(
        best.metrics['arrival_art_mean'], best.metrics['delivery_art_mean']))
    for name in config.pool_names:
        lines.append('  {}: utilization {:.3f}, mean wait {:.3f}'.format(
            name, best.metrics['utilization'][name], best.metrics['mean_wait'][name]))
    sys.stdout.write('\n'.join(lines) + '\n')
    return EXIT_OK


def _add_scenario(parser, required):
    parser.add_argument('--scenario', required=required, default=None,
                        help='Scenario JSON file.' + ('' if required else
                             ' Defaults to the built-in Waterfall scenario.'))
    parser.add_argument('--allow-infeasible', action='store_true',
                        help='Skip the demand <= capacity check.')


def _add_common(parser):
    parser.add_argument('--seed', type=int, default=None,
                        help='Master seed (default: scenario seed, else 42).')
    parser.add_argument('--replications', type=int, default=None,
                        help='Number of replications.')
    parser.add_argument('--projects', type=int, default=None,
                        help='Projects per replication.')
    parser.add_argument('--out', default='results',
                        help='Output directory (default: results).')
    parser.add_argument('--parallel', action='store_true',
                        help='Run replications in parallel.')
    parser.add_argument('--progress', action='store_true',
                        help='Show progress bars on stderr.')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='sdlc-sim',
        description='Discrete-event simulation of software development '
                    'life cycles.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Log debug output.')
    subparsers = parser.add_subparsers(dest='command', required=True)

    paper = subparsers.add_parser('paper', help='Run the built-in Waterfall scenario.')
    _add_common(paper)
    paper.set_defaults(func=cmd_paper, scenario=None, allow_infeasible=False)

    run = subparsers.add_parser('run', help='Run a scenario file.')
    _add_scenario(run, required=True)
    _add_common(run)
    run.set_defaults(func=cmd_run)

    validate = subparsers.add_parser('validate', help='Validate a scenario file.')
    _add_scenario(validate, required=True)
    validate.set_defaults(func=cmd_validate)

    sweep = subparsers.add_parser('sweep', help='Sweep one scenario parameter.')
    _add_scenario(sweep, required=False)
    _add_common(sweep)
    sweep.add_argument('--param', required=True,
                       help='Dotted parameter path, e.g. pools.programmers.capacity.')
    sweep.add_argument('--values', required=True,
                       help='Comma-separated values.')
    sweep.set_defaults(func=cmd_sweep)

    opt = subparsers.add_parser('optimize', help='Find minimal stable capacities.')
    _add_scenario(opt, required=False)
    _add_common(opt)
    opt.add_argument('--epsilon', type=float, default=StabilityCriterion.epsilon)
    opt.add_argument('--max-wait', type=float, default=StabilityCriterion.max_wait)
    opt.add_argument('--max-evaluations', type=int, default=200)
    opt.set_defaults(func=cmd_optimize)
    return parser


def main(argv=None):
    """Entry point of the `sdlc-sim` command.

    Returns:
        int: 0 on success, 1 on configuration errors, 2 when a run made no
        progress and 3 when the optimizer ran out of evaluations.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:
        # argparse exits with 2 on usage errors, 0 for --help and --version
        return EXIT_CONFIG_ERROR if err.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except (ScenarioParseError, ScenarioValidationError, InfeasibleCapacityError,
            KeyError, ValueError, OSError) as err:
        sys.stderr.write('error: {}\n'.format(err))
        return EXIT_CONFIG_ERROR
    except NoProgressError as err:
        sys.stderr.write('no progress: {}\n'.format(err))
        return EXIT_NO_PROGRESS
    except BudgetExhaustedError as err:
        sys.stderr.write('budget exhausted: {}\n'.format(err))
        return EXIT_BUDGET_EXHAUSTED


if __name__ == '__main__':
    sys.exit(main())
