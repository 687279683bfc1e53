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

"""Greedy search for the smallest pool capacities that keep pace with arrivals"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

from sdlc_sim.engine import NoProgressError
from sdlc_sim.metrics import art_mean
from sdlc_sim.scenario import (min_feasible_capacities, with_capacities,
                               with_project_limit)
from sdlc_sim.simulation import run_replications


class BudgetExhaustedError(RuntimeError):
    """The search evaluated more capacity vectors than allowed.

    Args:
        message (str): Description.
        evaluations (list): `Evaluation` log up to the point of failure.
    """

    def __init__(self, message, evaluations=None):
        super(BudgetExhaustedError, self).__init__(message)
        self.evaluations = list(evaluations or [])


class InfeasibleCapacityError(ValueError):
    """A capacity is below the largest demand placed on its pool."""


@dataclass(frozen=True)
class StabilityCriterion:
    """When a capacity vector counts as keeping pace with arrivals.

    Args:
        epsilon (float): Allowed relative excess of the mean delivery ArT
            over the mean arrival ArT.
        max_wait (float): Largest allowed mean queue wait in days, per pool.
        replications (int): Replications per evaluation.
        projects_per_rep (int): Projects per replication.
    """
    epsilon: float = 0.05
    max_wait: float = 1.0
    replications: int = 20
    projects_per_rep: int = 500

    def __post_init__(self):
        if self.epsilon < 0 or self.max_wait < 0:
            raise ValueError('epsilon and max_wait must be non-negative, got '
                             '{} and {}.'.format(self.epsilon, self.max_wait))
        if self.replications < 1:
            raise ValueError('replications must be at least 1, got '
                             '{}.'.format(self.replications))
        if self.projects_per_rep < 10:
            raise ValueError('projects_per_rep must be at least 10, got '
                             '{}.'.format(self.projects_per_rep))


@dataclass
class Evaluation:
    capacities: tuple
    passed: bool
    reasons: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


@dataclass
class OptimizationResult:
    capacities: tuple
    evaluations: list
    total_projects: int

    def to_dict(self):
        return {
            'capacities': list(self.capacities),
            'evaluations': [dict(asdict(e), capacities=list(e.capacities))
                            for e in self.evaluations],
            'total_projects': self.total_projects,
        }


def _check_feasible(config, capacities):
    floor = min_feasible_capacities(config)
    if len(capacities) != len(floor):
        raise ValueError('Expected {} capacities, got {}.'.format(
            len(floor), len(capacities)))
    below = [(name, c, f) for name, c, f in zip(config.pool_names, capacities, floor)
             if c < f]
    if below:
        raise InfeasibleCapacityError(
            'Capacities below the largest demand: {}'.format(
                ', '.join('{} {} < {}'.format(*b) for b in below)))


def is_stable(config, capacities, criterion, master_seed, parallel=False):
    """Checks whether `capacities` keep delivery pace with arrivals.

    Every replication uses the same `master_seed`, so candidates are
    compared on common random numbers. The vector passes when every
    replication delivers all its projects, the mean delivery ArT is at most
    ``(1 + epsilon)`` times the mean arrival ArT, and every pool's mean
    queue wait is at most `max_wait`.

    Args:
        config (ScenarioConfig): Scenario to evaluate.
        capacities (tuple): Capacity per pool.
        criterion (StabilityCriterion): Pass thresholds.
        master_seed (int): Master seed of the replications.
        parallel (bool): Run replications in parallel.

    Raises:
        InfeasibleCapacityError: a capacity is below its pool's largest demand.

    Returns:
        Evaluation: Pass or fail with the failed conditions and the
        metrics they were read from.
    """
    capacities = tuple(int(c) for c in capacities)
    _check_feasible(config, capacities)
    candidate = with_project_limit(with_capacities(config, capacities),
                                   criterion.projects_per_rep)

    try:
        stats = run_replications(candidate, master_seed, criterion.replications,
                                 parallel=parallel)
    except NoProgressError as err:
        return Evaluation(capacities, False, ['no progress: {}'.format(err)])

    arrival = [art_mean(sorted(t for ts in s.arrival_times_per_class for t in ts))
               for s in stats]
    delivery = [art_mean(sorted(t for ts in s.delivery_times_per_class for t in ts))
                for s in stats]
    metrics = {
        'arrival_art_mean': float(np.mean([a for a in arrival if a is not None])),
        'delivery_art_mean': (float(np.mean([d for d in delivery if d is not None]))
                              if any(d is not None for d in delivery) else None),
        'mean_wait': {name: float(np.mean([s.pools[i].mean_wait for s in stats]))
                      for i, name in enumerate(config.pool_names)},
        'utilization': {name: float(np.mean([s.pools[i].busy_integral /
                                             (s.horizon * s.pools[i].capacity)
                                             if s.horizon and s.pools[i].capacity
                                             else 0.0 for s in stats]))
                        for i, name in enumerate(config.pool_names)},
    }

    reasons = []
    short = [s.replication for s in stats if s.delivered < criterion.projects_per_rep]
    if short:
        reasons.append('replications {} did not deliver every project'.format(short))
    limit = metrics['arrival_art_mean'] * (1 + criterion.epsilon)
    if metrics['delivery_art_mean'] is None or metrics['delivery_art_mean'] > limit:
        reasons.append('delivery ArT {} exceeds {:.6g}'.format(
            metrics['delivery_art_mean'], limit))
    for name, wait in metrics['mean_wait'].items():
        if wait > criterion.max_wait:
            reasons.append('queue wait {:.6g} at {!r} exceeds {:.6g}'.format(
                wait, name, criterion.max_wait))

    return Evaluation(capacities, not reasons, reasons, metrics)


def optimize(config, criterion=None, master_seed=42, max_evaluations=200,
             parallel=False, progress=False):
    """Finds a locally minimal stable capacity vector.

    The search starts at the feasibility floor. While the current vector
    fails, the pool with the largest mean queue wait grows by one unit
    (ties go to the lowest pool index). Once a vector passes, single-unit
    decrements are tried on the largest pools first, keeping any that pass,
    until no decrement passes or stays feasible.

    Args:
        config (ScenarioConfig): Scenario to optimize.
        criterion (StabilityCriterion): Pass thresholds, defaults to
            `StabilityCriterion()`.
        master_seed (int): Master seed shared by every evaluation.
        max_evaluations (int): Largest number of distinct vectors to simulate.
        parallel (bool): Run replications in parallel.
        progress (bool): Show a progress bar over evaluations.

    Raises:
        BudgetExhaustedError: more than `max_evaluations` vectors were needed.

    Returns:
        OptimizationResult: The capacities and the evaluation log.
    """
    criterion = criterion or StabilityCriterion()
    floor = min_feasible_capacities(config)
    cache = {}
    evaluations = []
    bar = tqdm(total=max_evaluations, disable=not progress)

    def evaluate(capacities):
        capacities = tuple(capacities)
        if capacities not in cache:
            if len(evaluations) >= max_evaluations:
                bar.close()
                raise BudgetExhaustedError(
                    'No stable capacities found within {} evaluations.'.format(
                        max_evaluations), evaluations)
            evaluation = is_stable(config, capacities, criterion, master_seed,
                                   parallel=parallel)
            logging.info('Capacities %s %s %s', capacities,
                         'passed' if evaluation.passed else 'failed',
                         '; '.join(evaluation.reasons))
            cache[capacities] = evaluation
            evaluations.append(evaluation)
            bar.update(1)
        return cache[capacities]

    current = tuple(floor)
    evaluation = evaluate(current)
    while not evaluation.passed:
        waits = [evaluation.metrics.get('mean_wait', {}).get(name, 0.0)
                 for name in config.pool_names]
        grow = int(np.argmax(waits))
        current = current[:grow] + (current[grow] + 1,) + current[grow + 1:]
        evaluation = evaluate(current)

    reduced = True
    while reduced:
        reduced = False
        for i in sorted(range(len(current)), key=lambda i: (-current[i], i)):
            if current[i] - 1 < floor[i]:
                continue
            candidate = current[:i] + (current[i] - 1,) + current[i + 1:]
            if evaluate(candidate).passed:
                current = candidate
                reduced = True
                break

    bar.close()
    return OptimizationResult(
        capacities=current,
        evaluations=evaluations,
        total_projects=(len(evaluations) * criterion.replications *
                        criterion.projects_per_rep),
    )
