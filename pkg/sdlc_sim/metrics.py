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

"""Run statistics, replication aggregation and analytic oracles"""

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from sdlc_sim._version import __version__
from sdlc_sim.scenario import dump_scenario
from sdlc_sim.stochastic import moments


UTILIZATION_CAPTION = (
    'avg_busy is the time-average of busy units, utilization divides it by '
    'the pool capacity and avg_demand adds queued requested units; none of '
    'them is a head-count estimate.')


class ZeroHorizonError(ValueError):
    """A time average was requested over an empty horizon."""


class MixedConfigsError(ValueError):
    """Replications from different scenarios cannot be merged."""


@dataclass
class PoolStats:
    name: str
    capacity: int
    busy_integral: float
    demand_integral: float
    total_wait: float
    grants: int
    series: list = field(default_factory=list)

    @property
    def mean_wait(self):
        """Mean time a granted request spent in the queue."""
        return self.total_wait / self.grants if self.grants else 0.0


@dataclass
class RunStats:
    """Counters and integrals of one replication.

    Time averages use `horizon`, the time of the last dispatched event.
    """
    replication: int
    seed: int
    config_digest: str
    class_names: List[str]
    received_per_class: List[int]
    delivered_per_class: List[int]
    arrival_times_per_class: List[List[float]]
    delivery_times_per_class: List[List[float]]
    flow_times_per_class: List[List[float]]
    rework_per_class: List[int]
    pools: List[PoolStats]
    horizon: float
    trace_digest: str
    dispatch_count: int
    termination: str
    in_system: int = 0

    @property
    def received(self):
        return sum(self.received_per_class)

    @property
    def delivered(self):
        return sum(self.delivered_per_class)

    @property
    def busy_integral_per_pool(self):
        return [pool.busy_integral for pool in self.pools]

    @property
    def demand_integral_per_pool(self):
        return [pool.demand_integral for pool in self.pools]

    def summary(self):
        """Headline metrics of this replication as a JSON-ready dict."""
        arrivals = sorted(t for times in self.arrival_times_per_class for t in times)
        deliveries = sorted(t for times in self.delivery_times_per_class for t in times)
        flows = [t for times in self.flow_times_per_class for t in times]

        classes = {}
        for c, name in enumerate(self.class_names):
            classes[name] = {
                'received': self.received_per_class[c],
                'delivered': self.delivered_per_class[c],
                'arrival_art_mean': art_mean(self.arrival_times_per_class[c]),
                'delivery_art_mean': art_mean(self.delivery_times_per_class[c]),
                'flow_time_mean': _mean_or_none(self.flow_times_per_class[c]),
                'rework': self.rework_per_class[c],
            }

        pools = {}
        for pool in self.pools:
            if self.horizon > 0:
                avg_busy, utilization, avg_demand = busy_average(pool, self.horizon)
            else:
                avg_busy, utilization, avg_demand = 0.0, 0.0, 0.0
            pools[pool.name] = {
                'capacity': pool.capacity,
                'avg_busy': avg_busy,
                'utilization': utilization,
                'avg_demand': avg_demand,
                'mean_wait': pool.mean_wait,
                'grants': pool.grants,
            }

        return {
            'replication': self.replication,
            'termination': self.termination,
            'horizon': self.horizon,
            'dispatch_count': self.dispatch_count,
            'trace_digest': self.trace_digest,
            'received': self.received,
            'delivered': self.delivered,
            'in_system': self.in_system,
            'arrival_art_mean': art_mean(arrivals),
            'delivery_art_mean': art_mean(deliveries),
            'flow_time_mean': _mean_or_none(flows),
            'classes': classes,
            'pools': pools,
        }


@dataclass
class Report:
    """Replication summaries and their cross-replication aggregate."""
    scenario: dict
    seed: int
    replications: list
    aggregate: dict
    version: str = __version__

    def to_dict(self):
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'replications': self.replications,
            'aggregate': self.aggregate,
            'version': self.version,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + '\n'

    def metric(self, path):
        """Cross-replication mean of the metric at dotted `path`."""
        return self.aggregate[path]['mean']


def _mean_or_none(values):
    return float(np.mean(values)) if len(values) else None


def config_digest(config):
    """Short hash identifying a scenario."""
    return hashlib.blake2b(dump_scenario(config).encode('utf-8'),
                           digest_size=8).hexdigest()


def art_mean(timestamps):
    """Mean gap between consecutive timestamps.

    Args:
        timestamps (list): Event times in ascending order.

    Returns:
        float: The mean gap, or `None` for fewer than two timestamps.
    """
    if len(timestamps) < 2:
        return None
    gaps = np.diff(np.asarray(timestamps, dtype=float))
    if np.any(gaps < 0):
        raise ValueError('Timestamps must be sorted in ascending order.')
    return float(gaps.mean())


def busy_average(pool, horizon):
    """Time averages of a pool over `[0, horizon]`.

    Args:
        pool: Any object with `capacity`, `busy_integral` and
            `demand_integral`, e.g. `PoolStats` or `ResourcePool`.
        horizon (float): Length of the observation window.

    Raises:
        ZeroHorizonError: `horizon` is not positive.

    Returns:
        (float, float, float): Average busy units, busy fraction of the
        capacity and average busy plus queued units.
    """
    if horizon <= 0:
        raise ZeroHorizonError('Cannot average over a horizon of {}.'.format(horizon))
    avg_busy = pool.busy_integral / horizon
    utilization = avg_busy / pool.capacity if pool.capacity else 0.0
    return avg_busy, utilization, pool.demand_integral / horizon


def flow_time_mean(entities):
    """Mean time in system of the delivered `entities`, or `None`."""
    return _mean_or_none([e.delivered_at - e.created_at for e in entities
                          if e.delivered_at is not None])


def expected_phase_visits(q, n_phases=5):
    """Expected number of visits to each phase under the rework chain.

    After phase `i` the project moves on with probability ``1 - q`` and goes
    back to phase ``max(i - 1, 1)`` with probability `q`. The visit counts
    solve ``v = e1 + P^T v`` over the transient phases.

    Args:
        q (float): Error probability in `[0, 1)`.
        n_phases (int): Length of the phase chain.

    Returns:
        numpy.array: Expected visits to phases 1 through `n_phases`.
    """
    if not 0 <= q < 1:
        raise ValueError('Error probability must be in [0, 1), got {}.'.format(q))
    transitions = np.zeros((n_phases, n_phases))
    for i in range(n_phases):
        if i + 1 < n_phases:
            transitions[i, i + 1] += 1 - q
        transitions[i, max(i - 1, 0)] += q
    start = np.zeros(n_phases)
    start[0] = 1
    return np.linalg.solve(np.eye(n_phases) - transitions.T, start)


def littles_law_expectations(config):
    """Expected average busy units per pool when no capture waits.

    ``L_p = lambda * sum_c mix_c * sum_i v_i(q_c) * demand_ci * E[duration_ci]``
    over the phases `i` that use pool `p`.

    Returns:
        dict: Pool name to expected average busy units.
    """
    arrival_rate = 1 / moments(config.arrival)[0]
    expected = dict.fromkeys(config.pool_names, 0.0)
    n_phases = len(config.phases)
    for c, project_class in enumerate(config.classes):
        visits = expected_phase_visits(project_class.error_prob, n_phases)
        for i, phase in enumerate(config.phases):
            duration = moments(phase.duration_per_class[c])[0]
            expected[phase.pool] += (arrival_rate * project_class.probability *
                                     visits[i] * project_class.demands[i] *
                                     duration)
    return expected


def transition_frequencies(entities, n_phases=5):
    """Empirical phase-transition frequencies from visit histories.

    Column `n_phases` counts moves to delivery.

    Returns:
        (numpy.array, numpy.array): Row-normalized frequencies (`nan` for
        phases never left) and the raw transition counts, both of shape
        `(n_phases, n_phases + 1)`.
    """
    counts = np.zeros((n_phases, n_phases + 1), dtype=int)
    for entity in entities:
        phases = [phase for phase, _, _ in entity.phase_visits]
        for current, following in zip(phases[:-1], phases[1:]):
            counts[current - 1, following - 1] += 1
        if phases and entity.delivered_at is not None:
            counts[phases[-1] - 1, n_phases] += 1
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        frequencies = counts / totals
    return frequencies, counts


def _flatten(summary, prefix=''):
    flat = {}
    for key, value in summary.items():
        path = '{}.{}'.format(prefix, key) if prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, path))
        elif value is None or isinstance(value, (int, float)):
            flat[path] = value
    return flat


_NOT_AGGREGATED = ('replication',)


def merge_replications(stats, config, seed):
    """Merges replications of one scenario into a `Report`.

    Every numeric metric gets its cross-replication mean, and its sample
    standard deviation when at least two replications define it.

    Args:
        stats (list): `RunStats` of the replications.
        config (ScenarioConfig): The scenario they ran.
        seed (int): Master seed.

    Raises:
        MixedConfigsError: a replication ran a different scenario.

    Returns:
        Report: Summaries ordered by replication index.
    """
    if not stats:
        raise ValueError('At least one replication is required.')
    digest = config_digest(config)
    mixed = sorted({s.config_digest for s in stats if s.config_digest != digest})
    if mixed:
        raise MixedConfigsError('Replications ran scenarios {} instead of '
                                '{}.'.format(mixed, digest))

    summaries = [s.summary() for s in sorted(stats, key=lambda s: s.replication)]
    flattened = [_flatten(summary) for summary in summaries]

    aggregate = {}
    for path in flattened[0]:
        if path in _NOT_AGGREGATED:
            continue
        values = [flat[path] for flat in flattened if flat.get(path) is not None]
        entry = {'n': len(values),
                 'mean': float(np.mean(values)) if values else None}
        if len(values) > 1:
            entry['std'] = float(np.std(values, ddof=1))
        aggregate[path] = entry

    return Report(
        scenario=json.loads(dump_scenario(config)),
        seed=seed,
        replications=summaries,
        aggregate=aggregate,
    )


def export_timeseries(stats):
    """Step-function samples of every pool of a replication.

    Returns:
        pandas.DataFrame: Columns `time`, `pool`, `busy` and `queued`, pools
        in scenario order and times ascending within a pool.
    """
    rows = [(time, pool.name, busy, queued)
            for pool in stats.pools for time, busy, queued in pool.series]
    return pd.DataFrame(rows, columns=['time', 'pool', 'busy', 'queued'])


def summary_table(report):
    """Tabulates a report for display.

    Returns:
        (pandas.DataFrame, pandas.DataFrame): Per-class received, delivered,
        ArT means and flow times, with an `overall` row; and per-pool
        capacity and time averages, captioned in `attrs['caption']`.
    """
    def mean(path):
        entry = report.aggregate.get(path)
        return None if entry is None else entry['mean']

    class_names = [c['name'] for c in report.scenario['classes']]
    class_columns = ['received', 'delivered', 'arrival_art_mean',
                     'delivery_art_mean', 'flow_time_mean']
    rows = [[mean('classes.{}.{}'.format(name, column)) for column in class_columns]
            for name in class_names]
    rows.append([mean(column) for column in class_columns])
    classes = pd.DataFrame(rows, index=class_names + ['overall'],
                           columns=class_columns, dtype=float)

    pool_names = [p['name'] for p in report.scenario['pools']]
    pool_columns = ['capacity', 'avg_busy', 'utilization', 'avg_demand', 'mean_wait']
    pools = pd.DataFrame(
        [[mean('pools.{}.{}'.format(name, column)) for column in pool_columns]
         for name in pool_names],
        index=pool_names, columns=pool_columns, dtype=float)
    pools.attrs['caption'] = UTILIZATION_CAPTION
    return classes, pools
