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

"""Tests for metrics"""

import json

import numpy as np
from absl.testing import absltest, parameterized

from sdlc_sim.metrics import (MixedConfigsError, PoolStats, RunStats,
                              ZeroHorizonError, art_mean, busy_average,
                              config_digest, expected_phase_visits,
                              export_timeseries, flow_time_mean,
                              littles_law_expectations, merge_replications,
                              summary_table, transition_frequencies)
from sdlc_sim.scenario import (build_paper_scenario, dump_scenario,
                               load_scenario, set_parameter)
from sdlc_sim.workflow import Entity, ResourcePool


def make_stats(config, replication=0, offset=0.0, digest=None):
    pools = [PoolStats(p.name, p.capacity, 10.0 + offset, 12.0 + offset, 3.0, 6,
                       [(0.0, 0, 0), (100.0, 0, 0)]) for p in config.pools]
    return RunStats(
        replication=replication,
        seed=42,
        config_digest=digest or config_digest(config),
        class_names=[c.name for c in config.classes],
        received_per_class=[2, 1, 0],
        delivered_per_class=[2, 1, 0],
        arrival_times_per_class=[[0.0, 40.0 + offset], [70.0], []],
        delivery_times_per_class=[[50.0, 95.0 + offset], [100.0], []],
        flow_times_per_class=[[50.0, 55.0], [30.0], []],
        rework_per_class=[1, 0, 0],
        pools=pools,
        horizon=100.0,
        trace_digest='0123456789abcdef',
        dispatch_count=30,
        termination='stop_condition',
    )


def zero_error_scenario():
    config = build_paper_scenario()
    for name in ('small', 'medium', 'large'):
        config = set_parameter(config, 'classes.{}.error_prob'.format(name), 0)
    return config


class TestMetrics(parameterized.TestCase):

    @parameterized.named_parameters(
        ('even', [0, 10, 20], 10.0),
        ('uneven', [5, 7, 12], 3.5),
        ('single', [42], None),
        ('empty', [], None),
    )
    def test_art_mean(self, timestamps, expected):
        self.assertEqual(art_mean(timestamps), expected)

    def test_art_mean_unsorted(self):
        with self.assertRaises(ValueError):
            art_mean([3, 1, 2])

    def test_busy_average(self):
        pool = ResourcePool('p', 4)
        pool.request_capture(0, 2, 0.0)
        pool.release(2, 10.0, entity=0)
        pool.close(20.0)

        avg_busy, utilization, avg_demand = busy_average(pool, 20.0)
        self.assertAlmostEqual(avg_busy, 1.0)
        self.assertAlmostEqual(utilization, 0.25)
        self.assertGreaterEqual(avg_demand, 1.0)

    def test_busy_average_idle(self):
        pool = PoolStats('p', 4, 0.0, 0.0, 0.0, 0)
        self.assertEqual(busy_average(pool, 20.0), (0.0, 0.0, 0.0))
        self.assertEqual(pool.mean_wait, 0.0)

    def test_zero_horizon(self):
        with self.assertRaises(ZeroHorizonError):
            busy_average(PoolStats('p', 4, 0.0, 0.0, 0.0, 0), 0.0)

    def test_expected_phase_visits_no_rework(self):
        np.testing.assert_allclose(expected_phase_visits(0), np.ones(5))

    def test_expected_phase_visits_limit(self):
        self.assertAlmostEqual(expected_phase_visits(1e-9).sum(), 5.0, places=6)

    def test_expected_phase_visits_range(self):
        with self.assertRaises(ValueError):
            expected_phase_visits(1.0)
        with self.assertRaises(ValueError):
            expected_phase_visits(-0.1)

    def test_expected_phase_visits_monte_carlo(self):
        q, walks, n_phases = 0.1, 10 ** 6, 5
        rng = np.random.default_rng(0)
        state = np.zeros(walks, dtype=int)
        visits = np.zeros(n_phases)
        active = np.ones(walks, dtype=bool)
        while active.any():
            visits += np.bincount(state[active], minlength=n_phases)
            error = rng.random(walks) < q
            following = np.where(error, np.maximum(state - 1, 0), state + 1)
            active &= following < n_phases
            state = np.where(active, following, state)
        np.testing.assert_allclose(visits / walks, expected_phase_visits(q),
                                   rtol=0.005)

    def test_littles_law_closed_form(self):
        expected = littles_law_expectations(zero_error_scenario())
        self.assertAlmostEqual(expected['programmers'], 1.45)
        self.assertEqual(list(expected), ['analysts', 'designers', 'programmers',
                                          'testers', 'maintenance'])

    def test_littles_law_rework_inflation(self):
        with_rework = littles_law_expectations(build_paper_scenario())
        without = littles_law_expectations(zero_error_scenario())
        for name in without:
            self.assertGreater(with_rework[name], without[name])

    def test_littles_law_scaling(self):
        config = build_paper_scenario()
        slow = set_parameter(set_parameter(set_parameter(
            config, 'arrival.max', 1e9), 'arrival.mode', 1e9 - 5), 'arrival.min', 1e9 - 10)
        for value in littles_law_expectations(slow).values():
            self.assertLess(value, 1e-6)

        document = json.loads(dump_scenario(config))
        for project_class in document['classes']:
            project_class['demands'] = [2 * d for d in project_class['demands']]
        doubled = load_scenario(json.dumps(document), check_feasibility=False)
        base = littles_law_expectations(config)
        for name, value in littles_law_expectations(doubled).items():
            self.assertAlmostEqual(value, 2 * base[name])

    def test_merge_single_replication(self):
        config = build_paper_scenario()
        report = merge_replications([make_stats(config)], config, 42)

        self.assertLen(report.replications, 1)
        entry = report.aggregate['classes.small.arrival_art_mean']
        self.assertEqual(entry['mean'], 40.0)
        self.assertNotIn('std', entry)
        self.assertIsNone(report.aggregate['classes.large.arrival_art_mean']['mean'])
        self.assertEqual(report.aggregate['received']['mean'], 3)
        self.assertNotIn('replication', report.aggregate)

    def test_merge_identical_replications(self):
        config = build_paper_scenario()
        stats = [make_stats(config, replication=i) for i in range(5)]
        report = merge_replications(stats, config, 42)

        entry = report.aggregate['pools.programmers.avg_busy']
        self.assertEqual(entry['n'], 5)
        self.assertAlmostEqual(entry['mean'], 0.1)
        self.assertAlmostEqual(entry['std'], 0.0)

    def test_merge_orders_by_replication(self):
        config = build_paper_scenario()
        stats = [make_stats(config, replication=i, offset=i) for i in (2, 0, 1)]
        report = merge_replications(stats, config, 42)

        self.assertEqual([r['replication'] for r in report.replications], [0, 1, 2])
        entry = report.aggregate['pools.analysts.avg_busy']
        self.assertAlmostEqual(entry['mean'], 0.11)
        self.assertAlmostEqual(entry['std'], 0.01)

    def test_merge_mixed_configs(self):
        config = build_paper_scenario()
        stats = [make_stats(config), make_stats(config, 1, digest='ffffffffffffffff')]
        with self.assertRaises(MixedConfigsError):
            merge_replications(stats, config, 42)
        with self.assertRaises(ValueError):
            merge_replications([], config, 42)

    def test_report_json(self):
        config = build_paper_scenario()
        report = merge_replications([make_stats(config, i) for i in range(2)], config, 7)
        text = report.to_json()

        self.assertEqual(text, report.to_json())
        data = json.loads(text)
        self.assertEqual(sorted(data), ['aggregate', 'replications', 'scenario',
                                        'seed', 'version'])
        self.assertEqual(data['seed'], 7)
        self.assertEqual(load_scenario(json.dumps(data['scenario'])), config)
        self.assertAlmostEqual(report.metric('delivered'), 3)

    def test_export_timeseries(self):
        config = build_paper_scenario()
        stats = make_stats(config)
        pool = ResourcePool('programmers', 10)
        pool.request_capture(0, 2, 10.0)
        pool.release(2, 27.2, entity=0)
        pool.close(40.0)
        stats.pools = [PoolStats('maintenance', 5, 0.0, 0.0, 0.0, 0,
                                 [(0.0, 0, 0), (40.0, 0, 0)]),
                       PoolStats('programmers', 10, pool.busy_integral,
                                 pool.demand_integral, 0.0, 1, pool.series)]

        df = export_timeseries(stats)
        self.assertEqual(list(df.columns), ['time', 'pool', 'busy', 'queued'])
        idle = df[df.pool == 'maintenance']
        self.assertEqual(idle[['time', 'busy', 'queued']].values.tolist(),
                         [[0.0, 0, 0], [40.0, 0, 0]])
        busy = df[df.pool == 'programmers']
        self.assertEqual(busy[['time', 'busy']].values.tolist(),
                         [[0.0, 0], [10.0, 2], [27.2, 0], [40.0, 0]])

    def test_summary_table(self):
        config = build_paper_scenario()
        report = merge_replications([make_stats(config, i) for i in range(3)], config, 42)
        df_classes, df_pools = summary_table(report)

        self.assertEqual(list(df_classes.index), ['small', 'medium', 'large', 'overall'])
        self.assertEqual(df_classes.loc['small', 'received'], 2)
        self.assertTrue(np.isnan(df_classes.loc['large', 'arrival_art_mean']))
        self.assertEqual(list(df_pools.index), list(config.pool_names))
        self.assertAlmostEqual(df_pools.loc['testers', 'mean_wait'], 0.5)
        self.assertIn('caption', df_pools.attrs)

    def test_flow_time_mean(self):
        entities = [Entity(0, 0, 0.0, delivered_at=10.0),
                    Entity(1, 0, 5.0, delivered_at=25.0),
                    Entity(2, 0, 7.0)]
        self.assertEqual(flow_time_mean(entities), 15.0)
        self.assertIsNone(flow_time_mean(entities[2:]))

    def test_transition_frequencies(self):
        entities = [
            Entity(0, 0, 0.0, delivered_at=9.0,
                   phase_visits=[(1, 0, 1), (2, 1, 2), (1, 2, 3), (2, 3, 4),
                                 (3, 4, 5), (4, 5, 6), (5, 6, 7)]),
            Entity(1, 0, 0.0, phase_visits=[(1, 0, 1), (2, 1, 2)]),
        ]
        frequencies, counts = transition_frequencies(entities)

        self.assertEqual(counts.shape, (5, 6))
        self.assertEqual(counts[0, 1], 3)
        self.assertEqual(counts[1, 0], 1)
        self.assertEqual(counts[1, 2], 1)
        self.assertEqual(counts[4, 5], 1)
        self.assertAlmostEqual(frequencies[1, 0], 0.5)
        self.assertEqual(frequencies[4, 5], 1.0)


if __name__ == '__main__':
    absltest.main()
