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

"""Builds process networks from scenarios and runs replications"""

import logging

from joblib import Parallel, delayed
from tqdm import tqdm

from sdlc_sim.engine import AfterNDelivered, EventListEmpty, Kernel
from sdlc_sim.metrics import PoolStats, RunStats, config_digest
from sdlc_sim.scenario import with_project_limit
from sdlc_sim.stochastic import RngStream
from sdlc_sim.workflow import (DELIVERED, Branch, Capture, Counter, Outcome,
                               ProcessNetwork, Release, ResourcePool, Sink,
                               Source, Task, next_phase)


def build_network(config, rng):
    """Wires the process network of `config`.

    The source feeds a `received` counter, each phase is a
    capture, task, release and branch chain, and the branches route by
    `next_phase` to another phase's capture or to the `delivered` counter
    in front of the sink.

    Args:
        config (ScenarioConfig): Validated scenario.
        rng (RngStream): Stream the network draws from.

    Returns:
        ProcessNetwork: Connected network, not yet bound to a kernel.
    """
    network = ProcessNetwork(rng)
    # an infeasible scenario loaded without the feasibility check blocks
    # at the oversized capture instead of failing
    for spec in config.pools:
        network.add_pool(ResourcePool(spec.name, spec.capacity, strict=False))

    source = network.add_node(Source('arrivals', config.arrival, config.mix,
                                     config.project_limit))
    received = network.add_node(Counter('received'))
    source.next = received

    captures, branches = [], []
    for i, phase in enumerate(config.phases):
        number = i + 1
        pool = network.pools[phase.pool]
        units = [c.demands[i] for c in config.classes]
        capture = network.add_node(Capture(phase.name + '.capture', pool, units, number))
        task = network.add_node(Task(phase.name + '.task', phase.duration_per_class, number))
        release = network.add_node(Release(phase.name + '.release', pool, units))
        branch = network.add_node(Branch(phase.name + '.branch',
                                         [c.error_prob for c in config.classes],
                                         number))
        capture.next, task.next, release.next = task, release, branch
        captures.append(capture)
        branches.append(branch)

    delivered = network.add_node(Counter('delivered'))
    delivered.next = network.add_node(Sink('sink'))
    received.next = captures[0]

    def route(phase):
        return delivered if phase == DELIVERED else captures[phase - 1]

    n_phases = len(config.phases)
    for number, branch in enumerate(branches, start=1):
        branch.on_ok = route(next_phase(number, Outcome.OK, n_phases))
        branch.on_error = route(next_phase(number, Outcome.ERROR, n_phases))

    network.validate()
    return network


def run_network(config, master_seed, replication=0, stop=None, record_trace=False):
    """Runs one replication and returns the live objects.

    The stop defaults to the scenario's stop, else to delivery of
    `project_limit` projects. A delivery-count stop that covers every
    project is followed by draining the event list.

    Raises:
        NoProgressError: the run blocked before the stop held.

    Returns:
        (ProcessNetwork, Kernel, RunOutcome): The network, its kernel and
        the outcome of the stop-condition run.
    """
    network = build_network(config, RngStream(master_seed, replication))
    kernel = Kernel(record_trace=record_trace)
    kernel.bind(network)

    if stop is None:
        stop = config.stop or AfterNDelivered(count=config.project_limit)
    outcome = kernel.run(stop)
    if isinstance(stop, AfterNDelivered) and stop.count >= config.project_limit:
        kernel.run(EventListEmpty())
    return network, kernel, outcome


def collect_run_stats(network, kernel, outcome, config, master_seed, replication):
    """Reads the `RunStats` of a finished replication."""
    n_classes = len(config.classes)
    received = [[] for _ in range(n_classes)]
    delivered = [[] for _ in range(n_classes)]
    flows = [[] for _ in range(n_classes)]
    rework = [0] * n_classes

    entities = sorted(list(network.delivered_entities) + list(network.entities.values()),
                      key=lambda e: e.id)
    for entity in entities:
        received[entity.class_index].append(entity.created_at)
        rework[entity.class_index] += entity.rework_count
    for entity in network.delivered_entities:
        delivered[entity.class_index].append(entity.delivered_at)
        flows[entity.class_index].append(entity.delivered_at - entity.created_at)

    horizon = kernel.last_dispatch_time
    pools = []
    for pool in network.pools.values():
        pool.close(horizon)
        pools.append(PoolStats(pool.name, pool.capacity, pool.busy_integral,
                               pool.demand_integral, pool.total_wait,
                               pool.grants, list(pool.series)))

    return RunStats(
        replication=replication,
        seed=master_seed,
        config_digest=config_digest(config),
        class_names=[c.name for c in config.classes],
        received_per_class=[len(times) for times in received],
        delivered_per_class=[len(times) for times in delivered],
        arrival_times_per_class=received,
        delivery_times_per_class=delivered,
        flow_times_per_class=flows,
        rework_per_class=rework,
        pools=pools,
        horizon=horizon,
        trace_digest=kernel.trace_digest,
        dispatch_count=kernel.dispatch_count,
        termination=outcome.reason.value,
        in_system=network.in_system,
    )


def run_replication(config, master_seed, replication=0, projects=None, stop=None):
    """Runs replication `replication` of `config`.

    Args:
        config (ScenarioConfig): Scenario to simulate.
        master_seed (int): Master seed; the replication index selects the
            random stream.
        replication (int): Replication index.
        projects (int): Overrides the scenario's `project_limit`.
        stop (StopCondition): Overrides the default stop.

    Raises:
        NoProgressError: the run blocked before the stop held.

    Returns:
        RunStats: Statistics of the replication.
    """
    if projects is not None:
        config = with_project_limit(config, projects)
    network, kernel, outcome = run_network(config, master_seed, replication, stop)
    logging.info('Replication %s: %s received, %s delivered by t=%.3f',
                 replication, network.created, network.delivered,
                 kernel.last_dispatch_time)
    return collect_run_stats(network, kernel, outcome, config, master_seed,
                             replication)


def run_replications(config, master_seed, replications, projects=None,
                     parallel=False, n_jobs=-1, progress=False):
    """Runs replications `0 .. replications - 1`.

    Parallel execution uses `joblib`; results are identical to a serial
    run and always ordered by replication index.

    Args:
        config (ScenarioConfig): Scenario to simulate.
        master_seed (int): Master seed.
        replications (int): Number of replications.
        projects (int): Overrides the scenario's `project_limit`.
        parallel (bool): Run replications in worker processes.
        n_jobs (int): Worker count passed to `joblib.Parallel`.
        progress (bool): Show a progress bar for serial runs.

    Returns:
        list: `RunStats` ordered by replication index.
    """
    if replications < 1:
        raise ValueError('At least one replication is required, got '
                         '{}.'.format(replications))
    if projects is not None:
        config = with_project_limit(config, projects)

    indices = range(replications)
    if parallel:
        stats = Parallel(n_jobs=n_jobs)(
            delayed(run_replication)(config, master_seed, i) for i in indices)
    else:
        stats = [run_replication(config, master_seed, i)
                 for i in tqdm(indices, disable=not progress)]
    return sorted(stats, key=lambda s: s.replication)
