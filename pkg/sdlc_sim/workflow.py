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

"""Process-network elements: resource pools, capture/release, tasks,
probability branches, counters and the phase rework routing"""

import collections
import enum
import functools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import networkx as nx

from sdlc_sim.engine import Model
from sdlc_sim.stochastic import Bernoulli, sample


DELIVERED = 'delivered'


class CapacityExceededError(ValueError):
    """A request asked for more units than the pool holds."""


class NegativeBusyError(ValueError):
    """A release returned more units than are busy."""


class CaptureResult(enum.Enum):
    GRANTED = 'granted'
    QUEUED = 'queued'


class Outcome(enum.Enum):
    OK = 'ok'
    ERROR = 'error'


@dataclass
class Request:
    entity: int
    units: int
    enqueued_at: float


@dataclass
class Entity:
    """A project flowing through the phases.

    `phase_visits` holds `(phase, start, end)` tuples with 1-based phase
    numbers, where `start` is the time the phase's resources were granted.
    """
    id: int
    class_index: int
    created_at: float
    delivered_at: Optional[float] = None
    phase_visits: List[Tuple[int, float, float]] = field(default_factory=list)
    rework_count: int = 0


class ResourcePool(object):
    """Integer-capacity pool with a strict FIFO queue of pending requests.

    Captures are all-or-nothing and a request that does not fit blocks every
    request behind it. The pool integrates busy units and busy-plus-queued
    units over time and keeps a step series of `(time, busy, queued)`.

    Args:
        name (str): Pool name.
        capacity (int): Number of units.
        start_time (float): Time the integrals start from.
        strict (bool): Reject requests larger than the capacity. Otherwise
            such a request is queued and never granted.
    """

    def __init__(self, name, capacity, start_time=0.0, strict=True):
        if capacity < 0:
            raise ValueError('Pool {!r} capacity must be non-negative, got '
                             '{}.'.format(name, capacity))
        self.name = name
        self.capacity = int(capacity)
        self.strict = strict
        self.busy = 0
        self.pending = collections.deque()
        self.holdings = {}
        self.busy_integral = 0.0
        self.demand_integral = 0.0
        self.total_wait = 0.0
        self.grants = 0
        self.series = [(start_time, 0, 0)]
        self._queued_units = 0
        self._last_time = start_time

    @property
    def free(self):
        return self.capacity - self.busy

    @property
    def queued_units(self):
        return self._queued_units

    def _advance(self, now):
        elapsed = now - self._last_time
        if elapsed > 0:
            self.busy_integral += self.busy * elapsed
            self.demand_integral += (self.busy + self._queued_units) * elapsed
            self._last_time = now

    def _record(self, now):
        row = (now, self.busy, self._queued_units)
        if self.series[-1][0] == now:
            self.series[-1] = row
        else:
            self.series.append(row)

    def _grant(self, request, now):
        self.busy += request.units
        self.holdings[request.entity] = self.holdings.get(request.entity, 0) + request.units
        self.total_wait += now - request.enqueued_at
        self.grants += 1

    def _grant_pending(self, now):
        granted = []
        while self.pending and self.free >= self.pending[0].units:
            request = self.pending.popleft()
            self._queued_units -= request.units
            self._grant(request, now)
            granted.append(request)
        return granted

    def request_capture(self, entity, units, now):
        """Requests `units` for `entity`.

        The request is granted only if it fits and nobody is waiting ahead
        of it; otherwise it joins the tail of the queue.

        Raises:
            CapacityExceededError: `units` exceeds the capacity of a strict
                pool.

        Returns:
            CaptureResult: `GRANTED` or `QUEUED`.
        """
        if units > self.capacity and self.strict:
            raise CapacityExceededError(
                'Entity {} requested {} units from pool {!r} with capacity '
                '{}.'.format(entity, units, self.name, self.capacity))
        if units < 1:
            raise ValueError('A capture must request at least one unit, '
                             'got {}.'.format(units))

        self._advance(now)
        if not self.pending and self.free >= units:
            self._grant(Request(entity, units, now), now)
            result = CaptureResult.GRANTED
        else:
            self.pending.append(Request(entity, units, now))
            self._queued_units += units
            result = CaptureResult.QUEUED
        self._record(now)
        return result

    def release(self, units, now, entity=None):
        """Returns `units` to the pool and grants waiting requests in FIFO
        order until the head of the queue no longer fits.

        Args:
            units (int): Units returned.
            now (float): Current time.
            entity (int): Holder of the units, used to keep `holdings`.

        Raises:
            NegativeBusyError: `units` exceeds the busy count.

        Returns:
            list: Newly granted `Request` objects in grant order.
        """
        if units > self.busy:
            raise NegativeBusyError(
                'Cannot release {} units from pool {!r} with {} busy.'.format(
                    units, self.name, self.busy))

        self._advance(now)
        self.busy -= units
        if entity is not None:
            remaining = self.holdings.get(entity, 0) - units
            if remaining > 0:
                self.holdings[entity] = remaining
            else:
                self.holdings.pop(entity, None)
        granted = self._grant_pending(now)
        self._record(now)
        return granted

    def close(self, now):
        """Extends the integrals and the series to `now`."""
        self._advance(now)
        if self.series[-1][0] != now:
            self.series.append((now, self.busy, self._queued_units))


@functools.lru_cache(maxsize=None)
def _bernoulli(p):
    return Bernoulli(p=p)


def branch_decide(p_error, rng):
    """Draws the outcome of a probability branch.

    Returns:
        Outcome: `ERROR` with probability `p_error`, else `OK`.
    """
    if p_error < 0 or p_error > 1:
        raise ValueError('Error probability must be between 0 and 1, '
                         'got {}.'.format(p_error))
    return Outcome.ERROR if sample(_bernoulli(p_error), rng) else Outcome.OK


def next_phase(current, outcome, n_phases=5):
    """Routes an entity after completing phase `current` (1-based).

    An ok outcome moves to the following phase, or to `DELIVERED` after the
    last one. An error sends the entity back to the preceding phase; the
    first phase reworks itself.
    """
    if current < 1 or current > n_phases:
        raise ValueError('Phase must be between 1 and {}, got {}.'.format(
            n_phases, current))
    if outcome is Outcome.ERROR:
        return max(current - 1, 1)
    if current == n_phases:
        return DELIVERED
    return current + 1


class Node(object):
    """Element of a process network. `handle` runs the element's semantics
    for `entity` at the kernel clock and returns the node the entity moves
    to without delay, or `None` when it is suspended or leaves."""

    kind = None

    def __init__(self, name):
        self.name = name
        self.index = None

    def successors(self):
        return [node for node in (getattr(self, 'next', None),) if node is not None]

    def handle(self, network, kernel, entity):
        raise NotImplementedError


class Source(Node):
    """Creates `limit` entities, drawing a class from `mix` for each and the
    gap to the next arrival from `arrival`."""

    kind = 'source'

    def __init__(self, name, arrival, mix, limit):
        super(Source, self).__init__(name)
        self.arrival = arrival
        self.mix = mix
        self.limit = limit
        self.emitted = 0
        self.next = None

    def handle(self, network, kernel, entity):
        now = kernel.clock
        class_index = sample(self.mix, network.rng)
        entity = network.create_entity(class_index, now)
        self.emitted += 1
        if self.emitted < self.limit:
            gap = sample(self.arrival, network.rng)
            network.schedule(kernel, now + gap, self)
        return self.next, entity


class Counter(Node):
    kind = 'counter'

    def __init__(self, name):
        super(Counter, self).__init__(name)
        self.count = 0
        self.next = None

    def handle(self, network, kernel, entity):
        self.count += 1
        return self.next


class Capture(Node):
    """Requests the class-specific number of units from `pool`."""

    kind = 'capture'

    def __init__(self, name, pool, units, phase):
        super(Capture, self).__init__(name)
        if any(u < 1 for u in units):
            raise ValueError('Capture units must be at least 1, got '
                             '{}.'.format(units))
        self.pool = pool
        self.units = tuple(units)
        self.phase = phase
        self.next = None

    def handle(self, network, kernel, entity):
        result = self.pool.request_capture(
            entity.id, self.units[entity.class_index], kernel.clock)
        if result is CaptureResult.GRANTED:
            return self.next
        network.suspend(entity, self)
        return None


class Task(Node):
    """Holds the entity for a class-specific sampled duration."""

    kind = 'task'

    def __init__(self, name, durations, phase):
        super(Task, self).__init__(name)
        self.durations = tuple(durations)
        self.phase = phase
        self.next = None

    def handle(self, network, kernel, entity):
        now = kernel.clock
        duration = sample(self.durations[entity.class_index], network.rng)
        entity.phase_visits.append((self.phase, now, now + duration))
        network.schedule(kernel, now + duration, self.next, entity)
        return None


class Release(Node):
    kind = 'release'

    def __init__(self, name, pool, units):
        super(Release, self).__init__(name)
        if any(u < 1 for u in units):
            raise ValueError('Release units must be at least 1, got '
                             '{}.'.format(units))
        self.pool = pool
        self.units = tuple(units)
        self.next = None

    def handle(self, network, kernel, entity):
        granted = self.pool.release(self.units[entity.class_index],
                                    kernel.clock, entity.id)
        for request in granted:
            network.resume(kernel, request.entity)
        return self.next


class Branch(Node):
    """Probability branch after a phase: on error the entity goes to
    `on_error`, otherwise to `on_ok`."""

    kind = 'branch'

    def __init__(self, name, error_probs, phase):
        super(Branch, self).__init__(name)
        if any(p < 0 or p > 1 for p in error_probs):
            raise ValueError('Branch probabilities must be between 0 and 1, '
                             'got {}.'.format(error_probs))
        self.error_probs = tuple(error_probs)
        self.phase = phase
        self.on_error = None
        self.on_ok = None

    def successors(self):
        return [node for node in (self.on_error, self.on_ok) if node is not None]

    def handle(self, network, kernel, entity):
        outcome = branch_decide(self.error_probs[entity.class_index], network.rng)
        if outcome is Outcome.ERROR:
            entity.rework_count += 1
            return self.on_error
        return self.on_ok


class Sink(Node):
    kind = 'sink'

    def handle(self, network, kernel, entity):
        network.deliver(entity, kernel.clock)
        return None


class ProcessNetwork(Model):
    """A process network bound to one kernel and one random stream.

    Nodes are addressed by their insertion index, which is the event target
    used by the kernel.

    Args:
        rng (RngStream): Stream consumed by sources, tasks and branches.
    """

    def __init__(self, rng):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.rng = rng
        self.nodes = []
        self.pools = collections.OrderedDict()
        self.entities = collections.OrderedDict()
        self.delivered_entities = []
        self.created = 0
        self._suspended = {}
        self._step_events = []

    def add_pool(self, pool):
        if pool.name in self.pools:
            raise ValueError('Duplicate pool name {!r}.'.format(pool.name))
        self.pools[pool.name] = pool
        return pool

    def add_node(self, node):
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    @property
    def source(self):
        sources = [node for node in self.nodes if isinstance(node, Source)]
        return sources[0] if sources else None

    def graph(self):
        """Returns the network as a `networkx.DiGraph` over node indices."""
        graph = nx.DiGraph()
        for node in self.nodes:
            graph.add_node(node.index, name=node.name, kind=node.kind)
            for successor in node.successors():
                graph.add_edge(node.index, successor.index)
        return graph

    def validate(self):
        """Checks that every node lies on a path from the source to a sink.

        Raises:
            ValueError: No source or sink, or nodes off every source-sink path.
        """
        sources = [node.index for node in self.nodes if isinstance(node, Source)]
        sinks = [node.index for node in self.nodes if isinstance(node, Sink)]
        if len(sources) != 1 or not sinks:
            raise ValueError('A network needs exactly one source and at least '
                             'one sink, got {} and {}.'.format(len(sources), len(sinks)))

        graph = self.graph()
        reachable = nx.descendants(graph, sources[0]) | {sources[0]}
        reaching = set(sinks)
        for sink in sinks:
            reaching |= nx.ancestors(graph, sink)
        stranded = sorted(set(graph.nodes) - (reachable & reaching))
        if stranded:
            raise ValueError('Nodes not on a source-to-sink path: {}'.format(
                [self.nodes[i].name for i in stranded]))

    def start(self, kernel):
        source = self.source
        if source is not None and source.limit > 0:
            kernel.schedule(kernel.clock, source.index)

    def schedule(self, kernel, time, node, entity=None):
        event = kernel.schedule(time, node.index,
                                None if entity is None else entity.id)
        self._step_events.append(event)
        return event

    def create_entity(self, class_index, now):
        entity = Entity(id=self.created, class_index=class_index, created_at=now)
        self.created += 1
        self.entities[entity.id] = entity
        return entity

    def suspend(self, entity, capture):
        self.logger.debug('Entity %s waits for %s at %s', entity.id,
                          capture.pool.name, capture.name)
        self._suspended[entity.id] = capture

    def resume(self, kernel, entity_id):
        """Schedules the task following the capture `entity_id` waited at."""
        capture = self._suspended.pop(entity_id)
        self.logger.debug('Entity %s granted %s at t=%s', entity_id,
                          capture.pool.name, kernel.clock)
        self.schedule(kernel, kernel.clock, capture.next, self.entities[entity_id])

    def deliver(self, entity, now):
        self.logger.debug('Entity %s delivered at t=%s after %s reworks',
                          entity.id, now, entity.rework_count)
        entity.delivered_at = now
        del self.entities[entity.id]
        self.delivered_entities.append(entity)

    def step_entity(self, kernel, entity, node):
        """Executes `node` for `entity` and every zero-delay node after it.

        Args:
            kernel (Kernel): Kernel whose clock is the current time.
            entity (Entity): Entity at `node`, `None` for a source event.
            node (Node): Node to execute.

        Returns:
            list: Events scheduled during the step.
        """
        self._step_events = []
        if isinstance(node, Source):
            node, entity = node.handle(self, kernel, entity)
        while node is not None:
            node = node.handle(self, kernel, entity)
        return self._step_events

    def dispatch(self, kernel, event):
        entity = None if event.entity is None else self.entities[event.entity]
        self.step_entity(kernel, entity, self.nodes[event.target])

    @property
    def delivered(self):
        return len(self.delivered_entities)

    @property
    def in_system(self):
        return len(self.entities)

    def blocked_requests(self):
        return [{'pool': pool.name, 'entity': request.entity,
                 'units': request.units, 'enqueued_at': request.enqueued_at}
                for pool in self.pools.values() for request in pool.pending]
