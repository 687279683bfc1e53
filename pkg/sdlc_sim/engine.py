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

"""Deterministic discrete-event kernel: clock, future-event list and dispatch loop"""

import enum
import hashlib
import heapq
import logging
import struct
from dataclasses import dataclass, field
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


# time, seq, target, entity (-1 for source events)
_TRACE_RECORD = struct.Struct('<dqqq')


class ScheduleInPastError(ValueError):
    """An event was scheduled before the current simulation clock."""


class NoProgressError(RuntimeError):
    """The future-event list emptied while entities were still in the system.

    Args:
        message (str): Description of the stalled run.
        blocked (list): Pending resource requests at the time of the stall,
            as dictionaries with keys `pool`, `entity`, `units` and
            `enqueued_at`.
    """

    def __init__(self, message, blocked=None):
        super(NoProgressError, self).__init__(message)
        self.blocked = list(blocked or [])


class TerminationReason(enum.Enum):
    STOP_CONDITION = 'stop condition met'
    EVENT_LIST_EMPTY = 'event list empty'


class AfterNDelivered(BaseModel):
    """Stop once `count` projects have been delivered."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    type: Literal['after_n_projects_delivered'] = 'after_n_projects_delivered'
    count: int = Field(..., ge=1)


class AtTime(BaseModel):
    """Stop before dispatching the first event later than `time`."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    type: Literal['at_time'] = 'at_time'
    time: float = Field(..., ge=0)


class EventListEmpty(BaseModel):
    """Run until no events remain."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    type: Literal['event_list_empty'] = 'event_list_empty'


StopCondition = Annotated[Union[AfterNDelivered, AtTime, EventListEmpty],
                          Field(discriminator='type')]


@dataclass(order=True)
class Event:
    """A scheduled dispatch of `entity` to node `target` at `time`.

    Events order by `(time, seq)`; `seq` is the kernel's insertion counter,
    so events with equal timestamps are dispatched first-in first-out.
    """
    time: float
    seq: int
    target: int = field(compare=False)
    entity: Optional[int] = field(default=None, compare=False)
    cancelled: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class RunOutcome:
    final_clock: float
    dispatch_count: int
    reason: TerminationReason


class Model(object):
    """What the kernel needs from a bound process network.

    The base class is the empty model: it schedules nothing and never holds
    entities.
    """

    def start(self, kernel):
        """Schedules the initial events on `kernel`."""

    def dispatch(self, kernel, event):
        """Handles one popped event. The kernel clock equals `event.time`."""

    @property
    def delivered(self):
        return 0

    @property
    def in_system(self):
        return 0

    def blocked_requests(self):
        return []


class Kernel(object):
    """Single-threaded discrete-event kernel for one replication.

    Example::

        kernel = Kernel()
        kernel.bind(network)
        outcome = kernel.run(AfterNDelivered(count=50))

    Args:
        record_trace (bool): Keep every dispatched `(time, seq, target,
            entity)` tuple in `trace`. The 64-bit `trace_digest` is always
            maintained.
    """

    def __init__(self, record_trace=False):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.clock = 0.0
        self.last_dispatch_time = 0.0
        self.dispatch_count = 0
        self.model = None
        self.record_trace = record_trace
        self.trace = []
        self._queue = []
        self._seq = 0
        self._digest = hashlib.blake2b(digest_size=8)

    def bind(self, model):
        """Attaches `model` and lets it schedule its initial events."""
        if self.model is not None:
            raise RuntimeError('A model is already bound to this kernel.')
        self.model = model
        model.start(self)

    def schedule(self, time, target, entity=None):
        """Inserts an event into the future-event list.

        Args:
            time (float): Absolute simulated time in days.
            target (int): Index of the node the event is dispatched to.
            entity (int): Entity identifier, `None` for source events.

        Raises:
            ScheduleInPastError: `time` is earlier than the clock.

        Returns:
            Event: Handle usable with `cancel`.
        """
        if time < self.clock:
            raise ScheduleInPastError(
                'Cannot schedule an event at t={} when the clock is at '
                't={}.'.format(time, self.clock))
        event = Event(float(time), self._seq, target, entity)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def cancel(self, event):
        """Cancels a scheduled event. Cancelled events are never dispatched."""
        event.cancelled = True

    @property
    def pending(self):
        """Number of live events in the future-event list."""
        return sum(1 for event in self._queue if not event.cancelled)

    @property
    def trace_digest(self):
        """Hex digest of the dispatch sequence so far."""
        return self._digest.hexdigest()

    def _peek(self):
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0] if self._queue else None

    def _dispatch(self, event):
        self.clock = event.time
        self.last_dispatch_time = event.time
        self.dispatch_count += 1
        entity = -1 if event.entity is None else event.entity
        self._digest.update(_TRACE_RECORD.pack(event.time, event.seq,
                                               event.target, entity))
        if self.record_trace:
            self.trace.append((event.time, event.seq, event.target, event.entity))
        self.model.dispatch(self, event)

    def run(self, stop=None):
        """Pops events in `(time, seq)` order until `stop` holds or the
        future-event list is empty.

        Args:
            stop (StopCondition): When to halt. Defaults to
                `EventListEmpty()`.

        Raises:
            RuntimeError: No model is bound.
            NoProgressError: The event list emptied with entities still in
                the system before `stop` was met.

        Returns:
            RunOutcome: Final clock, dispatch count and termination reason.
        """
        if self.model is None:
            raise RuntimeError('No model is bound to the kernel.')
        if stop is None:
            stop = EventListEmpty()

        self.logger.debug('Running until %s from t=%s', stop, self.clock)
        while True:
            if isinstance(stop, AfterNDelivered) and self.model.delivered >= stop.count:
                reason = TerminationReason.STOP_CONDITION
                break

            event = self._peek()
            if event is None:
                if self.model.in_system > 0 and not isinstance(stop, EventListEmpty):
                    blocked = self.model.blocked_requests()
                    raise NoProgressError(
                        'Event list is empty at t={} with {} entities in the '
                        'system and {} blocked requests: {}'.format(
                            self.clock, self.model.in_system, len(blocked),
                            blocked), blocked=blocked)
                reason = TerminationReason.EVENT_LIST_EMPTY
                break

            if isinstance(stop, AtTime) and event.time > stop.time:
                self.clock = max(self.clock, stop.time)
                reason = TerminationReason.STOP_CONDITION
                break

            heapq.heappop(self._queue)
            self._dispatch(event)

        self.logger.debug('Stopped (%s) at t=%s after %s dispatches, %s events pending',
                          reason.value, self.clock, self.dispatch_count, self.pending)
        return RunOutcome(self.clock, self.dispatch_count, reason)
