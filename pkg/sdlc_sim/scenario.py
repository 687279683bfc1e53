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

"""Scenario schema, loader and validator, and the built-in Waterfall scenario"""

import json
import logging
from typing import Annotated, Optional, Tuple

import pydantic
from pydantic import BaseModel, ConfigDict, Field

from sdlc_sim.engine import AfterNDelivered, StopCondition
from sdlc_sim.stochastic import Categorical, Distribution, Triangular, Uniform


class ScenarioParseError(ValueError):
    """The scenario document is not well-formed JSON."""


class ScenarioValidationError(ValueError):
    """The scenario document violates the schema.

    Args:
        errors (list): `(field_path, reason)` tuples, one per violation.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        message = '\n'.join('{}: {}'.format(path, reason)
                            for path, reason in self.errors)
        super(ScenarioValidationError, self).__init__(message)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class PoolSpec(_Frozen):
    name: str = Field(..., min_length=1)
    capacity: int = Field(..., ge=0)


class ProjectClass(_Frozen):
    """A project size class: its share of arrivals, the error probability
    drawn after every phase, and the units it captures in each phase."""
    name: str = Field(..., min_length=1)
    probability: float = Field(..., ge=0, le=1)
    error_prob: float = Field(..., ge=0, lt=1)
    demands: Tuple[Annotated[int, Field(ge=1)], ...] = Field(..., min_length=1)


class PhaseSpec(_Frozen):
    name: str = Field(..., min_length=1)
    pool: str = Field(..., min_length=1)
    duration_per_class: Tuple[Distribution, ...] = Field(..., min_length=1)

    @property
    def duration(self):
        """The duration law shared by every class.

        Raises:
            ValueError: durations differ between classes.
        """
        first = self.duration_per_class[0]
        if any(d != first for d in self.duration_per_class[1:]):
            raise ValueError('Phase {!r} has class-specific durations.'.format(
                self.name))
        return first


class ScenarioConfig(_Frozen):
    """Complete declarative description of one simulated process."""
    pools: Tuple[PoolSpec, ...]
    classes: Tuple[ProjectClass, ...]
    phases: Tuple[PhaseSpec, ...]
    arrival: Distribution
    project_limit: int = Field(..., ge=1)
    stop: Optional[StopCondition] = None
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    replications: Optional[int] = Field(None, ge=1)

    @property
    def capacities(self):
        return tuple(pool.capacity for pool in self.pools)

    @property
    def pool_names(self):
        return tuple(pool.name for pool in self.pools)

    @property
    def mix(self):
        """Class mix as a categorical law over class indices."""
        return Categorical(weights=tuple(c.probability for c in self.classes))

    def pool_index(self, name):
        return self.pool_names.index(name)


def _format_loc(loc):
    path = ''
    for part in loc:
        if isinstance(part, int):
            path += '[{}]'.format(part)
        else:
            path += ('.' if path else '') + str(part)
    return path or '<document>'


def _is_continuous(dist):
    return isinstance(dist, (Triangular, Uniform))


def feasibility_errors(config):
    """Lists every (class, phase) demand that exceeds its pool's capacity.

    Such a request can never be granted and blocks its pool forever.
    """
    capacities = dict(zip(config.pool_names, config.capacities))
    errors = []
    for c, project_class in enumerate(config.classes):
        for i, phase in enumerate(config.phases):
            if i >= len(project_class.demands) or phase.pool not in capacities:
                continue
            demand = project_class.demands[i]
            if demand > capacities[phase.pool]:
                errors.append((
                    'classes[{}].demands[{}]'.format(c, i),
                    'demand {} exceeds pool capacity {} of {!r} '
                    '(deadlock)'.format(demand, capacities[phase.pool], phase.pool)))
    return errors


def validate_scenario(config, check_feasibility=True):
    """Checks the cross-field rules a single field cannot express.

    Args:
        config (ScenarioConfig): Structurally valid scenario.
        check_feasibility (bool): Also reject demands above pool capacity.

    Returns:
        list: `(field_path, reason)` tuples, empty when the scenario is valid.
    """
    errors = []

    names = config.pool_names
    for i, name in enumerate(names):
        if name in names[:i]:
            errors.append(('pools[{}].name'.format(i),
                           'duplicate pool {!r}'.format(name)))

    if not config.classes:
        errors.append(('classes', 'empty class list'))
    else:
        total = sum(c.probability for c in config.classes)
        if abs(total - 1) > 1e-9:
            errors.append(('classes[].probability',
                           'sum {:.6g} ≠ 1'.format(total)))

    if not config.phases:
        errors.append(('phases', 'empty phase list'))

    for i, phase in enumerate(config.phases):
        if phase.pool not in names:
            errors.append(('phases[{}].pool'.format(i),
                           'unknown pool {!r}'.format(phase.pool)))
        if len(phase.duration_per_class) != len(config.classes):
            errors.append(('phases[{}].duration_per_class'.format(i),
                           'expected {} entries, got {}'.format(
                               len(config.classes), len(phase.duration_per_class))))
        for c, dist in enumerate(phase.duration_per_class):
            if not _is_continuous(dist) or dist.min < 0:
                errors.append(('phases[{}].duration_per_class[{}]'.format(i, c),
                               'durations must be triangular or uniform with '
                               'non-negative support'))

    for c, project_class in enumerate(config.classes):
        if len(project_class.demands) != len(config.phases):
            errors.append(('classes[{}].demands'.format(c),
                           'expected {} entries, got {}'.format(
                               len(config.phases), len(project_class.demands))))

    if not _is_continuous(config.arrival) or config.arrival.min < 0:
        errors.append(('arrival', 'inter-arrival law must be triangular or '
                                  'uniform with non-negative support'))

    if isinstance(config.stop, AfterNDelivered) and config.stop.count > config.project_limit:
        errors.append(('stop.count',
                       'delivery stop {} exceeds project_limit {}'.format(
                           config.stop.count, config.project_limit)))

    if check_feasibility:
        errors.extend(feasibility_errors(config))
    return errors


def _build(data, check_feasibility=True):
    try:
        config = ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as err:
        raise ScenarioValidationError(
            [(_format_loc(e['loc']), e['msg']) for e in err.errors()])
    errors = validate_scenario(config, check_feasibility=check_feasibility)
    if errors:
        raise ScenarioValidationError(errors)
    return config


def load_scenario(document, check_feasibility=True):
    """Parses and validates a JSON scenario document.

    Args:
        document (str or bytes): UTF-8 JSON text.
        check_feasibility (bool): Reject demands above pool capacity.

    Raises:
        ScenarioParseError: `document` is not valid JSON.
        ScenarioValidationError: one or more schema violations, each with
            its field path.

    Returns:
        ScenarioConfig: The validated scenario.
    """
    try:
        data = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ScenarioParseError('Malformed scenario document: {}'.format(err))
    return _build(data, check_feasibility=check_feasibility)


def load_scenario_file(path, check_feasibility=True):
    """Reads and validates the scenario stored at `path`."""
    logging.debug('Loading scenario from %s', path)
    with open(path, 'rb') as f:
        return load_scenario(f.read(), check_feasibility=check_feasibility)


def dump_scenario(config):
    """Serializes `config` to the JSON document `load_scenario` reads."""
    data = config.model_dump(mode='json', exclude_none=True)
    return json.dumps(data, indent=2, ensure_ascii=False)


def build_paper_scenario():
    """Returns the Waterfall scenario: five phases, three project classes
    and 50 projects arriving every Tri(30, 35, 40) days.

    No stop is set: a run delivers all `project_limit` projects and drains.
    """
    pools = (
        PoolSpec(name='analysts', capacity=5),
        PoolSpec(name='designers', capacity=5),
        PoolSpec(name='programmers', capacity=10),
        PoolSpec(name='testers', capacity=20),
        PoolSpec(name='maintenance', capacity=5),
    )
    classes = (
        ProjectClass(name='small', probability=0.70, error_prob=0.1,
                     demands=(1, 1, 2, 2, 1)),
        ProjectClass(name='medium', probability=0.25, error_prob=0.2,
                     demands=(2, 2, 4, 6, 2)),
        ProjectClass(name='large', probability=0.05, error_prob=0.3,
                     demands=(5, 5, 10, 20, 5)),
    )
    durations = (
        ('analysis', 'analysts', Uniform(min=3, max=5)),
        ('design', 'designers', Uniform(min=5, max=10)),
        ('implementation', 'programmers', Uniform(min=15, max=20)),
        ('testing', 'testers', Uniform(min=5, max=10)),
        ('maintenance', 'maintenance', Uniform(min=1, max=3)),
    )
    phases = tuple(
        PhaseSpec(name=name, pool=pool,
                  duration_per_class=(duration,) * len(classes))
        for name, pool, duration in durations)
    return ScenarioConfig(
        pools=pools,
        classes=classes,
        phases=phases,
        arrival=Triangular(min=30, mode=35, max=40),
        project_limit=50,
        replications=5,
    )


def min_feasible_capacities(config):
    """Per pool, the largest demand any (class, phase) places on it.

    Pools no phase uses get 0.
    """
    floor = dict.fromkeys(config.pool_names, 0)
    for project_class in config.classes:
        for phase, demand in zip(config.phases, project_class.demands):
            floor[phase.pool] = max(floor[phase.pool], demand)
    return tuple(floor[name] for name in config.pool_names)


def _replace(config, check_feasibility=False, **updates):
    data = config.model_dump(mode='json')
    data.update(updates)
    return _build(data, check_feasibility=check_feasibility)


def with_capacities(config, capacities):
    """Returns a copy of `config` with the pool capacities replaced."""
    if len(capacities) != len(config.pools):
        raise ValueError('Expected {} capacities, got {}.'.format(
            len(config.pools), len(capacities)))
    pools = [{'name': pool.name, 'capacity': int(capacity)}
             for pool, capacity in zip(config.pools, capacities)]
    return _replace(config, pools=pools)


def with_project_limit(config, project_limit):
    """Returns a copy of `config` emitting `project_limit` projects.

    A delivery-count stop is dropped so the run follows the new limit.
    """
    stop = config.stop
    if isinstance(stop, AfterNDelivered):
        stop = None
    return _replace(config, project_limit=project_limit,
                    stop=None if stop is None else stop.model_dump())


def uncapacitated(config):
    """Returns a copy of `config` in which no capture ever waits.

    Every pool gets enough units for all projects to hold their largest
    demand at the same time.
    """
    floors = min_feasible_capacities(config)
    return with_capacities(
        config, [max(1, floor) * config.project_limit for floor in floors])


def isolate_phase(config, phase):
    """Returns a one-phase scenario that runs `phase` on its own.

    Arrivals, classes and their error probabilities are kept; only the
    phase's pool and each class's demand for it remain.

    Args:
        config (ScenarioConfig): Source scenario.
        phase (int or str): Phase index or name.
    """
    names = [p.name for p in config.phases]
    index = names.index(phase) if isinstance(phase, str) else int(phase)
    if not 0 <= index < len(names):
        raise ValueError('Phase index must be in [0, {}), got {}.'.format(
            len(names), index))

    spec = config.phases[index]
    data = config.model_dump(mode='json')
    data['pools'] = [pool.model_dump() for pool in config.pools
                     if pool.name == spec.pool]
    data['phases'] = [spec.model_dump()]
    for class_data, project_class in zip(data['classes'], config.classes):
        class_data['demands'] = [project_class.demands[index]]
    return _build(data, check_feasibility=False)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def set_parameter(config, path, value, check_feasibility=False):
    """Returns a copy of `config` with the numeric field at `path` set.

    Path segments are separated by dots. A segment addressing a list is an
    index or, for named items, the item's name, e.g.
    ``pools.programmers.capacity`` or ``phases.2.duration_per_class.0.max``.
    Setting `project_limit` drops a delivery-count stop, as
    `with_project_limit` does.

    Args:
        config (ScenarioConfig): Source scenario.
        path (str): Dotted path of a numeric field.
        value (float): New value; integral values are stored as int for
            integer fields.
        check_feasibility (bool): Also reject demands above pool capacity.
            Without it an infeasible scenario loads and blocks when run.

    Raises:
        KeyError: `path` does not address a numeric field.
        ScenarioValidationError: the new value breaks the schema, or the
            feasibility check when `check_feasibility` is set.
    """
    data = config.model_dump(mode='json')
    segments = path.split('.')
    node = data
    for depth, segment in enumerate(segments):
        last = depth == len(segments) - 1
        if isinstance(node, dict):
            if segment not in node:
                raise KeyError('Unknown parameter path {!r}'.format(path))
            key = segment
        elif isinstance(node, list):
            if segment.isdigit() and int(segment) < len(node):
                key = int(segment)
            else:
                matches = [i for i, item in enumerate(node)
                           if isinstance(item, dict) and item.get('name') == segment]
                if not matches:
                    raise KeyError('Unknown parameter path {!r}'.format(path))
                key = matches[0]
        else:
            raise KeyError('Unknown parameter path {!r}'.format(path))

        if last:
            if not _is_number(node[key]):
                raise KeyError('Parameter {!r} is not numeric'.format(path))
            if isinstance(node[key], int) and float(value).is_integer():
                value = int(value)
            node[key] = value
        else:
            node = node[key]

    if segments == ['project_limit'] and isinstance(config.stop, AfterNDelivered):
        data['stop'] = None
    return _build(data, check_feasibility=check_feasibility)
