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

"""Seedable random streams and the sampling laws used by scenarios"""

from typing import Annotated, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats


class UnsupportedDistributionError(ValueError):
    """The operation is not defined for the given distribution type."""


class RngStream(object):
    """Deterministic uniform stream for one replication.

    Each stream is a PCG64 generator seeded from
    ``numpy.random.SeedSequence(master_seed, spawn_key=(stream_id,))``.
    The seed sequence hashes the master seed together with the stream id,
    so streams of one master seed are independent and a given
    `(master_seed, stream_id)` always yields the same sequence.

    Args:
        master_seed (int): Non-negative 64-bit master seed.
        stream_id (int): Stream index, the replication number.
    """

    def __init__(self, master_seed, stream_id=0):
        if master_seed < 0 or stream_id < 0:
            raise ValueError('Seeds must be non-negative, got master_seed={} '
                             'and stream_id={}.'.format(master_seed, stream_id))
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        seed_sequence = np.random.SeedSequence(self.master_seed,
                                               spawn_key=(self.stream_id,))
        self._generator = np.random.Generator(np.random.PCG64(seed_sequence))

    def uniform(self, size=None):
        """Draws from the uniform law on `[0, 1)`."""
        return self._generator.random(size)


class _Distribution(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class Triangular(_Distribution):
    type: Literal['triangular'] = 'triangular'
    min: float
    mode: float
    max: float

    @model_validator(mode='after')
    def _check_limits(self):
        if not (self.min <= self.mode <= self.max and self.min < self.max):
            raise ValueError('Triangular requires min <= mode <= max and '
                             'min < max, got min={}, mode={}, max={}'.format(
                                 self.min, self.mode, self.max))
        return self


class Uniform(_Distribution):
    type: Literal['uniform'] = 'uniform'
    min: float
    max: float

    @model_validator(mode='after')
    def _check_limits(self):
        if not self.min < self.max:
            raise ValueError('Uniform requires min < max, got min={}, '
                             'max={}'.format(self.min, self.max))
        return self


class Categorical(_Distribution):
    type: Literal['categorical'] = 'categorical'
    weights: Tuple[Annotated[float, Field(ge=0, le=1)], ...] = Field(..., min_length=1)

    @model_validator(mode='after')
    def _check_weights(self):
        total = sum(self.weights)
        if abs(total - 1) > 1e-9:
            raise ValueError('Categorical weights must sum to 1, got '
                             '{:.6g}'.format(total))
        return self


class Bernoulli(_Distribution):
    type: Literal['bernoulli'] = 'bernoulli'
    p: float = Field(..., ge=0, le=1)


Distribution = Annotated[Union[Triangular, Uniform, Categorical, Bernoulli],
                         Field(discriminator='type')]


def _as_output(values, scalar):
    return values.item() if scalar else values


def inverse_cdf(dist, u):
    """Maps uniform variates `u` in `[0, 1)` onto `dist`.

    Triangular laws use the two-branch inverse CDF split at
    ``(mode - min) / (max - min)``; categorical laws return the index `i`
    with ``cum[i - 1] <= u < cum[i]`` of the cumulative weights, so a `u`
    exactly on a boundary selects the next category; Bernoulli laws return
    ``u < p``.

    Args:
        dist (Distribution): Law to sample.
        u (float or numpy.array): Uniform variates.

    Returns:
        float, int, bool or numpy.array: One value per variate.
    """
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)

    if isinstance(dist, Triangular):
        a, c, b = dist.min, dist.mode, dist.max
        split = (c - a) / (b - a)
        rising = a + np.sqrt(u * (b - a) * (c - a))
        falling = b - np.sqrt((1 - u) * (b - a) * (b - c))
        return _as_output(np.where(u < split, rising, falling), scalar)

    if isinstance(dist, Uniform):
        return _as_output(dist.min + u * (dist.max - dist.min), scalar)

    if isinstance(dist, Categorical):
        cumulative = np.cumsum(dist.weights)
        index = np.searchsorted(cumulative, u, side='right')
        # cumulative[-1] may round below 1
        index = np.minimum(index, len(dist.weights) - 1)
        return _as_output(index, scalar)

    if isinstance(dist, Bernoulli):
        return _as_output(u < dist.p, scalar)

    raise UnsupportedDistributionError(
        'Unknown distribution: {!r}'.format(dist))


def sample(dist, rng, size=None):
    """Draws from `dist` by inverse transform of `rng` variates.

    Args:
        dist (Distribution): Law to sample.
        rng (RngStream): Stream owned by the caller.
        size (int): Number of draws. If `None`, a single value is returned.

    Returns:
        float, int, bool or numpy.array: The draw(s).
    """
    return inverse_cdf(dist, rng.uniform(size))


def pdf(dist, x):
    """Evaluates the density of a triangular or uniform law.

    At the mode of a triangular law the density is ``2 / (max - min)``.
    Uniform densities include both limits. Density is 0 outside the support.

    Raises:
        UnsupportedDistributionError: `dist` is categorical or Bernoulli.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    density = np.zeros_like(x)

    if isinstance(dist, Triangular):
        a, c, b = dist.min, dist.mode, dist.max
        rising = (x >= a) & (x < c)
        density[rising] = 2 * (x[rising] - a) / ((b - a) * (c - a))
        falling = (x > c) & (x <= b)
        density[falling] = 2 * (b - x[falling]) / ((b - a) * (b - c))
        density[x == c] = 2 / (b - a)
    elif isinstance(dist, Uniform):
        inside = (x >= dist.min) & (x <= dist.max)
        density[inside] = 1 / (dist.max - dist.min)
    else:
        raise UnsupportedDistributionError(
            'pdf is only defined for triangular and uniform laws, '
            'got {}'.format(dist.type))

    return density[0].item() if scalar else density


def to_scipy(dist):
    """Returns the frozen `scipy.stats` law equivalent to `dist`."""
    if isinstance(dist, Triangular):
        scale = dist.max - dist.min
        return stats.triang(c=(dist.mode - dist.min) / scale,
                            loc=dist.min, scale=scale)
    if isinstance(dist, Uniform):
        return stats.uniform(loc=dist.min, scale=dist.max - dist.min)
    raise UnsupportedDistributionError(
        'No continuous scipy law for {}'.format(dist.type))


def cdf(dist, x):
    """Analytic CDF of a triangular or uniform law."""
    return to_scipy(dist).cdf(x)


def moments(dist):
    """Closed-form mean and variance of a triangular or uniform law.

    Raises:
        UnsupportedDistributionError: `dist` is categorical or Bernoulli.

    Returns:
        (float, float): Mean and variance.
    """
    if isinstance(dist, Triangular):
        a, c, b = dist.min, dist.mode, dist.max
        mean = (a + b + c) / 3
        variance = (a ** 2 + b ** 2 + c ** 2 - a * b - a * c - b * c) / 18
        return mean, variance
    if isinstance(dist, Uniform):
        a, b = dist.min, dist.max
        return (a + b) / 2, (b - a) ** 2 / 12
    raise UnsupportedDistributionError(
        'moments are only defined for triangular and uniform laws, '
        'got {}'.format(dist.type))
