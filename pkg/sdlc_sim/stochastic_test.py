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

"""Tests for stochastic"""

import numpy as np
from absl.testing import absltest, parameterized
from pydantic import TypeAdapter, ValidationError
from scipy import stats

from sdlc_sim.stochastic import (Bernoulli, Categorical, Distribution, RngStream,
                                 Triangular, Uniform,
                                 UnsupportedDistributionError, cdf, inverse_cdf,
                                 moments, pdf, sample)


ARRIVAL = Triangular(min=30, mode=35, max=40)
MIX = Categorical(weights=(0.7, 0.25, 0.05))


class TestStochastic(parameterized.TestCase):

    def test_rng_stream_reproducible(self):
        a = RngStream(42, 3).uniform(100)
        b = RngStream(42, 3).uniform(100)
        np.testing.assert_array_equal(a, b)

    def test_rng_streams_independent(self):
        a = RngStream(42, 0).uniform(10000)
        b = RngStream(42, 1).uniform(10000)
        self.assertEqual(np.sum(a == b), 0)
        self.assertLess(abs(np.corrcoef(a, b)[0, 1]), 0.05)

    def test_rng_stream_bad_seed(self):
        with self.assertRaises(ValueError):
            RngStream(-1)

    @parameterized.named_parameters(
        ('lower_limit', 0.0, 30.0),
        ('median', 0.5, 35.0),
        ('first_quarter', 0.125, 32.5),
    )
    def test_triangular_inverse_cdf(self, u, expected):
        self.assertAlmostEqual(inverse_cdf(ARRIVAL, u), expected)

    def test_triangular_upper_limit(self):
        self.assertAlmostEqual(inverse_cdf(ARRIVAL, 1 - 1e-12), 40.0, places=4)

    def test_degenerate_triangular(self):
        right = Triangular(min=0, mode=0, max=1)
        left = Triangular(min=0, mode=1, max=1)
        self.assertAlmostEqual(inverse_cdf(right, 0.75), 0.5)
        self.assertAlmostEqual(inverse_cdf(left, 0.25), 0.5)

    def test_uniform_inverse_cdf(self):
        self.assertEqual(inverse_cdf(Uniform(min=3, max=5), 0.5), 4.0)

    @parameterized.named_parameters(
        ('small', 0.5, 0),
        ('boundary', 0.70, 1),
        ('medium', 0.9, 1),
        ('large', 0.96, 2),
    )
    def test_categorical_inverse_cdf(self, u, expected):
        self.assertEqual(inverse_cdf(MIX, u), expected)

    def test_bernoulli(self):
        rng = RngStream(1)
        self.assertFalse(np.any(sample(Bernoulli(p=0), rng, size=1000)))
        self.assertTrue(np.all(sample(Bernoulli(p=1), rng, size=1000)))
        self.assertTrue(inverse_cdf(Bernoulli(p=0.3), 0.29))
        self.assertFalse(inverse_cdf(Bernoulli(p=0.3), 0.3))

    def test_scalar_and_vector_sampling(self):
        value = sample(ARRIVAL, RngStream(5))
        self.assertIsInstance(value, float)
        values = sample(ARRIVAL, RngStream(5), size=10)
        self.assertEqual(values.shape, (10,))
        self.assertEqual(values[0], value)

    def test_triangular_moments_and_ks(self):
        samples = sample(ARRIVAL, RngStream(2024), size=10 ** 6)
        mean, variance = moments(ARRIVAL)

        self.assertAlmostEqual(mean, 35.0)
        self.assertAlmostEqual(variance, 25 / 6)
        self.assertLess(abs(samples.mean() - 35), 0.05)
        self.assertLess(abs(samples.var() - variance), 0.05)
        self.assertTrue(np.all((samples >= 30) & (samples <= 40)))

        statistic = stats.kstest(samples, lambda x: cdf(ARRIVAL, x)).statistic
        self.assertLess(statistic, 0.002)

    @parameterized.named_parameters(
        ('analysis', 3, 5),
        ('design', 5, 10),
        ('implementation', 15, 20),
        ('testing', 5, 10),
        ('maintenance', 1, 3),
    )
    def test_uniform_moments(self, low, high):
        dist = Uniform(min=low, max=high)
        samples = sample(dist, RngStream(low * 100 + high), size=10 ** 6)
        mean, variance = moments(dist)

        self.assertAlmostEqual(mean, (low + high) / 2)
        self.assertAlmostEqual(variance, (high - low) ** 2 / 12)
        self.assertLess(abs(samples.mean() - mean), 0.05)
        self.assertLess(abs(samples.var() - variance), 0.05)
        self.assertTrue(np.all((samples >= low) & (samples <= high)))

    def test_categorical_frequencies(self):
        draws = sample(MIX, RngStream(11), size=10 ** 6)
        frequencies = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(frequencies, [0.7, 0.25, 0.05], atol=0.003)

    def test_pdf(self):
        self.assertAlmostEqual(pdf(ARRIVAL, 35), 0.2)
        self.assertEqual(pdf(ARRIVAL, 29.9), 0)
        self.assertEqual(pdf(ARRIVAL, 40.1), 0)
        self.assertAlmostEqual(pdf(ARRIVAL, 32.5), 0.1)
        self.assertAlmostEqual(pdf(Uniform(min=3, max=5), 4), 0.5)
        self.assertAlmostEqual(pdf(Uniform(min=3, max=5), 5), 0.5)
        np.testing.assert_allclose(pdf(ARRIVAL, np.array([30, 35, 37.5])),
                                   [0, 0.2, 0.1])

    def test_pdf_matches_scipy(self):
        x = np.linspace(29, 41, 97)
        np.testing.assert_allclose(pdf(ARRIVAL, x[x != 35]),
                                   stats.triang(c=0.5, loc=30, scale=10).pdf(x[x != 35]),
                                   atol=1e-12)

    @parameterized.named_parameters(
        ('categorical', MIX),
        ('bernoulli', Bernoulli(p=0.1)),
    )
    def test_unsupported(self, dist):
        with self.assertRaises(UnsupportedDistributionError):
            pdf(dist, 1.0)
        with self.assertRaises(UnsupportedDistributionError):
            moments(dist)

    @parameterized.named_parameters(
        ('triangular_mode_outside', Triangular, {'min': 30, 'mode': 45, 'max': 40}),
        ('triangular_point', Triangular, {'min': 1, 'mode': 1, 'max': 1}),
        ('uniform_reversed', Uniform, {'min': 5, 'max': 3}),
        ('categorical_sum', Categorical, {'weights': (0.7, 0.25, 0.1)}),
        ('categorical_empty', Categorical, {'weights': ()}),
        ('bernoulli_range', Bernoulli, {'p': 1.5}),
    )
    def test_invariants(self, cls, kwargs):
        with self.assertRaises(ValidationError):
            cls(**kwargs)

    def test_literal_syntax(self):
        adapter = TypeAdapter(Distribution)
        dist = adapter.validate_python({'type': 'triangular', 'min': 30,
                                        'mode': 35, 'max': 40})
        self.assertEqual(dist, ARRIVAL)
        dist = adapter.validate_json('{"type": "uniform", "min": 3, "max": 5}')
        self.assertEqual(dist, Uniform(min=3, max=5))
        with self.assertRaises(ValidationError):
            adapter.validate_python({'type': 'normal', 'mean': 0})


if __name__ == '__main__':
    absltest.main()
