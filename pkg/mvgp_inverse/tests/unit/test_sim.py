#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.

import os

import numpy as np
from oslo_serialization import jsonutils

from mvgp_inverse.common import constants
from mvgp_inverse import dataio
from mvgp_inverse import exceptions as exc
from mvgp_inverse import kernels
from mvgp_inverse import sim
from mvgp_inverse.tests import base


class TestCovarianceHelpers(base.BaseTestCase):

    def test_block_correlation(self):
        omega = sim.block_correlation(4)
        self.assertAllClose(np.ones(4), np.diag(omega))
        self.assertEqual(0.6, omega[0, 1])
        self.assertEqual(0.6, omega[2, 3])
        self.assertEqual(-0.6, omega[0, 3])

    def test_default_sigma_is_a_correlation_matrix(self):
        sigma = sim.default_sigma(6, np.random.default_rng(0))
        self.assertAllClose(np.ones(6), np.diag(sigma))
        self.assertGreater(np.linalg.eigvalsh(sigma).min(), 0.0)

    def test_field_rejects_bad_sigma(self):
        rng = np.random.default_rng(0)
        points = np.linspace(0.0, 1.0, 5)
        kernel = kernels.CorrelationKernel()
        self.assertRaises(exc.InvalidParameter, sim.correlated_field,
                          points, kernel, np.array([[1.0, 0.5], [0.0, 1.0]]),
                          rng)
        self.assertRaises(exc.NonPositiveDefinite, sim.correlated_field,
                          points, kernel, np.array([[1.0, 2.0], [2.0, 1.0]]),
                          rng)

    def test_dirichlet_rows_fall_back_to_the_mean(self):
        alpha = np.array([[1e-300, 1e-300], [2.0, 2.0]])
        props = sim.dirichlet_rows(alpha, np.random.default_rng(0))
        self.assertAllClose(np.ones(2), props.sum(axis=1))


class TestSimulate(base.BaseTestCase):

    def _config(self, **kw):
        values = dict(n_train=40, n_test=10, d=4, seed=3)
        values.update(kw)
        return sim.SimConfig(**values)

    def test_mvgp_generator(self):
        out = sim.simulate(self._config())
        self.assertEqual((50, 4), out.data.counts.shape)
        totals = out.data.row_totals
        self.assertTrue(np.all((totals >= 50) & (totals <= 200)))
        self.assertEqual(list(range(40, 50)),
                         list(out.covariates.missing_index))
        self.assertEqual(10, len(out.truth['test_covariates']))
        self.assertTrue(np.all(np.abs(out.covariates.observed_values) <= 3))
        self.assertEqual('mvgp', out.truth['generator'])
        self.assertEqual(4, len(out.truth['params']['mu']))

    def test_bummer_generator(self):
        out = sim.simulate(self._config(generator=constants.GENERATOR_BUMMER))
        self.assertAllClose(np.linspace(-3.0, 3.0, 4),
                            out.truth['params']['b'])
        self.assertEqual((50, 4), out.data.counts.shape)

    def test_seeded(self):
        first = sim.simulate(self._config())
        second = sim.simulate(self._config())
        other = sim.simulate(self._config(seed=4))
        np.testing.assert_array_equal(first.data.counts, second.data.counts)
        self.assertFalse(np.array_equal(first.data.counts,
                                        other.data.counts))

    def test_single_species_gets_a_remainder_column(self):
        out = sim.simulate(self._config(d=1))
        self.assertEqual(('species_1', 'other'), out.data.species_names)
        self.assertTrue(np.all(out.data.counts[:, 1] == 0))

    def test_config_validation(self):
        self.assertRaises(exc.InvalidParameter, sim.SimConfig, n_train=0)
        self.assertRaises(exc.InvalidParameter, sim.SimConfig, count_min=10,
                          count_max=5)
        self.assertRaises(exc.InvalidParameter, sim.SimConfig, x_lower=1.0,
                          x_upper=1.0)
        self.assertRaises(exc.InvalidParameter, sim.SimConfig,
                          generator='gam')

    def test_from_settings(self):
        settings = self.settings(sim={'d': 3, 'n_test': 5})
        cfg = sim.SimConfig.from_settings(settings['sim'], seed=11,
                                          n_train=20)
        self.assertEqual(3, cfg.d)
        self.assertEqual(11, cfg.seed)
        self.assertEqual(25, cfg.n_rows)

    def test_written_files_load_back(self):
        out = sim.simulate(self._config())
        directory = self.tempdir()
        paths = [os.path.join(directory, name)
                 for name in ('counts.csv', 'cov.csv', 'truth.json')]
        sim.write_simulation(out, *paths)
        data, covariates = dataio.load_dataset(paths[0], paths[1])
        np.testing.assert_array_equal(out.data.counts, data.counts)
        self.assertEqual(10, covariates.n_missing)
        with open(paths[2]) as handle:
            truth = jsonutils.loads(handle.read())
        self.assertAllClose(out.truth['test_covariates'],
                            truth['test_covariates'])


class TestDemo(base.BaseTestCase):

    def test_four_species_correlation(self):
        demo = sim.demo_correlated_gps(seed=2)
        self.assertEqual((200, 100, 4), demo.curves.shape)
        self.assertAllClose(sim.FOUR_SPECIES_DEMO_CORRELATION,
                            demo.correlation, atol=0.15)
        frame = demo.curves_frame()
        self.assertEqual(['x', 'curve_1', 'curve_2', 'curve_3', 'curve_4'],
                         list(frame.columns))
        self.assertEqual((4, 4), demo.correlation_frame().shape)

    def test_single_curve_has_no_correlation(self):
        demo = sim.demo_correlated_gps(d=1, n_curves=3, n_grid=10)
        self.assertIsNone(demo.correlation)
        self.assertIsNone(demo.correlation_frame())

    def test_sigma_shape_is_checked(self):
        self.assertRaises(exc.InvalidParameter, sim.demo_correlated_gps,
                          d=3, sigma=np.eye(2))
