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

import numpy as np
from scipy import special

from mvgp_inverse import baselines
from mvgp_inverse.common import constants
from mvgp_inverse import dataio
from mvgp_inverse import exceptions as exc
from mvgp_inverse import sampler
from mvgp_inverse.tests import base


def unimodal_counts(n=80, d=6, total=200, seed=0):
    """Counts from Gaussian response curves along x in [-2, 2]."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n)
    optima = np.linspace(-2.0, 2.0, d)
    props = np.exp(-(x[:, None] - optima) ** 2 / (2 * 0.8 ** 2))
    props /= props.sum(axis=1, keepdims=True)
    counts = np.vstack([rng.multinomial(total, p) for p in props])
    return counts, x


class TestWeightedAveraging(base.BaseTestCase):

    def test_optima_and_raw_estimates(self):
        props = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        optima = baselines.wa_optima(props, [0.0, 2.0, 1.0])
        self.assertAllClose([1.0 / 3.0, 5.0 / 3.0], optima)
        self.assertAllClose([1.0 / 3.0, 5.0 / 3.0, 1.0],
                            baselines.wa_raw(props, optima))

    def test_optima_stay_within_observed_range(self):
        for seed in range(20):
            counts, x = unimodal_counts(n=40, seed=seed)
            fit = baselines.wa_fit(counts, x, boot=20,
                                   rng=np.random.default_rng(seed))
            lo, hi = x.min(), x.max()
            for optima in [fit.optima] + list(fit.boot_optima):
                self.assertTrue(np.all(optima >= lo - 1e-12))
                self.assertTrue(np.all(optima <= hi + 1e-12))
            props = counts / counts.sum(axis=1, keepdims=True)
            raw = baselines.wa_raw(props[:, fit.species], fit.optima)
            self.assertTrue(np.all(raw >= fit.optima.min() - 1e-12))
            self.assertTrue(np.all(raw <= fit.optima.max() + 1e-12))

    def test_absent_species_has_no_optimum(self):
        props = np.array([[1.0, 0.0], [1.0, 0.0]])
        optima = baselines.wa_optima(props, [0.0, 1.0])
        self.assertTrue(np.isnan(optima[1]))

    def test_linear_deshrink(self):
        xhat = np.array([0.0, 1.0, 2.0, 3.0])
        fit = baselines.fit_deshrink(xhat, 2.0 * xhat + 1.0)
        self.assertAllClose([1.0, 2.0], fit.coef)
        self.assertAllClose([5.0], fit(np.array([2.0])))

    def test_spline_deshrink_reproduces_a_line(self):
        xhat = np.linspace(-1.0, 1.0, 50)
        fit = baselines.fit_deshrink(xhat, 3.0 * xhat - 0.5,
                                     constants.DESHRINK_SPLINE)
        self.assertEqual(5, fit.knots.size)
        self.assertAllClose(3.0 * xhat - 0.5, fit(xhat), atol=1e-8)

    def test_spline_deshrink_follows_curvature(self):
        xhat = np.linspace(-1.0, 1.0, 200)
        x = np.tanh(2.0 * xhat)
        linear = baselines.fit_deshrink(xhat, x)
        spline = baselines.fit_deshrink(xhat, x, constants.DESHRINK_SPLINE)
        self.assertLess(np.mean((spline(xhat) - x) ** 2),
                        np.mean((linear(xhat) - x) ** 2))

    def test_degenerate_deshrink(self):
        self.assertRaises(exc.DegenerateRegression, baselines.fit_deshrink,
                          np.ones(5), np.arange(5.0))
        self.assertRaises(exc.InvalidParameter, baselines.fit_deshrink,
                          np.arange(5.0), np.arange(5.0), 'cubic')

    def test_identity_deshrink(self):
        self.assertAllClose([1.5], baselines.Deshrink.identity()([1.5]))

    def test_fit_and_predict(self):
        counts, x = unimodal_counts()
        calib = baselines._normalize(counts[:60])
        fit = baselines.wa_fit(calib, x[:60], boot=50,
                               rng=np.random.default_rng(1))
        self.assertEqual((50, 6), fit.boot_optima.shape)
        self.assertGreater(fit.rmse_boot, 0.0)
        point, lower, upper = baselines.wa_predict(fit, counts[60:])
        self.assertGreater(np.corrcoef(point, x[60:])[0, 1], 0.9)
        self.assertTrue(np.all(lower < point))
        self.assertTrue(np.all(point < upper))

    def test_bootstrap_is_seeded(self):
        counts, x = unimodal_counts(n=30)
        first = baselines.wa_fit(counts, x, boot=20,
                                 rng=np.random.default_rng(5))
        second = baselines.wa_fit(counts, x, boot=20,
                                  rng=np.random.default_rng(5))
        np.testing.assert_array_equal(first.boot_optima, second.boot_optima)

    def test_zero_abundance_species_is_dropped(self):
        counts, x = unimodal_counts(n=40)
        counts = np.column_stack([counts, np.zeros(40, dtype=int)])
        fit = baselines.wa_fit(counts[:30], x[:30], boot=10)
        self.assertFalse(fit.species[-1])
        point, _lower, _upper = baselines.wa_predict(fit, counts[30:])
        self.assertTrue(np.all(np.isfinite(point)))

    def test_empty_prediction_row(self):
        counts, x = unimodal_counts(n=30)
        fit = baselines.wa_fit(counts, x, boot=5)
        self.assertRaises(exc.EmptyComposition, baselines.wa_predict, fit,
                          np.zeros((1, 6)))


class TestModernAnalogs(base.BaseTestCase):

    def test_squared_chord(self):
        p = np.array([0.25, 0.75])
        self.assertEqual(0.0, baselines.squared_chord(p, p))
        self.assertAllClose(2.0, baselines.squared_chord([1.0, 0.0],
                                                         [0.0, 1.0]))

    def test_chord_metric_properties(self):
        rng = np.random.default_rng(8)
        p, q, r = (rng.dirichlet(np.ones(5), 10000) for _ in range(3))
        pq = baselines.squared_chord(p, q)
        qr = baselines.squared_chord(q, r)
        pr = baselines.squared_chord(p, r)
        self.assertEqual((10000,), pq.shape)
        self.assertAllClose(pq, baselines.squared_chord(q, p))
        self.assertTrue(np.all(pq > 0))
        self.assertTrue(np.all(pq <= 2.0))
        self.assertTrue(np.all(np.sqrt(pr) <=
                               np.sqrt(pq) + np.sqrt(qr) + 1e-12))
        # the squared form only satisfies the relaxed inequality
        self.assertTrue(np.all(pr <= 2.0 * (pq + qr) + 1e-12))
        self.assertGreater(baselines.squared_chord([1.0, 0.0], [0.0, 1.0]),
                           2 * baselines.squared_chord([1.0, 0.0],
                                                       [0.5, 0.5]))

    def test_nearest_analog(self):
        calib = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        x = np.array([-1.0, 0.0, 1.0])
        self.assertAllClose([1.0], baselines.mat_point(
            [[0.1, 0.9]], calib, x, k=1))
        self.assertAllClose([0.5], baselines.mat_point(
            [[0.1, 0.9]], calib, x, k=2))

    def test_inverse_distance_exact_match(self):
        calib = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        x = np.array([-1.0, 0.0, 1.0])
        self.assertAllClose([0.0], baselines.mat_point(
            [[0.5, 0.5]], calib, x, k=3,
            weighting=constants.WEIGHT_INVERSE_DISTANCE))

    def test_inverse_distance_weights(self):
        calib = np.array([[1.0, 0.0], [0.0, 1.0]])
        x = np.array([0.0, 1.0])
        new = np.array([[0.9, 0.1]])
        dist = baselines.squared_chord(new, calib)
        expected = (1.0 / dist[1]) / (1.0 / dist[0] + 1.0 / dist[1])
        self.assertAllClose([expected], baselines.mat_point(
            new, calib, x, k=2,
            weighting=constants.WEIGHT_INVERSE_DISTANCE))

    def test_validation(self):
        calib = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertRaises(exc.InvalidParameter, baselines.mat_point,
                          [[0.5, 0.5]], calib, [0.0, 1.0], k=3)
        self.assertRaises(exc.InvalidParameter, baselines.mat_point,
                          [[0.5, 0.3, 0.2]], calib, [0.0, 1.0], k=1)

    def test_fit_and_predict(self):
        counts, x = unimodal_counts()
        fit = baselines.mat_fit(counts[:60], x[:60], k=4, boot=30,
                                rng=np.random.default_rng(2))
        point, lower, upper = baselines.mat_predict(counts[60:], fit)
        self.assertGreater(np.corrcoef(point, x[60:])[0, 1], 0.9)
        self.assertTrue(np.all(lower < upper))
        self.assertTrue(np.all((point >= x[:60].min()) &
                               (point <= x[:60].max())))


class TestMlrc(base.BaseTestCase):

    def test_recovers_response_curve(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-2.0, 2.0, 400)
        coef = np.array([-0.5, 0.8, -0.6])
        pi = special.expit(coef[0] + coef[1] * x + coef[2] * x ** 2)
        trials = np.full(400, 100)
        present = rng.binomial(trials, pi)
        counts = np.column_stack([present, trials - present])
        fit = baselines.mlrc_fit(counts, x, np.linspace(-3, 3, 61))
        self.assertAllClose(coef, fit.coef[0], atol=0.1)

    def test_rare_species_are_excluded(self):
        counts, x = unimodal_counts(n=40)
        counts[:, 0] = 0
        counts[:2, 0] = 5
        fit = baselines.mlrc_fit(counts, x, np.linspace(-3, 3, 61))
        self.assertEqual((0,), fit.excluded)
        self.assertFalse(fit.species[0])
        self.assertEqual(5, fit.coef.shape[0])

    def test_predict(self):
        counts, x = unimodal_counts(n=120, total=400, seed=4)
        grid = np.linspace(-3, 3, 301)
        fit = baselines.mlrc_fit(counts[:100], x[:100], grid)
        point, lower, upper, flat = baselines.mlrc_predict(fit, counts[100:])
        self.assertFalse(flat.any())
        self.assertTrue(np.all((lower <= point) & (point <= upper)))
        self.assertLess(np.sqrt(np.mean((point - x[100:]) ** 2)), 0.5)
        self.assertTrue(np.isin(point, grid).all())

    def test_flat_profile(self):
        grid = np.linspace(-1.0, 1.0, 11)
        fit = baselines.MlrcFit(coef=np.zeros((2, 3)),
                                species=np.array([True, True]),
                                grid=grid, excluded=())
        _point, lower, upper, flat = baselines.mlrc_predict(
            fit, np.array([[3, 4]]))
        self.assertTrue(flat[0])
        self.assertEqual(-1.0, lower[0])
        self.assertEqual(1.0, upper[0])

    def test_profile_drop(self):
        grid = np.linspace(-3, 3, 601)
        fit = baselines.MlrcFit(coef=np.array([[0.0, 0.0, -1.0]]),
                                species=np.array([True, False]),
                                grid=grid, excluded=(1,))
        profile = baselines.mlrc_profile(fit, np.array([[20, 0]]))
        point, lower, upper, _flat = baselines.mlrc_predict(
            fit, np.array([[20, 0]]))
        self.assertAlmostEqual(0.0, point[0])
        best = profile[0].max()
        inside = grid[profile[0] >= best - baselines.PROFILE_DROP]
        self.assertEqual(inside.min(), lower[0])
        self.assertEqual(inside.max(), upper[0])


class TestBummer(base.BaseTestCase):

    def test_log_alpha_is_doubly_exponential(self):
        params = baselines.BummerParams(a=np.array([0.5, 1.0]),
                                        b=np.array([0.0, 1.0]),
                                        c2=np.array([1.0, 0.5]))
        value = params.log_alpha(np.array([1.0]))
        self.assertAllClose([[np.exp(0.5 - 0.5), np.exp(1.0)]], value)
        self.assertRaises(exc.InvalidParameter, baselines.BummerParams,
                          np.zeros(1), np.zeros(1), np.zeros(1))

    def test_priors_from_settings(self):
        priors = baselines.BummerPriors.from_settings(
            self.settings(baselines={'bummer_a_sd': 3.0}))
        self.assertEqual(3.0, priors.a_sd)
        self.assertEqual(1.5, priors.x_inflation)

    def test_model_caches_and_outputs(self):
        data, covariates, _x = base.toy_dataset(n_observed=30, n_missing=3)
        covariates = dataio.standardize_covariates(covariates)
        cfg = sampler.ChainConfig(iterations=80, burn_in=40, thin=2,
                                  chains=2, seed=1)
        model, samples = baselines.bummer_fit(data, covariates, cfg)
        self.assertEqual(('a[0]', 'a[1]', 'a[2]'),
                         samples.names[:3])
        draws = baselines.bummer_predict(model, samples)
        self.assertEqual((40, 3), draws.shape)
        self.assertTrue(np.all(np.isfinite(draws)))
        curves = model.response_curves(
            samples, np.linspace(*model.response_span(), num=5))
        self.assertEqual(['x', 'sp0', 'sp1', 'sp2'], list(curves.columns))
        self.assertEqual(set(['a', 'b', 'logc2']),
                         set(samples.acceptance_rates()))

    def test_incremental_rows_match_refresh(self):
        data, covariates, _x = base.toy_dataset(n_observed=20, n_missing=2)
        model = baselines.BummerModel(data,
                                      dataio.standardize_covariates(
                                          covariates))
        rng = np.random.default_rng(0)
        state = model.initial_state(1, rng)
        cfg = sampler.ChainConfig(iterations=10, burn_in=5, thin=1,
                                  chains=1)
        adapt = model.new_adapt(cfg)
        for it in range(1, 6):
            sampler.gibbs_sweep(state, model, rng, adapt, it, 5)
        rows = state.cache['rows'].copy()
        model.refresh(state)
        self.assertAllClose(rows, state.cache['rows'], rtol=1e-10,
                            atol=1e-10)
        self.assertTrue(np.isfinite(model.log_posterior(state)))
