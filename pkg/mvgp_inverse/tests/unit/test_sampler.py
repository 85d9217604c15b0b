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

import math

import numpy as np
from scipy import stats

from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc
from mvgp_inverse import sampler
from mvgp_inverse.tests import base


class _State(object):

    def __init__(self, z, s):
        self.z = z
        self.s = s
        self.clamp_events = 0


class GaussianModel(object):
    """z ~ N(0, I) observed once with unit noise; s ~ Gamma(3, 1)."""

    def __init__(self, y, broken=False, bad_prior=False):
        self.y = np.asarray(y, dtype=float)
        self.broken = broken
        self.bad_prior = bad_prior

    def initial_state(self, chain, rng):
        return _State(np.zeros(self.y.size), 1.0 + chain)

    def new_adapt(self, cfg):
        return {'s': sampler.AdaptState.for_block(
            1, batch_size=cfg.adapt_batch, delta=cfg.adapt_delta)}

    def _z_loglik(self, z):
        return float(-0.5 * np.sum((self.y - z) ** 2))

    def update_z(self, state, rng, adapt, iteration, adapt_until):
        state.z, _ll = sampler.ess_step(state.z, np.ones(self.y.size),
                                        self._z_loglik, rng)

    def update_s(self, state, rng, adapt, iteration, adapt_until):
        state.s, _a, _lp = sampler.arwm_step(
            state.s, lambda s: stats.gamma.logpdf(s, 3.0), adapt['s'],
            constants.TRANSFORM_LOG, rng, iteration, adapt_until)

    def stages(self):
        return [('z', self.update_z), ('s', self.update_s)]

    def log_likelihood(self, state):
        if self.broken:
            return float('nan')
        return self._z_loglik(state.z)

    def log_posterior(self, state):
        if self.bad_prior:
            return -np.inf
        return (self.log_likelihood(state) -
                0.5 * float(np.sum(state.z ** 2)) +
                float(stats.gamma.logpdf(state.s, 3.0)))

    def flatten(self, state):
        return np.concatenate([state.z, [state.s]])

    def param_names(self):
        return tuple('z[%d]' % i for i in range(self.y.size)) + ('s',)

    def describe(self, state):
        return {'z': state.z.tolist(), 's': state.s}


class TestEllipticalSlice(base.BaseTestCase):

    def test_gaussian_posterior_moments(self):
        rng = np.random.default_rng(0)
        x, values = np.zeros(1), []
        for _ in range(20000):
            x, _ll = sampler.ess_step(
                x, np.ones(1), lambda z: -0.5 * float(np.sum((z - 1) ** 2)),
                rng)
            values.append(x[0])
        self.assertAllClose(0.5, np.mean(values), atol=0.05)
        self.assertAllClose(0.5, np.var(values), atol=0.06)

    def test_prior_mean_and_triangular_factor(self):
        rng = np.random.default_rng(1)
        factor = np.array([[2.0, 0.0], [0.0, 0.5]])
        x, values = np.full(2, 3.0), []
        for _ in range(20000):
            x, _ll = sampler.ess_step(x, factor, lambda z: 0.0, rng,
                                      mean=np.full(2, 3.0))
            values.append(x)
        values = np.array(values)
        self.assertAllClose([3.0, 3.0], values.mean(axis=0), atol=0.1)
        self.assertAllClose([2.0, 0.5], values.std(axis=0), rtol=0.07)

    def test_hops_between_modes(self):
        rng = np.random.default_rng(11)

        def loglik(z):
            return float(np.logaddexp(-8.0 * (z[0] - 2.0) ** 2,
                                      -8.0 * (z[0] + 2.0) ** 2))

        x, signs = np.array([2.0]), []
        for _ in range(100000):
            x, _ll = sampler.ess_step(x, np.array([3.0]), loglik, rng)
            signs.append(x[0] > 0)
        signs = np.array(signs)
        self.assertGreater(np.count_nonzero(signs[1:] != signs[:-1]), 100)
        self.assertAllClose(0.5, signs.mean(), atol=0.05)

    def test_correlated_gaussian_moments(self):
        rng = np.random.default_rng(12)
        prior_cov = 0.2 * np.eye(5) + 0.8
        y = np.array([1.0, 0.5, -0.5, 2.0, 0.0])
        cov = np.linalg.inv(np.linalg.inv(prior_cov) + 0.25 * np.eye(5))
        mean = cov @ (0.25 * y)
        factor = np.linalg.cholesky(prior_cov).T

        def loglik(z):
            return float(-0.125 * np.sum((z - y) ** 2))

        x, values = np.zeros(5), []
        for _ in range(20000):
            x, _ll = sampler.ess_step(x, factor, loglik, rng)
            values.append(x)
        values = np.array(values[1000:])
        self.assertAllClose(mean, values.mean(axis=0), atol=0.1)
        self.assertAllClose(cov, np.cov(values.T), atol=0.1)

    def test_non_finite_start(self):
        self.assertRaises(exc.InvalidInitialState, sampler.ess_step,
                          np.zeros(2), np.ones(2), lambda z: -np.inf,
                          np.random.default_rng(0))

    def test_collapsed_bracket_keeps_current(self):
        current = np.array([0.25])

        def loglik(z):
            return 0.0 if np.array_equal(z, current) else -np.inf

        new, value = sampler.ess_step(current, np.ones(1), loglik,
                                      np.random.default_rng(2))
        self.assertIs(current, new)
        self.assertEqual(0.0, value)


class TestRandomWalk(base.BaseTestCase):

    def test_log_transform_targets_gamma(self):
        rng = np.random.default_rng(3)
        adapt = sampler.AdaptState.for_block(1)
        s, values = 1.0, []
        for it in range(1, 40001):
            s, adapt, _lp = sampler.arwm_step(
                s, lambda v: stats.gamma.logpdf(v, 3.0), adapt,
                constants.TRANSFORM_LOG, rng, it, adapt_until=5000)
            if it > 5000:
                values.append(s)
        self.assertAllClose(3.0, np.mean(values), rtol=0.06)
        self.assertTrue(0.2 < adapt.acceptance_rate < 0.7)

    def test_logit_transform_targets_uniform(self):
        rng = np.random.default_rng(4)
        adapt = sampler.AdaptState.for_block(1)
        x, values = 0.0, []
        for it in range(1, 30001):
            x, adapt, _lp = sampler.arwm_step(x, lambda v: 0.0, adapt,
                                              constants.TRANSFORM_LOGIT, rng,
                                              it, adapt_until=2000)
            values.append(x)
        values = np.array(values[2000:])
        self.assertTrue(np.all(np.abs(values) < 1))
        self.assertAllClose(0.0, values.mean(), atol=0.05)
        self.assertAllClose(1.0 / 3.0, values.var(), atol=0.04)

    def test_scalar_acceptance_settles_near_target(self):
        rng = np.random.default_rng(13)
        adapt = sampler.AdaptState.for_block(1)
        x = 0.0
        for it in range(1, 15001):
            x, adapt, _lp = sampler.arwm_step(
                x, lambda v: -0.5 * v * v, adapt,
                constants.TRANSFORM_IDENTITY, rng, it, adapt_until=15000)
        accepts, attempts = adapt.accept_count, adapt.attempt_count
        for it in range(15001, 35001):
            x, adapt, _lp = sampler.arwm_step(
                x, lambda v: -0.5 * v * v, adapt,
                constants.TRANSFORM_IDENTITY, rng, it, adapt_until=15000)
        rate = ((adapt.accept_count - accepts) /
                (adapt.attempt_count - attempts))
        self.assertAllClose(constants.TARGET_RATE_SCALAR, rate, atol=0.05)

    def test_correlated_gaussian_moments(self):
        rng = np.random.default_rng(14)
        cov = np.array([[0.562, 0.372, 0.372, 0.372, 0.372],
                        [0.372, 0.562, 0.372, 0.372, 0.372],
                        [0.372, 0.372, 0.562, 0.372, 0.372],
                        [0.372, 0.372, 0.372, 0.562, 0.372],
                        [0.372, 0.372, 0.372, 0.372, 0.562]])
        mean = np.array([0.5, -1.0, 0.0, 1.5, 0.25])
        precision = np.linalg.inv(cov)

        def log_target(v):
            r = v - mean
            return float(-0.5 * r @ precision @ r)

        adapt = sampler.AdaptState.for_block(5)
        x, values = mean.copy(), []
        for it in range(1, 100001):
            x, adapt, _lp = sampler.arwm_step(
                x, log_target, adapt, constants.TRANSFORM_IDENTITY, rng, it,
                adapt_until=10000)
            if it > 10000:
                values.append(x)
        values = np.array(values)
        self.assertAllClose(mean, values.mean(axis=0), atol=0.25)
        self.assertAllClose(cov, np.cov(values.T), atol=0.2)

    def test_rejection_returns_current_object(self):
        current = np.array([0.5, -0.5])
        adapt = sampler.AdaptState.for_block(2)
        new, adapt, logp = sampler.arwm_step(
            current, lambda v: 0.0 if v is current else -np.inf, adapt,
            constants.TRANSFORM_IDENTITY, np.random.default_rng(0))
        self.assertIs(current, new)
        self.assertEqual(0.0, logp)
        self.assertEqual(0.0, adapt.acceptance_rate)


class TestAdaptState(base.BaseTestCase):

    def test_target_rates(self):
        self.assertEqual(constants.TARGET_RATE_SCALAR,
                         sampler.AdaptState.for_block(1).target_rate)
        self.assertEqual(constants.TARGET_RATE_MULTIVARIATE,
                         sampler.AdaptState.for_block(4).target_rate)

    def test_scale_moves_towards_target(self):
        adapt = sampler.AdaptState(log_scale=0.0, batch_size=2, delta=0.5)
        adapt.record(True, adapting=True)
        self.assertEqual(0.0, adapt.log_scale)
        adapt.record(True, adapting=True)
        self.assertAlmostEqual(0.5, adapt.log_scale)
        adapt.record(False, adapting=True)
        adapt.record(False, adapting=True)
        self.assertAlmostEqual(0.5 - 0.5 / math.sqrt(2), adapt.log_scale)

    def test_frozen_after_adaptation(self):
        adapt = sampler.AdaptState(log_scale=0.0, batch_size=1)
        for _ in range(5):
            adapt.record(True, adapting=False)
        self.assertEqual(0.0, adapt.log_scale)
        self.assertEqual(1.0, adapt.acceptance_rate)

    def test_no_attempts(self):
        self.assertTrue(math.isnan(sampler.AdaptState().acceptance_rate))


class TestChainConfig(base.BaseTestCase):

    def test_defaults_adapt_until_to_burn_in(self):
        cfg = sampler.ChainConfig(iterations=100, burn_in=20, thin=5,
                                  chains=2)
        self.assertEqual(20, cfg.adapt_until)
        self.assertEqual(16, cfg.n_retained)
        kept = [it for it in range(1, 101) if cfg.retained(it)]
        self.assertEqual(16, len(kept))
        self.assertEqual(25, kept[0])

    def test_validation(self):
        self.assertRaises(exc.InvalidParameter, sampler.ChainConfig,
                          iterations=10, burn_in=10, thin=1, chains=1)
        self.assertRaises(exc.InvalidParameter, sampler.ChainConfig,
                          iterations=10, burn_in=2, thin=1, chains=1,
                          adapt_until=5)
        self.assertRaises(exc.InvalidParameter, sampler.ChainConfig,
                          iterations=10, burn_in=2, thin=0, chains=1)

    def test_from_settings_ignores_other_keys(self):
        settings = self.settings()['sampler']
        cfg = sampler.ChainConfig.from_settings(settings, seed=9)
        self.assertEqual(9, cfg.seed)
        self.assertEqual(settings['iterations'], cfg.iterations)
        self.assertEqual(settings['burn_in'], cfg.adapt_until)


class TestGelmanRubin(base.BaseTestCase):

    def _samples(self, values):
        values = np.asarray(values)
        k = values.shape[1]
        cfg = sampler.ChainConfig(iterations=k + 1, burn_in=0, thin=1,
                                  chains=values.shape[0])
        return sampler.PosteriorSamples(
            names=('a',), draws=[v[:, None] for v in values],
            iterations=np.arange(1, k + 1),
            chain_ids=tuple(range(len(values))),
            config=cfg)

    def test_mixed_chains(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            rhat = sampler.gelman_rubin(
                self._samples(rng.standard_normal((2, 10000))), 'a')
            self.assertGreaterEqual(rhat, 1.0)
            self.assertLessEqual(rhat, 1.01)

    def test_separated_chains(self):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((2, 500)) + np.array([[0.0], [5.0]])
        self.assertGreater(sampler.gelman_rubin(self._samples(values), 'a'),
                           2.0)

    def test_trend_within_chain_is_detected(self):
        values = np.tile(np.linspace(0.0, 10.0, 100), (2, 1))
        self.assertGreater(sampler.gelman_rubin(self._samples(values), 'a'),
                           1.5)

    def test_too_few_draws(self):
        samples = self._samples(np.zeros((2, 5)))
        self.assertEqual({}, samples.rhat())
        self.assertRaises(exc.InvalidParameter, sampler.gelman_rubin,
                          samples, 'a')

    def test_constant_chains(self):
        self.assertEqual(1.0, sampler.gelman_rubin(
            self._samples(np.ones((2, 20))), 'a'))


class TestRunChains(base.BaseTestCase):

    def setUp(self):
        super(TestRunChains, self).setUp()
        self.model = GaussianModel([1.0, -2.0])
        self.cfg = sampler.ChainConfig(iterations=400, burn_in=100, thin=3,
                                       chains=2, seed=5)

    def test_shapes_and_names(self):
        samples = sampler.run_chains(self.model, self.cfg)
        self.assertEqual(2, samples.n_chains)
        self.assertEqual(100, samples.n_draws)
        self.assertEqual(('z[0]', 'z[1]', 's'), samples.names)
        self.assertEqual((2, 100), samples.param('s').shape)
        self.assertEqual((200, 3), samples.pooled().shape)
        frame = samples.to_frame(1)
        self.assertEqual(['iteration', 'z[0]', 'z[1]', 's'],
                         list(frame.columns))
        self.assertEqual(103, frame['iteration'].iloc[0])
        self.assertEqual(['s'], list(samples.acceptance_rates()))

    def test_unknown_parameter(self):
        samples = sampler.run_chains(self.model, self.cfg)
        self.assertRaises(exc.InvalidParameter, samples.param, 'rho')

    def test_seeded_and_independent_of_jobs(self):
        one = sampler.run_chains(self.model, self.cfg, jobs=1)
        again = sampler.run_chains(self.model, self.cfg, jobs=1)
        two = sampler.run_chains(self.model, self.cfg, jobs=2)
        for a, b, c in zip(one.draws, again.draws, two.draws):
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(a, c)
        self.assertFalse(np.array_equal(one.draws[0], one.draws[1]))

    def test_non_finite_state_fails_the_chain(self):
        model = GaussianModel([0.0], broken=True)
        e = self.assertRaises(exc.ChainFailure, sampler.run_chain, model,
                              self.cfg, 0)
        self.assertEqual(1, e.kwargs['iteration'])
        self.assertIsInstance(e.kwargs['reason'], exc.NonFiniteLogPosterior)

    def test_non_finite_prior_fails_the_sweep(self):
        model = GaussianModel([0.0], bad_prior=True)
        state = model.initial_state(0, np.random.default_rng(0))
        self.assertTrue(np.isfinite(model.log_likelihood(state)))
        e = self.assertRaises(exc.NonFiniteLogPosterior, sampler.gibbs_sweep,
                              state, model, np.random.default_rng(0),
                              model.new_adapt(self.cfg))
        self.assertEqual('z', e.kwargs['stage'])
