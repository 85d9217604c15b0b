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

import fixtures
import numpy as np
from oslo_config import cfg
from oslo_config import fixture as config_fixture
from oslotest import base

from mvgp_inverse.common import config
from mvgp_inverse import dataio


class BaseTestCase(base.BaseTestCase):
    """Test case with a private, fully registered configuration."""

    def setUp(self):
        super(BaseTestCase, self).setUp()
        self.conf = cfg.ConfigOpts()
        config.register_opts(self.conf)
        config.register_cli_opts(self.conf)
        self.config_fixture = self.useFixture(
            config_fixture.Config(self.conf))
        self.conf([], project='mvgp-inverse', default_config_files=[])
        self.useFixture(fixtures.EnvironmentVariable('MVGP_THREADS'))

    def config(self, **kw):
        self.config_fixture.config(**kw)

    def settings(self, **groups):
        """Settings snapshot with per group overrides applied."""
        for group, values in groups.items():
            for key, value in values.items():
                if group == 'DEFAULT':
                    self.config(**{key: value})
                else:
                    self.config(group=group, **{key: value})
        return config.snapshot(self.conf)

    def quick_settings(self, chains=2, iterations=300, burn_in=100, thin=2,
                       **groups):
        sampler = dict(chains=chains, iterations=iterations, burn_in=burn_in,
                       thin=thin)
        sampler.update(groups.pop('sampler', {}))
        return self.settings(sampler=sampler, **groups)

    def tempdir(self):
        return self.useFixture(fixtures.TempDir()).path

    def assertAllClose(self, expected, observed, rtol=1e-7, atol=0.0):
        np.testing.assert_allclose(observed, expected, rtol=rtol, atol=atol)


def toy_dataset(n_observed=40, n_missing=5, d=3, seed=0, total=80):
    """Counts with a clear monotone response to the covariate."""
    rng = np.random.default_rng(seed)
    n = n_observed + n_missing
    x = np.linspace(-2.0, 2.0, n)
    rng.shuffle(x)
    slopes = np.linspace(-1.5, 1.5, d)
    log_alpha = 1.0 + np.outer(x, slopes)
    props = np.exp(log_alpha)
    props /= props.sum(axis=1, keepdims=True)
    counts = np.vstack([rng.multinomial(total, p) for p in props])
    data = dataio.CompositionMatrix(
        counts, tuple('sp%d' % j for j in range(d)))
    covariates = dataio.CovariateSet(
        n_rows=n, observed_index=np.arange(n_observed),
        observed_values=x[:n_observed],
        missing_index=np.arange(n_observed, n))
    return data, covariates, x


def write_toy_dataset(directory, **kwargs):
    data, covariates, x = toy_dataset(**kwargs)
    counts = os.path.join(directory, 'counts.csv')
    cov = os.path.join(directory, 'covariates.csv')
    dataio.write_dataset(data, covariates, counts, cov)
    return counts, cov, x
