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
from oslo_log import log as logging

from mvgp_inverse.common import constants
from mvgp_inverse import baselines
from mvgp_inverse import dataio
from mvgp_inverse import kernels
from mvgp_inverse.models import driver_api
from mvgp_inverse import mvgp
from mvgp_inverse import sampler

LOG = logging.getLogger(__name__)

RESPONSE_GRID_POINTS = 100


class BayesianDriverBase(driver_api.ModelDriverBase):
    """Runs MCMC over parameters and reconstruction covariates jointly."""

    probabilistic = True

    def __init__(self, settings, seed=0, jobs=1):
        super(BayesianDriverBase, self).__init__(settings, seed, jobs)
        self.model = None
        self.samples = None

    def build_model(self, data, covariates):
        raise NotImplementedError()

    def chain_config(self):
        return sampler.ChainConfig.from_settings(self.settings['sampler'],
                                                 self.seed)

    def fit_predict(self, data, covariates):
        self._require_missing(covariates)
        if self.settings['data']['standardize']:
            covariates = dataio.standardize_covariates(covariates)
        self.model = self.build_model(data, covariates)
        self.samples = sampler.run_chains(self.model, self.chain_config(),
                                          jobs=self.jobs)
        self._warn_rhat()
        return driver_api.Prediction.from_draws(
            covariates.missing_index,
            self.model.covariate_draws(self.samples))

    def _warn_rhat(self):
        threshold = self.settings['sampler']['rhat_threshold']
        high = {k: v for k, v in self.samples.rhat().items()
                if v > threshold}
        if high:
            LOG.warning("%(model)s: %(n)d parameters have split R-hat above "
                        "%(t)s (worst %(worst).3f)",
                        {'model': self.name, 'n': len(high), 't': threshold,
                         'worst': max(high.values())})
        return high

    def diagnostics(self):
        if self.samples is None:
            return {}
        rhat = self.samples.rhat()
        threshold = self.settings['sampler']['rhat_threshold']
        return {
            'rhat': rhat,
            'rhat_above_threshold': sorted(k for k, v in rhat.items()
                                           if v > threshold),
            'acceptance': self.samples.acceptance_rates(),
            'clamp_events': self.samples.clamp_events,
            'retained_draws_per_chain': int(self.samples.n_draws),
        }

    def response_grid(self):
        lo, hi = self.model.response_span()
        return np.linspace(lo, hi, RESPONSE_GRID_POINTS)

    def figures(self):
        if self.samples is None:
            return {}
        return {'response_curves': self.model.response_curves(
            self.samples, self.response_grid())}


class MvgpDriver(BayesianDriverBase):
    name = constants.MODEL_MVGP
    basis_kind = kernels.BASIS_PREDICTIVE_PROCESS

    def build_model(self, data, covariates):
        kernel_settings = self.settings['kernel']
        knots = kernels.make_knots(covariates, kernel_settings['knots'],
                                   kernel_settings['knot_extend'])
        kernel = kernels.CorrelationKernel(family=kernel_settings['family'],
                                           nu=kernel_settings['nu'])
        return mvgp.MvgpModel(
            data, covariates, knots, kernel=kernel,
            priors=mvgp.MvgpPriors.from_settings(self.settings),
            basis_kind=self.basis_kind,
            spline_degree=kernel_settings['spline_degree'],
            overdispersion=self.settings['mvgp']['overdispersion'],
            x_update=self.settings['mvgp']['x_update'],
            jitter=kernel_settings['jitter'])

    def figures(self):
        figures = super(MvgpDriver, self).figures()
        if self.samples is not None:
            figures['correlation'] = self.model.posterior_correlation(
                self.samples)
        return figures


class GamDriver(MvgpDriver):
    """Same model with a B-spline basis in place of the Gaussian process."""

    name = constants.MODEL_GAM
    basis_kind = kernels.BASIS_BSPLINE


class BummerDriver(BayesianDriverBase):
    name = constants.MODEL_BUMMER

    def build_model(self, data, covariates):
        return baselines.BummerModel(
            data, covariates,
            baselines.BummerPriors.from_settings(self.settings))
