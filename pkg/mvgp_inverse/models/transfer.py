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

"""Deterministic transfer-function drivers."""

from oslo_log import log as logging

from mvgp_inverse.common import constants
from mvgp_inverse.common import utils
from mvgp_inverse import baselines
from mvgp_inverse import dataio
from mvgp_inverse import kernels
from mvgp_inverse.models import driver_api

LOG = logging.getLogger(__name__)

# stream ids keep bootstrap draws of different methods apart
_WA_STREAM = 1
_MAT_STREAM = 2


class TransferDriverBase(driver_api.ModelDriverBase):

    def _split(self, data, covariates):
        self._require_missing(covariates)
        props = data.proportions()
        return (props[covariates.observed_index],
                covariates.observed_values,
                data.counts[covariates.missing_index])


class WaDriver(TransferDriverBase):
    name = constants.MODEL_WA

    def fit_predict(self, data, covariates):
        calib, x, y_new = self._split(data, covariates)
        base = self.settings['baselines']
        fit = baselines.wa_fit(calib, x, boot=base['boot'],
                               deshrink_kind=base['deshrink'],
                               rng=utils.make_rng(self.seed, _WA_STREAM))
        point, lower, upper = baselines.wa_predict(fit, y_new)
        return driver_api.Prediction(covariates.missing_index, point,
                                     lower, upper)


class MatDriver(TransferDriverBase):
    name = constants.MODEL_MAT

    def fit_predict(self, data, covariates):
        calib, x, y_new = self._split(data, covariates)
        base = self.settings['baselines']
        fit = baselines.mat_fit(calib, x, k=min(base['mat_k'], x.size),
                                weighting=base['mat_weighting'],
                                boot=base['boot'],
                                rng=utils.make_rng(self.seed, _MAT_STREAM))
        point, lower, upper = baselines.mat_predict(y_new, fit)
        return driver_api.Prediction(covariates.missing_index, point,
                                     lower, upper)


class MlrcDriver(TransferDriverBase):
    name = constants.MODEL_MLRC

    def fit_predict(self, data, covariates):
        self._require_missing(covariates)
        covariates = dataio.standardize_covariates(covariates)
        base = self.settings['baselines']
        grid = kernels.make_knots(
            covariates, base['mlrc_grid'],
            self.settings['kernel']['knot_extend']).locations
        fit = baselines.mlrc_fit(data.counts[covariates.observed_index],
                                 covariates.working_values(), grid)
        point, lower, upper, flat = baselines.mlrc_predict(
            fit, data.counts[covariates.missing_index])
        return driver_api.Prediction(
            covariates.missing_index, covariates.to_original(point),
            covariates.to_original(lower), covariates.to_original(upper),
            flags={'flat_profile': flat,
                   'excluded_species': fit.excluded})
