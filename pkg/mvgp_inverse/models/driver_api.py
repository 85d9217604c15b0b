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

import abc
import dataclasses
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from oslo_utils import importutils

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc

LOG = logging.getLogger(__name__)


@dataclasses.dataclass
class Prediction(object):
    """Predictions for reconstruction rows, original covariate units.

    ``draws`` is (K, n) for probabilistic models and None otherwise.
    """

    row_ids: np.ndarray
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: Optional[np.ndarray] = None
    flags: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_draws(cls, row_ids, draws):
        draws = np.asarray(draws, dtype=float)
        lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
        return cls(row_ids=np.asarray(row_ids), point=draws.mean(axis=0),
                   lower=lower, upper=upper, draws=draws)

    @property
    def probabilistic(self):
        return self.draws is not None

    def to_frame(self):
        return pd.DataFrame(dict(zip(constants.PREDICTION_COLUMNS,
                                     (self.row_ids, self.point, self.lower,
                                      self.upper))))

    def draws_frame(self):
        """Long format (row_id, draw, value) for violin plots."""
        if self.draws is None:
            return pd.DataFrame(columns=['row_id', 'draw', 'value'])
        k, n = self.draws.shape
        return pd.DataFrame({'row_id': np.tile(self.row_ids, k),
                             'draw': np.repeat(np.arange(k), n),
                             'value': self.draws.ravel()})


class ModelDriverBase(metaclass=abc.ABCMeta):
    """Fits on rows with observed covariates, predicts the others.

    Drivers are built from a settings snapshot (see
    ``mvgp_inverse.common.config.snapshot``) so that they can be shipped to
    worker processes.
    """

    name = None
    probabilistic = False

    def __init__(self, settings, seed=0, jobs=1):
        self.settings = settings
        self.seed = seed
        self.jobs = jobs

    @abc.abstractmethod
    def fit_predict(self, data, covariates):
        """Return a Prediction for ``covariates.missing_index``."""

    def diagnostics(self):
        """Run details for the manifest; empty for deterministic models."""
        return {}

    def figures(self):
        """Named figure-data frames produced by the last fit."""
        return {}

    @staticmethod
    def _require_missing(covariates):
        if not covariates.n_missing:
            raise exc.NothingToPredict()


def load_driver(name, settings, seed=0, jobs=1):
    try:
        path = constants.MODEL_DRIVERS[name]
    except KeyError:
        raise exc.InvalidParameter(
            name='model', value=name,
            reason=_('expected one of %s') % ', '.join(constants.MODELS))
    LOG.debug("Loading model driver %s", path)
    return importutils.import_class(path)(settings, seed=seed, jobs=jobs)
