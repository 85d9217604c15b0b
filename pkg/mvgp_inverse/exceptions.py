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

from oslo_log import log as logging

from mvgp_inverse._i18n import _

LOG = logging.getLogger(__name__)


class MvgpException(Exception):
    """Base exception.

    Subclasses define a ``message`` template; keyword arguments given to the
    constructor are interpolated into it and kept as attributes.
    """
    message = _("An unknown exception occurred.")

    def __init__(self, **kwargs):
        self.kwargs = kwargs
        try:
            self.msg = self.message % kwargs
        except (KeyError, TypeError):
            LOG.exception("Exception message template %(cls)s could not be "
                          "formatted with %(kwargs)s",
                          {'cls': type(self).__name__, 'kwargs': kwargs})
            self.msg = self.message
        super(MvgpException, self).__init__(self.msg)

    def __str__(self):
        return self.msg


class InvalidParameter(MvgpException):
    message = _("Invalid value %(value)s for %(name)s: %(reason)s")


class UsageError(MvgpException):
    message = _("Usage error: %(reason)s")


class DataError(MvgpException):
    message = _("Invalid data: %(reason)s")


class MalformedCsv(DataError):
    message = _("Malformed CSV %(path)s at line %(line)s: %(reason)s")


class InvalidCount(DataError):
    message = _("Invalid count %(value)r in %(path)s at row %(row)s, "
                "column %(column)s: counts must be non-negative integers")


class EmptyComposition(DataError):
    message = _("Row %(row)s of %(path)s has a total count of zero")


class RowCountMismatch(DataError):
    message = _("%(counts_path)s has %(n_counts)s rows but %(cov_path)s "
                "describes %(n_covariates)s rows")


class InsufficientCovariates(DataError):
    message = _("At least %(needed)s distinct observed covariates are "
                "required, found %(found)s")


class DegenerateSplit(DataError):
    message = _("Split leaves %(train)s training rows and %(test)s test rows")


class NothingToPredict(DataError):
    message = _("nothing to predict: the dataset has no reconstruction rows")


class ModelError(MvgpException):
    message = _("Model failure: %(reason)s")


class NonPositiveDefinite(ModelError):
    message = _("%(what)s is not positive definite after adding a jitter of "
                "%(jitter)s")


class DegenerateRegression(ModelError):
    message = _("Deshrinking regression is degenerate: %(reason)s")


class InvalidInitialState(ModelError):
    message = _("Log likelihood is not finite at the current state "
                "(%(value)s)")


class NonFiniteLogPosterior(ModelError):
    message = _("Log posterior became %(value)s during stage %(stage)s; "
                "state: %(state)s")


class ChainFailure(ModelError):
    message = _("Chain %(chain)s failed at iteration %(iteration)s: "
                "%(reason)s")


class SpeciesFitFailure(ModelError):
    message = _("Response curve for species %(species)s did not converge: "
                "%(reason)s")


class ProgrammingError(MvgpException):
    message = _("Internal error: %(reason)s")


class StaleBasis(ProgrammingError):
    message = _("Basis rows are at version %(basis_version)s but the state "
                "is at version %(state_version)s")
