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

"""Correlation kernels, knot grids and low-rank bases."""

import collections
import dataclasses

import numpy as np
import pandas as pd
from oslo_log import log as logging
from scipy import interpolate
from scipy import linalg
from scipy import special

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse.common import utils
from mvgp_inverse import exceptions as exc

LOG = logging.getLogger(__name__)

BASIS_PREDICTIVE_PROCESS = 'pp'
BASIS_BSPLINE = 'bspline'


@dataclasses.dataclass(frozen=True)
class CorrelationKernel(object):
    """Isotropic correlation function of the covariate distance."""

    family: str = constants.KERNEL_EXPONENTIAL
    rho: float = 1.0
    nu: float = 0.5

    def __post_init__(self):
        if self.family not in constants.KERNEL_FAMILIES:
            raise exc.InvalidParameter(
                name='family', value=self.family,
                reason=_('expected one of %s') %
                ', '.join(constants.KERNEL_FAMILIES))
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise exc.InvalidParameter(name='rho', value=self.rho,
                                       reason=_('must be positive'))
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise exc.InvalidParameter(name='nu', value=self.nu,
                                       reason=_('must be positive'))

    def with_rho(self, rho):
        return dataclasses.replace(self, rho=float(rho))

    def __call__(self, delta):
        delta = np.abs(np.asarray(delta, dtype=float))
        if self.family == constants.KERNEL_EXPONENTIAL:
            return np.exp(-delta / self.rho)
        return _matern(delta, self.rho, self.nu)


def _matern(delta, rho, nu):
    # unit variance Matern, distance scaled by sqrt(2 nu) / rho
    r = np.sqrt(2.0 * nu) * delta / rho
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        return (1.0 + r) * np.exp(-r)
    if nu == 2.5:
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    out = np.ones_like(r)
    positive = r > 0
    rp = r[positive]
    with np.errstate(over='ignore', invalid='ignore'):
        value = (2.0 ** (1.0 - nu) / special.gamma(nu) *
                 rp ** nu * special.kv(nu, rp))
    # kv underflows to zero (and rp**nu may overflow) far out in the tail
    out[positive] = np.where(np.isfinite(value), value, 0.0)
    return out


def correlation(x, x2, kernel):
    return kernel(np.subtract(x, x2))


def gram(points, kernel):
    points = np.asarray(points, dtype=float)
    return kernel(points[:, None] - points[None, :])


@dataclasses.dataclass(frozen=True)
class KnotGrid(object):
    locations: np.ndarray

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float).ravel()
        if locations.size < 2:
            raise exc.InvalidParameter(name='knots', value=locations.size,
                                       reason=_('at least two knots are '
                                                'required'))
        if not np.all(np.diff(locations) > 0):
            raise exc.InvalidParameter(name='knots', value='grid',
                                       reason=_('locations must be strictly '
                                                'increasing'))
        locations.setflags(write=False)
        object.__setattr__(self, 'locations', locations)

    def __len__(self):
        return self.locations.size

    @property
    def span(self):
        return self.locations[0], self.locations[-1]

    def to_frame(self):
        return pd.DataFrame({'knot': np.arange(len(self)),
                             'location': self.locations})


def make_knots(cs, ell=constants.DEFAULT_KNOTS,
               extend=constants.DEFAULT_KNOT_EXTEND):
    """Evenly spaced knots past the observed range, working scale."""
    values = cs.working_values()
    if np.unique(values).size < 2:
        raise exc.InsufficientCovariates(needed=2,
                                         found=np.unique(values).size)
    if ell < 2:
        raise exc.InvalidParameter(name='knots', value=ell,
                                   reason=_('at least two knots are '
                                            'required'))
    sd = np.std(values, ddof=1)
    return KnotGrid(np.linspace(values.min() - extend * sd,
                                values.max() + extend * sd, ell))


def write_knots(knots, path):
    utils.write_csv(knots.to_frame(), path)


def read_knots(path):
    frame = pd.read_csv(path)
    return KnotGrid(frame['location'].to_numpy(dtype=float))


class LowRankBasis(object):
    """Predictive-process basis Z = c*(X, X*) C*(X*, X*)^-1.

    The upper Cholesky factor of C* is computed once; every row afterwards
    costs two triangular solves. ``version`` is bumped by each row
    replacement so that callers can detect stale rows.
    """

    kind = BASIS_PREDICTIVE_PROCESS

    def __init__(self, x_all, knots, kernel,
                 jitter=constants.DEFAULT_JITTER):
        self.knots = knots
        self.kernel = kernel
        self.jitter = jitter
        self.flops = collections.Counter()
        self.version = 0
        self.x = np.array(x_all, dtype=float)
        self.knot_chol = self._factorize()
        self.rows = self.rows_for(x_all)

    @property
    def n_knots(self):
        return len(self.knots)

    def _factorize(self):
        ell = self.n_knots
        cstar = gram(self.knots.locations, self.kernel)
        cstar[np.diag_indices(ell)] += self.jitter
        try:
            chol = linalg.cholesky(cstar, lower=False, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            raise exc.NonPositiveDefinite(what='knot correlation matrix',
                                          jitter=self.jitter)
        self.flops['factorize'] += ell ** 3 // 3
        return chol

    def cross_correlation(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.kernel(x[:, None] - self.knots.locations[None, :])

    def rows_for(self, x):
        cross = self.cross_correlation(x)
        ell = self.n_knots
        half = linalg.solve_triangular(self.knot_chol, cross.T, trans='T',
                                       lower=False)
        rows = linalg.solve_triangular(self.knot_chol, half,
                                       lower=False).T
        self.flops['rows'] += cross.shape[0] * (2 * ell * ell + ell)
        self.flops['row_calls'] += cross.shape[0]
        return np.ascontiguousarray(rows)

    def row(self, x):
        return self.rows_for([x])[0]

    def update_row(self, index, x):
        self.x[index] = x
        self.rows[index] = self.row(x)
        self.version += 1
        return self.rows[index]

    def refresh(self, index, x):
        """Replace one covariate and recompute every row."""
        self.x[index] = x
        self.rows = self.rows_for(self.x)
        self.version += 1
        return self.rows[index]

    @property
    def support(self):
        """Covariate interval the rows are defined on: the whole line."""
        return -np.inf, np.inf

    def with_kernel(self, kernel):
        """Basis over the same covariates and knots under a new kernel."""
        other = LowRankBasis(self.x, self.knots, kernel, jitter=self.jitter)
        other.version = self.version
        return other

    def prior_factor(self):
        """Upper factor U with U'U equal to the knot prior covariance."""
        return self.knot_chol

    def copy(self):
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.rows = self.rows.copy()
        other.x = self.x.copy()
        other.flops = collections.Counter()
        return other


def build_basis(x_all, knots, kernel, jitter=constants.DEFAULT_JITTER):
    return LowRankBasis(x_all, knots, kernel, jitter=jitter)


def basis_row(x, basis):
    return basis.row(x)


def _clamped_knots(knots, degree):
    loc = knots.locations
    return np.concatenate([np.repeat(loc[0], degree), loc,
                           np.repeat(loc[-1], degree)])


def bspline_basis(x_all, knots, degree=3):
    """B-spline design rows over the knot span (clamped boundary knots)."""
    if degree < 1:
        raise exc.InvalidParameter(name='degree', value=degree,
                                   reason=_('must be at least 1'))
    x = np.atleast_1d(np.asarray(x_all, dtype=float))
    lo, hi = knots.span
    outside = (x < lo) | (x > hi)
    if outside.any():
        raise exc.InvalidParameter(
            name='x', value=float(x[outside][0]),
            reason=_('outside the knot span [%(lo)g, %(hi)g]') %
            {'lo': lo, 'hi': hi})
    design = interpolate.BSpline.design_matrix(
        x, _clamped_knots(knots, degree), degree)
    return np.asarray(design.toarray())


class SplineBasis(object):
    """B-spline rows behind the same interface as LowRankBasis.

    Coefficients get independent standard normal priors, so the prior
    factor is the identity and there is no length-scale.
    """

    kind = BASIS_BSPLINE

    def __init__(self, x_all, knots, degree=3):
        self.knots = knots
        self.degree = degree
        self.kernel = None
        self.version = 0
        self.flops = collections.Counter()
        self.x = np.array(x_all, dtype=float)
        self.rows = bspline_basis(x_all, knots, degree)
        self.n_knots = self.rows.shape[1]

    def rows_for(self, x):
        return bspline_basis(x, self.knots, self.degree)

    def row(self, x):
        return self.rows_for([x])[0]

    def update_row(self, index, x):
        self.x[index] = x
        self.rows[index] = self.row(x)
        self.version += 1
        return self.rows[index]

    def refresh(self, index, x):
        """Replace one covariate and recompute every row."""
        self.x[index] = x
        self.rows = self.rows_for(self.x)
        self.version += 1
        return self.rows[index]

    def prior_factor(self):
        return np.eye(self.n_knots)

    @property
    def support(self):
        return self.knots.span

    def copy(self):
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.rows = self.rows.copy()
        other.x = self.x.copy()
        other.flops = collections.Counter()
        return other
