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

"""Separation-strategy prior on the inter-species covariance.

The correlation matrix is parameterized by partial correlations laid out in
the strict upper triangle of a d x d matrix (column by column). Marginal
standard deviations get half-Cauchy priors written as a gamma mixture:
``tau2 | lambda ~ Gamma(1/2, rate=lambda)`` and
``lambda ~ Gamma(1/2, rate=s**2)``.
"""

import dataclasses
from typing import Optional

import numpy as np
from oslo_log import log as logging
from scipy import linalg
from scipy import stats

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc

LOG = logging.getLogger(__name__)


def vine_size(d):
    return d * (d - 1) // 2


def vine_pairs(d):
    """(row, column) of every partial correlation, in storage order."""
    return [(i, j) for j in range(1, d) for i in range(j)]


def dimension_for(size):
    d = int(round((1 + np.sqrt(1 + 8 * size)) / 2))
    if vine_size(d) != size:
        raise exc.InvalidParameter(name='phi', value=size,
                                   reason=_('not a triangular number'))
    return d


def psi_schedule(d, schedule=constants.PSI_LKJ, eta=1.0):
    """Beta shapes for each partial correlation.

    ``lkj`` gives row i (0-based) the shape eta + (d - 2 - i) / 2, which
    makes the implied correlation matrix LKJ(eta) distributed. ``uniform``
    gives every partial correlation the shape eta.
    """
    if schedule == constants.PSI_UNIFORM:
        return np.full(vine_size(d), float(eta))
    if schedule != constants.PSI_LKJ:
        raise exc.InvalidParameter(name='psi_schedule', value=schedule,
                                   reason=_('expected lkj or uniform'))
    return np.array([eta + (d - 2 - i) / 2.0 for i, _j in vine_pairs(d)])


@dataclasses.dataclass(frozen=True)
class VineAngles(object):
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).ravel()
        psi = np.broadcast_to(np.asarray(self.psi, dtype=float),
                              phi.shape).copy()
        dimension_for(phi.size)
        if not np.all(np.abs(phi) < 1):
            raise exc.InvalidParameter(name='phi', value=phi.tolist(),
                                       reason=_('partial correlations must '
                                                'lie in (-1, 1)'))
        if not np.all(psi > 0):
            raise exc.InvalidParameter(name='psi', value=psi.tolist(),
                                       reason=_('must be positive'))
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'psi', psi)

    @property
    def d(self):
        return dimension_for(self.phi.size)

    def with_phi(self, phi):
        return VineAngles(phi, self.psi)

    def matrix(self):
        d = self.d
        out = np.zeros((d, d))
        if self.phi.size:
            rows, cols = zip(*vine_pairs(d))
            out[rows, cols] = self.phi
        return out


@dataclasses.dataclass(frozen=True)
class ScaleMixture(object):
    tau2: np.ndarray
    lam: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        tau2 = np.asarray(self.tau2, dtype=float).ravel()
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float),
                              tau2.shape).copy()
        s = np.broadcast_to(np.asarray(self.s, dtype=float),
                            tau2.shape).copy()
        for name, arr in (('tau2', tau2), ('lambda', lam), ('s', s)):
            if not np.all(np.isfinite(arr) & (arr > 0)):
                raise exc.InvalidParameter(name=name, value=arr.tolist(),
                                           reason=_('entries must be '
                                                    'positive'))
        object.__setattr__(self, 'tau2', tau2)
        object.__setattr__(self, 'lam', lam)
        object.__setattr__(self, 's', s)

    @property
    def tau(self):
        return np.sqrt(self.tau2)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


@dataclasses.dataclass(frozen=True)
class CovFactor(object):
    """Upper-triangular factors with R_omega'R_omega = Omega, R'R = Sigma."""

    R_omega: np.ndarray
    R: Optional[np.ndarray] = None

    @property
    def omega(self):
        return self.R_omega.T @ self.R_omega

    @property
    def sigma(self):
        if self.R is None:
            raise exc.ProgrammingError(reason=_('scales not assembled'))
        return self.R.T @ self.R


def vine_to_cholesky(v):
    phi = v.matrix()
    d = phi.shape[0]
    np.fill_diagonal(phi, 1.0)
    shrink = np.sqrt(np.clip(1.0 - np.triu(phi, 1) ** 2, 0.0, 1.0))
    carried = np.ones((d, d))
    if d > 1:
        carried[1:] = np.cumprod(shrink[:-1], axis=0)
    return CovFactor(R_omega=np.triu(phi * carried))


def cholesky_to_vine(r_omega, psi=None):
    """Partial correlations of an upper correlation Cholesky factor."""
    r_omega = np.asarray(r_omega, dtype=float)
    d = r_omega.shape[0]
    phi = np.zeros((d, d))
    for j in range(1, d):
        remaining = 1.0
        for i in range(j):
            phi[i, j] = r_omega[i, j] / np.sqrt(remaining)
            remaining *= 1.0 - phi[i, j] ** 2
    pairs = vine_pairs(d)
    values = np.array([phi[i, j] for i, j in pairs])
    if psi is None:
        psi = psi_schedule(d)
    return VineAngles(np.clip(values, -1 + 1e-15, 1 - 1e-15), psi)


def correlation_to_vine(omega, psi=None):
    try:
        r_omega = linalg.cholesky(np.asarray(omega, dtype=float),
                                  lower=False)
    except linalg.LinAlgError:
        raise exc.NonPositiveDefinite(what='correlation matrix', jitter=0)
    return cholesky_to_vine(r_omega, psi)


def log_prior_phi(v):
    """Scaled Beta(psi, psi) log densities on (-1, 1)."""
    return float(np.sum(stats.beta.logpdf((v.phi + 1.0) / 2.0,
                                          v.psi, v.psi)) -
                 v.phi.size * np.log(2.0))


def log_prior_tau2(sm):
    return float(np.sum(stats.gamma.logpdf(sm.tau2, 0.5,
                                           scale=1.0 / sm.lam)))


def log_prior_lambda(sm):
    return float(np.sum(stats.gamma.logpdf(sm.lam, 0.5,
                                           scale=1.0 / sm.s ** 2)))


def log_prior_scales(sm):
    return log_prior_tau2(sm) + log_prior_lambda(sm)


def sample_lambda_given_tau2(sm, rng):
    """Exact conditional draw, Gamma(shape=1, rate=s**2 + tau2)."""
    lam = rng.gamma(1.0, 1.0 / (sm.s ** 2 + sm.tau2))
    # guard the (practically impossible) zero draw
    return sm.replace(lam=np.maximum(lam, np.finfo(float).tiny))


def sample_tau2_given_lambda(sm, rng):
    """Prior conditional draw, used when no likelihood is attached."""
    tau2 = rng.gamma(0.5, 1.0 / sm.lam)
    return sm.replace(tau2=np.maximum(tau2, np.finfo(float).tiny))


def assemble_R(cf, sm):
    return CovFactor(R_omega=cf.R_omega, R=cf.R_omega * sm.tau[None, :])


def sample_vine(psi, rng):
    psi = np.asarray(psi, dtype=float)
    phi = 2.0 * rng.beta(psi, psi) - 1.0
    return VineAngles(np.clip(phi, -1 + 1e-12, 1 - 1e-12), psi)


def sample_covariance_prior(d, psi, s, rng):
    """One joint prior draw of (vine, scales, assembled factor)."""
    vine = sample_vine(np.broadcast_to(psi, (vine_size(d),)), rng)
    s = np.broadcast_to(np.asarray(s, dtype=float), (d,))
    lam = np.maximum(rng.gamma(0.5, 1.0 / s ** 2), np.finfo(float).tiny)
    tau2 = np.maximum(rng.gamma(0.5, 1.0 / lam), np.finfo(float).tiny)
    scales = ScaleMixture(tau2=tau2, lam=lam, s=s)
    return vine, scales, assemble_R(vine_to_cholesky(vine), scales)


def initial_vine(d, psi):
    return VineAngles(np.zeros(vine_size(d)), psi)


def initial_scales(d, s):
    return ScaleMixture(tau2=np.ones(d), lam=np.ones(d), s=s)
