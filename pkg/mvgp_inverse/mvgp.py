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

"""Multivariate Gaussian process inverse model for compositional counts.

Counts follow a Dirichlet-multinomial law whose log concentrations are

    log alpha_i = mu + (z_i eta*) R + eps_i

where z_i is the low-rank basis row of the (possibly unknown) covariate of
row i, eta* holds the latent process at the knots for every species and
R'R is the inter-species covariance.
"""

import collections
import dataclasses
import math
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from scipy import linalg
from scipy import special
from scipy import stats

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import covprior
from mvgp_inverse import exceptions as exc
from mvgp_inverse import kernels
from mvgp_inverse import sampler

LOG = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def dm_log_pmf(y, alpha):
    """Dirichlet-multinomial log pmf, vectorized over leading axes."""
    y = np.asarray(y, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if (y < 0).any():
        raise exc.InvalidParameter(name='y', value=y.tolist(),
                                   reason=_('counts must be non-negative'))
    if not (np.all(np.isfinite(alpha)) and np.all(alpha > 0)):
        raise exc.InvalidParameter(name='alpha', value=alpha.tolist(),
                                   reason=_('must be finite and positive'))
    return _dm_terms(y, alpha, _multinomial_coefficient(y))


def _multinomial_coefficient(y):
    total = y.sum(axis=-1)
    return special.gammaln(total + 1.0) - special.gammaln(y + 1.0).sum(-1)


def _dm_terms(y, alpha, coefficient):
    total = y.sum(axis=-1)
    concentration = alpha.sum(axis=-1)
    return (coefficient + special.gammaln(concentration) -
            special.gammaln(total + concentration) +
            (special.gammaln(y + alpha) - special.gammaln(alpha)).sum(-1))


@dataclasses.dataclass(frozen=True)
class XPrior(object):
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise exc.InvalidParameter(name='variance', value=self.variance,
                                       reason=_('must be positive'))

    @property
    def sd(self):
        return math.sqrt(self.variance)

    def log_density(self, x):
        return stats.norm.logpdf(x, self.mean, self.sd)


def x_prior_from_data(cs, inflation=1.5):
    """N(sample mean, inflation x sample variance) on the working scale."""
    values = cs.working_values()
    if np.unique(values).size < 2:
        raise exc.InsufficientCovariates(needed=2,
                                         found=np.unique(values).size)
    return XPrior(mean=float(np.mean(values)),
                  variance=float(inflation * np.var(values, ddof=1)))


@dataclasses.dataclass(frozen=True)
class MvgpPriors(object):
    mu_sd: float = 5.0
    rho_lower: float = 0.01
    rho_upper: float = 10.0
    x_inflation: float = 1.5
    psi_schedule: str = constants.PSI_LKJ
    psi_eta: float = 1.0
    cauchy_scale: float = 2.5
    od_cauchy_scale: float = 1.0
    clamp: float = constants.LOG_ALPHA_CLAMP

    @classmethod
    def from_settings(cls, settings):
        model, prior = settings['mvgp'], settings['covprior']
        return cls(mu_sd=model['mu_prior_sd'],
                   rho_lower=model['rho_lower'],
                   rho_upper=model['rho_upper'],
                   x_inflation=model['x_prior_inflation'],
                   psi_schedule=prior['psi_schedule'],
                   psi_eta=prior['psi_eta'],
                   cauchy_scale=prior['cauchy_scale'],
                   od_cauchy_scale=prior['overdispersion_cauchy_scale'],
                   clamp=model['log_alpha_clamp'])

    def log_prior_rho(self, rho):
        """Log-uniform on [rho_lower, rho_upper]."""
        if rho is None:
            return 0.0
        if not self.rho_lower <= rho <= self.rho_upper:
            return -np.inf
        return -math.log(rho) - math.log(math.log(self.rho_upper /
                                                  self.rho_lower))

    def log_prior_mu(self, mu):
        return float(np.sum(stats.norm.logpdf(mu, 0.0, self.mu_sd)))


@dataclasses.dataclass
class Overdispersion(object):
    vine: covprior.VineAngles
    scales: covprior.ScaleMixture
    eps: np.ndarray

    @property
    def factor(self):
        return covprior.assemble_R(covprior.vine_to_cholesky(self.vine),
                                   self.scales).R


@dataclasses.dataclass
class MvgpState(object):
    """One point in parameter space plus chain-local bookkeeping.

    ``x_missing`` is on the working scale. ``x_version`` counts covariate
    writes and must match the version of the basis the state is paired
    with.
    """

    mu: np.ndarray
    eta_star: np.ndarray
    vine: covprior.VineAngles
    scales: covprior.ScaleMixture
    rho: Optional[float]
    x_missing: np.ndarray
    overdisp: Optional[Overdispersion] = None
    x_version: int = 0
    clamp_events: int = 0
    basis: object = dataclasses.field(default=None, repr=False)
    cache: dict = dataclasses.field(default_factory=dict, repr=False)

    def set_x(self, k, value):
        self.x_missing[k] = value
        self.x_version += 1

    @property
    def factor(self):
        return covprior.assemble_R(covprior.vine_to_cholesky(self.vine),
                                   self.scales).R

    def residuals(self, n_rows):
        if self.overdisp is None:
            return np.zeros((n_rows, self.mu.size))
        return self.overdisp.eps


def _check_version(state, basis):
    if state.x_version != basis.version:
        raise exc.StaleBasis(basis_version=basis.version,
                             state_version=state.x_version)


def _log_alpha(state, rows, row_index=None):
    """Unclamped log concentrations for the given basis rows."""
    latent = (rows @ state.eta_star) @ state.factor
    eps = 0.0
    if state.overdisp is not None:
        eps = (state.overdisp.eps if row_index is None
               else state.overdisp.eps[row_index])
    return state.mu + latent + eps


def latent_alpha(state, basis, row, clamp=constants.LOG_ALPHA_CLAMP):
    _check_version(state, basis)
    log_alpha = _log_alpha(state, basis.rows[row], row)
    return np.exp(np.clip(log_alpha, -clamp, clamp))


def log_gaussian_upper(values, factor):
    """Sum of log N(v; 0, U'U) over the columns of ``values``."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if np.ndim(factor) < 2:
        factor = np.diag(np.broadcast_to(factor, (values.shape[0],)))
    white = linalg.solve_triangular(factor, values, trans='T', lower=False)
    n, m = values.shape
    return float(-0.5 * m * n * LOG_2PI -
                 m * np.sum(np.log(np.abs(np.diag(factor)))) -
                 0.5 * np.sum(white ** 2))


def log_joint(state, data, cs, basis, xprior, priors=None):
    """Unnormalized log posterior of ``state``."""
    priors = priors or MvgpPriors()
    _check_version(state, basis)
    if state.x_missing.size != cs.n_missing:
        raise exc.ProgrammingError(
            reason=_('state has %(s)d reconstruction covariates, data '
                     'has %(d)d') % {'s': state.x_missing.size,
                                     'd': cs.n_missing})
    y = np.asarray(data.counts, dtype=float)
    log_alpha = np.clip(_log_alpha(state, basis.rows), -priors.clamp,
                        priors.clamp)
    total = float(np.sum(_dm_terms(y, np.exp(log_alpha),
                                   _multinomial_coefficient(y))))
    total += log_gaussian_upper(state.eta_star, basis.prior_factor())
    total += covprior.log_prior_phi(state.vine)
    total += covprior.log_prior_scales(state.scales)
    if basis.kind == kernels.BASIS_PREDICTIVE_PROCESS:
        total += priors.log_prior_rho(state.rho)
    total += priors.log_prior_mu(state.mu)
    total += float(np.sum(xprior.log_density(state.x_missing)))
    if state.overdisp is not None:
        od = state.overdisp
        total += log_gaussian_upper(od.eps.T, od.factor)
        total += covprior.log_prior_phi(od.vine)
        total += covprior.log_prior_scales(od.scales)
    return total


class MvgpModel(object):
    """Binds data, covariates, knots and priors; runs the Gibbs stages.

    ``basis_kind`` picks the predictive-process basis (``pp``) or the
    B-spline basis (``bspline``); the latter has no length-scale stage.
    """

    def __init__(self, data, covariates, knots, kernel=None, priors=None,
                 basis_kind=kernels.BASIS_PREDICTIVE_PROCESS,
                 spline_degree=3, overdispersion=False,
                 x_update=constants.X_UPDATE_LOCAL,
                 jitter=constants.DEFAULT_JITTER):
        if x_update not in (constants.X_UPDATE_LOCAL,
                            constants.X_UPDATE_FULL):
            raise exc.InvalidParameter(name='x_update', value=x_update,
                                       reason=_('expected local or full'))
        if covariates.n_rows != data.n_rows:
            raise exc.RowCountMismatch(counts_path='counts',
                                       n_counts=data.n_rows,
                                       cov_path='covariates',
                                       n_covariates=covariates.n_rows)
        self.data = data
        self.covariates = covariates
        self.knots = knots
        self.kernel = kernel or kernels.CorrelationKernel()
        self.priors = priors or MvgpPriors()
        self.basis_kind = basis_kind
        self.spline_degree = spline_degree
        self.overdispersion = overdispersion
        self.x_update = x_update
        self.jitter = jitter

        self.y = np.asarray(data.counts, dtype=float)
        self.n, self.d = self.y.shape
        self.coefficient = _multinomial_coefficient(self.y)
        self.xprior = x_prior_from_data(covariates, self.priors.x_inflation)
        self.missing = covariates.missing_index
        self.x_base = np.zeros(self.n)
        self.x_base[covariates.observed_index] = covariates.working_values()
        self.psi = covprior.psi_schedule(self.d, self.priors.psi_schedule,
                                         self.priors.psi_eta)
        self.s = np.full(self.d, self.priors.cauchy_scale)
        self.od_s = np.full(self.d, self.priors.od_cauchy_scale)
        if basis_kind == kernels.BASIS_BSPLINE:
            self.ell = len(knots) + spline_degree - 1
        else:
            self.ell = len(knots)
        self._layout = self._build_layout()

    # -- construction -----------------------------------------------------

    @property
    def has_rho(self):
        return self.basis_kind == kernels.BASIS_PREDICTIVE_PROCESS

    def response_span(self):
        return self.knots.span

    def x_all(self, x_missing):
        x = self.x_base.copy()
        x[self.missing] = x_missing
        return x

    def make_basis(self, x_all, rho=None):
        if self.has_rho:
            return kernels.LowRankBasis(x_all, self.knots,
                                        self.kernel.with_rho(rho),
                                        jitter=self.jitter)
        return kernels.SplineBasis(x_all, self.knots, self.spline_degree)

    def _initial_x(self, chain):
        sd = math.sqrt(self.xprior.variance / self.priors.x_inflation)
        offset = (chain + 1) // 2 * (-1) ** (chain + 1)
        x = np.full(self.missing.size,
                    self.xprior.mean + offset * 0.5 * sd)
        lo, hi = self.knots.span
        margin = 1e-6 * (hi - lo)
        return np.clip(x, lo + margin, hi - margin)

    def initial_state(self, chain, rng):
        """Overdispersed start: chain-indexed covariates, small eta*."""
        mean_props = np.mean(self.data.proportions(), axis=0)
        state = MvgpState(
            mu=np.log(np.maximum(mean_props, 1e-8)),
            eta_star=0.1 * rng.standard_normal((self.ell, self.d)),
            vine=covprior.initial_vine(self.d, self.psi),
            scales=covprior.initial_scales(self.d, self.s),
            rho=(min(max(1.0, self.priors.rho_lower), self.priors.rho_upper)
                 if self.has_rho else None),
            x_missing=self._initial_x(chain))
        if self.overdispersion:
            state.overdisp = Overdispersion(
                vine=covprior.initial_vine(self.d, self.psi),
                scales=covprior.initial_scales(self.d, self.od_s),
                eps=np.zeros((self.n, self.d)))
        state.basis = self.make_basis(self.x_all(state.x_missing),
                                      state.rho)
        self.refresh(state)
        return state

    def refresh(self, state):
        """Recompute every likelihood cache from the parameters."""
        rows = state.basis.rows
        field = rows @ state.eta_star
        factor = state.factor
        state.cache = {'field': field, 'factor': factor,
                       'latent': field @ factor}
        state.cache['rows'] = self.row_loglik(self._base(state) +
                                              state.cache['latent'])

    def _base(self, state, rows=slice(None)):
        if state.overdisp is None:
            return state.mu
        return state.mu + state.overdisp.eps[rows]

    def row_loglik(self, log_alpha, rows=slice(None)):
        clamp = self.priors.clamp
        alpha = np.exp(np.clip(log_alpha, -clamp, clamp))
        return _dm_terms(self.y[rows], alpha, self.coefficient[rows])

    def log_likelihood(self, state):
        return float(np.sum(state.cache['rows']))

    def log_posterior(self, state):
        return log_joint(state, self.data, self.covariates, state.basis,
                         self.xprior, self.priors)

    def new_adapt(self, cfg):
        blocks = {'phi': covprior.vine_size(self.d), 'tau2': self.d}
        if self.has_rho:
            blocks['rho'] = 1
        if self.overdispersion:
            blocks['phi_eps'] = covprior.vine_size(self.d)
            blocks['tau2_eps'] = self.d
        return {name: sampler.AdaptState.for_block(
                    dim, batch_size=cfg.adapt_batch, delta=cfg.adapt_delta)
                for name, dim in blocks.items() if dim}

    def stages(self):
        stages = [('eta_star', self.update_eta_star),
                  ('mu', self.update_mu),
                  ('phi', self.update_phi),
                  ('tau2', self.update_tau2),
                  ('lambda', self.update_lambda)]
        if self.has_rho:
            stages.append(('rho', self.update_rho))
        stages.append(('x', self.update_x))
        if self.overdispersion:
            stages.append(('overdispersion', self.update_overdispersion))
        stages.append(('bookkeeping', self.count_clamps))
        return stages

    # -- Gibbs stages -----------------------------------------------------

    def update_eta_star(self, state, rng, adapt, iteration, adapt_until):
        cache = state.cache
        rows = state.basis.rows
        factor = cache['factor']
        prior = state.basis.prior_factor()
        base = self._base(state)
        for j in range(self.d):
            old = cache['field'][:, j].copy()
            latent = cache['latent']

            def loglik(column):
                shifted = latent + np.outer(rows @ column - old, factor[j])
                return float(np.sum(self.row_loglik(base + shifted)))

            column, _ll = sampler.ess_step(
                state.eta_star[:, j], prior, loglik, rng,
                cur_loglik=float(np.sum(cache['rows'])))
            state.eta_star[:, j] = column
            cache['field'][:, j] = rows @ column
            cache['latent'] = latent + np.outer(cache['field'][:, j] - old,
                                                factor[j])
            cache['rows'] = self.row_loglik(base + cache['latent'])

    def update_mu(self, state, rng, adapt, iteration, adapt_until):
        cache = state.cache
        rest = cache['latent'] + (0.0 if state.overdisp is None
                                  else state.overdisp.eps)

        def loglik(mu):
            return float(np.sum(self.row_loglik(mu + rest)))

        state.mu, _ll = sampler.ess_step(
            state.mu, np.full(self.d, self.priors.mu_sd), loglik, rng,
            cur_loglik=float(np.sum(cache['rows'])))
        cache['rows'] = self.row_loglik(state.mu + rest)

    def _loglik_with_factor(self, state, factor):
        latent = state.cache['field'] @ factor
        return self.row_loglik(self._base(state) + latent), latent

    def _accept_factor(self, state, factor):
        state.cache['factor'] = factor
        state.cache['rows'], state.cache['latent'] = (
            self._loglik_with_factor(state, factor))

    def update_phi(self, state, rng, adapt, iteration, adapt_until):
        if self.d < 2:
            return

        def log_target(phi):
            if not np.all(np.abs(phi) < 1):
                return -np.inf
            vine = state.vine.with_phi(phi)
            factor = covprior.assemble_R(covprior.vine_to_cholesky(vine),
                                         state.scales).R
            rows, _latent = self._loglik_with_factor(state, factor)
            return covprior.log_prior_phi(vine) + float(np.sum(rows))

        cur = (covprior.log_prior_phi(state.vine) +
               self.log_likelihood(state))
        phi, _a, _lp = sampler.arwm_step(
            state.vine.phi, log_target, adapt['phi'],
            constants.TRANSFORM_LOGIT, rng, iteration, adapt_until,
            cur_logp=cur)
        if phi is not state.vine.phi:
            state.vine = state.vine.with_phi(phi)
            self._accept_factor(state, state.factor)

    def update_tau2(self, state, rng, adapt, iteration, adapt_until):
        r_omega = covprior.vine_to_cholesky(state.vine)

        def log_target(tau2):
            scales = state.scales.replace(tau2=tau2)
            factor = covprior.assemble_R(r_omega, scales).R
            rows, _latent = self._loglik_with_factor(state, factor)
            return covprior.log_prior_tau2(scales) + float(np.sum(rows))

        cur = (covprior.log_prior_tau2(state.scales) +
               self.log_likelihood(state))
        tau2, _a, _lp = sampler.arwm_step(
            state.scales.tau2, log_target, adapt['tau2'],
            constants.TRANSFORM_LOG, rng, iteration, adapt_until,
            cur_logp=cur)
        if tau2 is not state.scales.tau2:
            state.scales = state.scales.replace(tau2=tau2)
            self._accept_factor(state, state.factor)

    def update_lambda(self, state, rng, adapt, iteration, adapt_until):
        state.scales = covprior.sample_lambda_given_tau2(state.scales, rng)

    def update_rho(self, state, rng, adapt, iteration, adapt_until):
        """Length-scale move; an accepted value rebuilds the basis."""
        candidates = {}

        def log_target(rho):
            prior = self.priors.log_prior_rho(rho)
            if not np.isfinite(prior):
                return -np.inf
            try:
                basis = state.basis.with_kernel(self.kernel.with_rho(rho))
            except exc.NonPositiveDefinite:
                return -np.inf
            field = basis.rows @ state.eta_star
            rows = self.row_loglik(self._base(state) +
                                   field @ state.cache['factor'])
            candidates[rho] = (basis, field, rows)
            return (prior + float(np.sum(rows)) +
                    log_gaussian_upper(state.eta_star,
                                       basis.prior_factor()))

        cur = (self.priors.log_prior_rho(state.rho) +
               self.log_likelihood(state) +
               log_gaussian_upper(state.eta_star,
                                  state.basis.prior_factor()))
        rho, _a, _lp = sampler.arwm_step(
            state.rho, log_target, adapt['rho'], constants.TRANSFORM_LOG,
            rng, iteration, adapt_until, cur_logp=cur)
        if rho != state.rho:
            basis, field, rows = candidates[rho]
            state.rho = float(rho)
            state.basis = basis
            state.cache['field'] = field
            state.cache['latent'] = field @ state.cache['factor']
            state.cache['rows'] = rows

    def update_x(self, state, rng, adapt, iteration, adapt_until):
        """Reconstruction covariates, one basis row at a time."""
        basis = state.basis
        cache = state.cache
        factor = cache['factor']
        prior_sd = np.array([self.xprior.sd])
        mean = np.array([self.xprior.mean])
        lo, hi = basis.support
        for k, row in enumerate(self.missing):
            base = self._base(state, row)

            def loglik(x):
                if not lo <= x[0] <= hi:
                    return -np.inf
                latent = (basis.row(x[0]) @ state.eta_star) @ factor
                return float(self.row_loglik(base + latent, row))

            x, _ll = sampler.ess_step(
                state.x_missing[k:k + 1], prior_sd, loglik, rng,
                cur_loglik=float(cache['rows'][row]), mean=mean)
            if self.x_update == constants.X_UPDATE_FULL:
                z = basis.refresh(row, x[0])
                cache['field'] = basis.rows @ state.eta_star
            else:
                z = basis.update_row(row, x[0])
                cache['field'][row] = z @ state.eta_star
            state.set_x(k, x[0])
            cache['latent'][row] = cache['field'][row] @ factor
            cache['rows'][row] = self.row_loglik(base +
                                                 cache['latent'][row], row)

    def update_overdispersion(self, state, rng, adapt, iteration,
                              adapt_until):
        od = state.overdisp
        cache = state.cache
        od_factor = od.factor
        for i in range(self.n):
            fixed = state.mu + cache['latent'][i]

            def loglik(eps):
                return float(self.row_loglik(fixed + eps, i))

            od.eps[i], cache['rows'][i] = sampler.ess_step(
                od.eps[i], od_factor, loglik, rng,
                cur_loglik=float(cache['rows'][i]))

        if self.d > 1:
            def log_phi(phi):
                if not np.all(np.abs(phi) < 1):
                    return -np.inf
                vine = od.vine.with_phi(phi)
                factor = covprior.assemble_R(
                    covprior.vine_to_cholesky(vine), od.scales).R
                return (covprior.log_prior_phi(vine) +
                        log_gaussian_upper(od.eps.T, factor))

            phi, _a, _lp = sampler.arwm_step(
                od.vine.phi, log_phi, adapt['phi_eps'],
                constants.TRANSFORM_LOGIT, rng, iteration, adapt_until)
            od.vine = od.vine.with_phi(phi)

        r_omega = covprior.vine_to_cholesky(od.vine)

        def log_tau2(tau2):
            scales = od.scales.replace(tau2=tau2)
            factor = covprior.assemble_R(r_omega, scales).R
            return (covprior.log_prior_tau2(scales) +
                    log_gaussian_upper(od.eps.T, factor))

        tau2, _a, _lp = sampler.arwm_step(
            od.scales.tau2, log_tau2, adapt['tau2_eps'],
            constants.TRANSFORM_LOG, rng, iteration, adapt_until)
        od.scales = covprior.sample_lambda_given_tau2(
            od.scales.replace(tau2=tau2), rng)

    def count_clamps(self, state, rng, adapt, iteration, adapt_until):
        log_alpha = self._base(state) + state.cache['latent']
        state.clamp_events += int(np.sum(np.abs(log_alpha) >
                                         self.priors.clamp))

    # -- flattening -------------------------------------------------------

    def _build_layout(self):
        layout = collections.OrderedDict()
        layout['mu'] = (self.d,)
        layout['eta_star'] = (self.ell, self.d)
        layout['phi'] = (covprior.vine_size(self.d),)
        layout['tau2'] = (self.d,)
        layout['lambda'] = (self.d,)
        if self.has_rho:
            layout['rho'] = ()
        layout['x'] = (self.missing.size,)
        if self.overdispersion:
            layout['phi_eps'] = (covprior.vine_size(self.d),)
            layout['tau2_eps'] = (self.d,)
            layout['lambda_eps'] = (self.d,)
        return layout

    def param_names(self):
        names = []
        pairs = covprior.vine_pairs(self.d)
        for block, shape in self._layout.items():
            if block == 'rho':
                names.append('rho')
            elif block == 'eta_star':
                names.extend('eta_star[%d,%d]' % (m, j)
                             for m in range(self.ell)
                             for j in range(self.d))
            elif block in ('phi', 'phi_eps'):
                names.extend('%s[%d,%d]' % (block, i, j) for i, j in pairs)
            elif block == 'x':
                names.extend('x[%d]' % row for row in self.missing)
            else:
                names.extend('%s[%d]' % (block, j) for j in range(shape[0]))
        return tuple(names)

    def flatten(self, state):
        parts = [state.mu, state.eta_star.ravel(), state.vine.phi,
                 state.scales.tau2, state.scales.lam]
        if self.has_rho:
            parts.append([state.rho])
        parts.append(state.x_missing)
        if self.overdispersion:
            od = state.overdisp
            parts.extend([od.vine.phi, od.scales.tau2, od.scales.lam])
        return np.concatenate([np.asarray(p, dtype=float).ravel()
                               for p in parts])

    def unpack(self, vector):
        """Named blocks of one flattened draw."""
        out, start = {}, 0
        for block, shape in self._layout.items():
            size = int(np.prod(shape)) if shape else 1
            chunk = np.asarray(vector[start:start + size])
            out[block] = chunk.reshape(shape) if shape else float(chunk[0])
            start += size
        return out

    def describe(self, state):
        return dict(zip(self.param_names(),
                        self.flatten(state).tolist()))

    # -- posterior summaries ----------------------------------------------

    def _draw_factor(self, params):
        vine = covprior.VineAngles(params['phi'], self.psi)
        scales = covprior.ScaleMixture(tau2=params['tau2'],
                                       lam=params['lambda'], s=self.s)
        return covprior.assemble_R(covprior.vine_to_cholesky(vine), scales)

    def _thin(self, samples, max_draws):
        pooled = samples.pooled()
        if pooled.shape[0] > max_draws:
            keep = np.linspace(0, pooled.shape[0] - 1, max_draws)
            pooled = pooled[np.unique(keep.astype(int))]
        return pooled

    def response_curves(self, samples, grid, max_draws=500):
        """Posterior mean of mu_j + zeta_j(x) over a working-scale grid."""
        grid = np.asarray(grid, dtype=float)
        total = np.zeros((grid.size, self.d))
        pooled = self._thin(samples, max_draws)
        for vector in pooled:
            params = self.unpack(vector)
            basis = self.make_basis(grid, params.get('rho'))
            factor = self._draw_factor(params).R
            total += params['mu'] + (basis.rows @ params['eta_star']) @ factor
        mean = total / max(pooled.shape[0], 1)
        frame = pd.DataFrame(mean, columns=list(self.data.species_names))
        frame.insert(0, 'x', self.covariates.to_original(grid))
        return frame

    def posterior_correlation(self, samples, max_draws=2000):
        total = np.zeros((self.d, self.d))
        pooled = self._thin(samples, max_draws)
        for vector in pooled:
            total += self._draw_factor(self.unpack(vector)).omega
        names = list(self.data.species_names)
        return pd.DataFrame(total / max(pooled.shape[0], 1), index=names,
                            columns=names)

    def covariate_draws(self, samples):
        """(draws, n_missing) reconstruction draws on the original scale."""
        cols = [samples.index('x[%d]' % row) for row in self.missing]
        return self.covariates.to_original(samples.pooled()[:, cols])


def log_joint_x_gradient(state, model, k):
    """d log_joint / d x_missing[k] for the closed-form kernels.

    Used as a probe of the likelihood chain through the basis rows; the
    sampler itself never needs gradients.
    """
    basis = state.basis
    kernel = basis.kernel
    if kernel is None:
        raise exc.InvalidParameter(name='basis', value=basis.kind,
                                   reason=_('gradient needs a kernel'))
    row = model.missing[k]
    x = state.x_missing[k]
    delta = x - model.knots.locations
    dist = np.abs(delta)
    if kernel.family == constants.KERNEL_EXPONENTIAL or kernel.nu == 0.5:
        scale = 1.0
        r = scale * dist / kernel.rho
        dc_dr = -np.exp(-r)
    elif kernel.nu == 1.5:
        scale = math.sqrt(3.0)
        r = scale * dist / kernel.rho
        dc_dr = -r * np.exp(-r)
    elif kernel.nu == 2.5:
        scale = math.sqrt(5.0)
        r = scale * dist / kernel.rho
        dc_dr = -(r / 3.0) * (1.0 + r) * np.exp(-r)
    else:
        raise exc.InvalidParameter(name='nu', value=kernel.nu,
                                   reason=_('no closed-form derivative'))
    dcross = dc_dr * scale * np.sign(delta) / kernel.rho
    half = linalg.solve_triangular(basis.knot_chol, dcross, trans='T',
                                   lower=False)
    dz = linalg.solve_triangular(basis.knot_chol, half, lower=False)
    factor = state.factor
    dlog_alpha = (dz @ state.eta_star) @ factor
    log_alpha = _log_alpha(state, basis.rows[row], row)
    alpha = np.exp(np.clip(log_alpha, -model.priors.clamp,
                           model.priors.clamp))
    y = model.y[row]
    concentration = alpha.sum()
    dl_dalpha = (special.digamma(concentration) -
                 special.digamma(y.sum() + concentration) +
                 special.digamma(y + alpha) - special.digamma(alpha))
    prior = -(x - model.xprior.mean) / model.xprior.variance
    return float(np.sum(dl_dalpha * alpha * dlog_alpha) + prior)
