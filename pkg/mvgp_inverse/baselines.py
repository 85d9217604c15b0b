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

"""Comparison methods: WA, MAT, MLRC and the BUMMER response model."""

import dataclasses
import math
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from scipy import optimize
from scipy import special
from scipy import stats

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc
from mvgp_inverse import mvgp
from mvgp_inverse import sampler

LOG = logging.getLogger(__name__)

Z95 = 1.959963984540054
PROFILE_DROP = 1.92
MLRC_MIN_PRESENCES = 3
SPLINE_QUANTILES = (0.05, 0.275, 0.5, 0.725, 0.95)
# scipy BFGS status when the line search cannot improve further
_BFGS_PRECISION_LOSS = 2


def _normalize(y, path='<prediction>'):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    totals = y.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise exc.EmptyComposition(row=int(empty[0]), path=path)
    return y / totals[:, None]


def _normal_interval(point, boot_var, rmse):
    half = Z95 * np.sqrt(boot_var + rmse ** 2)
    return point - half, point + half


# -- weighted averaging -------------------------------------------------------

def wa_optima(props, x):
    """Abundance-weighted covariate means; NaN for absent species."""
    props = np.asarray(props, dtype=float)
    totals = props.sum(axis=0)
    with np.errstate(invalid='ignore', divide='ignore'):
        return (props.T @ np.asarray(x, dtype=float)) / totals


def wa_raw(props, optima):
    """Raw (shrunken) estimates x_hat_i = sum_j p_ij u_j / sum_j p_ij."""
    props = np.asarray(props, dtype=float)
    return (props @ optima) / props.sum(axis=1)


def _natural_spline_design(x, knots):
    """Truncated power basis of a natural cubic spline, intercept first."""
    x = np.asarray(x, dtype=float)
    last = knots[-1]

    def d(k):
        return ((np.maximum(x - knots[k], 0) ** 3 -
                 np.maximum(x - last, 0) ** 3) / (last - knots[k]))

    columns = [np.ones_like(x), x]
    tail = d(len(knots) - 2)
    columns.extend(d(k) - tail for k in range(len(knots) - 2))
    return np.column_stack(columns)


@dataclasses.dataclass(frozen=True)
class Deshrink(object):
    """Inverse regression of x on the raw estimate."""

    kind: str
    coef: np.ndarray
    knots: Optional[np.ndarray] = None

    def __call__(self, xhat):
        xhat = np.asarray(xhat, dtype=float)
        if self.kind == constants.DESHRINK_LINEAR:
            return self.coef[0] + self.coef[1] * xhat
        return _natural_spline_design(xhat.ravel(), self.knots).dot(
            self.coef).reshape(xhat.shape)

    @classmethod
    def identity(cls):
        return cls(constants.DESHRINK_LINEAR, np.array([0.0, 1.0]))


def fit_deshrink(xhat, x, kind=constants.DESHRINK_LINEAR):
    xhat = np.asarray(xhat, dtype=float)
    x = np.asarray(x, dtype=float)
    spread = np.var(xhat)
    if xhat.size < 2 or not spread > 1e-12 * max(1.0, np.var(x)):
        raise exc.DegenerateRegression(
            reason=_('raw estimates do not vary'))
    if kind == constants.DESHRINK_LINEAR:
        slope = np.cov(xhat, x, ddof=1)[0, 1] / np.var(xhat, ddof=1)
        return Deshrink(kind, np.array([x.mean() - slope * xhat.mean(),
                                        slope]))
    if kind != constants.DESHRINK_SPLINE:
        raise exc.InvalidParameter(name='deshrink', value=kind,
                                   reason=_('expected linear or spline'))
    knots = np.quantile(xhat, SPLINE_QUANTILES)
    if np.unique(knots).size != knots.size:
        raise exc.DegenerateRegression(
            reason=_('spline knots of the raw estimates coincide'))
    design = _natural_spline_design(xhat, knots)
    coef, _res, rank, _sv = np.linalg.lstsq(design, x, rcond=None)
    if rank < design.shape[1]:
        raise exc.DegenerateRegression(reason=_('spline design is rank '
                                                'deficient'))
    return Deshrink(kind, coef, knots)


@dataclasses.dataclass(frozen=True)
class WaFit(object):
    optima: np.ndarray
    species: np.ndarray
    deshrink: Deshrink
    boot_optima: np.ndarray
    rmse_boot: float


def _keep_species(props, label):
    present = props.sum(axis=0) > 0
    if not present.all():
        LOG.warning("%(label)s: dropping %(n)d species with zero total "
                    "abundance", {'label': label,
                                  'n': int((~present).sum())})
    if not present.any():
        raise exc.DataError(reason=_('no species with positive abundance'))
    return present


def _bootstrap_indices(n, boot, rng):
    for _b in range(boot):
        sample = rng.integers(0, n, n)
        yield sample, np.setdiff1d(np.arange(n), sample)


def wa_fit(props, x, boot=1000, deshrink_kind=constants.DESHRINK_LINEAR,
           rng=None):
    """Weighted averaging with bootstrap error and deshrinking."""
    if boot < 1:
        raise exc.InvalidParameter(name='boot', value=boot,
                                   reason=_('must be at least 1'))
    rng = rng if rng is not None else np.random.default_rng(0)
    props = _normalize(props, '<calibration>')
    x = np.asarray(x, dtype=float)
    species = _keep_species(props, 'WA')
    props = props[:, species]
    optima = wa_optima(props, x)

    boot_optima = np.empty((boot, optima.size))
    oob_raw, oob_x = [], []
    for b, (sample, oob) in enumerate(_bootstrap_indices(x.size, boot, rng)):
        resampled = wa_optima(props[sample], x[sample])
        # species absent from a resample keep their full-data optimum
        boot_optima[b] = np.where(np.isfinite(resampled), resampled, optima)
        if oob.size:
            usable = props[oob].sum(axis=1) > 0
            oob_raw.append(wa_raw(props[oob][usable], boot_optima[b]))
            oob_x.append(x[oob][usable])
    if oob_raw:
        oob_raw = np.concatenate(oob_raw)
        oob_x = np.concatenate(oob_x)
    else:
        oob_raw, oob_x = wa_raw(props, optima), x
    deshrink = fit_deshrink(oob_raw, oob_x, deshrink_kind)
    rmse = float(np.sqrt(np.mean((deshrink(oob_raw) - oob_x) ** 2)))
    LOG.debug("WA fit: %(d)d species, %(b)d bootstraps, rmse %(r).4f",
              {'d': optima.size, 'b': boot, 'r': rmse})
    return WaFit(optima=optima, species=species, deshrink=deshrink,
                 boot_optima=boot_optima, rmse_boot=rmse)


def wa_predict(fit, y_new):
    """Deshrunk estimates with normal 95% intervals.

    Returns ``(point, lower, upper)`` arrays, one entry per row.
    """
    y_new = np.atleast_2d(np.asarray(y_new, dtype=float))
    props = _normalize(y_new[:, fit.species])
    point = fit.deshrink(wa_raw(props, fit.optima))
    boots = fit.deshrink(np.stack([wa_raw(props, o)
                                   for o in fit.boot_optima]))
    boot_var = (np.var(boots, axis=0, ddof=1) if boots.shape[0] > 1
                else np.zeros_like(point))
    lower, upper = _normal_interval(point, boot_var, fit.rmse_boot)
    return point, lower, upper


# -- modern analog technique --------------------------------------------------

def squared_chord(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.sum((np.sqrt(p) - np.sqrt(q)) ** 2, axis=-1)


def mat_point(props_new, calib_props, calib_x, k=4,
              weighting=constants.WEIGHT_UNIFORM):
    """k-nearest-analog estimates under the squared chord distance."""
    props_new = np.atleast_2d(props_new)
    calib_x = np.asarray(calib_x, dtype=float)
    if not 1 <= k <= calib_x.size:
        raise exc.InvalidParameter(name='k', value=k,
                                   reason=_('must satisfy 1 <= k <= %d') %
                                   calib_x.size)
    if props_new.shape[1] != calib_props.shape[1]:
        raise exc.InvalidParameter(name='species', value=props_new.shape[1],
                                   reason=_('expected %d species') %
                                   calib_props.shape[1])
    dist = squared_chord(props_new[:, None, :], calib_props[None, :, :])
    nearest = np.argsort(dist, axis=1, kind='stable')[:, :k]
    near_dist = np.take_along_axis(dist, nearest, axis=1)
    near_x = calib_x[nearest]
    if weighting == constants.WEIGHT_UNIFORM:
        return near_x.mean(axis=1)
    if weighting != constants.WEIGHT_INVERSE_DISTANCE:
        raise exc.InvalidParameter(name='weighting', value=weighting,
                                   reason=_('expected uniform or '
                                            'inverse-distance'))
    exact = near_dist <= 0
    with np.errstate(divide='ignore'):
        weights = np.where(exact.any(axis=1, keepdims=True),
                           exact.astype(float), 1.0 / near_dist)
    return np.sum(weights * near_x, axis=1) / weights.sum(axis=1)


@dataclasses.dataclass(frozen=True)
class MatFit(object):
    props: np.ndarray
    x: np.ndarray
    k: int
    weighting: str
    boot_samples: np.ndarray
    rmse_boot: float


def mat_fit(props, x, k=4, weighting=constants.WEIGHT_UNIFORM, boot=1000,
            rng=None):
    """Calibration set plus bootstrap prediction error."""
    rng = rng if rng is not None else np.random.default_rng(0)
    props = _normalize(props, '<calibration>')
    x = np.asarray(x, dtype=float)
    samples, errors = [], []
    for sample, oob in _bootstrap_indices(x.size, boot, rng):
        samples.append(sample)
        if oob.size:
            kk = min(k, sample.size)
            pred = mat_point(props[oob], props[sample], x[sample], kk,
                             weighting)
            errors.append(pred - x[oob])
    rmse = (float(np.sqrt(np.mean(np.concatenate(errors) ** 2)))
            if errors else 0.0)
    return MatFit(props=props, x=x, k=k, weighting=weighting,
                  boot_samples=np.array(samples), rmse_boot=rmse)


def mat_predict(y_new, fit):
    """Returns ``(point, lower, upper)``; normal bootstrap intervals."""
    props = _normalize(y_new)
    point = mat_point(props, fit.props, fit.x, fit.k, fit.weighting)
    boots = np.stack([mat_point(props, fit.props[s], fit.x[s], fit.k,
                                fit.weighting)
                      for s in fit.boot_samples])
    boot_var = (np.var(boots, axis=0, ddof=1) if boots.shape[0] > 1
                else np.zeros_like(point))
    lower, upper = _normal_interval(point, boot_var, fit.rmse_boot)
    return point, lower, upper


# -- maximum likelihood response curves ---------------------------------------

def _log_expit(eta):
    return -np.logaddexp(0.0, -eta)


def _binomial_loglik(coef, design, y, trials):
    eta = design @ coef
    return np.sum(y * _log_expit(eta) + (trials - y) * _log_expit(-eta))


@dataclasses.dataclass(frozen=True)
class MlrcFit(object):
    coef: np.ndarray
    species: np.ndarray
    grid: np.ndarray
    excluded: tuple

    def log_pi(self, x):
        design = np.column_stack([np.ones_like(x), x, x ** 2])
        eta = design @ self.coef.T
        return _log_expit(eta), _log_expit(-eta)


def _fit_species(design, y, trials):
    # per-trial scale keeps the gradient tolerance meaningful
    weight = 1.0 / trials.sum()

    def objective(coef):
        return -weight * _binomial_loglik(coef, design, y, trials)

    def gradient(coef):
        pi = special.expit(design @ coef)
        return -weight * (design.T @ (y - trials * pi))

    start = np.array([special.logit(np.clip(y.sum() / trials.sum(),
                                            1e-6, 1 - 1e-6)), 0.0, 0.0])
    return optimize.minimize(objective, start, jac=gradient, method='BFGS')


def mlrc_fit(counts, x, grid):
    """Gaussian-logit binomial response curve per species."""
    counts = np.asarray(counts, dtype=float)
    x = np.asarray(x, dtype=float)
    trials = counts.sum(axis=1)
    design = np.column_stack([np.ones_like(x), x, x ** 2])
    coef, kept, excluded = [], [], []
    for j in range(counts.shape[1]):
        presences = int(np.sum(counts[:, j] > 0))
        if presences < MLRC_MIN_PRESENCES:
            LOG.warning("MLRC: species %(j)d present in only %(n)d samples, "
                        "excluded", {'j': j, 'n': presences})
            excluded.append(j)
            continue
        result = _fit_species(design, counts[:, j], trials)
        converged = result.success or result.status == _BFGS_PRECISION_LOSS
        if not (converged and np.all(np.isfinite(result.x))):
            LOG.warning("%s", exc.SpeciesFitFailure(species=j,
                                                    reason=result.message))
            excluded.append(j)
            continue
        coef.append(result.x)
        kept.append(j)
    if not kept:
        raise exc.ModelError(reason=_('no MLRC response curve converged'))
    species = np.zeros(counts.shape[1], dtype=bool)
    species[kept] = True
    return MlrcFit(coef=np.array(coef), species=species,
                   grid=np.asarray(grid, dtype=float),
                   excluded=tuple(excluded))


def mlrc_profile(fit, y_new):
    """(rows, grid) log likelihood of each grid value."""
    y_new = np.atleast_2d(np.asarray(y_new, dtype=float))
    y = y_new[:, fit.species]
    if np.any(y.sum(axis=1) <= 0):
        row = int(np.flatnonzero(y.sum(axis=1) <= 0)[0])
        raise exc.EmptyComposition(row=row, path='<prediction>')
    trials = y_new.sum(axis=1)
    log_pi, log_not = fit.log_pi(fit.grid)
    return y @ log_pi.T + (trials[:, None] - y) @ log_not.T


def mlrc_predict(fit, y_new):
    """Returns ``(point, lower, upper, flat)`` from the profile."""
    profile = mlrc_profile(fit, y_new)
    best = np.argmax(profile, axis=1)
    top = profile[np.arange(profile.shape[0]), best]
    inside = profile >= (top - PROFILE_DROP)[:, None]
    flat = inside.all(axis=1)
    lower = np.where(inside, fit.grid, np.inf).min(axis=1)
    upper = np.where(inside, fit.grid, -np.inf).max(axis=1)
    if flat.any():
        LOG.warning("MLRC: %d flat profiles, interval spans the grid",
                    int(flat.sum()))
    return fit.grid[best], lower, upper, flat


# -- BUMMER -------------------------------------------------------------------

@dataclasses.dataclass
class BummerParams(object):
    a: np.ndarray
    b: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        if not np.all(np.asarray(self.c2) > 0):
            raise exc.InvalidParameter(name='c2', value=self.c2,
                                       reason=_('must be positive'))

    def log_alpha(self, x):
        """log alpha = exp(a - (b - x)^2 / (2 c2)), rows by species."""
        x = np.asarray(x, dtype=float)[..., None]
        return np.exp(self.a - (self.b - x) ** 2 / (2.0 * self.c2))


@dataclasses.dataclass
class BummerState(object):
    params: BummerParams
    x_missing: np.ndarray
    clamp_events: int = 0
    cache: dict = dataclasses.field(default_factory=dict, repr=False)


@dataclasses.dataclass(frozen=True)
class BummerPriors(object):
    a_sd: float = 5.0
    b_var_inflation: float = 4.0
    logc2_sd: float = 2.0
    x_inflation: float = 1.5
    clamp: float = constants.LOG_ALPHA_CLAMP

    @classmethod
    def from_settings(cls, settings):
        base = settings['baselines']
        return cls(a_sd=base['bummer_a_sd'],
                   b_var_inflation=base['bummer_b_var_inflation'],
                   logc2_sd=base['bummer_logc2_sd'],
                   x_inflation=settings['mvgp']['x_prior_inflation'],
                   clamp=settings['mvgp']['log_alpha_clamp'])


class BummerModel(object):
    """Gaussian-kernel response model under the Dirichlet-multinomial law.

    Follows the same stage protocol as ``mvgp.MvgpModel`` so that
    ``sampler.run_chains`` drives it unchanged.
    """

    def __init__(self, data, covariates, priors=None):
        self.data = data
        self.covariates = covariates
        self.priors = priors or BummerPriors()
        self.y = np.asarray(data.counts, dtype=float)
        self.n, self.d = self.y.shape
        self.coefficient = mvgp._multinomial_coefficient(self.y)
        self.xprior = mvgp.x_prior_from_data(covariates,
                                             self.priors.x_inflation)
        self.missing = covariates.missing_index
        self.x_base = np.zeros(self.n)
        self.x_base[covariates.observed_index] = covariates.working_values()
        values = covariates.working_values()
        self.x_mean = float(np.mean(values))
        self.x_var = float(np.var(values, ddof=1))

    def x_all(self, x_missing):
        x = self.x_base.copy()
        x[self.missing] = x_missing
        return x

    def response_span(self, extend=constants.DEFAULT_KNOT_EXTEND):
        values = self.covariates.working_values()
        sd = math.sqrt(self.x_var)
        return values.min() - extend * sd, values.max() + extend * sd

    def log_prior(self, params):
        p = self.priors
        return float(
            np.sum(stats.norm.logpdf(params.a, 0.0, p.a_sd)) +
            np.sum(stats.norm.logpdf(params.b, self.x_mean,
                                     math.sqrt(p.b_var_inflation *
                                               self.x_var))) +
            np.sum(stats.norm.logpdf(np.log(params.c2), 0.0, p.logc2_sd)))

    def row_loglik(self, params, x, rows=slice(None)):
        clamp = self.priors.clamp
        log_alpha = params.log_alpha(x)
        alpha = np.exp(np.clip(log_alpha, -clamp, clamp))
        return mvgp._dm_terms(self.y[rows], alpha, self.coefficient[rows])

    def initial_state(self, chain, rng):
        x_obs = self.covariates.working_values()
        props = self.data.proportions()[self.covariates.observed_index]
        optima = wa_optima(props, x_obs)
        sd = math.sqrt(self.x_var)
        offset = (chain + 1) // 2 * (-1) ** (chain + 1)
        params = BummerParams(
            a=np.zeros(self.d),
            b=np.where(np.isfinite(optima), optima, self.x_mean) +
            0.1 * rng.standard_normal(self.d),
            c2=np.full(self.d, self.x_var))
        state = BummerState(
            params=params,
            x_missing=np.full(self.missing.size,
                              self.x_mean + offset * 0.5 * sd))
        self.refresh(state)
        return state

    def refresh(self, state):
        state.cache['rows'] = self.row_loglik(state.params,
                                              self.x_all(state.x_missing))

    def log_likelihood(self, state):
        return float(np.sum(state.cache['rows']))

    def log_posterior(self, state):
        return (self.log_likelihood(state) + self.log_prior(state.params) +
                float(np.sum(self.xprior.log_density(state.x_missing))))

    def new_adapt(self, cfg):
        return {name: sampler.AdaptState.for_block(
                    self.d, batch_size=cfg.adapt_batch,
                    delta=cfg.adapt_delta)
                for name in ('a', 'b', 'logc2')}

    def stages(self):
        return [('a', self._block_update('a')),
                ('b', self._block_update('b')),
                ('logc2', self._block_update('logc2')),
                ('x', self.update_x),
                ('bookkeeping', self.count_clamps)]

    def _with(self, params, block, value):
        if block == 'logc2':
            return dataclasses.replace(params, c2=np.exp(value))
        return dataclasses.replace(params, **{block: value})

    def _block_update(self, block):
        def update(state, rng, adapt, iteration, adapt_until):
            x = self.x_all(state.x_missing)
            current = (np.log(state.params.c2) if block == 'logc2'
                       else getattr(state.params, block))
            candidates = {}

            def log_target(value):
                params = self._with(state.params, block, value)
                rows = self.row_loglik(params, x)
                candidates[value.tobytes()] = (params, rows)
                return self.log_prior(params) + float(np.sum(rows))

            cur = self.log_prior(state.params) + self.log_likelihood(state)
            new, _a, _lp = sampler.arwm_step(
                current, log_target, adapt[block],
                constants.TRANSFORM_IDENTITY, rng, iteration, adapt_until,
                cur_logp=cur)
            if new is not current:
                state.params, state.cache['rows'] = candidates[new.tobytes()]
        return update

    def update_x(self, state, rng, adapt, iteration, adapt_until):
        prior_sd = np.array([self.xprior.sd])
        mean = np.array([self.xprior.mean])
        for k, row in enumerate(self.missing):
            def loglik(x):
                return float(self.row_loglik(state.params, x[0], row))

            x, ll = sampler.ess_step(
                state.x_missing[k:k + 1], prior_sd, loglik, rng,
                cur_loglik=float(state.cache['rows'][row]), mean=mean)
            state.x_missing[k] = x[0]
            state.cache['rows'][row] = ll

    def count_clamps(self, state, rng, adapt, iteration, adapt_until):
        log_alpha = state.params.log_alpha(self.x_all(state.x_missing))
        state.clamp_events += int(np.sum(np.abs(log_alpha) >
                                         self.priors.clamp))

    def param_names(self):
        names = []
        for block in ('a', 'b', 'c2'):
            names.extend('%s[%d]' % (block, j) for j in range(self.d))
        names.extend('x[%d]' % row for row in self.missing)
        return tuple(names)

    def flatten(self, state):
        p = state.params
        return np.concatenate([p.a, p.b, p.c2, state.x_missing])

    def describe(self, state):
        return dict(zip(self.param_names(), self.flatten(state).tolist()))

    def covariate_draws(self, samples):
        cols = [samples.index('x[%d]' % row) for row in self.missing]
        return self.covariates.to_original(samples.pooled()[:, cols])

    def response_curves(self, samples, grid, max_draws=500):
        pooled = samples.pooled()
        if pooled.shape[0] > max_draws:
            pooled = pooled[np.unique(np.linspace(
                0, pooled.shape[0] - 1, max_draws).astype(int))]
        grid = np.asarray(grid, dtype=float)
        total = np.zeros((grid.size, self.d))
        for vector in pooled:
            params = BummerParams(a=vector[:self.d],
                                  b=vector[self.d:2 * self.d],
                                  c2=vector[2 * self.d:3 * self.d])
            total += params.log_alpha(grid)
        frame = pd.DataFrame(total / max(pooled.shape[0], 1),
                             columns=list(self.data.species_names))
        frame.insert(0, 'x', self.covariates.to_original(grid))
        return frame


def bummer_fit(data, covariates, cfg, priors=None, jobs=1):
    """Posterior draws of BUMMER parameters and reconstruction covariates.

    Reconstruction rows ride along in the same chains: their covariates
    are sampled with ``ess_step`` against the covariate prior.
    """
    model = BummerModel(data, covariates, priors)
    return model, sampler.run_chains(model, cfg, jobs=jobs)


def bummer_predict(model, samples):
    """(draws, n_missing) predictive covariate draws, original units."""
    return model.covariate_draws(samples)
