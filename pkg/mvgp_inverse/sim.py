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

"""Seeded synthetic datasets and the correlated-curve demonstration.

The default scenarios are substitutes chosen for this package; they are
labelled as such in every truth ledger.
"""

import dataclasses
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from scipy import linalg

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse.common import utils
from mvgp_inverse import baselines
from mvgp_inverse import covprior
from mvgp_inverse import dataio
from mvgp_inverse import exceptions as exc
from mvgp_inverse import kernels

LOG = logging.getLogger(__name__)

# two groups of species, positively correlated within and negatively across
BLOCK_WITHIN = 0.6
BLOCK_ACROSS = -0.6
BLOCK_WEIGHT = 0.8
GP_JITTER = 1e-6
MVGP_DEFAULT_MU = 1.0

FOUR_SPECIES_DEMO_CORRELATION = np.array([
    [1.0, 0.87, -0.76, -0.6],
    [0.87, 1.0, -0.7, -0.57],
    [-0.76, -0.7, 1.0, 0.88],
    [-0.6, -0.57, 0.88, 1.0],
])


@dataclasses.dataclass(frozen=True)
class SimConfig(object):
    n_train: int = 500
    n_test: int = 200
    d: int = 8
    count_min: int = 50
    count_max: int = 200
    generator: str = constants.GENERATOR_MVGP
    x_lower: float = -3.0
    x_upper: float = 3.0
    rho: float = 1.0
    seed: int = 0
    kernel_family: str = constants.KERNEL_EXPONENTIAL
    nu: float = 0.5
    bummer: Optional[baselines.BummerParams] = None
    sigma: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 0 or self.d < 1:
            raise exc.InvalidParameter(
                name='sim', value=(self.n_train, self.n_test, self.d),
                reason=_('need n_train >= 1, n_test >= 0 and d >= 1'))
        if not 1 <= self.count_min <= self.count_max:
            raise exc.InvalidParameter(
                name='count_min', value=self.count_min,
                reason=_('counts must satisfy 1 <= count_min <= '
                         'count_max'))
        if not self.x_lower < self.x_upper:
            raise exc.InvalidParameter(name='x_lower', value=self.x_lower,
                                       reason=_('must be below x_upper'))
        if self.generator not in (constants.GENERATOR_BUMMER,
                                  constants.GENERATOR_MVGP):
            raise exc.InvalidParameter(name='generator',
                                       value=self.generator,
                                       reason=_('expected bummer or mvgp'))

    @classmethod
    def from_settings(cls, sim, seed=None, **overrides):
        fields = {f.name for f in dataclasses.fields(cls)}
        values = {k: v for k, v in sim.items() if k in fields}
        if seed is not None:
            values['seed'] = seed
        values.update(overrides)
        return cls(**values)

    @property
    def n_rows(self):
        return self.n_train + self.n_test


@dataclasses.dataclass(frozen=True)
class SimulatedData(object):
    """Dataset handed to models plus the truth kept apart from it."""

    data: dataio.CompositionMatrix
    covariates: dataio.CovariateSet
    truth: dict


def block_correlation(d):
    groups = np.where(np.arange(d) < (d + 1) // 2, 1.0, -1.0)
    omega = np.where(np.equal.outer(groups, groups), BLOCK_WITHIN,
                     BLOCK_ACROSS)
    np.fill_diagonal(omega, 1.0)
    return omega


def default_sigma(d, rng):
    """Block-structured correlation blended with an LKJ draw."""
    vine = covprior.sample_vine(covprior.psi_schedule(d), rng)
    lkj = covprior.vine_to_cholesky(vine).omega
    return BLOCK_WEIGHT * block_correlation(d) + (1 - BLOCK_WEIGHT) * lkj


def default_bummer(d, x_lower, x_upper, rng):
    return baselines.BummerParams(
        a=rng.uniform(1.0, 3.0, d),
        b=np.linspace(x_lower, x_upper, d),
        c2=rng.uniform(0.5, 1.5, d) ** 2)


def _sigma_factor(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if (sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or
            not np.allclose(sigma, sigma.T)):
        raise exc.InvalidParameter(name='sigma', value=sigma.shape,
                                   reason=_('must be a symmetric matrix'))
    try:
        return linalg.cholesky(sigma, lower=False)
    except linalg.LinAlgError:
        raise exc.NonPositiveDefinite(what='sigma', jitter=0)


def correlated_field(points, kernel, sigma, rng, size=None):
    """Draws of a matrix-normal field N(0, C(points) x Sigma)."""
    points = np.asarray(points, dtype=float)
    factor = _sigma_factor(sigma)
    gram = kernels.gram(points, kernel)
    gram[np.diag_indices_from(gram)] += GP_JITTER
    lower = linalg.cholesky(gram, lower=True)
    shape = (points.size, factor.shape[0])
    if size is not None:
        shape = (size,) + shape
    return lower @ rng.standard_normal(shape) @ factor


def dirichlet_rows(alpha, rng):
    """One Dirichlet draw per row of ``alpha``.

    Rows whose gamma variates all underflow fall back to the mean.
    """
    gammas = rng.standard_gamma(alpha)
    totals = gammas.sum(axis=1, keepdims=True)
    mean = alpha / alpha.sum(axis=1, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        props = np.where(totals > 0, gammas / totals, mean)
    return props


def simulate(cfg):
    """Simulate train rows with covariates and test rows without."""
    rng = np.random.default_rng(cfg.seed)
    x = rng.uniform(cfg.x_lower, cfg.x_upper, cfg.n_rows)
    totals = rng.integers(cfg.count_min, cfg.count_max + 1, cfg.n_rows)
    params = {}
    if cfg.generator == constants.GENERATOR_BUMMER:
        bummer = cfg.bummer or default_bummer(cfg.d, cfg.x_lower,
                                              cfg.x_upper, rng)
        log_alpha = bummer.log_alpha(x)
        params.update(a=bummer.a, b=bummer.b, c2=bummer.c2)
    else:
        sigma = (default_sigma(cfg.d, rng) if cfg.sigma is None
                 else np.asarray(cfg.sigma, dtype=float))
        mu = (np.full(cfg.d, MVGP_DEFAULT_MU) if cfg.mu is None
              else np.asarray(cfg.mu, dtype=float))
        kernel = kernels.CorrelationKernel(cfg.kernel_family, cfg.rho,
                                           cfg.nu)
        zeta = correlated_field(x, kernel, sigma, rng)
        log_alpha = mu + zeta
        params.update(mu=mu, sigma=sigma, rho=cfg.rho,
                      kernel=cfg.kernel_family, nu=cfg.nu,
                      partial_correlations=covprior.correlation_to_vine(
                          _correlation(sigma)).phi if cfg.d > 1 else [])
    clamp = constants.LOG_ALPHA_CLAMP
    alpha = np.exp(np.clip(log_alpha, -clamp, clamp))
    props = dirichlet_rows(alpha, rng)
    props = props / props.sum(axis=1, keepdims=True)
    counts = rng.multinomial(totals, props)

    names = tuple('species_%d' % (j + 1) for j in range(cfg.d))
    if cfg.d == 1:
        # a composition needs two parts; the remainder is a second column
        names = names + ('other',)
        counts = np.column_stack([counts, np.zeros_like(counts[:, 0])])
    train = np.arange(cfg.n_train)
    test = np.arange(cfg.n_train, cfg.n_rows)
    covariates = dataio.CovariateSet(n_rows=cfg.n_rows,
                                     observed_index=train,
                                     observed_values=x[train],
                                     missing_index=test)
    truth = {
        'generator': cfg.generator,
        'scenario': 'substitute',
        'seed': cfg.seed,
        'config': {k: v for k, v in dataclasses.asdict(cfg).items()
                   if k not in ('bummer', 'sigma', 'mu')},
        'test_rows': test,
        'test_covariates': x[test],
        'row_totals': totals,
        'params': params,
    }
    LOG.info("Simulated %(n)d rows x %(d)d species from the %(g)s "
             "generator (seed %(s)d)", {'n': cfg.n_rows, 'd': cfg.d,
                                        'g': cfg.generator, 's': cfg.seed})
    return SimulatedData(dataio.CompositionMatrix(counts, names),
                         covariates, utils.to_builtin(truth))


def _correlation(sigma):
    sd = np.sqrt(np.diag(sigma))
    return sigma / np.outer(sd, sd)


def write_simulation(sim, counts_path, covariates_path, truth_path):
    dataio.write_dataset(sim.data, sim.covariates, counts_path,
                         covariates_path)
    utils.write_json(sim.truth, truth_path)


@dataclasses.dataclass(frozen=True)
class DemoCurves(object):
    grid: np.ndarray
    curves: np.ndarray
    correlation: Optional[np.ndarray]
    sigma: np.ndarray

    def curves_frame(self, replicate=0):
        frame = pd.DataFrame(self.curves[replicate],
                             columns=['curve_%d' % (j + 1) for j in
                                      range(self.curves.shape[-1])])
        frame.insert(0, 'x', self.grid)
        return frame

    def correlation_frame(self):
        if self.correlation is None:
            return None
        labels = ['curve_%d' % (j + 1) for j in range(self.sigma.shape[0])]
        return pd.DataFrame(self.correlation, index=labels, columns=labels)


def demo_correlated_gps(d=4, kernel=None, sigma=None, seed=0,
                        n_curves=200, n_grid=100, x_lower=-3.0,
                        x_upper=3.0):
    """Correlated latent curves over a grid and their correlations.

    ``correlation`` is the empirical correlation over all replicates and
    grid points, None when d == 1.
    """
    kernel = kernel or kernels.CorrelationKernel()
    if sigma is None:
        sigma = (FOUR_SPECIES_DEMO_CORRELATION if d == 4 else np.eye(d))
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (d, d):
        raise exc.InvalidParameter(name='sigma', value=sigma.shape,
                                   reason=_('expected %d x %d') % (d, d))
    rng = np.random.default_rng(seed)
    grid = np.linspace(x_lower, x_upper, n_grid)
    curves = correlated_field(grid, kernel, sigma, rng, size=n_curves)
    correlation = None
    if d > 1:
        correlation = np.corrcoef(curves.reshape(-1, d), rowvar=False)
    return DemoCurves(grid=grid, curves=curves, correlation=correlation,
                      sigma=sigma)
