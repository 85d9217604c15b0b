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

"""MCMC engine.

Elliptical slice sampling for Gaussian-prior blocks, adaptive random walk
Metropolis for the rest, and multi-chain orchestration with split-R-hat.

``run_chains`` drives any model object providing::

    initial_state(chain, rng) -> state
    new_adapt(config) -> {block: AdaptState}
    stages() -> [(name, update(state, rng, adapt, iteration, adapt_until))]
    log_likelihood(state) -> float
    flatten(state) -> 1-D array
    param_names() -> tuple of str
    describe(state) -> dict
"""

import concurrent.futures
import dataclasses
import itertools
import math
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from oslo_utils import timeutils

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc

LOG = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
# shrinking below this bracket width means the slice has collapsed
_MIN_BRACKET = 1e-12


def ess_step(current, prior_factor, loglik, rng, cur_loglik=None,
             mean=None):
    """One elliptical slice sampling transition.

    ``prior_factor`` is an upper-triangular U with U'U equal to the prior
    covariance, or a vector of prior standard deviations. A nonzero prior
    mean is handled by sampling the centered variable.

    Returns ``(new, loglik(new))``.
    """
    current = np.asarray(current, dtype=float)
    offset = 0.0 if mean is None else np.asarray(mean, dtype=float)
    centered = current - offset
    if cur_loglik is None:
        cur_loglik = loglik(current)
    if not np.isfinite(cur_loglik):
        raise exc.InvalidInitialState(value=cur_loglik)

    noise = rng.standard_normal(current.shape)
    if np.ndim(prior_factor) < 2:
        nu = np.asarray(prior_factor) * noise
    else:
        nu = np.asarray(prior_factor).T @ noise
    log_height = cur_loglik + math.log(rng.uniform())
    theta = rng.uniform(0.0, TWO_PI)
    lower, upper = theta - TWO_PI, theta
    while True:
        proposal = centered * math.cos(theta) + nu * math.sin(theta) + offset
        value = loglik(proposal)
        if value > log_height:
            return proposal, value
        if theta < 0:
            lower = theta
        else:
            upper = theta
        if upper - lower < _MIN_BRACKET:
            return current, cur_loglik
        theta = rng.uniform(lower, upper)


@dataclasses.dataclass
class AdaptState(object):
    """Proposal scale and acceptance bookkeeping for one ARWM block."""

    log_scale: float = math.log(0.1)
    accept_count: int = 0
    attempt_count: int = 0
    target_rate: float = constants.TARGET_RATE_SCALAR
    batch_size: int = 50
    delta: float = 0.5
    batch_accepts: int = 0
    batch_attempts: int = 0
    n_batches: int = 0

    @classmethod
    def for_block(cls, dim, batch_size=50, delta=0.5, log_scale=None):
        rate = (constants.TARGET_RATE_SCALAR if dim == 1 else
                constants.TARGET_RATE_MULTIVARIATE)
        if log_scale is None:
            # 2.38 / sqrt(dim) on a unit scale, damped
            log_scale = math.log(0.5 * 2.38 / math.sqrt(max(dim, 1)))
        return cls(log_scale=log_scale, target_rate=rate,
                   batch_size=batch_size, delta=delta)

    @property
    def acceptance_rate(self):
        if not self.attempt_count:
            return float('nan')
        return self.accept_count / self.attempt_count

    def record(self, accepted, adapting):
        self.attempt_count += 1
        self.accept_count += int(accepted)
        if not adapting:
            return
        self.batch_attempts += 1
        self.batch_accepts += int(accepted)
        if self.batch_attempts < self.batch_size:
            return
        self.n_batches += 1
        step = min(self.delta, self.delta / math.sqrt(self.n_batches))
        rate = self.batch_accepts / self.batch_attempts
        self.log_scale += step if rate > self.target_rate else -step
        self.batch_accepts = self.batch_attempts = 0


def _to_unconstrained(x, transform, bounds):
    if transform == constants.TRANSFORM_IDENTITY:
        return x
    if transform == constants.TRANSFORM_LOG:
        return np.log(x)
    lo, hi = bounds
    p = (x - lo) / (hi - lo)
    return np.log(p) - np.log1p(-p)


def _from_unconstrained(u, transform, bounds):
    """Map back and return ``(x, log |dx/du|)``."""
    if transform == constants.TRANSFORM_IDENTITY:
        return u, 0.0
    if transform == constants.TRANSFORM_LOG:
        return np.exp(u), float(np.sum(u))
    lo, hi = bounds
    p = 1.0 / (1.0 + np.exp(-u))
    log_jac = np.sum(np.log(hi - lo) - np.logaddexp(0.0, -u) -
                     np.logaddexp(0.0, u))
    return lo + (hi - lo) * p, float(log_jac)


def arwm_step(current, log_target, adapt, transform, rng, iteration=0,
              adapt_until=0, cur_logp=None, bounds=(-1.0, 1.0)):
    """Adaptive random walk Metropolis on a transformed scale.

    The Gaussian proposal lives on the unconstrained scale given by
    ``transform`` (``logit`` maps ``bounds``). Returns
    ``(new, adapt, log_target(new))``.
    """
    scalar = np.ndim(current) == 0
    current = np.atleast_1d(np.asarray(current, dtype=float))
    if cur_logp is None:
        cur_logp = log_target(current[0] if scalar else current)
    u = _to_unconstrained(current, transform, bounds)
    _x, cur_jac = _from_unconstrained(u, transform, bounds)
    proposal_u = u + math.exp(adapt.log_scale) * rng.standard_normal(u.shape)
    proposal, prop_jac = _from_unconstrained(proposal_u, transform, bounds)
    with np.errstate(all='ignore'):
        prop_logp = log_target(proposal[0] if scalar else proposal)
    log_ratio = (prop_logp + prop_jac) - (cur_logp + cur_jac)
    accepted = bool(np.isfinite(prop_logp) and
                    math.log(rng.uniform()) < log_ratio)
    adapt.record(accepted, adapting=iteration <= adapt_until)
    if accepted:
        current, cur_logp = proposal, prop_logp
    return (current[0] if scalar else current), adapt, cur_logp


def gibbs_sweep(state, model, rng, adapt, iteration=1, adapt_until=0):
    """One scan over the model's stages in their fixed order.

    The full log posterior, every prior term included, must stay finite
    after each stage.
    """
    for stage, update in model.stages():
        update(state, rng, adapt, iteration, adapt_until)
        value = model.log_posterior(state)
        if not np.isfinite(value):
            raise exc.NonFiniteLogPosterior(value=value, stage=stage,
                                            state=model.describe(state))
    return state


@dataclasses.dataclass(frozen=True)
class ChainConfig(object):
    iterations: int
    burn_in: int
    thin: int
    chains: int
    seed: int = 0
    adapt_until: Optional[int] = None
    adapt_batch: int = 50
    adapt_delta: float = 0.5

    def __post_init__(self):
        if self.chains < 1 or self.thin < 1 or self.iterations < 1:
            raise exc.InvalidParameter(
                name='chain config', value=self,
                reason=_('chains, thin and iterations must be positive'))
        if not 0 <= self.burn_in < self.iterations:
            raise exc.InvalidParameter(
                name='burn_in', value=self.burn_in,
                reason=_('must satisfy 0 <= burn_in < iterations'))
        if self.adapt_until is None:
            object.__setattr__(self, 'adapt_until', self.burn_in)
        elif not 0 <= self.adapt_until <= self.burn_in:
            raise exc.InvalidParameter(
                name='adapt_until', value=self.adapt_until,
                reason=_('must not exceed burn_in'))

    @classmethod
    def from_settings(cls, settings, seed):
        """Build from a ``[sampler]`` settings mapping."""
        fields = {f.name for f in dataclasses.fields(cls)} - {'seed'}
        return cls(seed=seed,
                   **{k: v for k, v in settings.items() if k in fields})

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin

    def retained(self, iteration):
        offset = iteration - self.burn_in
        return offset > 0 and offset % self.thin == 0


@dataclasses.dataclass
class ChainResult(object):
    chain: int
    draws: np.ndarray
    iterations: np.ndarray
    acceptance: dict
    clamp_events: int
    elapsed: float


@dataclasses.dataclass
class PosteriorSamples(object):
    """Thinned draws, one (K, P) array per chain."""

    names: tuple
    draws: list
    iterations: np.ndarray
    chain_ids: tuple
    config: ChainConfig
    acceptance: list = dataclasses.field(default_factory=list)
    clamp_events: list = dataclasses.field(default_factory=list)

    @property
    def n_chains(self):
        return len(self.draws)

    @property
    def n_draws(self):
        return self.iterations.size

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise exc.InvalidParameter(name='parameter', value=name,
                                       reason=_('unknown parameter'))

    def param(self, name):
        """(chains, K) draws of one scalar parameter."""
        col = self.index(name)
        return np.stack([d[:, col] for d in self.draws])

    def pooled(self, name=None):
        if name is None:
            return np.concatenate(self.draws, axis=0)
        return self.param(name).ravel()

    def to_frame(self, chain):
        frame = pd.DataFrame(self.draws[chain], columns=list(self.names))
        frame.insert(0, 'iteration', self.iterations)
        return frame

    def rhat(self, names=None):
        """Split R-hat for every parameter; empty when undefined."""
        if self.n_chains < 2 or self.n_draws < 10:
            return {}
        return {name: gelman_rubin(self, name)
                for name in (names or self.names)}

    def acceptance_rates(self):
        blocks = sorted(set(itertools.chain.from_iterable(self.acceptance)))
        return {block: [a.get(block) for a in self.acceptance]
                for block in blocks}


def gelman_rubin(ps, param):
    """Split R-hat of one scalar parameter, never below 1."""
    values = ps.param(param)
    chains, k = values.shape
    if chains < 2 or k < 10:
        raise exc.InvalidParameter(
            name='posterior samples', value='%d x %d' % (chains, k),
            reason=_('split R-hat needs at least 2 chains with 10 draws'))
    half = k // 2
    # odd draw counts drop the first retained draw
    split = np.concatenate([values[:, k - 2 * half:k - half],
                            values[:, k - half:]])
    n = split.shape[1]
    within = np.mean(np.var(split, axis=1, ddof=1))
    between = n * np.var(np.mean(split, axis=1), ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float('inf')
    pooled = (n - 1) / n * within + between / n
    # sampling noise in B can pull the ratio under one
    return max(1.0, float(np.sqrt(pooled / within)))


def run_chain(model, cfg, chain):
    """Run one chain; seeded with ``cfg.seed + chain``."""
    rng = np.random.default_rng(cfg.seed + chain)
    state = model.initial_state(chain, rng)
    adapt = model.new_adapt(cfg)
    names = model.param_names()
    draws, iterations = [], []
    with timeutils.StopWatch() as watch:
        for iteration in range(1, cfg.iterations + 1):
            try:
                gibbs_sweep(state, model, rng, adapt, iteration,
                            cfg.adapt_until)
            except exc.ModelError as e:
                LOG.exception("Chain %(chain)d aborted at iteration "
                              "%(it)d", {'chain': chain, 'it': iteration})
                raise exc.ChainFailure(chain=chain, iteration=iteration,
                                       reason=e)
            if cfg.retained(iteration):
                draws.append(model.flatten(state))
                iterations.append(iteration)
            if iteration % 500 == 0:
                LOG.debug("Chain %(chain)d: %(it)d/%(total)d sweeps",
                          {'chain': chain, 'it': iteration,
                           'total': cfg.iterations})
    clamp_events = getattr(state, 'clamp_events', 0)
    if clamp_events:
        LOG.warning("Chain %(chain)d clamped log alpha %(n)d times",
                    {'chain': chain, 'n': clamp_events})
    LOG.info("Chain %(chain)d finished %(it)d sweeps in %(s).1fs",
             {'chain': chain, 'it': cfg.iterations,
              's': watch.elapsed()})
    return ChainResult(
        chain=chain,
        draws=np.array(draws, dtype=float).reshape(len(draws), len(names)),
        iterations=np.array(iterations, dtype=np.int64),
        acceptance={block: a.acceptance_rate for block, a in adapt.items()},
        clamp_events=int(clamp_events),
        elapsed=watch.elapsed())


def _run_chain_args(args):
    return run_chain(*args)


def run_chains(model, cfg, jobs=1):
    """Run ``cfg.chains`` independent chains, ``jobs`` at a time.

    Chain seeds do not depend on ``jobs``, so results are identical for
    any degree of parallelism.
    """
    work = [(model, cfg, chain) for chain in range(cfg.chains)]
    if jobs > 1 and cfg.chains > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(jobs, cfg.chains)) as pool:
            results = list(pool.map(_run_chain_args, work))
    else:
        results = [_run_chain_args(args) for args in work]
    return PosteriorSamples(
        names=tuple(model.param_names()),
        draws=[r.draws for r in results],
        iterations=results[0].iterations,
        chain_ids=tuple(r.chain for r in results),
        config=cfg,
        acceptance=[r.acceptance for r in results],
        clamp_events=[r.clamp_events for r in results])
