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

import os

from oslo_config import cfg

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants

# Flags given on the command line; every one of them defaults to None so
# that a value from the configuration file is used when the flag is absent.
cli_opts = [
    cfg.StrOpt('model',
               choices=constants.MODELS,
               help=_('Model to fit.')),
    cfg.ListOpt('models',
                help=_('Comma separated models to cross-validate.')),
    cfg.IntOpt('k',
               min=2,
               help=_('Number of cross-validation folds.')),
    cfg.IntOpt('seed',
               help=_('Master random seed.')),
    cfg.IntOpt('jobs',
               min=1,
               help=_('Maximum number of worker processes. Falls back to '
                      'the %s environment variable.') %
               constants.THREADS_ENV),
    cfg.FloatOpt('no-analog',
                 dest='no_analog',
                 min=0.0, max=1.0,
                 help=_('Hold out rows whose covariate exceeds this '
                        'quantile instead of using random folds.')),
    cfg.IntOpt('chains', min=1, help=_('Number of MCMC chains.')),
    cfg.IntOpt('iters', min=1, help=_('MCMC iterations per chain.')),
    cfg.IntOpt('burnin', min=0, help=_('Burn-in iterations per chain.')),
    cfg.IntOpt('thin', min=1, help=_('Thinning stride.')),
    cfg.IntOpt('knots', min=2, help=_('Number of knots.')),
    cfg.FloatOpt('knot-extend',
                 dest='knot_extend',
                 min=0.0,
                 help=_('Knot grid extension beyond the observed range, in '
                        'standard deviations.')),
    cfg.StrOpt('kernel',
               dest='kernel_family',
               choices=constants.KERNEL_FAMILIES,
               help=_('Correlation function family.')),
    cfg.BoolOpt('overdispersion',
                help=_('Include the latent overdispersion residual.')),
    cfg.BoolOpt('paper-scale',
                dest='paper_scale',
                help=_('Use 200000 iterations, 50000 burn-in, thinning 150 '
                       'and 4 chains.')),
    cfg.StrOpt('counts', help=_('Counts CSV file.')),
    cfg.StrOpt('covariates', help=_('Covariates CSV file.')),
    cfg.StrOpt('output-dir',
               dest='output_dir',
               help=_('Directory receiving all outputs.')),
]

default_opts = [
    cfg.BoolOpt('record_wall_clock',
                default=False,
                help=_('Record elapsed wall-clock time in run manifests. '
                       'Manifests are then no longer byte-identical across '
                       'reruns.')),
]

data_opts = [
    cfg.StrOpt('counts', help=_('Counts CSV file.')),
    cfg.StrOpt('covariates', help=_('Covariates CSV file.')),
    cfg.StrOpt('output_dir', default='.',
               help=_('Directory receiving all outputs.')),
    cfg.BoolOpt('standardize', default=True,
                help=_('Standardize covariates before any kernel '
                       'computation. Predictions are always reported on '
                       'the original scale.')),
]

kernel_opts = [
    cfg.StrOpt('family',
               default=constants.KERNEL_EXPONENTIAL,
               choices=constants.KERNEL_FAMILIES,
               help=_('Correlation function family.')),
    cfg.FloatOpt('nu', default=1.5, min=0.0,
                 help=_('Matern smoothness.')),
    cfg.IntOpt('knots', default=constants.DEFAULT_KNOTS, min=2,
               help=_('Number of evenly spaced knots.')),
    cfg.FloatOpt('knot_extend', default=constants.DEFAULT_KNOT_EXTEND,
                 min=0.0,
                 help=_('Extension of the knot grid beyond the observed '
                        'minimum and maximum, in standard deviations.')),
    cfg.FloatOpt('jitter', default=constants.DEFAULT_JITTER, min=0.0,
                 help=_('Diagonal jitter added before factorizing the knot '
                        'correlation matrix.')),
    cfg.IntOpt('spline_degree', default=3, min=1,
               help=_('B-spline degree of the GAM variant.')),
]

covprior_opts = [
    cfg.StrOpt('psi_schedule',
               default=constants.PSI_LKJ,
               choices=(constants.PSI_LKJ, constants.PSI_UNIFORM),
               help=_('Beta shapes of the vine partial correlations: lkj '
                      'gives jointly uniform correlation matrices, uniform '
                      'gives every partial correlation a flat prior.')),
    cfg.FloatOpt('psi_eta', default=1.0, min=0.0,
                 help=_('LKJ shape of the lkj schedule.')),
    cfg.FloatOpt('cauchy_scale', default=2.5, min=0.0,
                 help=_('Half-Cauchy scale of the species standard '
                        'deviations.')),
    cfg.FloatOpt('overdispersion_cauchy_scale', default=1.0, min=0.0,
                 help=_('Half-Cauchy scale of the overdispersion standard '
                        'deviations.')),
]

mvgp_opts = [
    cfg.FloatOpt('mu_prior_sd', default=5.0, min=0.0,
                 help=_('Standard deviation of the Gaussian prior on the '
                        'species intercepts.')),
    cfg.FloatOpt('rho_lower', default=0.01, min=0.0,
                 help=_('Lower bound of the log-uniform length-scale '
                        'prior.')),
    cfg.FloatOpt('rho_upper', default=10.0, min=0.0,
                 help=_('Upper bound of the log-uniform length-scale '
                        'prior.')),
    cfg.FloatOpt('x_prior_inflation', default=1.5, min=0.0,
                 help=_('Variance inflation of the prior on unobserved '
                        'covariates.')),
    cfg.BoolOpt('overdispersion', default=False,
                help=_('Include the latent overdispersion residual.')),
    cfg.FloatOpt('log_alpha_clamp', default=constants.LOG_ALPHA_CLAMP,
                 min=1.0,
                 help=_('Absolute bound applied to log alpha before '
                        'exponentiation.')),
    cfg.StrOpt('x_update', default=constants.X_UPDATE_LOCAL,
               choices=(constants.X_UPDATE_LOCAL, constants.X_UPDATE_FULL),
               help=_('Rebuild only the moved row of the basis (local) or '
                      'all rows (full) when a missing covariate moves.')),
]

sampler_opts = [
    cfg.IntOpt('chains', default=4, min=1, help=_('Number of chains.')),
    cfg.IntOpt('iterations', default=5000, min=1,
               help=_('Iterations per chain.')),
    cfg.IntOpt('burn_in', default=1000, min=0,
               help=_('Burn-in iterations per chain.')),
    cfg.IntOpt('thin', default=4, min=1, help=_('Thinning stride.')),
    cfg.IntOpt('adapt_until',
               help=_('Last iteration at which proposals adapt. Defaults '
                      'to the burn-in.')),
    cfg.IntOpt('adapt_batch', default=50, min=1,
               help=_('Iterations between proposal scale adjustments.')),
    cfg.FloatOpt('adapt_delta', default=0.5, min=0.0,
                 help=_('Initial log-scale adjustment; the adjustment '
                        'shrinks as one over the square root of the batch '
                        'number.')),
    cfg.BoolOpt('paper_scale', default=False,
                help=_('Use the long run configuration.')),
    cfg.FloatOpt('rhat_threshold', default=1.1, min=1.0,
                 help=_('Split R-hat above which a warning is recorded.')),
]

baselines_opts = [
    cfg.IntOpt('boot', default=1000, min=1,
               help=_('Bootstrap replicates for WA and MAT.')),
    cfg.StrOpt('deshrink', default=constants.DESHRINK_LINEAR,
               choices=(constants.DESHRINK_LINEAR, constants.DESHRINK_SPLINE),
               help=_('WA deshrinking regression.')),
    cfg.IntOpt('mat_k', default=4, min=1,
               help=_('Number of analogs used by MAT.')),
    cfg.StrOpt('mat_weighting', default=constants.WEIGHT_UNIFORM,
               choices=(constants.WEIGHT_UNIFORM,
                        constants.WEIGHT_INVERSE_DISTANCE),
               help=_('MAT analog weighting.')),
    cfg.IntOpt('mlrc_grid', default=500, min=2,
               help=_('Covariate grid size of the MLRC inversion.')),
    cfg.FloatOpt('bummer_a_sd', default=5.0, min=0.0,
                 help=_('Prior standard deviation of the BUMMER offsets.')),
    cfg.FloatOpt('bummer_b_var_inflation', default=4.0, min=0.0,
                 help=_('Inflation of the observed covariate variance in '
                        'the prior on the BUMMER optima.')),
    cfg.FloatOpt('bummer_logc2_sd', default=2.0, min=0.0,
                 help=_('Prior standard deviation of the BUMMER log '
                        'spreads.')),
]

crossval_opts = [
    cfg.IntOpt('k', default=constants.DEFAULT_FOLDS, min=2,
               help=_('Number of folds.')),
    cfg.ListOpt('models', default=list(constants.MODELS),
                help=_('Models to compare.')),
    cfg.FloatOpt('no_analog', min=0.0, max=1.0,
                 help=_('Covariate quantile above which rows are held '
                        'out.')),
    cfg.BoolOpt('stratify', default=False,
                help=_('Stratify folds by covariate value.')),
]

sim_opts = [
    cfg.StrOpt('generator', default=constants.GENERATOR_MVGP,
               choices=(constants.GENERATOR_BUMMER, constants.GENERATOR_MVGP),
               help=_('Generating model.')),
    cfg.IntOpt('n_train', default=500, min=1,
               help=_('Rows with observed covariates.')),
    cfg.IntOpt('n_test', default=200, min=0,
               help=_('Rows with masked covariates.')),
    cfg.IntOpt('d', default=8, min=1, help=_('Number of species.')),
    cfg.IntOpt('count_min', default=50, min=1,
               help=_('Smallest total count per row.')),
    cfg.IntOpt('count_max', default=200, min=1,
               help=_('Largest total count per row.')),
    cfg.FloatOpt('x_lower', default=-3.0, help=_('Covariate lower bound.')),
    cfg.FloatOpt('x_upper', default=3.0, help=_('Covariate upper bound.')),
    cfg.FloatOpt('rho', default=1.0, min=0.0,
                 help=_('Length-scale of the mvgp generator.')),
    cfg.IntOpt('seed', default=0, help=_('Simulation seed.')),
]

GROUPS = (
    ('data', data_opts),
    ('kernel', kernel_opts),
    ('covprior', covprior_opts),
    ('mvgp', mvgp_opts),
    ('sampler', sampler_opts),
    ('baselines', baselines_opts),
    ('crossval', crossval_opts),
    ('sim', sim_opts),
)


def register_opts(conf=cfg.CONF):
    conf.register_opts(default_opts)
    for group, opts in GROUPS:
        conf.register_opts(opts, group=group)


def register_cli_opts(conf=cfg.CONF):
    conf.register_cli_opts(cli_opts)


def list_opts():
    return [(None, default_opts)] + list(GROUPS)


def _flag(conf, name, group, option=None):
    value = getattr(conf, name, None)
    if value is not None:
        return value
    return getattr(conf[group], option or name)


def get_seed(conf=cfg.CONF):
    return _flag(conf, 'seed', 'sim', 'seed')


def get_jobs(conf=cfg.CONF):
    jobs = getattr(conf, 'jobs', None)
    if jobs is None:
        jobs = int(os.environ.get(constants.THREADS_ENV, '1'))
    return max(1, jobs)


def get_chain_settings(conf=cfg.CONF):
    """Chain settings with command line flags applied over the file."""
    group = conf.sampler
    if _flag(conf, 'paper_scale', 'sampler'):
        settings = dict(constants.LONG_RUN)
    else:
        settings = {
            'iterations': _flag(conf, 'iters', 'sampler', 'iterations'),
            'burn_in': _flag(conf, 'burnin', 'sampler', 'burn_in'),
            'thin': _flag(conf, 'thin', 'sampler'),
            'chains': _flag(conf, 'chains', 'sampler'),
        }
    adapt_until = group.adapt_until
    if adapt_until is None or adapt_until > settings['burn_in']:
        adapt_until = settings['burn_in']
    settings['adapt_until'] = adapt_until
    settings['adapt_batch'] = group.adapt_batch
    settings['adapt_delta'] = group.adapt_delta
    return settings


def get_kernel_settings(conf=cfg.CONF):
    return {
        'family': _flag(conf, 'kernel_family', 'kernel', 'family'),
        'nu': conf.kernel.nu,
        'knots': _flag(conf, 'knots', 'kernel'),
        'knot_extend': _flag(conf, 'knot_extend', 'kernel'),
        'jitter': conf.kernel.jitter,
        'spline_degree': conf.kernel.spline_degree,
    }


def get_overdispersion(conf=cfg.CONF):
    return bool(_flag(conf, 'overdispersion', 'mvgp'))


def get_data_paths(conf=cfg.CONF):
    return (_flag(conf, 'counts', 'data'),
            _flag(conf, 'covariates', 'data'),
            _flag(conf, 'output_dir', 'data'))


def get_crossval_settings(conf=cfg.CONF):
    return {
        'k': _flag(conf, 'k', 'crossval'),
        'models': _flag(conf, 'models', 'crossval'),
        'no_analog': _flag(conf, 'no_analog', 'crossval'),
        'stratify': conf.crossval.stratify,
    }


def snapshot(conf=cfg.CONF):
    """Plain, picklable copy of every option with command line flags applied.

    Model drivers and worker processes read this instead of the global
    configuration object; it is also recorded verbatim in run manifests.
    """
    settings = {'DEFAULT': {opt.dest: getattr(conf, opt.dest)
                            for opt in default_opts}}
    for group, opts in GROUPS:
        settings[group] = {opt.dest: getattr(conf[group], opt.dest)
                           for opt in opts}
    settings['sampler'].update(get_chain_settings(conf))
    settings['kernel'].update(get_kernel_settings(conf))
    settings['mvgp']['overdispersion'] = get_overdispersion(conf)
    settings['crossval'].update(get_crossval_settings(conf))
    counts, covariates, output_dir = get_data_paths(conf)
    settings['data'].update(counts=counts, covariates=covariates,
                            output_dir=output_dir)
    settings['DEFAULT']['seed'] = get_seed(conf)
    settings['DEFAULT']['jobs'] = get_jobs(conf)
    settings['DEFAULT']['model'] = getattr(conf, 'model', None)
    return settings
