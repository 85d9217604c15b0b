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

"""mvgp-inverse command line tool.

Global options go before the command::

    mvgp-inverse --config-file run.conf --seed 3 simulate
    mvgp-inverse --config-file run.conf --model mvgp --chains 2 fit
    mvgp-inverse --config-file run.conf --models mvgp,wa --k 5 crossval

Exit status is 0 on success, 1 on data or model errors and 2 on usage
errors.
"""

import sys

import numpy as np
from oslo_config import cfg
from oslo_log import log as logging
from oslo_utils import timeutils

from mvgp_inverse._i18n import _
from mvgp_inverse.common import config
from mvgp_inverse.common import constants
from mvgp_inverse.common import utils
from mvgp_inverse import dataio
from mvgp_inverse import evaluation
from mvgp_inverse import exceptions as exc
from mvgp_inverse import kernels
from mvgp_inverse.models import driver_api
from mvgp_inverse import sim
from mvgp_inverse import version

LOG = logging.getLogger(__name__)
CONF = cfg.CONF

PROJECT = 'mvgp-inverse'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

MANIFEST = 'manifest.json'
DEMO_SPECIES = 4


def _manifest(command, settings, **extra):
    document = {
        'command': command,
        'version': version.version_string(),
        'settings': settings,
        'seed': settings['DEFAULT']['seed'],
        'warnings': [],
    }
    document.update(extra)
    return document


def _publish_manifest(stage, document, watch):
    if document['settings']['DEFAULT']['record_wall_clock']:
        document['wall_clock_seconds'] = watch.elapsed()
    document['files'] = sorted(stage.names + [MANIFEST])
    utils.write_json(utils.to_builtin(document), stage.path(MANIFEST))


def _require(value, flag):
    if not value:
        raise exc.UsageError(reason=_('%s is required') % flag)
    return value


def _load(settings):
    data = settings['data']
    return dataio.load_dataset(_require(data['counts'], '--counts'),
                               _require(data['covariates'], '--covariates'))


def _chain_seeds(settings, seed):
    return [seed + c for c in range(settings['sampler']['chains'])]


def _driver_warnings(name, diagnostics, prediction=None):
    warnings = []
    for param in diagnostics.get('rhat_above_threshold', []):
        warnings.append(_('%(model)s: split R-hat of %(param)s is above '
                          'the threshold') % {'model': name,
                                              'param': param})
    clamps = int(sum(diagnostics.get('clamp_events', [])))
    if clamps:
        warnings.append(_('%(model)s: log alpha was clamped %(n)d times') %
                        {'model': name, 'n': clamps})
    if prediction is not None:
        flat = np.asarray(prediction.flags.get('flat_profile', []),
                          dtype=bool)
        if flat.any():
            warnings.append(_('%(model)s: %(n)d predictions have a flat '
                              'likelihood profile') %
                            {'model': name, 'n': int(flat.sum())})
    return warnings


def do_simulate(settings):
    seed = settings['DEFAULT']['seed']
    output_dir = settings['data']['output_dir']
    sim_config = sim.SimConfig.from_settings(
        settings['sim'], seed=seed,
        kernel_family=settings['kernel']['family'],
        nu=settings['kernel']['nu'])
    with timeutils.StopWatch() as watch, \
            utils.OutputStage(output_dir) as stage:
        simulated = sim.simulate(sim_config)
        sim.write_simulation(simulated, stage.path('counts.csv'),
                             stage.path('covariates.csv'),
                             stage.path('truth.json'))
        _publish_manifest(stage, _manifest(
            'simulate', settings, n_rows=sim_config.n_rows,
            n_species=simulated.data.n_species), watch)
    LOG.info("Simulated %(n)d rows with the %(gen)s generator into %(dir)s",
             {'n': sim_config.n_rows, 'gen': sim_config.generator,
              'dir': output_dir})


def do_demo(settings):
    seed = settings['DEFAULT']['seed']
    kernel = kernels.CorrelationKernel(family=settings['kernel']['family'],
                                       rho=settings['sim']['rho'],
                                       nu=settings['kernel']['nu'])
    with timeutils.StopWatch() as watch, \
            utils.OutputStage(settings['data']['output_dir']) as stage:
        demo = sim.demo_correlated_gps(d=DEMO_SPECIES, kernel=kernel,
                                       seed=seed,
                                       x_lower=settings['sim']['x_lower'],
                                       x_upper=settings['sim']['x_upper'])
        utils.write_csv(demo.curves_frame(), stage.path('demo_curves.csv'))
        demo.correlation_frame().to_csv(
            stage.path('demo_correlation.csv'), lineterminator='\n')
        _publish_manifest(stage, _manifest(
            'demo', settings, target_correlation=demo.sigma), watch)


def _write_figures(stage, figures):
    for name, frame in sorted(figures.items()):
        path = stage.path('figures/%s.csv' % name)
        if name == 'correlation':
            frame.to_csv(path, lineterminator='\n')
        else:
            utils.write_csv(frame, path)


def do_fit(settings):
    seed = settings['DEFAULT']['seed']
    name = settings['DEFAULT']['model'] or constants.MODEL_MVGP
    data, covariates = _load(settings)
    if not covariates.n_missing:
        raise exc.NothingToPredict()
    driver = driver_api.load_driver(name, settings, seed=seed,
                                    jobs=settings['DEFAULT']['jobs'])
    with timeutils.StopWatch() as watch, \
            utils.OutputStage(settings['data']['output_dir']) as stage:
        prediction = driver.fit_predict(data, covariates)
        utils.write_csv(prediction.to_frame(),
                        stage.path('predictions.csv'))
        extra = {'model': name}
        if prediction.probabilistic:
            utils.write_csv(prediction.draws_frame(),
                            stage.path('figures/predictive_draws.csv'))
            for chain in range(driver.samples.n_chains):
                utils.write_csv(driver.samples.to_frame(chain),
                                stage.path('posterior/chain_%d.csv' % chain))
            extra['chain_seeds'] = _chain_seeds(settings, seed)
        knots = getattr(getattr(driver, 'model', None), 'knots', None)
        if knots is not None:
            kernels.write_knots(knots, stage.path('knots.csv'))
            extra['knots'] = knots.locations
        _write_figures(stage, driver.figures())
        diagnostics = driver.diagnostics()
        document = _manifest('fit', settings, diagnostics=diagnostics,
                             **extra)
        document['warnings'] = _driver_warnings(name, diagnostics,
                                                prediction)
        _publish_manifest(stage, document, watch)
    LOG.info("%(model)s predicted %(n)d rows",
             {'model': name, 'n': prediction.point.size})


def _split(settings, covariates, seed):
    crossval = settings['crossval']
    if crossval['no_analog'] is not None:
        return dataio.noanalog_split(covariates, crossval['no_analog'])
    strata = covariates.values() if crossval['stratify'] else None
    if strata is not None:
        # unknown covariates sort last
        strata = np.where(np.isnan(strata), np.inf, strata)
    return dataio.kfold_split(covariates.n_rows, crossval['k'], seed,
                              strata=strata)


def do_crossval(settings):
    seed = settings['DEFAULT']['seed']
    models = settings['crossval']['models']
    for model in models:
        if model not in constants.MODELS:
            raise exc.InvalidParameter(
                name='models', value=model,
                reason=_('expected one of %s') % ', '.join(constants.MODELS))
    data, covariates = _load(settings)
    folds = _split(settings, covariates, seed)
    with timeutils.StopWatch() as watch, \
            utils.OutputStage(settings['data']['output_dir']) as stage:
        result = evaluation.crossval(models, data, covariates, folds,
                                     settings, seed=seed,
                                     jobs=settings['DEFAULT']['jobs'])
        utils.write_csv(result.report, stage.path('scores.csv'))
        dataio.write_folds(folds, stage.path('folds.csv'))
        if not result.rows.empty:
            utils.write_csv(result.rows, stage.path('fold_predictions.csv'))
        document = _manifest(
            'crossval', settings, models=models, n_folds=folds.k,
            fold_seeds={fold: seed + evaluation.FOLD_SEED_STRIDE * fold
                        for fold, _train, _test in folds.folds()},
            failures=result.failures)
        document['warnings'] = [
            _('%(model)s failed on fold %(fold)d: %(error)s') % f
            for f in result.failures]
        _publish_manifest(stage, document, watch)
    LOG.info("Cross-validated %(n)d models over %(k)d folds",
             {'n': len(models), 'k': folds.k})


COMMANDS = {
    'simulate': (do_simulate, _('Simulate a dataset with known truth.')),
    'fit': (do_fit, _('Fit a model and predict the rows without '
                      'covariates.')),
    'crossval': (do_crossval, _('Score models by cross-validation.')),
    'demo': (do_demo, _('Draw correlated latent curves.')),
}


def add_command_parsers(subparsers):
    for name, (func, help_) in sorted(COMMANDS.items()):
        parser = subparsers.add_parser(name, help=help_)
        parser.set_defaults(func=func)


command_opt = cfg.SubCommandOpt('command',
                                title=_('Commands'),
                                help=_('Available commands'),
                                handler=add_command_parsers)


def register(conf=CONF):
    config.register_opts(conf)
    config.register_cli_opts(conf)
    conf.register_cli_opt(command_opt)
    logging.register_options(conf)


def main(argv=None, conf=None):
    argv = sys.argv[1:] if argv is None else argv
    conf = CONF if conf is None else conf
    register(conf)
    try:
        conf(argv, project=PROJECT, version=version.version_string())
    except SystemExit as e:
        return e.code
    except cfg.ConfigFilesNotFoundError as e:
        conf.print_usage(file=sys.stderr)
        sys.stderr.write('%s\n' % e)
        return EXIT_USAGE
    except cfg.Error as e:
        sys.stderr.write('%s\n' % e)
        return EXIT_USAGE
    logging.setup(conf, PROJECT)
    func = getattr(conf.command, 'func', None)
    if func is None:
        conf.print_usage(file=sys.stderr)
        return EXIT_USAGE
    try:
        func(config.snapshot(conf))
    except exc.UsageError as e:
        conf.print_usage(file=sys.stderr)
        LOG.error("%s", e)
        return EXIT_USAGE
    except exc.MvgpException as e:
        LOG.error("%s", e)
        return EXIT_FAILURE
    return EXIT_OK
