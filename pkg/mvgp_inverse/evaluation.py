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

"""Proper scoring rules and the cross-validation harness."""

import concurrent.futures
import dataclasses
from typing import Optional

import numpy as np
import pandas as pd
from oslo_log import log as logging
from oslo_utils import timeutils

from mvgp_inverse._i18n import _
from mvgp_inverse.common import constants
from mvgp_inverse import exceptions as exc
from mvgp_inverse.models import driver_api

LOG = logging.getLogger(__name__)

# fold seeds are spaced so chain seeds (fold seed + chain) never collide
FOLD_SEED_STRIDE = 1000


def _check_draws(draws):
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise exc.InvalidParameter(name='draws', value=draws.shape[0],
                                   reason=_('at least two draws are '
                                            'required'))
    if not np.all(np.isfinite(draws)):
        raise exc.InvalidParameter(name='draws', value='non-finite',
                                   reason=_('draws must be finite'))
    return draws


def crps_from_draws(draws, truth):
    """Sample CRPS, mean |y - truth| minus half the mean |y - y'|.

    ``draws`` may be (K,) with a scalar truth or (K, n) with n truths.
    """
    draws = _check_draws(draws)
    k = draws.shape[0]
    data_term = np.mean(np.abs(draws - truth), axis=0)
    ordered = np.sort(draws, axis=0)
    weights = (2.0 * np.arange(1, k + 1) - k - 1).reshape(
        (k,) + (1,) * (draws.ndim - 1))
    spread_term = np.sum(weights * ordered, axis=0) / k ** 2
    return data_term - spread_term


def lower_median(draws):
    """Order statistic ceil(K/2); the lower median for even K."""
    ordered = np.sort(np.asarray(draws, dtype=float), axis=0)
    return ordered[(ordered.shape[0] - 1) // 2]


@dataclasses.dataclass
class PredictiveSet(object):
    """Held-out truths and either draws (K, n) or point and bounds."""

    truth: np.ndarray
    draws: Optional[np.ndarray] = None
    point: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.truth = np.atleast_1d(np.asarray(self.truth, dtype=float))
        if self.draws is not None:
            self.draws = _check_draws(np.reshape(self.draws,
                                                 (-1, self.truth.size)))
        elif self.point is None:
            raise exc.InvalidParameter(name='predictive set', value=None,
                                       reason=_('needs draws or points'))
        else:
            self.point = np.atleast_1d(np.asarray(self.point, dtype=float))
            if self.lower is None:
                self.lower = self.upper = self.point
            self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
            self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))

    @classmethod
    def from_prediction(cls, prediction, truth):
        if prediction.probabilistic:
            return cls(truth=truth, draws=prediction.draws)
        return cls(truth=truth, point=prediction.point,
                   lower=prediction.lower, upper=prediction.upper)

    @property
    def probabilistic(self):
        return self.draws is not None


def row_scores(ps):
    """Per-row (crps, squared error, absolute error, covered).

    A point forecast enters CRPS as a point mass, so its CRPS equals its
    absolute error and the [lower, upper] band only affects coverage.
    """
    if ps.probabilistic:
        crps = crps_from_draws(ps.draws, ps.truth)
        sq = (ps.draws.mean(axis=0) - ps.truth) ** 2
        ab = np.abs(lower_median(ps.draws) - ps.truth)
        lower, upper = np.quantile(ps.draws, [0.025, 0.975], axis=0)
    else:
        crps = np.abs(ps.point - ps.truth)
        sq = (ps.point - ps.truth) ** 2
        ab = crps
        lower, upper = ps.lower, ps.upper
    covered = (lower <= ps.truth) & (ps.truth <= upper)
    return pd.DataFrame({'crps': crps, 'sq_error': sq, 'abs_error': ab,
                         'covered': covered})


def point_scores(ps):
    """(mspe, mae, coverage95 in percent)."""
    rows = row_scores(ps)
    return (float(rows['sq_error'].mean()), float(rows['abs_error'].mean()),
            100.0 * float(rows['covered'].mean()))


@dataclasses.dataclass
class FoldOutcome(object):
    model: str
    fold: int
    rows: Optional[pd.DataFrame]
    error: Optional[str] = None
    elapsed: float = 0.0


@dataclasses.dataclass
class CrossvalResult(object):
    report: pd.DataFrame
    rows: pd.DataFrame
    failures: list


def _driver(model, settings, seed):
    if isinstance(model, str):
        return driver_api.load_driver(model, settings, seed=seed, jobs=1)
    return model(settings, seed=seed, jobs=1)


def _model_name(model):
    return model if isinstance(model, str) else model.name


# numerical failures inside numpy and scipy surface as these
FOLD_ERRORS = (exc.MvgpException, np.linalg.LinAlgError, ValueError,
               ArithmeticError)


def _score_fold(model, fold, data, covariates, train, test, settings, seed):
    """Fit on ``train`` and score the hidden ``test`` covariates."""
    rows = np.concatenate([train, test])
    subset = data.subset(rows)
    visible = covariates.restrict(rows)
    held_out = np.arange(train.size, rows.size)
    truth = visible.values()[held_out]
    masked = visible.mask(held_out)
    driver = _driver(model, settings, seed)
    name = driver.name
    with timeutils.StopWatch() as watch:
        try:
            prediction = driver.fit_predict(subset, masked)
        except FOLD_ERRORS as e:
            LOG.warning("%(model)s failed on fold %(fold)d: %(err)s",
                        {'model': name, 'fold': fold, 'err': e})
            return FoldOutcome(name, fold, None, str(e), watch.elapsed())
    order = np.searchsorted(prediction.row_ids, held_out)
    prediction = dataclasses.replace(
        prediction, row_ids=prediction.row_ids[order],
        point=prediction.point[order], lower=prediction.lower[order],
        upper=prediction.upper[order],
        draws=(None if prediction.draws is None
               else prediction.draws[:, order]))
    scores = row_scores(PredictiveSet.from_prediction(prediction, truth))
    scores.insert(0, 'row_id', rows[held_out])
    scores.insert(1, 'truth', truth)
    scores.insert(2, 'point', prediction.point)
    scores.insert(3, 'lower', prediction.lower)
    scores.insert(4, 'upper', prediction.upper)
    scores.insert(0, 'fold', fold)
    scores.insert(0, 'model', name)
    LOG.info("%(model)s fold %(fold)d: %(n)d rows scored in %(s).1fs",
             {'model': name, 'fold': fold, 'n': test.size,
              's': watch.elapsed()})
    return FoldOutcome(name, fold, scores, None, watch.elapsed())


def _score_fold_args(args):
    return _score_fold(*args)


def summarize(outcomes):
    """ScoreReport: one row per model, averaged over held-out rows."""
    names = list(dict.fromkeys(o.model for o in outcomes))
    records = []
    for name in names:
        mine = [o for o in outcomes if o.model == name]
        scored = [o.rows for o in mine if o.rows is not None]
        failed = sum(1 for o in mine if o.rows is None)
        if scored:
            rows = pd.concat(scored, ignore_index=True)
            records.append((name, rows['crps'].mean(),
                            rows['sq_error'].mean(),
                            rows['abs_error'].mean(),
                            100.0 * rows['covered'].mean(), len(rows),
                            failed))
        else:
            records.append((name, np.nan, np.nan, np.nan, np.nan, 0,
                            failed))
    return pd.DataFrame.from_records(records,
                                     columns=list(constants.SCORE_COLUMNS))


def crossval(models, data, covariates, folds, settings, seed=0, jobs=1):
    """Score every model on every fold of ``folds``.

    Rows whose covariate is unknown in ``covariates`` take part in neither
    training nor scoring. Fold seeds depend only on ``seed`` and the fold
    id, so results do not depend on ``jobs``.
    """
    observed = np.zeros(covariates.n_rows, dtype=bool)
    observed[covariates.observed_index] = True
    work = []
    for fold, train, test in folds.folds():
        train, test = train[observed[train]], test[observed[test]]
        if not test.size:
            continue
        if not train.size:
            raise exc.DegenerateSplit(train=0, test=test.size)
        for model in models:
            work.append((model, fold, data, covariates, train, test,
                         settings, seed + FOLD_SEED_STRIDE * fold))
    if jobs > 1 and len(work) > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(jobs, len(work))) as pool:
            outcomes = list(pool.map(_score_fold_args, work))
    else:
        outcomes = [_score_fold_args(args) for args in work]
    outcomes.sort(key=lambda o: (o.model, o.fold))
    failures = [{'model': o.model, 'fold': o.fold, 'error': o.error}
                for o in outcomes if o.rows is None]
    scored = [o.rows for o in outcomes if o.rows is not None]
    rows = (pd.concat(scored, ignore_index=True) if scored else
            pd.DataFrame())
    model_order = [_model_name(m) for m in models]
    report = summarize(sorted(outcomes,
                              key=lambda o: model_order.index(o.model)))
    return CrossvalResult(report=report, rows=rows, failures=failures)
