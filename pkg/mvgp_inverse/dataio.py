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

"""Compositional count datasets, covariates and fold designs."""

import dataclasses
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from oslo_log import log as logging

from mvgp_inverse._i18n import _
from mvgp_inverse.common import utils
from mvgp_inverse import exceptions as exc

LOG = logging.getLogger(__name__)

COVARIATE_COLUMNS = ('row_id', 'value')
FOLD_COLUMNS = ('row_id', 'fold')
_INTEGER = r'[0-9]+'


@dataclasses.dataclass(frozen=True)
class CompositionMatrix(object):
    """N x d non-negative integer counts with species labels."""

    counts: np.ndarray
    species_names: Tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 2:
            raise exc.DataError(
                reason=_('counts must be an N x d array with N >= 1 and '
                         'd >= 2, got shape %s') % (counts.shape,))
        if not np.issubdtype(counts.dtype, np.integer):
            raise exc.DataError(reason=_('counts must be integers'))
        if (counts < 0).any():
            row, col = np.argwhere(counts < 0)[0]
            raise exc.InvalidCount(value=int(counts[row, col]), path='<array>',
                                   row=int(row), column=int(col))
        empty = np.flatnonzero(counts.sum(axis=1) == 0)
        if empty.size:
            raise exc.EmptyComposition(row=int(empty[0]), path='<array>')
        names = tuple(str(n) for n in self.species_names)
        if len(names) != counts.shape[1] or len(set(names)) != len(names):
            raise exc.DataError(
                reason=_('species names must be %d distinct labels') %
                counts.shape[1])
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)
        object.__setattr__(self, 'species_names', names)

    @property
    def n_rows(self):
        return self.counts.shape[0]

    @property
    def n_species(self):
        return self.counts.shape[1]

    @property
    def row_totals(self):
        return self.counts.sum(axis=1)

    def proportions(self):
        return self.counts / self.row_totals[:, None]

    def subset(self, rows):
        return CompositionMatrix(self.counts[np.asarray(rows)],
                                 self.species_names)


@dataclasses.dataclass(frozen=True)
class CovariateSet(object):
    """Observed covariates (original units) and reconstruction slots.

    ``center`` and ``scale`` define the working scale used by every kernel
    computation: ``working = (original - center) / scale``.
    """

    n_rows: int
    observed_index: np.ndarray
    observed_values: np.ndarray
    missing_index: np.ndarray
    center: float = 0.0
    scale: float = 1.0
    standardized: bool = False

    def __post_init__(self):
        obs = np.asarray(self.observed_index, dtype=np.int64)
        vals = np.asarray(self.observed_values, dtype=float)
        miss = np.asarray(self.missing_index, dtype=np.int64)
        if obs.shape != vals.shape:
            raise exc.DataError(
                reason=_('observed rows and values differ in length'))
        if not np.all(np.isfinite(vals)):
            raise exc.DataError(reason=_('observed covariates must be '
                                         'finite'))
        order = np.argsort(obs, kind='stable')
        obs, vals = obs[order], vals[order]
        miss = np.sort(miss)
        together = np.concatenate([obs, miss])
        if (np.intersect1d(obs, miss).size or
                np.unique(together).size != together.size or
                together.size != self.n_rows or
                (together.size and (together.min() < 0 or
                                    together.max() >= self.n_rows))):
            raise exc.DataError(
                reason=_('observed and missing rows must be disjoint and '
                         'cover rows 0..%d') % (self.n_rows - 1))
        if self.standardized and not self.scale > 0:
            raise exc.InvalidParameter(name='scale', value=self.scale,
                                       reason=_('must be positive'))
        for arr in (obs, vals, miss):
            arr.setflags(write=False)
        object.__setattr__(self, 'observed_index', obs)
        object.__setattr__(self, 'observed_values', vals)
        object.__setattr__(self, 'missing_index', miss)

    @property
    def n_observed(self):
        return self.observed_index.size

    @property
    def n_missing(self):
        return self.missing_index.size

    def to_working(self, values):
        return (np.asarray(values, dtype=float) - self.center) / self.scale

    def to_original(self, values):
        return np.asarray(values, dtype=float) * self.scale + self.center

    def working_values(self):
        return self.to_working(self.observed_values)

    def values(self):
        """Length-N vector in original units, NaN at reconstruction rows."""
        full = np.full(self.n_rows, np.nan)
        full[self.observed_index] = self.observed_values
        return full

    def mask(self, rows):
        """Copy with ``rows`` turned into reconstruction rows."""
        rows = np.asarray(rows, dtype=np.int64)
        keep = ~np.isin(self.observed_index, rows)
        return dataclasses.replace(
            self,
            observed_index=self.observed_index[keep],
            observed_values=self.observed_values[keep],
            missing_index=np.union1d(self.missing_index, rows))

    def restrict(self, rows):
        """Covariates of ``rows`` renumbered 0..len(rows)-1."""
        rows = np.asarray(rows, dtype=np.int64)
        position = {int(r): i for i, r in enumerate(rows)}
        full = self.values()[rows]
        seen = ~np.isnan(full)
        return dataclasses.replace(
            self,
            n_rows=rows.size,
            observed_index=np.flatnonzero(seen),
            observed_values=full[seen],
            missing_index=np.array(
                [position[int(r)] for r in rows[~seen]], dtype=np.int64))


@dataclasses.dataclass(frozen=True)
class FoldDesign(object):
    assignments: np.ndarray
    k: int
    seed: Optional[int]

    def folds(self):
        rows = np.arange(self.assignments.size)
        for fold in range(1, self.k + 1):
            test = rows[self.assignments == fold]
            yield fold, rows[self.assignments != fold], test

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k + 1)[1:]

    def to_frame(self):
        return pd.DataFrame({'row_id': np.arange(self.assignments.size),
                             'fold': self.assignments})


@dataclasses.dataclass(frozen=True)
class HoldoutSplit(object):
    """Two-way split holding out the upper covariate tail."""

    train_index: np.ndarray
    test_index: np.ndarray
    quantile: float
    threshold: float

    k = 1

    @property
    def assignments(self):
        n = self.train_index.size + self.test_index.size
        assignments = np.zeros(n, dtype=np.int64)
        assignments[self.test_index] = 1
        return assignments

    def folds(self):
        yield 1, self.train_index, self.test_index

    def to_frame(self):
        return pd.DataFrame({'row_id': np.arange(self.assignments.size),
                             'fold': self.assignments})


def _read_table(path):
    try:
        frame = pd.read_csv(path, header=None, dtype=str,
                            keep_default_na=False, skip_blank_lines=True)
    except pd.errors.ParserError as e:
        raise exc.MalformedCsv(path=path, line='?', reason=str(e))
    except pd.errors.EmptyDataError:
        raise exc.MalformedCsv(path=path, line=1, reason=_('file is empty'))
    if frame.shape[0] < 2:
        raise exc.MalformedCsv(path=path, line=2,
                               reason=_('no data rows after the header'))
    header = [str(h).strip() for h in frame.iloc[0]]
    body = frame.iloc[1:].reset_index(drop=True)
    for col in range(body.shape[1]):
        missing = body.iloc[:, col].isna()
        if missing.any():
            line = int(np.flatnonzero(missing.to_numpy())[0]) + 2
            raise exc.MalformedCsv(path=path, line=line,
                                   reason=_('row has too few fields'))
    return header, body


def read_counts(path):
    header, body = _read_table(path)
    if len(set(header)) != len(header) or '' in header:
        raise exc.MalformedCsv(path=path, line=1,
                               reason=_('species names must be distinct '
                                        'and non-empty'))
    for col, name in enumerate(header):
        cells = body.iloc[:, col].str.strip()
        bad = ~cells.str.fullmatch(_INTEGER)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise exc.InvalidCount(value=body.iloc[row, col], path=path,
                                   row=row, column=name)
    counts = body.apply(lambda c: c.str.strip().astype(np.int64)).to_numpy()
    empty = np.flatnonzero(counts.sum(axis=1) == 0)
    if empty.size:
        raise exc.EmptyComposition(row=int(empty[0]), path=path)
    return CompositionMatrix(counts, tuple(header))


def read_covariates(path, n_rows):
    header, body = _read_table(path)
    if tuple(header) != COVARIATE_COLUMNS:
        raise exc.MalformedCsv(path=path, line=1,
                               reason=_('header must be row_id,value'))
    ids = body.iloc[:, 0].str.strip()
    bad = ~ids.str.fullmatch(_INTEGER)
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        raise exc.MalformedCsv(path=path, line=line,
                               reason=_('row_id must be an integer'))
    ids = ids.astype(np.int64).to_numpy()
    if ids.size != n_rows or not np.array_equal(np.sort(ids),
                                                np.arange(n_rows)):
        raise exc.RowCountMismatch(counts_path='counts', n_counts=n_rows,
                                   cov_path=path, n_covariates=ids.size)
    raw = body.iloc[:, 1].str.strip().to_numpy()
    values = np.full(ids.size, np.nan)
    for pos, text in enumerate(raw):
        if text == '':
            continue
        try:
            values[pos] = float(text)
        except ValueError:
            raise exc.MalformedCsv(path=path, line=pos + 2,
                                   reason=_('value %r is not a number') %
                                   text)
        if not np.isfinite(values[pos]):
            raise exc.MalformedCsv(path=path, line=pos + 2,
                                   reason=_('value must be finite'))
    seen = ~np.isnan(values)
    return CovariateSet(n_rows=n_rows,
                        observed_index=ids[seen],
                        observed_values=values[seen],
                        missing_index=ids[~seen])


def load_dataset(counts_path, covariates_path):
    """Read and cross-validate a counts file and its covariates file."""
    data = read_counts(counts_path)
    try:
        covariates = read_covariates(covariates_path, data.n_rows)
    except exc.RowCountMismatch as e:
        raise exc.RowCountMismatch(counts_path=counts_path,
                                   n_counts=data.n_rows,
                                   cov_path=covariates_path,
                                   n_covariates=e.kwargs['n_covariates'])
    LOG.info("Loaded %(n)d rows x %(d)d species (%(m)d reconstruction "
             "rows) from %(path)s",
             {'n': data.n_rows, 'd': data.n_species,
              'm': covariates.n_missing, 'path': counts_path})
    return data, covariates


def write_dataset(data, covariates, counts_path, covariates_path):
    """Canonical CSV serialization; ``load_dataset`` reads it back."""
    utils.write_csv(pd.DataFrame(np.asarray(data.counts),
                                 columns=list(data.species_names)),
                    counts_path)
    utils.write_csv(pd.DataFrame({'row_id': np.arange(covariates.n_rows),
                                  'value': covariates.values()}),
                    covariates_path)


def write_folds(design, path):
    utils.write_csv(design.to_frame(), path)


def standardize_covariates(cs):
    """Record (center, scale) so observed values have mean 0 and sd 1."""
    values = cs.observed_values
    if np.unique(values).size < 2:
        raise exc.InsufficientCovariates(needed=2,
                                         found=np.unique(values).size)
    center = float(np.mean(values))
    scale = float(np.std(values, ddof=1))
    return dataclasses.replace(cs, center=center, scale=scale,
                               standardized=True)


def unstandardize(cs, values):
    return cs.to_original(values)


def kfold_split(n, k, seed, strata=None):
    """Random partition of n rows into k folds of near-equal size.

    With ``strata`` (one value per row) consecutive blocks of k rows in
    the order of ``strata`` each receive a random permutation of fold ids.
    """
    if not 2 <= k <= n:
        raise exc.InvalidParameter(name='k', value=k,
                                   reason=_('must satisfy 2 <= k <= %d') % n)
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    if strata is None:
        order = rng.permutation(n)
        assignments[order] = np.arange(n) % k + 1
    else:
        order = np.argsort(np.asarray(strata, dtype=float), kind='stable')
        for start in range(0, n, k):
            block = order[start:start + k]
            assignments[block] = rng.permutation(k)[:block.size] + 1
    return FoldDesign(assignments=assignments, k=k, seed=seed)


def noanalog_split(cs, quantile):
    """Hold out rows whose covariate exceeds the given quantile."""
    if not 0.0 < quantile < 1.0:
        raise exc.InvalidParameter(name='quantile', value=quantile,
                                   reason=_('must lie in (0, 1)'))
    if cs.n_missing:
        raise exc.DataError(reason=_('the no-analog split needs covariates '
                                     'for every row'))
    values = cs.values()
    threshold = float(np.quantile(values, quantile))
    test = np.flatnonzero(values > threshold)
    train = np.flatnonzero(values <= threshold)
    if not test.size or not train.size:
        raise exc.DegenerateSplit(train=train.size, test=test.size)
    return HoldoutSplit(train_index=train, test_index=test,
                        quantile=quantile, threshold=threshold)
