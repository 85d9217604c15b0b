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

import contextlib
import os
import shutil
import tempfile

import numpy as np
from oslo_log import log as logging
from oslo_serialization import jsonutils
from oslo_utils import excutils
from oslo_utils import fileutils

LOG = logging.getLogger(__name__)

CSV_OPTIONS = {'index': False, 'lineterminator': '\n'}


def make_rng(seed, *stream):
    """Independent generator for a (seed, stream...) tuple.

    Streams are spawned deterministically so that chains and folds do not
    depend on the order in which workers pick them up.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def write_csv(frame, path):
    frame.to_csv(path, **CSV_OPTIONS)


def write_json(document, path):
    with open(path, 'w') as handle:
        handle.write(jsonutils.dumps(document, sort_keys=True, indent=2))
        handle.write('\n')


def to_builtin(value):
    """Convert numpy containers and scalars into JSON friendly values."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


class OutputStage(object):
    """Collect outputs in a scratch directory and publish them together.

    Files are written below ``path(name)``; on a clean exit every file is
    moved into the output directory with an atomic rename. On error the
    scratch directory is removed and nothing is published.
    """

    def __init__(self, output_dir):
        self.output_dir = output_dir
        self.names = []
        self._scratch = None

    def __enter__(self):
        fileutils.ensure_tree(self.output_dir)
        self._scratch = tempfile.mkdtemp(prefix='.stage-',
                                         dir=self.output_dir)
        return self

    def path(self, name):
        target = os.path.join(self._scratch, name)
        fileutils.ensure_tree(os.path.dirname(target))
        if name not in self.names:
            self.names.append(name)
        return target

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._publish()
        finally:
            shutil.rmtree(self._scratch, ignore_errors=True)
        return False

    def _publish(self):
        published = []
        try:
            for name in self.names:
                final = os.path.join(self.output_dir, name)
                fileutils.ensure_tree(os.path.dirname(final))
                os.replace(os.path.join(self._scratch, name), final)
                published.append(final)
        except OSError:
            with excutils.save_and_reraise_exception():
                for final in published:
                    with contextlib.suppress(OSError):
                        os.remove(final)
        LOG.info("Wrote %d output files to %s", len(published),
                 self.output_dir)
