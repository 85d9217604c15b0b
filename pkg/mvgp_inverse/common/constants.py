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

KERNEL_EXPONENTIAL = 'exponential'
KERNEL_MATERN = 'matern'
KERNEL_FAMILIES = (KERNEL_EXPONENTIAL, KERNEL_MATERN)

# Matern smoothness values with closed forms
MATERN_CLOSED_FORMS = (0.5, 1.5, 2.5)

DEFAULT_KNOTS = 30
DEFAULT_KNOT_EXTEND = 1.5
DEFAULT_JITTER = 1e-8

TRANSFORM_IDENTITY = 'identity'
TRANSFORM_LOG = 'log'
TRANSFORM_LOGIT = 'logit'

TARGET_RATE_SCALAR = 0.44
TARGET_RATE_MULTIVARIATE = 0.234

PSI_LKJ = 'lkj'
PSI_UNIFORM = 'uniform'

DESHRINK_LINEAR = 'linear'
DESHRINK_SPLINE = 'spline'

WEIGHT_UNIFORM = 'uniform'
WEIGHT_INVERSE_DISTANCE = 'inverse-distance'

GENERATOR_BUMMER = 'bummer'
GENERATOR_MVGP = 'mvgp'

X_UPDATE_LOCAL = 'local'
X_UPDATE_FULL = 'full'

MODEL_MVGP = 'mvgp'
MODEL_GAM = 'gam'
MODEL_BUMMER = 'bummer'
MODEL_WA = 'wa'
MODEL_MAT = 'mat'
MODEL_MLRC = 'mlrc'

# model name -> driver class, loaded by dotted path
MODEL_DRIVERS = {
    MODEL_MVGP: 'mvgp_inverse.models.bayesian.MvgpDriver',
    MODEL_GAM: 'mvgp_inverse.models.bayesian.GamDriver',
    MODEL_BUMMER: 'mvgp_inverse.models.bayesian.BummerDriver',
    MODEL_WA: 'mvgp_inverse.models.transfer.WaDriver',
    MODEL_MAT: 'mvgp_inverse.models.transfer.MatDriver',
    MODEL_MLRC: 'mvgp_inverse.models.transfer.MlrcDriver',
}
MODELS = tuple(MODEL_DRIVERS)

LONG_RUN = {
    'iterations': 200000,
    'burn_in': 50000,
    'thin': 150,
    'chains': 4,
}

DEFAULT_FOLDS = 12

THREADS_ENV = 'MVGP_THREADS'

LOG_ALPHA_CLAMP = 30.0

# shared prediction schema
PREDICTION_COLUMNS = ('row_id', 'point', 'lower', 'upper')
SCORE_COLUMNS = ('model', 'crps', 'mspe', 'mae', 'coverage95', 'n_rows',
                 'failed_folds')
