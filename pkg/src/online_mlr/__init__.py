"""Online EM for two-component mixed linear regression.

Submodules: :mod:`datagen` (streams), :mod:`whitening`, :mod:`sym_em` and
:mod:`asym_em` (the online estimators), :mod:`clustering`,
:mod:`baseline_em` (batch EM baseline), :mod:`ode_lab` (mean-field ODE) and
:mod:`harness` (experiments and CLI).
"""

from .datagen import DataStream, ModelSpec, RegressorProcess, StreamBatch, derive_rng
from .exceptions import (ConfigError, ConsistencyError, IntegrationError, QuadratureError,
                         SingularGramError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConsistencyError", "DataStream", "IntegrationError", "ModelSpec",
    "QuadratureError", "RegressorProcess", "SingularGramError", "StreamBatch", "derive_rng",
]
