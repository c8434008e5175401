"""Energy disaggregation with grouped signature dictionaries and a
sum-to-k activation constraint, plus lasso and elastic-net baselines."""

from .disaggregators import (
    DEFAULT_BETA,
    ElasticNetConfig,
    LassoConfig,
    NnlsConfig,
    S2kConfig,
    Stage,
    detect_off_devices,
    disaggregate,
    elastic_net_solve,
    hierarchical_disaggregate,
    lasso_solve,
    nnls_solve,
    s2k_solve,
)
from .metrics import disaggregation_error, evaluate, pcec, rmse
from .model import (
    ActivationMatrix,
    ConfigError,
    DeviceGroup,
    DisaggregationResult,
    GroupedDictionary,
    Normalization,
    SelectorMatrix,
    SignalMatrix,
    StructureError,
    build_selector,
    reconstruct,
)
from .nnls import GramSystem, fnnls, kkt_report

__version__ = "0.1.0"
