from .errors import InputError, NumericError, SardirError
from .compdata import CompositionMatrix, DesignPair, validate_composition, zero_replace
from .spatialw import (
    SpatialWeights,
    build_band_weights,
    build_inverse_distance_weights,
    build_knn_weights,
    row_normalize,
)
from .dirichlet_core import ModelParams
from .metrics import MetricsReport, evaluate
from .optim import FitConfig, FitResult, fit_dirichlet, predict
from .multinomial import TrialCounts, fit_multinomial
from .simulate import (
    ReplicationTable,
    SyntheticConfig,
    run_prediction_study,
    run_replication_study,
)
from .ingest import (
    ColumnManifest,
    DatasetBundle,
    LoocvReport,
    ingest_csv,
    ingest_labels,
    ingest_weights,
    load_bundle,
    run_loocv,
)
from .run_config import RunOutput, load_environment, load_flat_config, resolve_seed
