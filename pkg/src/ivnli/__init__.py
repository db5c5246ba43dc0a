"""i-vector native language identification.

MFCC/GFCC front-end, diagonal GMM-UBM, total-variability i-vectors,
LDA/PCA/WCCN post-processing and two-covariance PLDA scoring.
"""

from .backend import (
    ClassModels,
    LinearTransform,
    PldaModel,
    apply_chain,
    classify,
    compute_class_models,
    fit_lda,
    fit_pca,
    fit_plda,
    fit_wccn,
    score,
)
from .bundle import load_bundle, load_gmm, persist_bundle, persist_gmm
from .frontend import AudioBuffer, FeatureMatrix, FrontendConfig, extract_features, load_wav, write_wav
from .gmm import DiagonalGmm, EmConfig, em_train, frame_posteriors, initialize_gmm, log_likelihood, map_adapt
from .pipeline import (
    BackendConfig,
    EvaluationReport,
    GridResult,
    Manifest,
    ManifestEntry,
    ModelBundle,
    PipelineConfig,
    evaluate_pipeline,
    grid_search,
    predict_one,
    train_pipeline,
)
from .synth import SynthSpec, generate_corpus, ivector_posterior_oracle
from .tvm import (
    BaumWelchStats,
    TotalVariabilityModel,
    accumulate_bw_stats,
    extract_ivector,
    train_total_variability,
)

__version__ = "0.1.0"
