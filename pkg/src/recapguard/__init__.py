"""recapguard: screen-recapture detection, fail-closed upload enforcement,
and invisible forensic identifiers."""

__version__ = "0.1.0"

from .imaging import (
    AugmentConfig,
    ImageBuffer,
    PreprocessConfig,
    augment,
    denormalize,
    load_image,
    preprocess,
)
from .channel import (
    DatasetManifest,
    RecaptureParams,
    generate_dataset,
    load_manifest,
    moire_energy,
    sample_params,
    simulate_recapture,
)
from .detector import (
    DetectionResult,
    Model,
    ModelConfig,
    ProbabilityPair,
    build_model,
    edge_kernels,
    forward,
    predict,
    visualize_edge_responses,
    visualize_feature_maps,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingHistory, export_history_plot, split_dataset, train
from .evaluation import (
    MetricsReport,
    ROCData,
    empirical_risk,
    evaluate,
    robustness_eval,
    roc_curve,
)
from .enforcement import (
    Decision,
    EnforcementConfig,
    EnforcementDecision,
    RateLimiter,
    Reason,
    ValidationCache,
    issue_permit_token,
    validate_upload,
    verify_permit_token,
)
from .imi import (
    ExtractionResult,
    IMIConfig,
    IMIPayload,
    embed,
    encode_payload,
    extract,
    survivability_sweep,
)
