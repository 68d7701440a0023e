"""Variable-length span infilling for masked language models.

The package decides how many tokens to put in a masked gap before
generating them.  It probes a small set of candidate lengths, fits the
logarithmic length bias of span-averaged model confidence, and then
hill-climbs a regularized confidence signal while committing tokens one
at a time.
"""

from .backend import (
    BackendError,
    ForwardCallCounter,
    ForwardResult,
    InfillModel,
    ModelSession,
    sample_token,
)
from .confidence import (
    avg_confidence,
    fit_log_linear,
    least_squares_line,
    position_confidence,
    regularized_signal,
)
from .decoding import (
    DecodeResult,
    commit_one,
    decode,
    local_refine,
    neighborhood,
    run_decode,
)
from .metrics import (
    BoundReport,
    RatioStats,
    check_bounds,
    expected_probe_calls,
    ratio_stats,
    summary_stats,
    trace_from_dict,
    trace_to_dict,
)
from .oracles import (
    PhysicsOracle,
    PhysicsOracleParams,
    PlantedOracle,
    PlantedOracleParams,
    QualityProfile,
    invert_spike_entropy,
    load_oracle_config,
    spike_entropy,
)
from .probing import ARGMAX_TIE_TOL, ProbePlan, ProbingResult, build_probe_plan, run_probing
from .remote import RemoteModel
from .types import (
    CommitStepLog,
    Context,
    DecodeState,
    DecodeTrace,
    MaskTemplate,
    PositionPrediction,
    ProbeRecord,
    SamplingConfig,
    SignalCalibration,
    compose,
    entropy_sum,
    make_template,
    validate_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "ARGMAX_TIE_TOL",
    "BackendError",
    "BoundReport",
    "CommitStepLog",
    "Context",
    "DecodeResult",
    "DecodeState",
    "DecodeTrace",
    "ForwardCallCounter",
    "ForwardResult",
    "InfillModel",
    "MaskTemplate",
    "ModelSession",
    "PhysicsOracle",
    "PhysicsOracleParams",
    "PlantedOracle",
    "PlantedOracleParams",
    "PositionPrediction",
    "ProbePlan",
    "ProbeRecord",
    "ProbingResult",
    "QualityProfile",
    "RatioStats",
    "RemoteModel",
    "SamplingConfig",
    "SignalCalibration",
    "avg_confidence",
    "build_probe_plan",
    "check_bounds",
    "commit_one",
    "compose",
    "decode",
    "entropy_sum",
    "expected_probe_calls",
    "fit_log_linear",
    "invert_spike_entropy",
    "least_squares_line",
    "load_oracle_config",
    "local_refine",
    "make_template",
    "neighborhood",
    "position_confidence",
    "ratio_stats",
    "regularized_signal",
    "run_decode",
    "run_probing",
    "sample_token",
    "spike_entropy",
    "summary_stats",
    "trace_from_dict",
    "trace_to_dict",
    "validate_distribution",
    "__version__",
]
