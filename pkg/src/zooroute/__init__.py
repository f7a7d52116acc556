"""Cost-optimal, SLA-constrained request routing for model zoos."""

from .baselines import GuessingPolicy, calibrate_guessing, route_oracle, route_single, route_threshold
from .core import (
    JOULES_PER_MEGAJOULE,
    ModelId,
    ModelProfile,
    RequestEvent,
    RoutingDecision,
    SlaParams,
    VirtualQueue,
    ZooConfig,
    queue_update,
    request_cost,
    zoo_cost_extremes,
)
from .metrics import MetricStream, compliance_report, overhead_report, time_to_sla
from .predictor import (
    FeatureExtractor,
    LearningRateSchedule,
    PredictorState,
    gradient,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    sgd_step,
)
from .router import (
    DeferredLabelSource,
    FeedbackOrderError,
    MissingLabelsError,
    Router,
    TraceLabelSource,
    exploration_probability,
    solve_per_request,
)
from .simulator import (
    ExperimentTrace,
    GroundTruthModel,
    ScenarioConfig,
    build_zoo,
    canonical_scenario,
    generate_trace,
    run_experiment,
    sweep,
)

__version__ = "0.1.0"
