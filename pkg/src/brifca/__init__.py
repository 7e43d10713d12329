"""Byzantine-robust clustered federated learning simulator."""
from .aggregation import AggregationRule, coordinate_median, coordinate_trimmed_mean, fedavg_mean
from .core import (
    ConfigError,
    DegenerateDesignError,
    EmptyAggregateError,
    ExperimentConfig,
    GroundTruth,
    InvalidInputError,
    OverTrimError,
    ParameterSpace,
    load_config,
    project,
    rng_stream,
)
from .datagen import WorkerSpec, generate_ground_truth, generate_population, ground_truth_for
from .federation import assign_cluster, run_algorithm, server_round, worker_report
from .metrics import TrialRecord, cluster_accuracy, dist
from .model import Dataset, empirical_gradient, empirical_loss, get_model, local_erm
from .threestage import run_three_stage, stage1_erms, stage3_aggregate, trimmed_kmeans

__version__ = "0.1.0"
