"""Batched adaptive experiments over binary-reward arms.

Thompson Sampling, uniform random and epsilon-TS hybrid allocation, a
batch-at-a-time experiment engine, Bernoulli simulations, and the
click-rate / panel-regression analysis that goes with them.
"""

from .allocation import (
    AllocationPolicy,
    AllocationSource,
    PolicyKind,
    assign_batch,
    hybrid_select,
    prob_optimal,
    ts_select,
    uniform_select,
)
from .analysis import (
    PanelRow,
    RegressionResult,
    cumulative_click_rate,
    fit_panel_ols,
    normal_cdf,
    panel_rows,
    z_test,
)
from .engine import (
    AssignmentRecord,
    ExperimentConfig,
    ExperimentState,
    Status,
    create_experiment,
    open_batch,
    record_rewards,
    restore,
    snapshot,
)
from .errors import (
    BanditError,
    ConcurrentModification,
    DuplicateExperiment,
    InvalidTransition,
    SingularDesignError,
    SnapshotError,
    UnknownExperiment,
    ValidationError,
)
from .posterior import BetaParams, batch_fold, init_prior, posterior_mean, sample, update
from .simulator import (
    CampaignSummary,
    Environment,
    Trajectory,
    cumulative_regret,
    replay_table,
    run_campaign,
    simulate_run,
    trajectory_from_state,
)
from .store import DirectoryStore, MemoryStore

__version__ = "0.1.0"

__all__ = [
    "AllocationPolicy",
    "AllocationSource",
    "AssignmentRecord",
    "BanditError",
    "BetaParams",
    "CampaignSummary",
    "ConcurrentModification",
    "DirectoryStore",
    "DuplicateExperiment",
    "Environment",
    "ExperimentConfig",
    "ExperimentState",
    "InvalidTransition",
    "MemoryStore",
    "PanelRow",
    "PolicyKind",
    "RegressionResult",
    "SingularDesignError",
    "SnapshotError",
    "Status",
    "Trajectory",
    "UnknownExperiment",
    "ValidationError",
    "assign_batch",
    "batch_fold",
    "create_experiment",
    "cumulative_click_rate",
    "cumulative_regret",
    "fit_panel_ols",
    "hybrid_select",
    "init_prior",
    "normal_cdf",
    "open_batch",
    "panel_rows",
    "posterior_mean",
    "prob_optimal",
    "record_rewards",
    "replay_table",
    "restore",
    "run_campaign",
    "sample",
    "simulate_run",
    "snapshot",
    "trajectory_from_state",
    "ts_select",
    "uniform_select",
    "update",
    "z_test",
]
