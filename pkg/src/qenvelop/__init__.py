"""Quantum-model envelopment workbench and QKD attack simulator."""

__version__ = "0.1.0"

from .config import TOL, Tolerances
from .discrimination import (
    DiscriminationResult,
    bayes_posterior,
    eve_advantage,
    helstrom_binary,
    helstrom_error,
    pretty_good_measurement,
)
from .envelopment import (
    EnvelopmentMap,
    LeakageSpec,
    build_leakage_vectors,
    check_envelopment,
    compose_envelopments,
    envelop_with_leakage,
    verify_overlap_reduction,
)
from .model import (
    CommandSet,
    Povm,
    QMModel,
    born_probability,
    overlap_matrix,
    probability_table,
    restrict,
    validate_model,
)
from .protocols import (
    AttackSpec,
    ProtocolSpec,
    QberEstimate,
    b92_model,
    bb84_model,
    exact_qber,
    leakage_attack_model,
    sift_and_estimate_qber,
)
from .trials import (
    FeedbackPolicy,
    FitReport,
    RunLog,
    TrialRecord,
    empirical_frequencies,
    fit_model,
    greedy_discrimination_policy,
    load_log,
    run_trials,
    save_log,
)
