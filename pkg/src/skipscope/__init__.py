"""Layer-redundancy and cross-attention analysis for transformer traces.

Quantifies how little hidden states change between adjacent layers, how
much attention designated query tokens spend on vision keys, and what
the information-theoretic bounds say about skipping those layers; plans
late-entry and early-exit points and simulates them on a hand-wired toy
model.
"""

from .attention import VarProfile, mean_var_profile, var_profile
from .infotheory import (
    BoundReport,
    DiscreteJoint,
    bound_report,
    entropy_stats,
    fano_upper_bound,
    functional_gap_bound,
    joint_from_pairs,
    mi_lower_bound,
    quantize_trace,
)
from .pid import PIDResult, TripleJoint, broja_unique, pid_decompose
from .planner import LayerConditions, SkipPlan, Thresholds, evaluate_conditions, load_external_metrics, plan_skips
from .redundancy import RedundancyProfile, cosine_distance, layer_metrics, redundancy_profile
from .traceio import (
    TEXT,
    VISION,
    AttentionTrace,
    Diagnostic,
    HiddenTrace,
    read_trace,
    read_trace_file,
    validate_trace,
    write_trace,
    write_trace_file,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "BoundReport",
    "Diagnostic",
    "DiscreteJoint",
    "HiddenTrace",
    "LayerConditions",
    "PIDResult",
    "RedundancyProfile",
    "SkipPlan",
    "TEXT",
    "Thresholds",
    "TripleJoint",
    "VISION",
    "VarProfile",
    "bound_report",
    "broja_unique",
    "cosine_distance",
    "entropy_stats",
    "evaluate_conditions",
    "fano_upper_bound",
    "functional_gap_bound",
    "joint_from_pairs",
    "layer_metrics",
    "load_external_metrics",
    "mean_var_profile",
    "mi_lower_bound",
    "pid_decompose",
    "plan_skips",
    "quantize_trace",
    "read_trace",
    "read_trace_file",
    "redundancy_profile",
    "validate_trace",
    "var_profile",
    "write_trace",
    "write_trace_file",
]
