"""Simulation and conduct engine for small-sample response-adaptive trials
whose continuous randomisation probabilities are mapped to restricted
randomisation blocks with exact allocation ratios.
"""

from .analysis import TestResult, pooled_analysis, stratum_decision, wilcoxon_one_sided
from .core import (
    DEFAULT_ALPHA_LEVEL,
    DEFAULT_DELTA,
    DEFAULT_ETA,
    DEFAULT_TAU,
    ArmId,
    MappingConfig,
    RuleConfig,
    StagePlan,
    ThresholdSet,
    TrialDesign,
    default_arms,
    design_from_dict,
    design_to_dict,
    load_design,
    save_design,
    validate_design,
)
from .engine import (
    CalibrationResult,
    CalibrationRow,
    InterimRecord,
    InterimResult,
    MissingPolicy,
    OCReport,
    StageRecord,
    TrialTrajectory,
    allocation_law,
    calibrate_threshold,
    interim_decision,
    interim_recommendation,
    posterior_snapshot,
    read_accrued,
    replicate,
    replicate_pooled,
    run_trial,
    write_adaptability_csv,
    write_oc_csv,
    write_tradeoff_csv,
)
from .mapping import (
    AdaptationCategory,
    RatioVector,
    active_shares,
    decide_category,
    resolve_allocation,
    stage_ratio,
)
from .outcomes import (
    CALIBRATED_SIGMA,
    SCENARIOS,
    MissingCase,
    OutcomeModel,
    PatientRecord,
    Scenario,
    apply_missingness,
    dichotomise,
    draw_outcome,
    impute_stage2_mean,
    load_pilot,
)
from .posterior import (
    BetaPosterior,
    MonteCarlo,
    SuccessCount,
    prob_greater,
    prob_max,
    prob_max_all,
    update,
)
from .presets import PRESET_NAMES, preset_design
from .randlist import RandomisationBlock, export_list, generate_block, import_list
from .rules import ArmCounts, ProbVector, fixed_equal, trippa_brar, ts_brar

__version__ = "0.1.0"
