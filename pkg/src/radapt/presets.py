"""Built-in design taxonomy: the seven evaluated designs, ready to run.

Every preset uses the reference stratum structure (stages of 6, 6, and 8
patients, three arms, uniform priors, delta 0.3, test size 0.1). They differ
in the randomisation rule, whether stages are drawn i.i.d. or realised as
restricted blocks, and whether/how continuous probabilities are mapped to
discrete ratios.
"""

from __future__ import annotations

from .core import (
    DEFAULT_ETA,
    DEFAULT_TAU,
    MappingConfig,
    RuleConfig,
    StagePlan,
    ThresholdSet,
    TrialDesign,
)

__all__ = ["PRESET_NAMES", "preset_design"]

PRESET_NAMES = (
    "fixed_equal",
    "unrestricted",
    "control_protected",
    "baseline",
    "permuted_block",
    "mapped_alpha",
    "mapped_beta",
)

# Interim exponent schedule: information fraction accrued before each
# adaptive stage, (6/20, 12/20) for the reference stages.
_GAMMA_INFO = (0.3, 0.6)


def _stages(control_fix: int | None, stage3_dropping: bool) -> tuple[StagePlan, ...]:
    return (
        StagePlan(1, 6, control_fix=control_fix),
        StagePlan(2, 6, control_fix=control_fix),
        StagePlan(3, 8, control_fix=control_fix, arm_dropping_allowed=stage3_dropping),
    )


def preset_design(
    name: str,
    tau: float = DEFAULT_TAU,
    eta: float = DEFAULT_ETA,
    stratum_label: str = "A",
) -> TrialDesign:
    """Build one of the named designs; raises ValueError for unknown names."""
    trippa = RuleConfig(
        kind="TrippaBRAR", gamma_schedule=_GAMMA_INFO, eta_schedule=(eta, eta)
    )
    common = dict(tau=tau, stratum_label=stratum_label, name=name)

    if name == "fixed_equal":
        return TrialDesign(
            stages=_stages(None, False),
            rule=RuleConfig(kind="FixedEqual"),
            **common,
        )
    if name == "unrestricted":
        return TrialDesign(
            stages=_stages(None, False),
            rule=RuleConfig(kind="TSBRAR", gamma_schedule=(1.0, 1.0)),
            **common,
        )
    if name == "control_protected":
        return TrialDesign(
            stages=_stages(None, False),
            rule=trippa,
            **common,
        )
    if name == "baseline":
        return TrialDesign(
            stages=_stages(None, True),
            rule=trippa,
            stage1_balanced_block=True,
            tau_dropping=True,
            **common,
        )
    if name == "permuted_block":
        return TrialDesign(
            stages=_stages(2, False),
            rule=RuleConfig(kind="FixedEqual"),
            mapping=MappingConfig(variant="PermutedBlock"),
            **common,
        )
    if name == "mapped_alpha":
        return TrialDesign(
            stages=_stages(2, True),
            rule=trippa,
            mapping=MappingConfig(
                variant="MappedAlpha", thresholds=ThresholdSet.alpha_defaults(tau)
            ),
            **common,
        )
    if name == "mapped_beta":
        return TrialDesign(
            stages=_stages(2, True),
            rule=trippa,
            mapping=MappingConfig(
                variant="MappedBeta", thresholds=ThresholdSet.beta_defaults(tau)
            ),
            **common,
        )
    raise ValueError(f"unknown design preset {name!r}; choose from {PRESET_NAMES}")
