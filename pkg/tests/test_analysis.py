from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu, rankdata

from radapt import preset_design
from radapt.analysis import (
    pooled_analysis,
    stratum_decision,
    wilcoxon_one_sided,
)
from radapt.core import default_arms
from radapt.outcomes import PatientRecord

ARMS = default_arms()


def _brute_force_p(treatment, control):
    # independent oracle: enumerate every n1-subset of the combined midranks
    combined = list(treatment) + list(control)
    ranks = rankdata(combined)
    n1 = len(treatment)
    observed = sum(ranks[:n1])
    hits = total = 0
    for subset in combinations(range(len(combined)), n1):
        total += 1
        if sum(ranks[i] for i in subset) >= observed - 1e-9:
            hits += 1
    return hits / total


def _trial_records(per_arm_values, stages=None):
    # per_arm_values: dict arm_index -> list of delta_y (None for missing)
    records = []
    pid = 0
    for arm_idx, values in per_arm_values.items():
        for i, v in enumerate(values):
            pid += 1
            stage = 1 if i < 2 else (2 if i < 4 else 3)
            records.append(
                PatientRecord(
                    patient_id=pid, stage=stage, arm=ARMS[arm_idx], delta_y=v
                )
            )
    return records


class TestWilcoxonExact:
    def test_all_greater_is_one_of_seventy(self):
        p = wilcoxon_one_sided([5.0, 6.0, 7.0, 8.0], [1.0, 2.0, 3.0, 4.0])
        assert p == pytest.approx(1 / 70, rel=1e-15)

    def test_all_less_sits_at_the_floor_of_the_tail(self):
        # the inclusive tail P(W >= w) is 1 at the minimal statistic
        p = wilcoxon_one_sided([1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0])
        assert p == 1.0

    def test_identical_multisets_centre(self):
        p = wilcoxon_one_sided([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert p >= 0.5

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            wilcoxon_one_sided([], [1.0])
        with pytest.raises(ValueError, match="non-empty"):
            wilcoxon_one_sided([1.0], [])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            wilcoxon_one_sided([float("nan")], [1.0])

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="method"):
            wilcoxon_one_sided([1.0], [2.0], method="bayes")

    def test_exhaustive_brute_force_tie_free(self):
        # every split with n1 + n2 <= 10 against full subset enumeration
        rng = np.random.default_rng(42)
        for n1 in range(1, 10):
            for n2 in range(1, 11 - n1):
                for _ in range(3):
                    t = rng.normal(size=n1).tolist()
                    c = rng.normal(size=n2).tolist()
                    assert wilcoxon_one_sided(t, c) == pytest.approx(
                        _brute_force_p(t, c), abs=1e-12
                    )

    @given(
        data=st.lists(
            st.integers(0, 4), min_size=4, max_size=9
        ),
        n1=st.integers(1, 3),
    )
    @settings(max_examples=80, deadline=None)
    def test_brute_force_with_ties(self, data, n1):
        # integer-valued samples force midranks; oracle must still agree
        if n1 >= len(data):
            n1 = len(data) - 1
        t = [float(v) for v in data[:n1]]
        c = [float(v) for v in data[n1:]]
        assert wilcoxon_one_sided(t, c) == pytest.approx(
            _brute_force_p(t, c), abs=1e-12
        )

    def test_null_super_uniformity(self):
        # exact p-values are valid: P(p < a) <= a for every level
        rng = np.random.default_rng(77)
        pvals = np.array(
            [
                wilcoxon_one_sided(rng.normal(size=7), rng.normal(size=7))
                for _ in range(5_000)
            ]
        )
        for a in (0.05, 0.1, 0.2):
            se = np.sqrt(a * (1 - a) / pvals.size)
            assert (pvals < a).mean() <= a + 3 * se


class TestWilcoxonNormal:
    @pytest.mark.parametrize("force_ties", [False, True])
    def test_matches_reference_asymptotic(self, force_ties):
        rng = np.random.default_rng(11)
        for _ in range(60):
            n1, n2 = rng.integers(3, 15, 2)
            t = rng.normal(size=n1)
            c = rng.normal(size=n2)
            if force_ties:
                t = np.round(t * 2) / 2
                c = np.round(c * 2) / 2
            expected = mannwhitneyu(
                t, c, alternative="greater", method="asymptotic"
            ).pvalue
            assert wilcoxon_one_sided(t, c, method="normal") == pytest.approx(
                expected, abs=1e-12
            )

    def test_degenerate_all_tied(self):
        assert wilcoxon_one_sided([1.0, 1.0], [1.0, 1.0], method="normal") == 1.0


class TestStratumDecision:
    def test_largest_allocation_wins(self, reference_design):
        # T1 carries more patients; values make T2 look better, allocation
        # still decides
        records = _trial_records(
            {
                0: [0.0] * 6,
                1: [0.1] * 9,
                2: [0.9] * 5,
            }
        )
        results, recommended = stratum_decision(records, reference_design)
        assert recommended.label == "T1"
        assert len(results) == 2

    def test_allocation_tie_breaks_on_posterior_mean(self, reference_design):
        records = _trial_records(
            {
                0: [0.0] * 6,
                1: [0.1] * 7,
                2: [0.9] * 7,
            }
        )
        _, recommended = stratum_decision(records, reference_design)
        assert recommended.label == "T2"

    def test_full_tie_prefers_lower_index(self, reference_design):
        records = _trial_records(
            {
                0: [0.0] * 6,
                1: [0.1] * 7,
                2: [0.1] * 7,
            }
        )
        _, recommended = stratum_decision(records, reference_design)
        assert recommended.label == "T1"

    def test_dropped_arm_tested_on_early_data(self, reference_design):
        # T1 dropped at stage 3: its test still runs on stages 1-2
        records = _trial_records(
            {
                0: [0.0, 0.1, -0.1, 0.2, 0.0, 0.1],
                1: [0.4, 0.5, 0.3, 0.6],
                2: [0.7, 0.8, 0.9, 0.6, 0.5, 0.7, 0.8, 0.9, 0.6, 0.7],
            }
        )
        results, _ = stratum_decision(records, reference_design)
        t1 = next(r for r in results if r.treatment.label == "T1")
        assert not t1.skipped
        assert t1.n_treat == 4

    def test_armless_test_skipped_not_failed(self, reference_design):
        records = _trial_records(
            {
                0: [0.0] * 6,
                2: [0.5] * 14,
            }
        )
        results, recommended = stratum_decision(records, reference_design)
        t1 = next(r for r in results if r.treatment.label == "T1")
        assert t1.skipped
        assert not t1.reject
        assert t1.p_value == 1.0
        assert recommended.label == "T2"

    def test_reject_iff_p_below_alpha(self, reference_design):
        rng = np.random.default_rng(5)
        for _ in range(25):
            records = _trial_records(
                {
                    0: rng.normal(size=6).tolist(),
                    1: rng.normal(size=7).tolist(),
                    2: rng.normal(size=7).tolist(),
                }
            )
            results, _ = stratum_decision(records, reference_design)
            for r in results:
                assert r.reject == (r.p_value < reference_design.alpha_level)


class TestPooledAnalysis:
    def test_doubled_data_consistency(self, reference_design):
        rng = np.random.default_rng(17)
        per_arm = {
            0: rng.normal(size=6).tolist(),
            1: rng.normal(size=7).tolist(),
            2: rng.normal(size=7).tolist(),
        }
        records = _trial_records(per_arm)
        pooled = pooled_analysis(records, records, reference_design)
        for result in pooled:
            idx = result.treatment.index
            direct = wilcoxon_one_sided(
                per_arm[idx] * 2, per_arm[0] * 2, method="exact"
            )
            assert result.p_value == pytest.approx(direct, abs=1e-12)
            assert result.n_treat == 14
            assert result.n_control == 12

    def test_mismatched_arm_sets_rejected(self, reference_design):
        full = _trial_records({0: [0.0] * 6, 1: [0.1] * 7, 2: [0.2] * 7})
        partial = _trial_records({0: [0.0] * 6, 1: [0.1] * 7})
        with pytest.raises(ValueError, match="differ"):
            pooled_analysis(full, partial, reference_design)

    def test_pooling_sharpens_a_real_effect(self, reference_design):
        rng = np.random.default_rng(23)
        control = rng.normal(size=6).tolist()
        treat = (rng.normal(size=7) + 0.8).tolist()
        records = _trial_records({0: control, 1: treat, 2: rng.normal(size=7).tolist()})
        single, _ = stratum_decision(records, reference_design)
        pooled = pooled_analysis(records, records, reference_design)
        p_single = next(r for r in single if r.treatment.label == "T1").p_value
        p_pooled = next(r for r in pooled if r.treatment.label == "T1").p_value
        assert p_pooled < p_single
