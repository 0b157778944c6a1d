import numpy as np
import pytest

from excursion.errors import (
    DuplicateDecisionPoint,
    EmptyDataset,
    LagBeforeStart,
    MissingColumn,
    NonIntegerOutcome,
    ProbabilityOutOfRange,
    UnknownFeature,
)
from excursion.panel import (
    EffectModelSpec,
    PanelDataset,
    build_design,
    load_panel,
    summarize,
    write_panel,
)
from excursion.simulation import ScenarioConfig, gen_scenario, replicate_rng

import oracles


def _csv(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _panel(**kw):
    base = dict(participant=[1, 1, 1], t=[1, 2, 3], availability=[1, 1, 1], arm=[0, 1, 0],
                outcome=[0, 2, 4], covariates={"Z": [0.0, 2.0, 1.0]}, rand_prob=[0.6, 0.6, 0.6])
    base.update(kw)
    return PanelDataset(**base)


def test_load_minimal(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm,outcome,rand_prob\n"
                          "1,1,1,0,0,0.6\n1,2,1,1,3,0.6\n1,3,1,0,1,0.6\n")
    data = load_panel(path)
    assert (data.n, data.t_max, data.k_arms) == (1, 3, 1)
    np.testing.assert_array_equal(data.rand_prob[:, 0], [0.6, 0.6, 0.6])


def test_load_sorts_rows(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm,outcome\n"
                          "2,2,1,0,0\n1,2,1,1,5\n2,1,1,1,1\n1,1,1,0,2\n")
    data = load_panel(path)
    np.testing.assert_array_equal(data.participant, [1, 1, 2, 2])
    np.testing.assert_array_equal(data.t, [1, 2, 1, 2])
    np.testing.assert_array_equal(data.outcome, [2, 5, 1, 0])


def test_probability_one_rejected(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm,outcome,rand_prob\n1,1,1,1,0,1.0\n")
    with pytest.raises(ProbabilityOutOfRange):
        load_panel(path)


def test_duplicate_decision_point(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm,outcome\n7,4,1,0,0\n7,4,1,1,2\n")
    with pytest.raises(DuplicateDecisionPoint):
        load_panel(path)


def test_missing_column_named(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm\n1,1,1,0\n")
    with pytest.raises(MissingColumn, match="outcome"):
        load_panel(path)


def test_non_integer_outcome(tmp_path):
    path = _csv(tmp_path, "participant,t,availability,arm,outcome\n1,1,1,0,1.5\n")
    with pytest.raises(NonIntegerOutcome):
        load_panel(path)


def test_schema_mapping_and_multiarm(tmp_path):
    path = _csv(tmp_path, "id,time,avail,A,steps,pr_1,pr_2\n"
                          "1,1,1,2,3,0.3,0.3\n1,2,1,0,0,0.3,0.3\n")
    data = load_panel(path, {"participant": "id", "t": "time", "availability": "avail",
                             "arm": "A", "outcome": "steps", "rand_prob": "pr"})
    assert data.k_arms == 2
    assert data.rand_prob.shape == (2, 2)


def test_round_trip_bit_exact(tmp_path):
    data = gen_scenario(ScenarioConfig(1, 5, 8), replicate_rng(3, 0))
    path = tmp_path / "rt.csv"
    write_panel(data, path)
    back = load_panel(path)
    for name in ("participant", "t", "availability", "arm", "outcome"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
    assert np.array_equal(back.rand_prob, data.rand_prob)
    assert np.array_equal(back.covariates["Z"], data.covariates["Z"])


def test_design_intercept_and_moderator():
    data = _panel()
    d = build_design(data, EffectModelSpec(moderators=("1",)))
    np.testing.assert_array_equal(d.moderators, np.ones((3, 1)))
    d = build_design(data, EffectModelSpec(moderators=("1", "Z")))
    np.testing.assert_array_equal(d.moderators[1], [1.0, 2.0])


def test_design_lag_initial_value():
    data = _panel()
    d = build_design(data, EffectModelSpec(controls=("outcome_lag1",)))
    np.testing.assert_array_equal(d.controls[:, 1], [0.0, 0.0, 2.0])


def test_lag_without_initial_value():
    data = _panel()
    with pytest.raises(LagBeforeStart):
        build_design(data, EffectModelSpec(controls=("outcome_lag1",), lag_default=None))


def test_unknown_and_leaking_features():
    data = _panel()
    with pytest.raises(UnknownFeature):
        build_design(data, EffectModelSpec(moderators=("W",)))
    with pytest.raises(UnknownFeature):
        build_design(data, EffectModelSpec(controls=("outcome",)))


def test_design_permutation_invariance():
    data = gen_scenario(ScenarioConfig(1, 6, 5), replicate_rng(0, 1))
    perm = np.random.default_rng(0).permutation(data.n_records)
    shuffled = PanelDataset(data.participant[perm], data.t[perm], data.availability[perm],
                            data.arm[perm], data.outcome[perm],
                            {"Z": data.covariates["Z"][perm]}, data.rand_prob[perm])
    spec = EffectModelSpec(moderators=("1", "Z"), controls=("Z", "arm_lag1"))
    a, b = build_design(data, spec), build_design(shuffled, spec)
    np.testing.assert_array_equal(a.moderators, b.moderators)
    np.testing.assert_array_equal(a.controls, b.controls)


def test_summarize_all_zero():
    s = summarize(_panel(outcome=[0, 0, 0]))
    assert s.zero_proportion == 1.0 and s.mean_outcome == 0.0


def test_summarize_arithmetic():
    data = PanelDataset(participant=[1, 1, 1, 1], t=[1, 2, 3, 4], availability=[1] * 4,
                        arm=[0] * 4, outcome=[0, 0, 2, 4], covariates={})
    s = summarize(data)
    assert s.arms[0].zero_proportion == 0.5
    assert s.arms[0].mean_outcome == 1.5
    assert "zero proportion" in s.to_text()


def test_summarize_empty():
    empty = PanelDataset(participant=[], t=[], availability=[], arm=[], outcome=[], covariates={})
    with pytest.raises(EmptyDataset):
        summarize(empty)


def test_summarize_scenario_zero_proportion():
    data = gen_scenario(ScenarioConfig(1, 100, 30), replicate_rng(2024, 0))
    # zero proportion oracle: average P(Y = 0) over the realized (Z, A) cells,
    # which counts the negative-binomial zeros as well as the inflation zeros
    z = data.covariates["Z"].astype(int)
    expected = np.mean([oracles.zinb_zero_probability(*oracles.cell_mean(1, zi, ai))
                        for zi, ai in zip(z, data.arm)])
    assert abs(summarize(data).zero_proportion - expected) <= 0.03
