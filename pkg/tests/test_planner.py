import numpy as np
import pytest

from skipscope.attention import VarProfile
from skipscope.errors import FormatRejected, InvalidArgument, ShapeMismatch
from skipscope.planner import (
    Thresholds,
    evaluate_conditions,
    load_external_metrics,
    plan_skips,
)
from skipscope.redundancy import RedundancyProfile


def _profile(layers, vision, text=None, t=0.05, n=576):
    """vision/text: {layer: (mean_cos_dist, proximal_frac)}"""
    data = {"V": vision}
    if text is not None:
        data["T"] = text
    return RedundancyProfile(
        layers=tuple(layers),
        t=t,
        mean_cos_dist={m: tuple(data[m][l][0] for l in layers) for m in data},
        proximal_frac={m: tuple(data[m][l][1] for l in layers) for m in data},
        n_tokens={m: n for m in data},
    )

# Published per-layer metrics used as planner regression fixtures: the
# adjacent-layer vision distances and below-threshold fractions reported
# for LLaVA 1.5 7B / 13B on general VQA, with the accuracy-preserving
# layer sets they must reproduce.
LLAVA7B_GENERAL_VQA_LATE = {4: (0.025, 0.972), 8: (0.073, 0.267), 12: (0.060, 0.271)}
LLAVA13B_GENERAL_VQA_LATE = {4: (0.025, 0.965), 8: (0.066, 0.273), 12: (0.058, 0.403)}
LLAVA7B_GENERAL_VQA_EXIT_V = {20: (0.038, 0.786), 24: (0.026, 0.954), 28: (0.023, 0.995)}
LLAVA7B_GENERAL_VQA_EXIT_T = {20: (0.028, 0.939), 24: (0.016, 0.992), 28: (0.017, 0.997)}

VAR_OK_LATE = {4: True, 8: False, 12: False}
VAR_OK_EXIT = {20: False, 24: True, 28: True}  # cross-attention isolated before 24


def test_conditions_llava7b_layer4_all_true():
    profile = _profile([4, 8, 12], LLAVA7B_GENERAL_VQA_LATE)
    cond = evaluate_conditions(profile, var_ok=VAR_OK_LATE)
    i = cond.layers.index(4)
    assert cond.geometric_ok["V"][i] and cond.proximal_ok["V"][i] and cond.var_ok[i]


def test_conditions_llava7b_layer8_fails_redundancy():
    profile = _profile([4, 8, 12], LLAVA7B_GENERAL_VQA_LATE)
    cond = evaluate_conditions(profile, var_ok=VAR_OK_LATE)
    i = cond.layers.index(8)
    assert not cond.geometric_ok["V"][i]
    assert not cond.proximal_ok["V"][i]


def test_conditions_all_zero_distances():
    profile = _profile([1, 2], {1: (0.0, 1.0), 2: (0.0, 1.0)})
    cond = evaluate_conditions(profile, var_ok={1: True, 2: True})
    assert all(cond.geometric_ok["V"]) and all(cond.proximal_ok["V"]) and all(cond.var_ok)


@pytest.mark.parametrize(
    "metrics", [LLAVA7B_GENERAL_VQA_LATE, LLAVA13B_GENERAL_VQA_LATE], ids=["7B", "13B"]
)
def test_planner_regression_late_entry_viable_set(metrics):
    profile = _profile([4, 8, 12], metrics)
    cond = evaluate_conditions(profile, var_ok=VAR_OK_LATE)
    plan = plan_skips(cond, "V")
    candidates = {0, 4, 8, 12}
    assert candidates & set(plan.viable_late_entry) == {0, 4}
    assert plan.late_entry_layer == 4


def test_planner_regression_early_exit():
    profile = _profile([20, 24, 28], LLAVA7B_GENERAL_VQA_EXIT_V, LLAVA7B_GENERAL_VQA_EXIT_T)
    cond = evaluate_conditions(profile, var_ok=VAR_OK_EXIT)
    plan = plan_skips(cond, "V")
    assert set(plan.viable_early_exit) == {24, 28}
    assert plan.early_exit_layer == 24


def test_prefix_rule():
    vision = {1: (0.0, 1.0), 2: (0.0, 1.0), 3: (0.0, 1.0), 4: (0.0, 1.0), 5: (0.0, 0.5)}
    profile = _profile([1, 2, 3, 4, 5], vision)
    cond = evaluate_conditions(profile, var_ok={l: True for l in range(1, 6)})
    plan = plan_skips(cond, "V")
    assert plan.late_entry_layer == 4
    assert plan.viable_late_entry == (0, 1, 2, 3, 4)


def test_no_viable_layers():
    vision = {1: (0.5, 0.1), 2: (0.5, 0.1)}
    profile = _profile([1, 2], vision)
    cond = evaluate_conditions(profile, var_ok={1: False, 2: False})
    plan = plan_skips(cond, "V")
    assert plan.late_entry_layer == 0
    assert plan.early_exit_layer is None
    assert plan.viable_late_entry == (0,)
    assert plan.viable_early_exit == ()


def test_early_exit_requires_only_var():
    # Bad redundancy everywhere, but the attention tail is quiet.
    vision = {1: (0.9, 0.0), 2: (0.9, 0.0), 3: (0.9, 0.0)}
    profile = _profile([1, 2, 3], vision)
    cond = evaluate_conditions(profile, var_ok={1: False, 2: True, 3: True})
    plan = plan_skips(cond, "V")
    assert plan.early_exit_layer == 2
    assert plan.late_entry_layer == 0


def test_threshold_monotonicity():
    rng = np.random.default_rng(0)
    layers = list(range(1, 9))
    vision = {l: (float(rng.uniform(0, 0.1)), float(rng.uniform(0.5, 1.0))) for l in layers}
    profile = _profile(layers, vision)
    var = VarProfile(
        layers=tuple(layers),
        query_token=0,
        var_raw=tuple(float(rng.uniform(0, 0.4)) for _ in layers),
        var_normalized=tuple(float(rng.uniform(0, 0.4)) for _ in layers),
        head_count=1,
        vision_key_count=4,
    )
    base = Thresholds()
    plan0 = plan_skips(evaluate_conditions(profile, var, base), "V")
    for relaxed in (
        Thresholds(eps_geo=0.08),
        Thresholds(eps_prox=0.45),
        Thresholds(tau_var=0.45),
        Thresholds(eps_geo=0.2, eps_prox=0.6, tau_var=0.6),
    ):
        plan1 = plan_skips(evaluate_conditions(profile, var, relaxed), "V")
        assert plan1.late_entry_layer >= plan0.late_entry_layer
        if plan0.early_exit_layer is not None:
            assert plan1.early_exit_layer is not None
            assert plan1.early_exit_layer <= plan0.early_exit_layer


def test_layer_range_mismatch():
    profile = _profile([1, 2, 3], {1: (0.0, 1.0), 2: (0.0, 1.0), 3: (0.0, 1.0)})
    var = VarProfile((1, 2), 0, (0.0, 0.0), (0.0, 0.0), 1, 2)
    with pytest.raises(ShapeMismatch):
        evaluate_conditions(profile, var)
    with pytest.raises(ShapeMismatch):
        evaluate_conditions(profile, var_ok={1: True, 2: True})  # missing layer 3


def test_requires_some_var_input():
    profile = _profile([1], {1: (0.0, 1.0)})
    with pytest.raises(InvalidArgument):
        evaluate_conditions(profile)


def test_load_external_metrics_roundtrip_idempotent():
    profile = _profile([4, 8, 12], LLAVA7B_GENERAL_VQA_LATE)
    var = VarProfile((4, 8, 12), 0, (0.01, 0.3, 0.4), (0.01, 0.3, 0.4), 1, 576)
    csv_p = profile.to_csv()
    csv_v = var.to_csv()
    p1, v1 = load_external_metrics(csv_p, csv_v)
    p2, v2 = load_external_metrics(p1.to_csv(), v1.to_csv())
    c1 = evaluate_conditions(p1, v1)
    c2 = evaluate_conditions(p2, v2)
    assert c1.geometric_ok == c2.geometric_ok
    assert c1.proximal_ok == c2.proximal_ok
    assert c1.var_ok == c2.var_ok


def test_load_external_metrics_example_row():
    text = "layer,modality,mean_cos_dist,proximal_frac,t,n_tokens\n4,VISION,0.025,0.972,0.05,576\n"
    profile, _ = load_external_metrics(text)
    assert profile.row(4, "V") == (0.025, 0.972)
    assert profile.n_tokens["V"] == 576


def test_load_external_metrics_rejects_bad():
    with pytest.raises(FormatRejected):
        load_external_metrics("")
    bad = "layer,modality,mean_cos_dist,proximal_frac,t,n_tokens\n4,VISION,0.025,1.3,0.05,576\n"
    with pytest.raises(FormatRejected):
        load_external_metrics(bad)


def test_rationale_csv_and_dict():
    profile = _profile([4, 8, 12], LLAVA7B_GENERAL_VQA_LATE)
    cond = evaluate_conditions(profile, var_ok=VAR_OK_LATE)
    plan = plan_skips(cond, "V")
    text = plan.rationale_csv()
    assert text.splitlines()[0] == "layer,modality,mean_cos_dist,proximal_frac,var_normalized,geometric_ok,proximal_ok,var_ok"
    assert "4,VISION,0.025,0.972,,true,true,true" in text
    d = plan.to_dict()
    assert d["late_entry_layer"] == 4
    assert d["thresholds"]["eps_geo"] == 0.03
