import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from occflow.errors import MetricDomainError, ShapeError
from occflow.metrics import (
    METRIC_NAMES,
    epe,
    evaluate,
    flow_grounded,
    pr_auc,
    pr_curve,
    soft_iou,
    warp_occupancy,
)
from occflow.raster_gt import GridSpec, render_targets

from conftest import far_sdc, make_agent, make_scene
from oracles import pr_auc_oracle, random_instances, soft_iou_oracle


def test_soft_iou_examples():
    g = np.array([1, 0, 1, 1, 0.0])
    assert soft_iou(g, g) == 1.0
    assert soft_iou(np.full(7, 0.5), np.ones(7)) == 0.5
    assert soft_iou(np.zeros(4), np.zeros(4)) == 0.0


def test_domain_errors():
    with pytest.raises(MetricDomainError):
        soft_iou([1.2], [1])
    with pytest.raises(MetricDomainError):
        pr_auc([0.5], [0.5])
    with pytest.raises(MetricDomainError):
        pr_auc([np.nan], [1])
    with pytest.raises(ShapeError):
        soft_iou([0.1, 0.2], [1])


def test_pr_auc_examples():
    assert pr_auc([1, 0, 1, 0, 0], [1, 0, 1, 0, 0]) == 1.0
    assert pr_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert pr_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pr_auc_oracle([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    worst = pr_auc([0.1, 0.9], [1, 0])
    assert worst == pr_auc_oracle([0.1, 0.9], [1, 0])
    assert worst == pytest.approx(0.25, abs=1e-15)  # oracle value
    assert pr_auc([0.3, 0.7], [0, 0]) == 0.0


def test_pr_curve_no_predicted_positive_has_precision_one():
    _, precision, recall = pr_curve([0.2, 0.4], [1, 0])
    assert precision[-1] == 1.0 and recall[-1] == 0.0
    assert len(precision) == 100


def test_pr_auc_and_soft_iou_match_oracles():
    for p, g in random_instances(200):
        assert abs(pr_auc(p, g) - pr_auc_oracle(p, g)) <= 1e-12
        assert abs(soft_iou(p, g) - soft_iou_oracle(p, g)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1)), st.data())
def test_soft_iou_bounds(p, data):
    g = data.draw(hnp.arrays(np.float64, p.shape, elements=st.sampled_from([0.0, 1.0])))
    v = soft_iou(p, g)
    assert 0.0 <= v <= 1.0
    binary = (p > 0.5).astype(np.float64)
    assert (soft_iou(binary, g) == 1.0) == (np.array_equal(binary, g) and g.any())


def test_epe_examples():
    flow = np.zeros((2, 2))
    gt = np.zeros((2, 2))
    valid = np.array([1.0, 0.0])
    assert epe(flow, gt, valid) == 0.0
    flow[0] = [3, 4]
    flow[1] = [100, 100]
    assert epe(flow, gt, valid) == 5.0
    flow[0], flow[1] = [1, 0], [0, 3]
    assert epe(flow, gt, np.ones(2)) == 2.0
    assert epe(flow, gt, np.zeros(2)) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_epe_shift_invariant(cx, cy):
    rng = np.random.default_rng(0)
    flow, gt = rng.normal(size=(5, 5, 2)), rng.normal(size=(5, 5, 2))
    valid = rng.random((5, 5)) > 0.4
    shift = np.array([cx, cy])
    assert epe(flow + shift, gt + shift, valid) == pytest.approx(epe(flow, gt, valid), abs=1e-9)


def test_warp_zero_flow_identity():
    prev = np.random.default_rng(1).random((9, 7))
    np.testing.assert_array_equal(warp_occupancy(prev, np.zeros((9, 7, 2))), prev)


def test_warp_integer_offset_gather():
    prev = np.zeros((32, 32))
    prev[10, 10] = 1.0
    flow = np.zeros((32, 32, 2))
    flow[12, 13] = [-3.0, -2.0]  # (dx cols, dy rows): 2 rows up, 3 cols left
    out = warp_occupancy(prev, flow)
    assert out[12, 13] == 1.0
    assert out[10, 10] == 1.0  # zero flow elsewhere keeps the spike in place
    assert out.sum() == 2.0


def test_warp_half_cell_weight():
    prev = np.zeros((8, 8))
    prev[4, 4] = 1.0
    flow = np.zeros((8, 8, 2))
    flow[5, 4] = [0.0, -0.5]
    out = warp_occupancy(prev, flow)
    assert abs(out[5, 4] - 0.5) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 1000))
def test_warp_constant_integer_flow_is_index_shift(dx, dy, seed):
    H = W = 20
    prev = np.zeros((H, W))
    prev[6:14, 6:14] = np.random.default_rng(seed).random((8, 8))
    flow = np.broadcast_to(np.array([dx, dy], dtype=np.float64), (H, W, 2))
    out = warp_occupancy(prev, flow)
    expected = np.zeros_like(prev)
    expected[6 - dy : 14 - dy, 6 - dx : 14 - dx] = prev[6:14, 6:14]
    np.testing.assert_array_equal(out, expected)
    assert out.sum() == pytest.approx(prev.sum(), abs=1e-12)


def test_warp_reads_zero_outside():
    prev = np.ones((4, 4))
    flow = np.full((4, 4, 2), 10.0)
    assert not warp_occupancy(prev, flow).any()


def translating_targets():
    spec = GridSpec()
    s = make_scene([far_sdc(), make_agent(1, y0=-10.0, vy=5.0)])
    return {k: v[None] for k, v in dataclasses.asdict(render_targets(s, spec)).items()}, spec


def saturated_pred(t, flow=None):
    return {
        "prob_observed": t["observed"].astype(np.float64),
        "prob_occluded": t["occluded"].astype(np.float64),
        "flow": t["flow"] if flow is None else flow,
    }


def test_flow_grounded_perfect_prediction():
    t, _ = translating_targets()
    pred = saturated_pred(t)
    for k in range(1, 9):
        grounded = flow_grounded(pred, t, k)
        gt = np.clip(t["observed"][:, k - 1] + t["occluded"][:, k - 1], 0, 1)
        np.testing.assert_array_equal(grounded, gt)
        assert pr_auc(grounded, gt) == 1.0


def test_flow_grounded_zero_flow_scores_lower():
    t, _ = translating_targets()
    good = flow_grounded(saturated_pred(t), t, 3)
    still = flow_grounded(saturated_pred(t, np.zeros_like(t["flow"])), t, 3)
    gt = t["observed"][:, 2]
    assert soft_iou(still, gt) < soft_iou(good, gt)


def test_flow_grounded_zero_occupancy():
    t, _ = translating_targets()
    pred = saturated_pred(t)
    pred["prob_observed"] = np.zeros_like(pred["prob_observed"])
    pred["prob_occluded"] = np.zeros_like(pred["prob_occluded"])
    grounded = flow_grounded(pred, t, 2)
    assert not grounded.any()
    assert soft_iou(grounded, t["observed"][:, 1]) == 0.0


def test_flow_grounded_range():
    t, _ = translating_targets()
    with pytest.raises(ValueError):
        flow_grounded(saturated_pred(t), t, 0)
    with pytest.raises(ValueError):
        flow_grounded(saturated_pred(t), t, 9)


def test_evaluate_perfect():
    t, spec = translating_targets()
    rep = evaluate(saturated_pred(t), t, spec)
    for name in METRIC_NAMES[:-1]:
        if name.startswith("occluded"):
            assert getattr(rep, name) == 0.0  # no occluded agents in this scene
        else:
            assert getattr(rep, name) == 1.0, name
    assert rep.epe == 0.0


def test_evaluate_half_probabilities_closed_form():
    t, spec = translating_targets()
    pred = saturated_pred(t)
    pred["prob_observed"] = np.full_like(pred["prob_observed"], 0.5)
    rep = evaluate(pred, t, spec)
    M = t["observed"][0, 0].size
    G = t["observed"].reshape(8, -1).sum(axis=1, dtype=np.float64)
    expected = G / (M + G)  # 0.5 G / (0.5 M + G - 0.5 G)
    np.testing.assert_allclose(rep.per_waypoint["observed_soft_iou"], expected, rtol=1e-12)
    assert rep.observed_soft_iou == pytest.approx(expected.mean(), rel=1e-12)


def test_evaluate_headline_averages_waypoints_and_batches_concatenate():
    t, spec = translating_targets()
    rng = np.random.default_rng(4)
    pred = saturated_pred(t, t["flow"] + rng.normal(size=t["flow"].shape))
    pred["prob_observed"] = rng.random(pred["prob_observed"].shape)
    rep = evaluate(pred, t, spec)
    for name in METRIC_NAMES:
        assert getattr(rep, name) == pytest.approx(np.mean(rep.per_waypoint[name]), rel=1e-12)
    both = evaluate([pred, pred], [t, t], spec)
    assert both.epe == pytest.approx(rep.epe, rel=1e-12)
    assert both.observed_soft_iou == pytest.approx(rep.observed_soft_iou, rel=1e-12)
    assert rep.epe_m(spec) == pytest.approx(rep.epe / 3.2)
