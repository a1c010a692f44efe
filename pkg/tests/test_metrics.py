import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sageattn.attention import VARIANTS, naive_attention, sage_attention
from sageattn.metrics import (
    AccuracyReport,
    LayerPlan,
    assign,
    calibrate,
    cosine_sim,
    layer_cos_sim,
    relative_l1,
    rmse,
)
from sageattn.synth import SynthSpec, generate


@pytest.mark.parametrize("o, o2, expected", [
    ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 1], [1, 0], 1 / math.sqrt(2)),
])
def test_cosine_sim_examples(o, o2, expected):
    assert cosine_sim(o, o2) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("o, o2, expected", [([3, -1], [3, -1], 0.0), ([2], [1], 0.5), ([1, -1], [0, 0], 1.0)])
def test_relative_l1_examples(o, o2, expected):
    assert relative_l1(o, o2) == expected


@pytest.mark.parametrize("o, o2, expected", [([5, 6], [5, 6], 0.0), ([0, 0], [3, 4], math.sqrt(12.5)), ([1], [0], 1.0)])
def test_rmse_examples(o, o2, expected):
    assert rmse(o, o2) == pytest.approx(expected, rel=1e-15)


def test_metric_errors():
    with pytest.raises(ValueError):
        cosine_sim([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        relative_l1([0, 0], [1, 1])
    with pytest.warns(RuntimeWarning):
        assert cosine_sim([0, 0], [1, 1]) == 0.0


# keep squares clear of the subnormal range
vecs = hnp.arrays(np.float64, 16, elements=st.floats(-100, 100).filter(lambda x: x == 0 or abs(x) > 1e-6))


@settings(max_examples=200)
@given(vecs, vecs, st.floats(0.01, 100))
def test_metric_scale_behaviour(o, o2, c):
    if np.abs(o).sum() == 0 or np.abs(o2).sum() == 0:
        return
    assert cosine_sim(o, o2 * c) == pytest.approx(cosine_sim(o, o2), abs=1e-12)
    assert relative_l1(o * c, o2 * c) == pytest.approx(relative_l1(o, o2), rel=1e-9, abs=1e-12)
    assert rmse(o * c, o2 * c) == pytest.approx(c * rmse(o, o2), rel=1e-9, abs=1e-12)
    assert -1 - 1e-12 <= cosine_sim(o, o2) <= 1 + 1e-12


def test_accuracy_report():
    r = AccuracyReport.compare([1.0, 0.0], [1.0, 0.0])
    assert r.to_dict() == {"cos_sim": 1.0, "relative_l1": 0.0, "rmse": 0.0}


# ---------------------------------------------------------------- calibration


@pytest.mark.parametrize("c, expected", [(0.999, "SAGEAttn-vB"), (0.95, "SAGEAttn-B"), (0.998, "SAGEAttn-B")])
def test_assign_rule(c, expected):
    assert assign([c], 0.998) == [expected]


@settings(max_examples=200)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_assign_monotone_in_threshold(sims, t1, t2):
    lo, hi = sorted((t1, t2))
    n_lo = assign(sims, lo).count("SAGEAttn-vB")
    n_hi = assign(sims, hi).count("SAGEAttn-vB")
    assert n_hi <= n_lo


def _layers(dists, n=128, batches=2):
    return [[generate(SynthSpec(d, (1, 2, n, 32), seed=100 * i + b)) for b in range(batches)]
            for i, d in enumerate(dists)]


def test_calibrate_thresholds_zero_and_one():
    layers = _layers(["normal", "sink"])
    assert set(calibrate(layers, threshold=0.0).assignments) == {"SAGEAttn-vB"}
    assert set(calibrate(layers, threshold=1.0).assignments) == {"SAGEAttn-B"}


def test_calibrate_matches_brute_force_rule():
    layers = _layers(["normal", "sink", "normal", "sink"], n=512)
    plan = calibrate(layers)
    for batches, kernel, c in zip(layers, plan.assignments, plan.cos_sims):
        sims = [cosine_sim(naive_attention(x), sage_attention(x, VARIANTS["vb"])) for x in batches]
        assert c == pytest.approx(float(np.mean(sims)), abs=0)
        assert kernel == ("SAGEAttn-vB" if np.mean(sims) > 0.998 else "SAGEAttn-B")
    assert plan.assignments == ["SAGEAttn-vB", "SAGEAttn-B"] * 2


def test_calibrate_errors():
    with pytest.raises(ValueError):
        calibrate([])
    with pytest.raises(ValueError):
        calibrate(_layers(["normal"]), threshold=1.5)
    with pytest.raises(ValueError):
        layer_cos_sim([], VARIANTS["vb"])
    with pytest.raises(ValueError):
        layer_cos_sim(_layers(["normal"])[0], VARIANTS["vb"], aggregate="median")


def test_min_aggregate_is_not_above_mean():
    layer = _layers(["sink"], batches=3)[0]
    assert layer_cos_sim(layer, VARIANTS["vb"], "min") <= layer_cos_sim(layer, VARIANTS["vb"], "mean")


def test_layer_plan_round_trip():
    plan = calibrate(_layers(["normal"]))
    again = LayerPlan.from_dict(plan.to_dict())
    assert again == plan
