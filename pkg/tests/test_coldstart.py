import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pkbp.coldstart import (
    ConservativePredictor,
    FlavorTablePredictor,
    PredictorConfig,
    RangeClass,
    actual_class,
    asymmetric_loss,
    auto_correct,
    predicted_interval,
)
from pkbp.core import VmRecord
from pkbp.symmetrize import UtilInterval


def vm(flavor=1, samples=None, interval=None):
    return VmRecord("v", flavor, samples=None if samples is None else np.asarray(samples, float),
                    interval=interval)


def test_classes_ordered_and_scaled():
    assert [c.upper for c in RangeClass] == [0.25, 0.5, 0.75, 1.0]
    iv = RangeClass.UP_TO_50.interval(2)
    assert iv.low == pytest.approx(0.2) and iv.high == pytest.approx(1.0)
    assert RangeClass.parse("10-75%") is RangeClass.UP_TO_75
    assert RangeClass.parse("100") is RangeClass.UP_TO_100
    with pytest.raises(ValueError):
        RangeClass.parse("10-60%")


def test_conservative_predictor():
    assert ConservativePredictor().predict_range(vm(4)) is RangeClass.UP_TO_100
    iv = predicted_interval(ConservativePredictor(), vm(4))
    assert (iv.low, iv.high) == pytest.approx((0.4, 4.0))


def test_flavor_table_predictor(tmp_path):
    path = tmp_path / "classes.txt"
    path.write_text("# flavor = class\n1 = 10-50%\n4: 10-25%\n")
    pred = FlavorTablePredictor.from_file(path)
    assert pred.predict_range(vm(1)) is RangeClass.UP_TO_50
    assert pred.predict_range(vm(4)) is RangeClass.UP_TO_25
    assert pred.predict_range(vm(2)) is RangeClass.UP_TO_100


def test_flavor_table_bad_line(tmp_path):
    path = tmp_path / "classes.txt"
    path.write_text("1 = lots\n")
    with pytest.raises(ValueError, match=":1:"):
        FlavorTablePredictor.from_file(path)


def test_loss_examples():
    c = list(RangeClass)
    assert asymmetric_loss(c, c, 4) == 0
    assert asymmetric_loss([RangeClass.UP_TO_25], [RangeClass.UP_TO_50], 4) == 4
    assert asymmetric_loss([2, 0, 1], [1, 1, 1], 2) == 3


def test_loss_length_mismatch():
    with pytest.raises(ValueError):
        asymmetric_loss([0, 1], [0], 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 3), st.floats(1, 10))
def test_loss_grows_with_error(actual, w):
    losses = [asymmetric_loss([p], [actual], w) for p in range(4)]
    for p in range(4):
        for q in range(4):
            if abs(p - actual) < abs(q - actual) and (p - actual) * (q - actual) > 0:
                assert losses[p] < losses[q]
    if actual >= 1:
        # being one class under costs w times as much as one class over would
        assert losses[actual - 1] == pytest.approx(w)


def test_loss_scores_a_predictor():
    rng = np.random.default_rng(0)
    flavors = rng.choice([1, 2, 4], 200)
    peaks = rng.uniform(0.05, 1.0, 200)
    actual = [actual_class([p * f], f) for p, f in zip(peaks, flavors)]
    vms = [vm(int(f)) for f in flavors]
    conservative = [ConservativePredictor().predict_range(v) for v in vms]
    optimistic = [RangeClass.UP_TO_25] * len(vms)
    # with w > 1 underestimating everything is worse than overestimating everything
    assert asymmetric_loss(optimistic, actual, 4) > asymmetric_loss(conservative, actual, 4)


def test_config_validation():
    PredictorConfig(w=1, t_a=5)
    with pytest.raises(ValueError):
        PredictorConfig(w=0.5)
    with pytest.raises(ValueError):
        PredictorConfig(t_a=0)


def test_auto_correct_waits_for_t_a():
    pred = UtilInterval(0.55, 0.45)
    v = vm(1, [0.2, 0.9, 1.0], pred)
    assert auto_correct(v, 10, 15) is pred


def test_auto_correct_symmetrizes_window():
    v = vm(1, [0.2, 0.9, 1.0], UtilInterval(0.55, 0.45))
    iv = auto_correct(v, 15, 15)
    assert iv.uc == pytest.approx(0.9) and iv.ur == pytest.approx(0.1)


def test_auto_correct_uses_only_recent_readings():
    v = vm(1, [1.0, 1.0, 0.2, 0.3, 0.25, 0.9], UtilInterval(0.55, 0.45))
    iv = auto_correct(v, 25, 10)  # readings 4 and 5 are the last ten minutes
    assert iv.high == pytest.approx(0.3) and iv.low >= 0.25 - 1e-12


def test_auto_correct_clamps_to_flavor():
    v = vm(1, [0.0, 0.1, 0.3], UtilInterval(0.5, 0.5))
    iv = auto_correct(v, 15, 15)
    assert 0.0 <= iv.low <= iv.high <= 1.0


def test_auto_correct_idempotent():
    rng = np.random.default_rng(1)
    v = vm(2, rng.uniform(0, 2, 20), UtilInterval(1.0, 0.8))
    once = auto_correct(v, 60, 40)
    twice = auto_correct(vm(2, v.samples, once), 60, 40)
    assert once == twice


def test_auto_correct_without_samples():
    pred = UtilInterval(0.5, 0.4)
    assert auto_correct(vm(1, None, pred), 100, 10) is pred
