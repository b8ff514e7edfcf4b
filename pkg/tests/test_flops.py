import numpy as np
import pytest

from samoe.errors import AccountingError, UsageError
from samoe.flops import (
    affine_fit_residual,
    conv1d_flops,
    count_flops,
    formula_sheet,
    gru_step_flops,
    linear_flops,
)
from samoe.model import SamoeModel, basic_cl_model
from samoe.nn.layers import Module


@pytest.fixture(scope="module")
def samoe():
    return SamoeModel(seed=0)


def test_conv_and_linear_formulas():
    assert conv1d_flops(3, 64, 7, 57) == 2 * 3 * 7 * 64 * 57 + 64 * 57
    assert linear_flops(256, 27) == 2 * 256 * 27 + 27
    assert gru_step_flops(64, 128) == (2 * 64 * 384 + 384) + (2 * 128 * 384 + 384) + 1280


def test_backbone_total_by_hand(samoe):
    t = 10
    convs = conv1d_flops(3, 64, 7, 57)
    chans = [64, 64, 96, 144, 256]
    for cin, cout in zip(chans[:-1], chans[1:]):
        convs += conv1d_flops(cin, cout, 3, 29)
    norm_relu = 3 * 64 * 57 + sum(3 * c * 29 for c in chans[1:])
    pool = 64 * 29
    assert count_flops(samoe).backbone == t * (convs + norm_relu + pool)


def test_specialist_total_by_hand(samoe):
    t = 10
    convs = conv1d_flops(256, 128, 3, 15) + conv1d_flops(128, 96, 3, 8) + conv1d_flops(96, 64, 3, 4)
    norm_relu = 3 * (128 * 15 + 96 * 8 + 64 * 4)
    per_frame = convs + norm_relu + 64
    gru = 2 * t * (gru_step_flops(64, 128) + gru_step_flops(256, 128))
    assert count_flops(samoe).specialist == t * per_frame + gru + linear_flops(256, 27)


def test_router_path_by_hand(samoe):
    t, d, dh, n = 10, 256, 128, 3
    attention = t * (2 * d * dh + dh + dh + 2 * dh) + t + 2 * t * d
    router = linear_flops(d, d) + 3 * (linear_flops(d, d) + 2 * d) + linear_flops(d, n) + n
    assert count_flops(samoe, n=n).router_path == t * d + attention + router


def test_memo_one_minus_adapter_identity(samoe):
    r = count_flops(samoe, "memo", 1)
    assert r.memo_total - r.adapter == r.samoe_total - r.router_path


def test_basic_equals_samoe_minus_router(samoe):
    r = count_flops(basic_cl_model(), "basic", 1)
    s = count_flops(samoe, "samoe", 1)
    assert r.basic_total == s.samoe_total - s.router_path


def test_memo_strictly_increasing_and_affine(samoe):
    ns = [1, 2, 4, 8, 16]
    totals = [count_flops(samoe, "memo", n).memo_total for n in ns]
    assert all(b > a for a, b in zip(totals, totals[1:]))
    assert affine_fit_residual(ns, totals) == 0.0
    slope = count_flops(samoe).specialist + 27  # one more specialist, one more logit sum
    assert np.diff(totals).tolist() == [slope * (b - a) for a, b in zip(ns, ns[1:])]


def test_expert_cost_constant_in_n(samoe):
    ref = count_flops(samoe, "samoe", 1)
    for n in (2, 4, 8, 16):
        r = count_flops(samoe, "samoe", n)
        assert (r.backbone, r.specialist) == (ref.backbone, ref.specialist)


def test_learned_adapter_costs_more():
    m = SamoeModel(variant="memo", memo_adapter="learned")
    assert count_flops(m, "memo", 4).adapter == 3 * 27 + 4 * 27


def test_unknown_layer_is_rejected():
    m = SamoeModel(seed=0)

    class Mystery(Module):
        pass

    m.backbone.blocks._items[0] = Mystery()
    with pytest.raises(AccountingError):
        count_flops(m)


def test_bad_arguments(samoe):
    with pytest.raises(UsageError):
        count_flops(samoe, "dense")
    with pytest.raises(UsageError):
        count_flops(samoe, n=0)


def test_record_and_sheet(samoe):
    rec = count_flops(samoe, "samoe", 4).record()
    assert rec["record"] == "flops" and rec["unit"] == "MFLOP/sample"
    assert rec["total"] == pytest.approx(rec["samoe"])
    assert "conv1d" in formula_sheet()
