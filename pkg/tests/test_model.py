import numpy as np
import pytest

from helpers import attention_oracle
from samoe.errors import DimensionError, UsageError
from samoe.model import SamoeModel, SemanticRouter, TemporalAttention, basic_cl_model
from samoe.nn import Tensor, no_grad

EXPECTED_LADDER = [
    ("input", (3, 10, 114)),
    ("reshape", (10, 3, 114)),
    ("stem", (10, 64, 29)),
    ("block1", (10, 64, 29)),
    ("block2", (10, 96, 29)),
    ("block3", (10, 144, 29)),
    ("block4", (10, 256, 29)),
    ("global_pool", (10, 256)),
    ("context", (256,)),
    ("router", (1,)),
    ("specialist_block5", (10, 128, 15)),
    ("specialist_block6", (10, 96, 8)),
    ("specialist_block7", (10, 64, 4)),
    ("spatial_pool", (10, 64)),
    ("bigru", (256,)),
    ("head", (27,)),
]


def probe(b=2, seed=0):
    return np.abs(np.random.default_rng(seed).standard_normal((b, 3, 10, 114)))


@pytest.fixture(scope="module")
def model():
    return SamoeModel(seed=0)


def trained(variant="samoe", **kw):
    m = SamoeModel(variant=variant, seed=0, **kw)
    m.backbone_trained = True
    m.domain_ids.append(1)
    m.eval()
    return m


def test_shape_ladder(model):
    assert model.shape_ladder(probe(2)) == EXPECTED_LADDER


@pytest.mark.parametrize("b", [1, 30])
def test_backbone_output(model, b):
    model.eval()
    with no_grad():
        assert model.backbone_forward(probe(b)).shape == (b, 10, 256, 29)


def test_backbone_rejects_wrong_shape(model):
    with pytest.raises(DimensionError):
        model.backbone_forward(np.zeros((1, 3, 10, 100)))


# ----------------------------------------------------------------- attention
def test_attention_constant_over_time():
    att = TemporalAttention(np.random.default_rng(0), dim=8, hidden=4)
    z = np.tile(np.random.default_rng(1).standard_normal((2, 1, 8)), (1, 5, 1))
    alpha = att.weights(Tensor(z)).data
    np.testing.assert_allclose(alpha, 0.2, atol=1e-15)
    np.testing.assert_allclose(att(Tensor(z)).data, z[:, 0], atol=1e-14)


def test_attention_zero_v_is_uniform():
    att = TemporalAttention(np.random.default_rng(0), dim=8, hidden=4)
    att.score.data[...] = 0.0
    alpha = att.weights(Tensor(np.random.default_rng(2).standard_normal((3, 6, 8)))).data
    np.testing.assert_array_equal(alpha, np.full((3, 6), 1 / 6))


def test_attention_formula_oracle():
    att = TemporalAttention(np.random.default_rng(3))
    z = np.random.default_rng(4).standard_normal((1, 10, 256))
    want, alpha = attention_oracle(z, att.proj_weight.data, att.proj_bias.data, att.score.data)
    assert np.abs(att(Tensor(z)).data - want).max() <= 1e-10
    assert np.all(alpha >= 0) and abs(alpha.sum() - 1) <= 1e-12


# -------------------------------------------------------------------- router
def test_route_single_specialist(model):
    p, k = model.route(np.random.default_rng(0).standard_normal((5, 256)))
    np.testing.assert_array_equal(p, np.ones((5, 1)))
    np.testing.assert_array_equal(k, np.ones(5))


def test_route_argmax_matches_logits():
    m = trained()
    for _ in range(3):
        m.add_specialist()
    c = np.random.default_rng(1).standard_normal((20, 256))
    p, k = m.route(c)
    logits = m.router(Tensor(c)).data
    np.testing.assert_array_equal(k, logits.argmax(axis=1) + 1)
    np.testing.assert_array_equal(np.argmax(p, axis=1), logits.argmax(axis=1))


def test_route_invariant_to_logit_shift():
    m = trained()
    m.add_specialist()
    c = np.random.default_rng(2).standard_normal((10, 256))
    _, k = m.route(c)
    m.router.head.bias.data += 7.0
    _, k2 = m.route(c)
    np.testing.assert_array_equal(k, k2)


def test_route_without_router():
    with pytest.raises(UsageError):
        basic_cl_model().route(np.zeros((1, 256)))


def test_widen_preserves_rows():
    r = SemanticRouter(np.random.default_rng(0), n_out=2)
    c = Tensor(np.random.default_rng(1).standard_normal((4, 256)))
    before = r(c).data
    r.widen(np.random.default_rng(2))
    after = r(c).data
    assert after.shape == (4, 3)
    np.testing.assert_array_equal(after[:, :2], before)


# -------------------------------------------------------------- specialists
def test_add_specialist_before_training():
    with pytest.raises(UsageError):
        SamoeModel().add_specialist()


def test_add_specialist_grows_and_preserves():
    m = trained()
    old = {n: p.data.copy() for n, p in m.named_parameters() if n.startswith("specialists.0")}
    assert m.add_specialist() == 2
    assert m.n_specialists == 2 and m.router.n_out == 2
    for n, p in m.named_parameters():
        if n in old:
            np.testing.assert_array_equal(p.data, old[n])


def test_predict_untrained():
    with pytest.raises(UsageError):
        SamoeModel().predict(probe(1))


def test_predict_single_specialist_equals_direct():
    m = trained()
    x = probe(4)
    pred = m.predict(x)
    with no_grad():
        logits = m.specialists[0](m.backbone_forward(x)).data
    np.testing.assert_array_equal(pred.classes, logits.argmax(axis=1))
    np.testing.assert_array_equal(pred.specialist_ids, [1, 1, 1, 1])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_predict_runs_one_specialist_per_sample(n):
    m = trained()
    for _ in range(n - 1):
        m.add_specialist()
    m.trace.reset()
    x = probe(6, seed=n)
    pred = m.predict(x)
    per = m.trace.samples_per_specialist()
    assert sum(per.values()) == 6
    for k, count in per.items():
        assert count == int((pred.specialist_ids == k).sum())


def test_predict_consistent_with_routed_specialist():
    m = trained()
    m.add_specialist()
    m.router.head.bias.data[:] = [0.0, 50.0]
    x = probe(3)
    pred = m.predict(x)
    assert np.all(pred.specialist_ids == 2)
    with no_grad():
        want = m.specialists[1](m.backbone_forward(x)).data.argmax(axis=1)
    np.testing.assert_array_equal(pred.classes, want)


def test_memo_single_equals_predict():
    m = trained()
    x = probe(3)
    np.testing.assert_array_equal(m.memo_predict(x), m.predict(x).classes)


def test_memo_agreeing_specialists():
    m = trained("memo")
    m.add_specialist()
    for p, q in zip(m.specialists[1].parameters(), m.specialists[0].parameters()):
        p.data[...] = q.data
    x = probe(3)
    with no_grad():
        want = m.specialists[0](m.backbone_forward(x)).data.argmax(axis=1)
    np.testing.assert_array_equal(m.memo_predict(x), want)


def test_memo_learned_adapter_weights():
    m = trained("memo", memo_adapter="learned")
    m.add_specialist()
    assert m.adapter_weights.shape == (2,)
    m.adapter_weights.data[:] = [1.0, 0.0]
    x = probe(2)
    with no_grad():
        want = m.specialists[0](m.backbone_forward(x)).data.argmax(axis=1)
    np.testing.assert_array_equal(m.memo_predict(x), want)


def test_basic_model_parameter_count():
    b = basic_cl_model()
    assert b.num_parameters() == b.backbone.num_parameters() + b.specialists[0].num_parameters()
    assert b.router is None and b.attention is None


def test_basic_model_rejects_second_specialist():
    b = trained("basic")
    with pytest.raises(UsageError):
        b.add_specialist()


def test_mean_context_mode():
    m = SamoeModel(context_mode="mean")
    assert m.attention is None
    pooled = Tensor(np.random.default_rng(0).standard_normal((2, 10, 256)))
    np.testing.assert_allclose(m.context(pooled).data, pooled.data.mean(axis=1), rtol=0, atol=1e-15)


def test_unknown_variant():
    with pytest.raises(UsageError):
        SamoeModel(variant="ensemble")
