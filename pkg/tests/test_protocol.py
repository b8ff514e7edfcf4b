import math

import numpy as np
import pytest

from conftest import TINY_CFG
from samoe import protocol
from samoe.data import ReplayBuffer
from samoe.errors import ContractError, UsageError
from samoe.model import SamoeModel
from samoe.protocol import (
    TrainConfig,
    replay_router,
    run_sequence,
    train_incremental,
    train_initial,
    update_router,
)


def snapshot(model):
    state = {n: p.data.copy() for n, p in model.named_parameters()}
    state.update({"buffer:" + n: b.copy() for n, b in model.named_buffers()})
    return state


@pytest.fixture(scope="module")
def samoe_run(tiny):
    snaps, records = [], []
    result = run_sequence(tiny, TINY_CFG, "samoe", records.append, on_step=lambda m, r: snaps.append(snapshot(m)))
    return result, snaps, records


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.specialist_epochs, cfg.router_epochs, cfg.batch_size, cfg.lr, cfg.rho) == (35, 20, 64, 3e-4, 0.05)


@pytest.mark.parametrize("kw", [{"batch_size": 0}, {"lr": 0.0}, {"rho": 1.5}, {"domain_order": (1, 1)}])
def test_config_validation(kw):
    with pytest.raises(UsageError):
        TrainConfig(**kw)


def test_initial_loss_starts_near_uniform(tiny):
    model = SamoeModel(seed=0)
    rep = train_initial(model, tiny[0].train, TrainConfig(specialist_epochs=1, batch_size=16))
    assert abs(rep.losses()[0] - math.log(27)) <= 0.15


def test_initial_freezes(samoe_run):
    model = samoe_run[0].model
    assert model.backbone.frozen and model.attention.frozen
    assert all(s.frozen for s in model.specialists)


def test_initial_rejects_empty(tiny):
    with pytest.raises(UsageError):
        train_initial(SamoeModel(), tiny[0].train.subset([]), TINY_CFG)


def test_specialist_count_tracks_steps(samoe_run):
    result = samoe_run[0]
    assert result.model.n_specialists == len(result.steps) == 3
    assert result.model.router.n_out == 3


def test_freeze_ratchet(samoe_run):
    _, snaps, _ = samoe_run
    for s in range(1, len(snaps)):
        before, after = snaps[s - 1], snaps[s]
        fixed = [n for n in before if n.startswith(("backbone.", "buffer:backbone."))]
        fixed += [n for n in before if n.startswith(("specialists.", "buffer:specialists."))]
        for n in fixed:
            np.testing.assert_array_equal(before[n], after[n], err_msg=n)


def test_phase_gradient_sets(samoe_run):
    result = samoe_run[0]
    names = {n for n, _ in result.model.named_parameters()}
    assert set(result.steps[0].grad_params["initial"]) == {
        n for n in names if n.startswith(("backbone.", "specialists.0."))
    }
    for s, rep in enumerate(result.steps, start=1):
        if s > 1:
            assert set(rep.grad_params["incremental"]) == {n for n in names if n.startswith(f"specialists.{s - 1}.")}
        assert set(rep.grad_params["router"]) == {n for n in names if n.startswith("router.")}


def test_buffer_growth(samoe_run, tiny):
    buf = samoe_run[0].buffer
    want = [int(np.floor(0.05 * len(sp.train) + 0.5)) for sp in tiny]
    assert len(buf) == sum(want)
    assert buf.domains == [1, 2, 3]


def test_records(samoe_run):
    records = samoe_run[2]
    epochs = [r for r in records if r["record"] == "epoch"]
    assert {r["phase"] for r in epochs} == {"initial", "incremental", "router"}
    assert set(epochs[0]) == {"record", "step", "domain", "phase", "epoch", "loss", "val_acc"}
    assert all(math.isfinite(r["loss"]) for r in epochs)
    assert records[-1]["record"] == "summary"
    steps = [r for r in records if r["record"] == "step"]
    assert [r["step"] for r in steps] == [1, 2, 3]
    for r in steps:
        assert all(0.0 <= v <= 1.0 for v in r["per_domain_acc"].values())


def test_router_single_class_is_perfect(tiny):
    model = SamoeModel(seed=0)
    train_initial(model, tiny[0].train, TINY_CFG)
    rep = update_router(model, tiny[0].train, ReplayBuffer(0.05), TINY_CFG, [tiny[0].val])
    assert rep.router_acc == 1.0


def test_incremental_needs_frozen_backbone(tiny):
    model = SamoeModel(seed=0)
    model.backbone_trained = True
    model.domain_ids.append(1)
    with pytest.raises(ContractError):
        train_incremental(model, tiny[1].train, TINY_CFG)


def test_router_needs_frozen_specialist(tiny):
    model = SamoeModel(seed=0)
    train_initial(model, tiny[0].train, TrainConfig(specialist_epochs=0))
    model.specialists[0].unfreeze()
    with pytest.raises(ContractError):
        update_router(model, tiny[0].train, ReplayBuffer(0.05), TINY_CFG)


def test_router_needs_frozen_attention(tiny):
    model = SamoeModel(seed=0)
    train_initial(model, tiny[0].train, TrainConfig(specialist_epochs=0))
    model.attention.unfreeze()
    with pytest.raises(ContractError):
        update_router(model, tiny[0].train, ReplayBuffer(0.05), TINY_CFG)


def test_router_sees_only_buffer_for_past_domains(tiny, monkeypatch):
    seen = []
    real = protocol.pooled_features

    def spy(model, x, batch_size=64):
        seen.append(x.copy())
        return real(model, x, batch_size)

    monkeypatch.setattr(protocol, "pooled_features", spy)
    result = run_sequence(tiny[:2], TrainConfig(specialist_epochs=1, router_epochs=1, batch_size=16), "samoe")
    allowed_past = {s.x.tobytes() for s, _ in result.buffer.entries if _ == 1}
    current = {s.x.tobytes() for s in tiny[1].train.samples}
    step2 = seen[1]
    rows = {row.tobytes() for row in step2}
    assert rows <= allowed_past | current
    assert len(step2) == len(tiny[1].train) + len(allowed_past)


def test_duplicate_domains_rejected(tiny):
    with pytest.raises(UsageError):
        run_sequence([tiny[0], tiny[0]], TINY_CFG, "samoe")


def test_domain_order(tiny):
    ordered = protocol.order_domains(tiny, (3, 1, 2))
    assert [s.domain for s in ordered] == [3, 1, 2]
    with pytest.raises(UsageError):
        protocol.order_domains(tiny, (4,))


def test_replay_router_reproduces_original(samoe_run, tiny):
    model = samoe_run[0].model
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    replay_router(model, [s.train for s in tiny], TINY_CFG)
    after = {n: p.data for n, p in model.named_parameters()}
    assert before.keys() == after.keys()
    for n in before:
        np.testing.assert_array_equal(before[n], after[n], err_msg=n)


def test_memo_trains_same_specialists(samoe_run, tiny):
    memo = run_sequence(tiny, TINY_CFG, "memo").model
    samoe = samoe_run[0].model
    assert memo.router is None
    for a, b in zip(memo.specialists, samoe.specialists):
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=n)


def test_memo_learned_adapter_runs(tiny):
    result = run_sequence(tiny[:2], TrainConfig(specialist_epochs=1, router_epochs=2, batch_size=16), "memo",
                          memo_adapter="learned")
    assert result.model.adapter_weights.shape == (2,)
    assert result.steps[-1].grad_params["adapter"] == ["adapter_weights"]


def test_basic_keeps_one_trainable_model(tiny):
    result = run_sequence(tiny[:2], TrainConfig(specialist_epochs=1, batch_size=16), "basic")
    model = result.model
    assert model.n_specialists == 1
    assert not any(p.frozen for p in model.parameters())
    names = {n for n, _ in model.named_parameters()}
    assert set(result.steps[1].grad_params["basic"]) == names
