import math
from dataclasses import replace

import numpy as np
import pytest

from iqshrink.errors import (
    BadMagicError,
    ConfigError,
    ContractError,
    StructuralError,
    TruncatedPayloadError,
    VersionError,
)
from iqshrink.gradsuite import TINY_MODEL, end_to_end_check
from iqshrink.model import (
    Adam,
    ModelConfig,
    PlateauController,
    TrainConfig,
    build_model,
    count_flops,
    count_params,
    fit,
    load_checkpoint,
    loss_with_l2,
    save_checkpoint,
)
from iqshrink.model.train import evaluate_loss, l2_penalty
from iqshrink.tensor.core import Parameter
from iqshrink.tensor.nn import Dense
from iqshrink.temporal import LSTM

MODEL_2 = ModelConfig(units=16, d=32, heads=2, ccsa_depth=2, depth_a=3, depth_b=3, num_classes=24, T=1024)


def _toy_data(n=48, T=16, K=2, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, K, n)
    x = rng.standard_normal((n, T, 2)).astype(np.float32)
    x[:, :, 0] += (2 * y[:, None] - 1) * 0.8  # separable by the I-rail mean
    return x, y


# -------------------------------------------------------------- building


def test_model_2_builds_and_counts():
    total, parts = count_params(build_model(MODEL_2))
    assert total == sum(parts.values())
    assert abs(total - 178_284) / 178_284 <= 0.05


def test_same_seed_same_parameters():
    a, b = build_model(TINY_MODEL), build_model(TINY_MODEL)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.value.tobytes() == pb.value.tobytes()
    c = build_model(replace(TINY_MODEL, seed=1))
    assert any(pa.value.tobytes() != pc.value.tobytes() for pa, pc in zip(a.parameters(), c.parameters()))


def test_tiny_model_hand_accounting():
    # embed 4, one attention block 74, projection 6, LSTM 40, block A 206, block B 650, head 26.
    assert count_params(build_model(TINY_MODEL))[0] == 1006


def test_layer_accounting_oracles():
    assert Dense("d", 3, 2, np.random.default_rng(0)).num_params() == 8
    for u in (2, 5, 16):
        assert LSTM("l", u, np.random.default_rng(0)).num_params() == 4 * (u * (2 + u) + u)
        assert LSTM("l", u, np.random.default_rng(0)).flops(10) == 2 * 10 * (2 + u) * 4 * u
    assert Dense("d", 7, 3, np.random.default_rng(0)).flops(1) == 2 * 7 * 3


def test_config_validation():
    with pytest.raises(ConfigError, match="heads"):
        ModelConfig(d=6, heads=4)
    with pytest.raises(ConfigError, match="at least one"):
        ModelConfig(units=0, d=0)
    with pytest.raises(ConfigError, match="block B"):
        ModelConfig(T=2, units=2, depth_a=0, depth_b=3)


def test_branch_ablations_build_and_run():
    x = np.random.default_rng(0).standard_normal((3, 16, 2))
    for cfg in (
        replace(TINY_MODEL, units=0),
        replace(TINY_MODEL, d=0),
        replace(TINY_MODEL, depth_a=0, depth_b=0),
    ):
        p = build_model(cfg, np.float64).forward(x)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)


def test_forward_contracts():
    m = build_model(TINY_MODEL, np.float64)
    x = np.random.default_rng(0).standard_normal((4, 16, 2))
    p = m.forward(x)
    assert p.shape == (4, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert m.forward(x).tobytes() == p.tobytes()
    twin = m.forward(np.stack([x[0], x[0]]))
    assert twin[0].tobytes() == twin[1].tobytes()
    with pytest.raises(StructuralError, match="16"):
        m.forward(np.zeros((1, 15, 2)))


def test_profile_breakdown_and_orderings():
    rows = {1: (1, 3, 3), 2: (2, 3, 3), 3: (3, 3, 3), 4: (2, 2, 2), 5: (2, 1, 1)}
    params, flops = {}, {}
    for r, (c, a, b) in rows.items():
        m = build_model(replace(MODEL_2, ccsa_depth=c, depth_a=a, depth_b=b))
        params[r], flops[r] = count_params(m)[0], count_flops(m)[0]
    assert params[1] < params[2] < params[3] and flops[1] < flops[2] < flops[3]
    assert params[5] < params[4] < params[2] and flops[5] < flops[4] < flops[2]
    total, parts = count_flops(build_model(TINY_MODEL))
    assert total == sum(parts.values()) and count_flops(build_model(TINY_MODEL), batch=3)[0] == 3 * total


# ----------------------------------------------------------------- loss


def test_loss_oracles():
    K = 4
    y = np.array([0, 1, 2, 3])
    loss, _ = loss_with_l2(np.full((4, K), 1 / K), y, None, 0.0)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert loss == pytest.approx(1.386294, abs=1e-6)
    assert loss_with_l2(np.eye(K), y, None, 0.0)[0] == 0.0
    m = build_model(TINY_MODEL, np.float64)
    p = m.forward(np.zeros((4, 16, 2)))
    assert loss_with_l2(p, y % 2, m, 0.0)[0] == loss_with_l2(p, y % 2, None, 0.0)[0]


def test_loss_clamps_exact_zeros():
    loss, d = loss_with_l2(np.array([[0.0, 1.0]]), np.array([0]), None, 0.0)
    assert math.isfinite(loss) and loss == pytest.approx(-math.log(1e-12))
    assert np.all(np.isfinite(d))


def test_loss_l2_term_and_gradient_scope():
    m = build_model(TINY_MODEL, np.float64)
    p = m.forward(np.zeros((2, 16, 2)), "train")
    m.zero_grad()
    lam = 0.01
    loss, _ = loss_with_l2(p, np.array([0, 1]), m, lam)
    ce, _ = loss_with_l2(p, np.array([0, 1]), None, 0.0)
    assert loss == pytest.approx(ce + lam * l2_penalty(m), rel=1e-12)
    for prm in m.parameters():
        expected = 2 * lam * prm.value if prm.decay else 0
        np.testing.assert_allclose(prm.grad, expected, atol=1e-15)
    decayed = {prm.name for prm in m.parameters() if prm.decay}
    assert "lstm.W_x" not in decayed and not any("mhsa" in n or "ffn" in n for n in decayed)
    assert {"ccsa.embed.W_e", "head.fc.W"} <= decayed


def test_loss_rejects_bad_labels():
    with pytest.raises(ContractError, match="labels"):
        loss_with_l2(np.full((2, 2), 0.5), np.array([0, 2]), None, 0.0)


def test_end_to_end_gradient():
    assert end_to_end_check(seed=5).passed


# ----------------------------------------------------------------- adam


def test_adam_zero_gradient_is_fixed_point():
    p = Parameter("p", np.array([1.0, -2.0]))
    Adam([p]).step(1e-3)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_has_lr_magnitude():
    p = Parameter("p", np.array([1.0, -2.0, 0.5]))
    p.grad[...] = [3.0, -0.2, 7.0]
    Adam([p]).step(1e-3)
    np.testing.assert_allclose(p.value, [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3], atol=1e-9)


def test_adam_is_deterministic():
    def run():
        p = Parameter("p", np.linspace(-1, 1, 5))
        opt = Adam([p])
        for k in range(20):
            p.grad[...] = np.sin(p.value * (k + 1))
            opt.step(1e-2)
        return p.value.tobytes()

    assert run() == run()


# -------------------------------------------------------------- plateau


def test_plateau_halves_after_five_and_stops_after_thirty():
    ctl = PlateauController(1e-3, 1e-8, 0.5, 5, 30)
    assert ctl.update(1.0) == (True, False)
    lrs = []
    for epoch in range(2, 40):
        _, stop = ctl.update(1.0)
        lrs.append(ctl.lr)
        if stop:
            break
    assert lrs[:4] == [1e-3] * 4 and lrs[4] == 5e-4
    assert epoch == 31  # 30 stagnant epochs after the first


def test_plateau_lr_floor():
    ctl = PlateauController(1e-6, 1e-8, 0.5, 1, 1000)
    ctl.update(1.0)
    for _ in range(50):
        ctl.update(2.0)
        assert ctl.lr >= 1e-8
    assert ctl.lr == 1e-8


def test_train_config_validation():
    with pytest.raises(ConfigError, match="lr_factor"):
        TrainConfig(lr_factor=1.5)
    with pytest.raises(ConfigError, match="split_fractions"):
        TrainConfig(split_fractions=(0.5, 0.5, 0.5))


# ------------------------------------------------------------------ fit


@pytest.fixture(scope="module")
def toy():
    x, y = _toy_data()
    return (x[:32], y[:32]), (x[32:], y[32:])


def test_fit_is_bitwise_deterministic_and_restores_best(toy):
    tc = TrainConfig(batch_size=8, max_epochs=4, lr_init=1e-2)
    logs = []
    for _ in range(2):
        m = build_model(TINY_MODEL)
        logs.append((fit(m, *toy, tc), m))
    (la, ma), (lb, mb) = logs
    assert la == lb
    for pa, pb in zip(ma.parameters(), mb.parameters()):
        assert pa.value.tobytes() == pb.value.tobytes()
    assert la.best_val_loss == min(la.val_loss)
    assert evaluate_loss(ma, *toy[1], TINY_MODEL.l2)[0] == la.best_val_loss
    assert la.stop_reason == "max_epochs" and la.stopped_epoch == 4


def test_fit_learns_a_separable_problem(toy):
    m = build_model(TINY_MODEL)
    log = fit(m, *toy, TrainConfig(batch_size=8, max_epochs=8, lr_init=1e-2))
    assert log.val_loss[log.best_epoch - 1] < log.val_loss[0]


def test_fit_rejects_empty_sets(toy):
    with pytest.raises(ContractError):
        fit(build_model(TINY_MODEL), toy[0], (toy[1][0][:0], toy[1][1][:0]), TrainConfig(max_epochs=1))


# ----------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path, toy):
    m = build_model(TINY_MODEL)
    tc = TrainConfig(batch_size=8, max_epochs=2)
    log = fit(m, *toy, tc)
    path = tmp_path / "m.iqck"
    save_checkpoint(path, m, tc, log.optimizer, log.rng_state, extra={"note": 1})
    ck = load_checkpoint(path)
    x = toy[1][0]
    assert ck.model.forward(x).tobytes() == m.forward(x).tobytes()
    assert ck.train_config == tc and ck.extra == {"note": 1}
    assert ck.optimizer.t == log.optimizer.t
    assert ck.rng_state == log.rng_state
    save_checkpoint(tmp_path / "again.iqck", ck.model, ck.train_config, ck.optimizer, ck.rng_state, extra=ck.extra)
    assert (tmp_path / "again.iqck").read_bytes() == path.read_bytes()


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.iqck"
    save_checkpoint(path, build_model(TINY_MODEL))
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError, match="magic"):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "ver").write_bytes(raw[:4] + (9).to_bytes(4, "little") + raw[8:])
    with pytest.raises(VersionError):
        load_checkpoint(tmp_path / "ver")
    (tmp_path / "tiny").write_bytes(raw[:5])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(tmp_path / "tiny")
