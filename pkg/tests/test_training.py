from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest

from advnoise import tensor as T
from advnoise.attacks import AttackConfig
from advnoise.errors import ConfigError, TrainingError
from advnoise.nn import ModelSpec, build
from advnoise.rng import Rng
from advnoise.training import (EpochStats, MomentumSgd, TrainConfig,
                               adv_train_epoch, ensemble_loss, epoch_streams,
                               train)


def toy_points(seed=0, n=60):
    """Two linearly separable blobs in the unit square."""
    rng = Rng(seed)
    labels = rng.randint(2, n)
    centers = np.array([[0.25, 0.25], [0.75, 0.75]])
    x = centers[labels] + 0.08 * rng.normal((n, 2))
    return SimpleNamespace(x=np.clip(x, 0.0, 1.0), labels=labels)


def toy_model(seed=0, noise="none"):
    spec = ModelSpec(
        layers=[{"type": "dense", "units": 8, "noise": noise},
                {"type": "relu"},
                {"type": "dense", "units": 2}],
        input_shape=(2,), n_classes=2)
    return build(spec, Rng(seed))


def plain_config(**overrides):
    base = dict(epochs=3, batch_size=16, learning_rate=0.5, momentum=0.9,
                weight_decay=0.0, clean_weight=1.0, adv_weight=0.0, seed=3)
    base.update(overrides)
    return TrainConfig(**base)


# --------------------------------------------------------------- config

def test_train_config_validation():
    with pytest.raises(ConfigError, match="epochs"):
        plain_config(epochs=-1)
    with pytest.raises(ConfigError, match="batch_size"):
        plain_config(batch_size=0)
    with pytest.raises(ConfigError, match="learning_rate"):
        plain_config(learning_rate=0.0)
    with pytest.raises(ConfigError, match="momentum"):
        plain_config(momentum=1.0)
    with pytest.raises(ConfigError, match="weight_decay"):
        plain_config(weight_decay=-0.1)
    with pytest.raises(ConfigError, match="clean_weight"):
        plain_config(clean_weight=0.0, adv_weight=0.0)
    with pytest.raises(ConfigError, match="lr_decay_factor"):
        plain_config(lr_decay_factor=0.0)


def test_lr_schedule_steps_down_at_decay_epochs():
    config = plain_config(epochs=6, learning_rate=0.1,
                          lr_decay_epochs=(2, 4), lr_decay_factor=0.1)
    assert [config.lr_at(e) for e in range(6)] == pytest.approx(
        [0.1, 0.1, 0.01, 0.01, 0.001, 0.001])


def test_adversarial_flag():
    assert not plain_config().adversarial
    inner = AttackConfig(epsilon=0.1, step_size=0.05, n_step=3)
    assert TrainConfig(epochs=1, batch_size=8, learning_rate=0.1,
                       inner_attack=inner).adversarial
    zero = AttackConfig(epsilon=0.0)
    assert not TrainConfig(epochs=1, batch_size=8, learning_rate=0.1,
                           inner_attack=zero).adversarial


# -------------------------------------------------------- ensemble loss

def test_ensemble_loss_clean_only_equals_cross_entropy():
    model = toy_model(noise="weight")
    data = toy_points()
    model.rng = Rng(11)
    combined = ensemble_loss(model, data.x, None, data.labels,
                             clean_weight=1.0, adv_weight=0.0).item()
    model.rng = Rng(11)
    plain = T.softmax_cross_entropy(model.forward(data.x),
                                    data.labels).item()
    assert combined == plain


def test_ensemble_loss_degenerate_perturbation_is_plain_ce():
    model = toy_model()
    model.noise_enabled = False
    data = toy_points()
    combined = ensemble_loss(model, data.x, data.x.copy(), data.labels,
                             clean_weight=0.5, adv_weight=0.5).item()
    plain = T.softmax_cross_entropy(model.forward(data.x),
                                    data.labels).item()
    assert combined == pytest.approx(plain, abs=1e-15)


def test_ensemble_loss_weighted_arithmetic_and_trace():
    model = toy_model()
    model.noise_enabled = False
    data = toy_points()
    x_adv = np.clip(data.x + 0.1, 0.0, 1.0)
    trace = {}
    combined = ensemble_loss(model, data.x, x_adv, data.labels,
                             clean_weight=0.3, adv_weight=0.7,
                             trace=trace).item()
    assert combined == pytest.approx(
        0.3 * trace["clean_loss"] + 0.7 * trace["adv_loss"], abs=1e-12)
    assert trace["clean_logits"].shape == (len(data.x), 2)


def test_ensemble_loss_gradient_linearity_with_noise_frozen():
    model = toy_model(seed=5)
    model.noise_enabled = False  # deterministic forwards
    data = toy_points(seed=6, n=20)
    x_adv = np.clip(data.x + 0.05, 0.0, 1.0)
    params = model.parameters()

    def grads_of(loss):
        loss.backward()
        return [param.grad.copy() for _, param in params]

    g_clean = grads_of(T.softmax_cross_entropy(model.forward(data.x),
                                               data.labels))
    g_adv = grads_of(T.softmax_cross_entropy(model.forward(x_adv),
                                             data.labels))
    g_mix = grads_of(ensemble_loss(model, data.x, x_adv, data.labels,
                                   clean_weight=0.3, adv_weight=0.7))
    for mixed, clean, adv in zip(g_mix, g_clean, g_adv):
        npt.assert_allclose(mixed, 0.3 * clean + 0.7 * adv, atol=1e-12)


def test_ensemble_loss_shape_mismatch_and_empty_terms():
    model = toy_model()
    data = toy_points()
    with pytest.raises(ConfigError, match="differ"):
        ensemble_loss(model, data.x, data.x[:3], data.labels)
    with pytest.raises(ConfigError, match="> 0"):
        ensemble_loss(model, data.x, None, data.labels, clean_weight=0.0,
                      adv_weight=0.0)
    with pytest.raises(ConfigError, match="no active loss term"):
        ensemble_loss(model, data.x, None, data.labels, clean_weight=0.0,
                      adv_weight=1.0)


# ------------------------------------------------------------ optimizer

def test_weight_decay_shrinks_weights_but_never_coefficients():
    model = toy_model(noise="weight")
    lr, wd = 0.1, 0.5
    before = {name: t.data.copy() for name, t in model.parameters()}
    alpha_before = model.coefficient_values()

    model.zero_grad()  # zero data gradient everywhere
    optimizer = MomentumSgd(momentum=0.0, weight_decay=wd)
    optimizer.step(model.parameters(), lr)
    for _, coeff in model.coefficients():
        coeff.momentum_step(momentum=0.0, lr=lr)

    for name, param in model.parameters():
        npt.assert_allclose(param.data, (1.0 - lr * wd) * before[name],
                            atol=1e-15)
    assert model.coefficient_values() == alpha_before


def test_momentum_sgd_state_roundtrip():
    optimizer = MomentumSgd(momentum=0.9, weight_decay=0.0)
    optimizer.velocity = {"a": np.array([1.0, 2.0])}
    fresh = MomentumSgd(momentum=0.9, weight_decay=0.0)
    fresh.load_state_dict(optimizer.state_dict())
    npt.assert_array_equal(fresh.velocity["a"], [1.0, 2.0])
    fresh.velocity["a"] += 1
    npt.assert_array_equal(optimizer.velocity["a"], [1.0, 2.0])


# -------------------------------------------------------- training loop

def test_plain_training_reduces_loss_on_separable_toy_set():
    model = toy_model()
    model.noise_enabled = False
    history, _ = train(model, toy_points(), plain_config())
    assert history[-1].clean_loss < history[0].clean_loss
    assert history[-1].clean_accuracy >= history[0].clean_accuracy


def test_training_is_deterministic():
    final = []
    for _ in range(2):
        model = toy_model(seed=2, noise="weight")
        history, _ = train(model, toy_points(), plain_config(epochs=2))
        final.append((
            {name: t.data.copy() for name, t in model.parameters()},
            history[-1].coefficients,
        ))
    for (pa, ca), (pb, cb) in [tuple(final)]:
        assert ca == cb
        for name in pa:
            assert pa[name].tobytes() == pb[name].tobytes()


def test_adversarial_epoch_stats_bookkeeping():
    model = toy_model(noise="weight")
    data = toy_points(n=32)
    inner = AttackConfig(epsilon=0.08, step_size=0.04, n_step=3)
    config = plain_config(epochs=1, batch_size=8, clean_weight=0.5,
                          adv_weight=0.5, inner_attack=inner)
    history, _ = train(model, data, config)
    stats = history[0]
    assert isinstance(stats, EpochStats)
    assert stats.adv_loss is not None and stats.adv_accuracy is not None
    assert len(stats.clean_loss_trace) == len(stats.adv_loss_trace) == 4
    assert len(stats.coefficient_trace) == 4
    assert set(stats.coefficients) == {"layers.0.noise.weight"}
    assert 0.0 <= stats.adv_accuracy <= 1.0
    round_trip = stats.to_dict()
    assert round_trip["epoch"] == 0 and "coefficients" in round_trip


def test_epoch_streams_are_distinct_and_reproducible():
    a_shuffle, a_noise = epoch_streams(seed=9, epoch=0)
    b_shuffle, b_noise = epoch_streams(seed=9, epoch=0)
    assert a_shuffle.state == b_shuffle.state
    assert a_noise.state == b_noise.state
    c_shuffle, c_noise = epoch_streams(seed=9, epoch=1)
    streams = {a_shuffle.seed, a_noise.seed, c_shuffle.seed, c_noise.seed}
    assert len(streams) == 4


def test_non_finite_loss_aborts_with_coefficient_diagnostics():
    model = toy_model(noise="weight")
    model.layers[0].weight.data[:] = 1e308  # forwards overflow on purpose
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingError, match="noise coefficients"):
            train(model, toy_points(), plain_config(epochs=1))


def test_zero_epochs_trains_nothing():
    model = toy_model()
    before = model.layers[0].weight.data.copy()
    history, _ = train(model, toy_points(), plain_config(epochs=0))
    assert history == []
    npt.assert_array_equal(model.layers[0].weight.data, before)
