import math

import numpy as np
import numpy.testing as npt
import pytest

from advnoise import tensor as T
from advnoise.noise import (NoiseCoefficient, Placement, inject,
                            inject_gradients, parse_placement, tensor_std)
from advnoise.rng import Rng
from advnoise.tensor import Tensor

from checks import max_rel_err


# ------------------------------------------------------------ tensor_std

def test_std_symmetric_pair():
    assert tensor_std(Tensor([1.0, -1.0])) == 1.0


def test_std_constant_tensor():
    assert tensor_std(Tensor([3.5, 3.5, 3.5])) == 0.0


def test_std_hand_value():
    assert tensor_std(Tensor([1.0, 2.0, 3.0])) == pytest.approx(
        math.sqrt(2.0 / 3.0), abs=1e-12)


def test_std_single_element_is_zero():
    assert tensor_std(Tensor([4.0])) == 0.0


# --------------------------------------------------------------- inject

def test_inject_zero_scale_is_identity():
    v = Tensor(Rng(1).normal((3, 3)))
    out, _ = inject(v, NoiseCoefficient("l", init=0.0), rng=Rng(2))
    npt.assert_array_equal(out.data, v.data)


def test_inject_disabled_returns_same_tensor():
    v = Tensor(Rng(1).normal((3, 3)))
    out, eta = inject(v, NoiseCoefficient("l"), rng=Rng(2), enabled=False)
    assert out is v
    assert not eta.any()


def test_inject_hand_value_with_frozen_draw():
    # std([2, -2]) = 2, so eta = 2 * unit draw
    v = Tensor([2.0, -2.0])
    out, eta = inject(v, NoiseCoefficient("l", init=0.25),
                      unit_noise=np.array([0.5, -1.0]))
    npt.assert_allclose(eta, [1.0, -2.0], atol=1e-15)
    npt.assert_allclose(out.data, [2.25, -2.5], atol=1e-15)


def test_inject_fresh_draw_each_call():
    v = Tensor(Rng(5).normal(8))
    coeff = NoiseCoefficient("l")
    rng = Rng(6)
    a, _ = inject(v, coeff, rng=rng)
    b, _ = inject(v, coeff, rng=rng)
    assert not np.array_equal(a.data, b.data)


def test_inject_requires_rng_or_frozen_noise():
    with pytest.raises(ValueError, match="rng"):
        inject(Tensor([1.0]), NoiseCoefficient("l"))


# ------------------------------------------------------------- backward

def test_inject_gradients_symmetry_cancellation():
    grad_v, grad_scale = inject_gradients(
        np.array([1.0, 1.0]), np.array([0.5, -0.5]))
    npt.assert_array_equal(grad_v, [1.0, 1.0])
    assert grad_scale == 0.0


def test_inject_gradients_hand_dot_product():
    _, grad_scale = inject_gradients(np.array([2.0, 0.0]), np.array([0.5, -0.5]))
    assert grad_scale == 1.0


def test_inject_gradients_shape_mismatch():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        inject_gradients(np.zeros(2), np.zeros(3))


def test_scale_grad_matches_fd_with_frozen_noise():
    rng = Rng(9)
    v = Tensor(rng.normal((4, 3)), requires_grad=True)
    unit = Rng(10).normal((4, 3))

    def loss_at(scale_value: float) -> float:
        coeff = NoiseCoefficient("l", init=scale_value)
        out, _ = inject(v, coeff, unit_noise=unit)
        return T.sum_all(T.tanh(out)).item()

    coeff = NoiseCoefficient("l", init=0.25)
    out, _ = inject(v, coeff, unit_noise=unit)
    T.sum_all(T.tanh(out)).backward()
    analytic = float(coeff.scale.grad)
    h = 1e-5
    fd = (loss_at(0.25 + h) - loss_at(0.25 - h)) / (2 * h)
    assert max_rel_err(np.array([analytic]), np.array([fd])) < 1e-4
    # the value path is the identity plus downstream effects
    npt.assert_allclose(v.grad, 1.0 - np.tanh(out.data) ** 2, atol=1e-12)


def test_sign_symmetry_of_scale_and_noise():
    v = Tensor(Rng(11).normal((5, 5)))
    unit = Rng(12).normal((5, 5))
    out_pos, _ = inject(v, NoiseCoefficient("l", init=0.3), unit_noise=unit)
    out_neg, _ = inject(v, NoiseCoefficient("l", init=-0.3), unit_noise=-unit)
    assert out_pos.data.tobytes() == out_neg.data.tobytes()


def test_scale_grad_additive_over_slices():
    upstream = Rng(13).normal(10)
    eta = Rng(14).normal(10)
    _, whole = inject_gradients(upstream, eta)
    parts = sum(inject_gradients(upstream[i:i + 2], eta[i:i + 2])[1]
                for i in range(0, 10, 2))
    assert whole == pytest.approx(parts, abs=1e-12)


# ------------------------------------------------------- momentum update

def test_momentum_step_single():
    c = NoiseCoefficient("l", init=0.25)
    c.momentum_step(momentum=0.0, lr=0.1, grad=1.0)
    assert c.value == pytest.approx(0.15, abs=1e-12)
    assert c.velocity == 1.0


def test_momentum_step_fixed_point():
    c = NoiseCoefficient("l", init=0.25)
    c.momentum_step(momentum=0.9, lr=0.1, grad=0.0)
    assert c.value == 0.25
    assert c.velocity == 0.0


def test_momentum_step_two_step_recursion():
    c = NoiseCoefficient("l", init=0.25)
    c.momentum_step(momentum=0.9, lr=0.1, grad=1.0)
    assert (c.velocity, c.value) == (pytest.approx(1.0), pytest.approx(0.15))
    c.momentum_step(momentum=0.9, lr=0.1, grad=0.0)
    assert (c.velocity, c.value) == (pytest.approx(0.9), pytest.approx(0.06))


def test_momentum_step_reads_autodiff_grad():
    c = NoiseCoefficient("l", init=0.5)
    out, _ = inject(Tensor([1.0, -1.0]), c, unit_noise=np.array([2.0, 0.0]))
    T.sum_all(out).backward()  # d/dscale = sum(eta) = 2.0 (std = 1)
    c.momentum_step(momentum=0.0, lr=0.1)
    assert c.value == pytest.approx(0.3, abs=1e-12)


def test_momentum_step_grad_clip():
    c = NoiseCoefficient("l", init=0.25)
    c.momentum_step(momentum=0.0, lr=0.1, grad=100.0, grad_clip=1.0)
    assert c.value == pytest.approx(0.15, abs=1e-12)


# ------------------------------------------------------------- placement

def test_parse_placement():
    assert parse_placement(None) is Placement.NONE
    assert parse_placement("weight") is Placement.WEIGHT
    assert parse_placement("weight+act_out") is Placement.WEIGHT_ACT_OUT
    with pytest.raises(ValueError, match="unknown noise placement"):
        parse_placement("everywhere")


def test_placement_flags():
    assert Placement.WEIGHT.on_weight
    assert not Placement.WEIGHT.on_act_in
    assert Placement.WEIGHT_ACT_IN.on_weight
    assert Placement.WEIGHT_ACT_IN.on_act_in
    assert Placement.ACT_OUT.on_act_out
    assert not Placement.NONE.on_weight
