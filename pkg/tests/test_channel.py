import math

import numpy as np
import pytest
from scipy import integrate

from hdrobust import scale_mixtures as sm
from hdrobust.channel import (
    LAD_DELTA_FLOOR,
    LossSpec,
    NoiseModel,
    loss_value,
    prox_derivative,
    proximal_f,
    z0,
)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec.huber(-1.0)
    with pytest.raises(ValueError):
        LossSpec.square(-0.1)
    assert LossSpec.lad().delta == LAD_DELTA_FLOOR
    assert LossSpec.huber(math.inf).square_like


def test_proximal_square_example():
    assert proximal_f(LossSpec.square(), 1.0, 0.0, 1.0) == pytest.approx(0.5)


def test_proximal_huber_saturated():
    f = proximal_f(LossSpec.huber(1.0), 10.0, 0.0, 1.0)
    assert f == pytest.approx(1.0)
    assert proximal_f(LossSpec.huber(1.0), -10.0, 0.0, 1.0) == pytest.approx(-1.0)


def test_proximal_huber_large_threshold_is_square():
    f = proximal_f(LossSpec.huber(1e6), 1.0, 0.0, 1.0)
    assert f == pytest.approx(0.5, abs=1e-9)


def test_prox_derivative_examples():
    assert prox_derivative(LossSpec.square(), 0.3, -1.2, 1.0) == pytest.approx(-0.5)
    assert prox_derivative(LossSpec.huber(1.0), 10.0, 0.0, 1.0) == 0.0


def test_prox_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    loss = LossSpec.huber(0.8)
    h = 1e-6
    for _ in range(200):
        y = rng.normal() * 3.0
        omega = rng.normal() * 3.0
        vs = rng.random() * 2.0 + 0.01
        kink = abs(y - omega) - loss.delta * (1.0 + vs)
        if abs(kink) < 1e-3:  # derivative is one-sided at the kink
            continue
        fd = (proximal_f(loss, y, omega + h, vs) - proximal_f(loss, y, omega - h, vs)) / (2 * h)
        assert prox_derivative(loss, y, omega, vs) == pytest.approx(fd, abs=1e-6)


def test_proximal_minimises_channel_objective():
    rng = np.random.default_rng(11)
    for loss in (LossSpec.square(), LossSpec.huber(0.5), LossSpec.huber(3.0), LossSpec.lad()):
        for _ in range(20):
            y = rng.normal() * 4.0
            omega = rng.normal() * 2.0
            vs = rng.random() * 3.0 + 1e-3
            f = float(proximal_f(loss, y, omega, vs))

            def objective(u):
                return 0.5 * vs * u * u + float(loss_value(loss, y - omega - vs * u))

            base = objective(f)
            perturb = f + rng.standard_normal(1000) * np.geomspace(1e-7, 1.0, 1000)
            assert all(objective(u) >= base - 1e-12 for u in perturb)


def test_huber_proximal_monotone_in_delta():
    y, omega, vs = 4.0, 0.5, 1.3
    square = abs(proximal_f(LossSpec.square(), y, omega, vs))
    prev = 0.0
    for delta in np.geomspace(1e-3, 1e3, 25):
        val = abs(proximal_f(LossSpec.huber(delta), y, omega, vs))
        assert val >= prev - 1e-15
        assert val <= square + 1e-12
        prev = val


def test_z0_gaussian_example():
    noise = NoiseModel.gaussian(1.0)
    z, dz = z0(noise, np.array([0.7]), 0.7, 0.0)
    assert z[0] == pytest.approx(1.0 / math.sqrt(2 * math.pi))
    assert dz[0] == pytest.approx(0.0, abs=1e-14)
    z, _ = z0(noise, np.array([1.0]), 0.2, 0.5)
    assert z[0] == pytest.approx(math.exp(-0.8**2 / 3.0) / math.sqrt(2 * math.pi * 1.5))


def test_z0_normalises_in_y():
    noise = NoiseModel.contaminated(0.4, sm.InverseGamma(2.0, 1.0))
    for mu, v in ((0.0, 0.3), (1.5, 1.2)):
        fn = lambda y: z0(noise, np.array([y]), mu, v)[0][0]
        val = sum(
            integrate.quad(fn, lo, hi, limit=300)[0]
            for lo, hi in ((-np.inf, -30.0), (-30.0, 30.0), (30.0, np.inf))
        )
        assert val == pytest.approx(1.0, abs=1e-8)


def test_z0_nonnegative_and_derivative_matches_fd():
    rng = np.random.default_rng(21)
    noise = NoiseModel(
        (
            NoiseModel.contaminated(0.3, sm.InverseGamma(3.0, 2.0)).components[0],
        )
    )
    h = 1e-5
    for _ in range(100):
        y = rng.normal() * 4.0
        mu = rng.normal()
        v = rng.random() * 2.0
        z, dz = z0(noise, np.array([y]), mu, v)
        assert z[0] >= 0.0
        zp, _ = z0(noise, np.array([y]), mu + h, v)
        zm, _ = z0(noise, np.array([y]), mu - h, v)
        assert dz[0] == pytest.approx((zp[0] - zm[0]) / (2 * h), abs=1e-7)


def test_noise_model_moments():
    noise = NoiseModel.with_outliers(0.5, 2.0, 1.0, 1.0)
    assert noise.theta_mean() == pytest.approx(1.5)
    assert noise.theta_second_moment() == pytest.approx(2.5)
    assert not noise.theta_identity()
    assert noise.second_moment() == pytest.approx(1.0)
    heavy = NoiseModel.contaminated(0.5, sm.InverseGamma(0.8, 1.0))
    assert math.isinf(heavy.second_moment())
    assert NoiseModel.gaussian(0.25).second_moment() == pytest.approx(0.25)
