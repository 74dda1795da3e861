import numpy as np
import pytest

from darl import diffusion as d
from darl.market_data import StandardizationStats
from conftest import MEMORIZED


def test_schedule_endpoints_and_small_T():
    s = d.make_schedule(100)
    assert s.beta[1] == 1e-4 and s.beta[100] == 0.02
    assert d.make_schedule(1).alpha_bar[1] == pytest.approx(0.9999, abs=1e-15)
    beta2 = 1e-4 + (1 / 99) * (0.02 - 1e-4)
    assert s.alpha_bar[2] == pytest.approx((1 - 1e-4) * (1 - beta2), rel=1e-15)
    with pytest.raises(ValueError):
        d.make_schedule(0)


@pytest.mark.parametrize("T", [1, 2, 20, 100, 1000])
def test_schedule_invariants(T):
    s = d.make_schedule(T)
    ab = s.alpha_bar[1:]
    assert np.all(np.diff(ab) < 0) and np.all((ab > 0) & (ab < 1))
    assert np.all(np.diff(s.beta[1:]) > 0) if T > 1 else True
    assert s.tilde_beta[1] == 0.0
    assert np.all(s.tilde_beta[1:] <= s.beta[1:])
    expect = s.beta[1:] * (1 - np.r_[1.0, ab[:-1]]) / (1 - ab)
    np.testing.assert_allclose(s.tilde_beta[1:], expect, rtol=1e-14)


def test_forward_diffuse_examples():
    s = d.make_schedule(100)
    x0 = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(d.forward_diffuse(x0, 40, np.zeros_like(x0), s), np.sqrt(s.alpha_bar[40]) * x0)
    long = d.make_schedule(1000)
    assert long.alpha_bar[1000] < 1e-4
    eps = np.random.default_rng(0).normal(size=(3, 2))
    assert np.linalg.norm(d.forward_diffuse(x0, 1000, eps, long) - eps) < 0.05
    custom = d.NoiseSchedule(1, np.array([0.0, 0.19]), np.array([1.0, 0.81]), np.array([1.0, 0.81]),
                             np.array([0.0, 0.0]))
    out = d.forward_diffuse(np.ones((2, 2)), 1, np.ones((2, 2)), custom)
    np.testing.assert_allclose(out, 0.9 + np.sqrt(0.19), rtol=1e-15)
    with pytest.raises(ValueError):
        d.forward_diffuse(x0, 0, np.zeros_like(x0), s)
    with pytest.raises(ValueError):
        d.forward_diffuse(x0, 1, np.zeros((2, 2)), s)


def test_marginal_consistency_and_variance_preservation():
    s = d.make_schedule(100)
    rng = np.random.default_rng(0)
    n = 10_000
    x0 = 0.7
    x = np.full(n, x0)
    for t in range(1, 101):
        x = d.forward_step(x, t, rng.standard_normal(n), s)
        if t in (1, 50, 100):
            var = 1 - s.alpha_bar[t]
            assert abs(x.mean() - np.sqrt(s.alpha_bar[t]) * x0) < 3 * np.sqrt(var / n)
            assert abs(x.var(ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1))
    z = rng.standard_normal(n)
    for t in (1, 10, 50, 100):
        xt = d.forward_diffuse(z, t, rng.standard_normal(n), s)
        assert abs(xt.var() - 1.0) < 0.05


def test_training_loss_examples():
    rng = np.random.default_rng(0)
    model = d.init_model((8, 2), d.DiffusionConfig(T=50))
    x0 = rng.standard_normal((64, 8, 2))
    loss, grads = d.training_loss(model, x0, 0.5, np.random.default_rng(1))
    assert abs(loss - 1.0) < 0.2
    assert len(grads) == len(model.net.params())
    again, _ = d.training_loss(model, x0, 0.5, np.random.default_rng(1))
    assert again == loss

    # with x0 = 0 the noisy input is sqrt(1 - alpha_bar) * eps, so eps is recoverable exactly
    ab = model.schedule.alpha_bar
    oracle = lambda x_t, t, c: x_t / np.sqrt(1 - ab[t])[:, None, None]
    zero_loss, none = d.training_loss(model, np.zeros((16, 8, 2)), 0.0, rng, predictor=oracle)
    assert zero_loss == pytest.approx(0.0, abs=1e-24) and none is None
    with pytest.raises(ValueError):
        d.training_loss(model, np.zeros((4, 8, 3)), 0.0, rng)


def test_training_loss_gradient_matches_finite_difference():
    model = d.init_model((3, 1), d.DiffusionConfig(T=10, hidden=(5,)))
    model.net.set_flat(np.random.default_rng(2).normal(0, 0.3, model.net.n_params))
    x0 = np.random.default_rng(3).standard_normal((4, 3, 1))
    _, grads = d.training_loss(model, x0, 0.3, np.random.default_rng(9))
    flat = np.concatenate([g.ravel() for g in grads])
    base = model.net.flat()
    h = 1e-6
    for i in range(0, base.size, 7):
        vals = []
        for sign in (1, -1):
            p = base.copy()
            p[i] += sign * h
            model.net.set_flat(p)
            vals.append(d.training_loss(model, x0, 0.3, np.random.default_rng(9))[0])
        model.net.set_flat(base)
        assert flat[i] == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-5, abs=1e-9)


def test_train_zero_epochs_and_determinism():
    x = np.random.default_rng(0).standard_normal((10, 4, 2))
    cfg0 = d.DiffusionConfig(T=10, epochs=0, seed=3)
    m0 = d.train(x, np.zeros(10), cfg0)
    assert m0.net.flat().tobytes() == d.init_model((4, 2), cfg0).net.flat().tobytes()
    cfg = d.DiffusionConfig(T=10, epochs=5, seed=3)
    a, b = d.train(x, np.zeros(10), cfg), d.train(x, np.zeros(10), cfg)
    assert a.net.flat().tobytes() == b.net.flat().tobytes()
    assert a.meta["losses"] == b.meta["losses"]
    with pytest.raises(ValueError):
        d.train(np.zeros((0, 4, 2)), [], cfg)
    with pytest.raises(ValueError):
        d.train(x, np.zeros(3), cfg)


def test_overfit_oracle(overfit_model):
    assert overfit_model.meta["losses"][-1] < 0.1
    samples = d.sample(overfit_model, 100, 0.5, seed=1)
    assert np.abs(samples.mean(axis=0) - MEMORIZED).max() < 0.15


def test_reverse_step_examples():
    model = d.init_model((2, 2), d.DiffusionConfig(T=10))
    zero = lambda x, t, c: np.zeros_like(x)
    x1 = np.array([[0.3, -1.2], [2.0, 0.1]])
    np.testing.assert_allclose(d.reverse_step(model, x1, 1, 0.5, None, zero), x1 / np.sqrt(model.schedule.alpha[1]))
    z = np.ones((2, 2))
    np.testing.assert_array_equal(d.reverse_step(model, x1, 1, 0.5, z), d.reverse_step(model, x1, 1, 0.5, np.zeros((2, 2))))
    a = d.reverse_step(model, x1, 5, 0.5, np.zeros((2, 2)))
    np.testing.assert_array_equal(a, d.reverse_step(model, x1, 5, 0.5, np.zeros((2, 2))))
    # noise term uses the posterior variance
    s = model.schedule
    b = d.reverse_step(model, x1, 5, 0.5, z, zero)
    np.testing.assert_allclose(b, x1 / np.sqrt(s.alpha[5]) + np.sqrt(s.tilde_beta[5]), rtol=1e-14)
    eps_hat = lambda x, t, c: np.full_like(x, 0.4)
    mu = (x1 - s.beta[7] / np.sqrt(1 - s.alpha_bar[7]) * 0.4) / np.sqrt(s.alpha[7])
    np.testing.assert_allclose(d.reverse_step(model, x1, 7, 0.5, 0 * z, eps_hat), mu, rtol=1e-14)
    with pytest.raises(ValueError):
        d.reverse_step(model, x1, 11, 0.5, z)


def test_sample_determinism_and_streams():
    model = d.init_model((4, 2), d.DiffusionConfig(T=15, seed=1))
    model.net.weights[-1][...] = np.random.default_rng(0).normal(0, 0.05, model.net.weights[-1].shape)
    a, b = d.sample(model, 6, 0.7, seed=5), d.sample(model, 6, 0.7, seed=5)
    assert a.tobytes() == b.tobytes()
    # sample i depends only on (seed, i)
    np.testing.assert_allclose(d.sample(model, 3, 0.7, seed=5), a[:3], rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        d.sample(model, 1, 1.5, seed=0)


def test_sample_nonfinite_names_step():
    model = d.init_model((2, 1), d.DiffusionConfig(T=5))
    bad = lambda x, t, c: np.full_like(x, np.inf) if t[0] == 3 else np.zeros_like(x)
    with pytest.raises(d.NumericalError, match="t=3"):
        d.sample(model, 2, 0.0, seed=0, predictor=bad)


def _zero_predictor_variance(s):
    v = 1.0
    for t in range(s.T, 0, -1):
        v = v / s.alpha[t] + (s.tilde_beta[t] if t > 1 else 0.0)
    return v


def test_untrained_sampler_is_centered():
    model = d.init_model((8, 1), d.DiffusionConfig(T=100))
    samples = d.sample(model, 500, 0.5, seed=0)[:, :, 0]
    # zero-initialized output layer: the untrained predictor is exactly 0
    assert np.all(d.predict_noise(model, samples[:, :, None], 50, 0.5) == 0)
    var = _zero_predictor_variance(model.schedule)
    assert np.abs(samples.mean(axis=0)).max() < 4 * np.sqrt(var / 500)
    assert abs(samples.var() / var - 1) < 0.05


@pytest.mark.xfail(strict=True, reason="eps=0 reverse chain inflates variance to ~4.4, so SE of each "
                   "mean is ~0.094 and the 0.1 bound on the max of 8 means does not hold")
def test_untrained_sampler_mean_within_literal_tolerance():
    model = d.init_model((8, 1), d.DiffusionConfig(T=100))
    samples = d.sample(model, 500, 0.5, seed=0)
    assert np.abs(samples.mean(axis=0)).max() < 0.1


def test_conditioning_effect(two_regime):
    model, stats = two_regime

    def cum(c):
        r = stats.destandardize(d.sample(model, 200, c, seed=11))
        return (np.prod(1 + r, axis=1) - 1).mean()

    assert cum(1.0) < cum(0.0)


def test_synthetic_to_prices():
    unit = StandardizationStats(np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(d.synthetic_to_prices(np.zeros((4, 2)), unit, [10.0, 20.0]),
                                  np.tile([10.0, 20.0], (4, 1)))
    p = d.synthetic_to_prices(np.array([[0.1], [-0.1]]), StandardizationStats(np.zeros(1), np.ones(1)), [100.0])
    np.testing.assert_allclose(p[:, 0], [110.0, 99.0], rtol=1e-15)
    clipped = d.synthetic_to_prices(np.array([[-0.9], [5.0]]), StandardizationStats(np.zeros(1), np.ones(1)), [100.0])
    np.testing.assert_allclose(clipped[:, 0], [50.0, 100.0])
    with pytest.raises(ValueError):
        d.synthetic_to_prices(np.zeros((2, 1)), unit, [0.0])


def test_checkpoint_and_sample_csv(tmp_path, overfit_model):
    overfit_model.stats = StandardizationStats(np.zeros(1), np.ones(1))
    overfit_model.save(tmp_path / "m.json")
    back = d.DdpmModel.load(tmp_path / "m.json")
    assert back.net.flat().tobytes() == overfit_model.net.flat().tobytes()
    assert back.schedule.T == 20 and back.window_shape == (8, 1)
    s = d.sample(back, 2, 0.5, seed=0)
    d.write_samples_csv(tmp_path / "s.csv", s, 0.5)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "sample_id,step,asset,intensity,value" and len(lines) == 1 + 2 * 8
    assert float(lines[1].split(",")[-1]) == s[0, 0, 0]
