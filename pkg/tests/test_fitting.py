import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from puq import diffnum as dn
from puq import fitting, physics
from puq.fitting import FitMlp, MlpConfig
from puq.physics import SequencePreset

TE = np.array(SequencePreset.t2prep().timings)
TI = np.array(SequencePreset.molli().timings)
RATIO = SequencePreset.molli().inversion_ratio


# --- least-squares oracles ---------------------------------------------------


def test_t2_round_trip_grid():
    t2 = np.linspace(40, 250, 50)
    s = physics.t2prep_signal(1.0, t2[:, None], TE)
    pd, est = fitting.lsq_fit_t2(s, TE)
    np.testing.assert_allclose(est, t2, rtol=1e-6)
    np.testing.assert_allclose(pd, 1.0, rtol=1e-6)


def test_t2_two_point_closed_form():
    pd, t2 = fitting.lsq_fit_t2([1.0, np.exp(-1.0)], [0.0, 100.0])
    assert t2 == pytest.approx(100.0, rel=1e-12) and pd == pytest.approx(1.0, rel=1e-12)


def test_t2_degenerate_cases():
    _, t2 = fitting.lsq_fit_t2(np.full(8, 0.7), TE)
    assert t2 == fitting.T2_CLAMP[1]
    pd, t2 = fitting.lsq_fit_t2(np.zeros(8), TE)
    assert (pd, t2) == (0.0, fitting.T2_CLAMP[0])
    with pytest.raises(ValueError):
        fitting.lsq_fit_t2([1.0], [0.0])


def test_t2_noisy_matches_generic_solver():
    from scipy.optimize import least_squares

    rng = np.random.default_rng(0)
    for t2 in (60.0, 120.0, 200.0):
        s = physics.t2prep_signal(0.9, t2, TE) + 0.02 * rng.standard_normal(TE.size)
        pd_hat, t2_hat = fitting.lsq_fit_t2(s, TE)
        ref = least_squares(lambda x: x[0] * np.exp(-TE / x[1]) - s, [1.0, 100.0], xtol=1e-14, ftol=1e-14)
        np.testing.assert_allclose([pd_hat, t2_hat], ref.x, rtol=1e-6)


def test_molli_round_trip_grid():
    t1 = np.linspace(300, 2000, 50)
    t1s = t1 / (RATIO - 1)
    s = physics.molli_signal(1.0, RATIO, t1s[:, None], TI)
    a, b, est = fitting.lsq_fit_t1_molli(s, TI)
    np.testing.assert_allclose(est, t1, rtol=1e-6)


def test_molli_reference_parameters():
    s = physics.molli_signal(1.0, 2.0, 1000.0, TI)
    a, b, t1 = fitting.lsq_fit_t1_molli(s, TI)
    np.testing.assert_allclose([a, b, t1], [1.0, 2.0, 1000.0], rtol=1e-6)


def test_molli_scale_homogeneity():
    s = physics.molli_signal(1.0, 2.4, 700.0, TI)
    a1, b1, t1 = fitting.lsq_fit_t1_molli(s, TI)
    a2, b2, t2 = fitting.lsq_fit_t1_molli(3.5 * s, TI)
    assert t2 == pytest.approx(t1, rel=1e-8)
    np.testing.assert_allclose([a2, b2], [3.5 * a1, 3.5 * b1], rtol=1e-8)


def test_molli_degenerate_and_invalid():
    a, b, t1 = fitting.lsq_fit_t1_molli(np.full(8, 0.4), TI)
    assert (b, t1) == (0.0, fitting.T1_CLAMP[0])
    with pytest.raises(ValueError):
        fitting.lsq_fit_t1_molli([1.0, 2.0], [100.0, 200.0])


def test_parameter_map_on_phantom():
    spec = physics.random_phantom_spec(24, 24, 1)
    t1, t2, pd, fg = physics.make_phantom(spec)
    mags = physics.phase_signals(t1, t2, pd, SequencePreset.t2prep())
    est = fitting.lsq_parameter_map(mags, "T2prep", TE, fg)
    np.testing.assert_allclose(est[fg], t2[fg], rtol=1e-6)
    assert np.all(est[~fg] == 0)


# --- normalization and datasets -------------------------------------------


def test_normalize_unit_first_phase_unchanged():
    s = np.array([1.0, 0.5, 0.2])
    u = np.array([0.1, 0.1, 0.3])
    ns, nu, valid = fitting.normalize_pixel(s, u, threshold=0.0)
    np.testing.assert_array_equal(ns, s)
    np.testing.assert_array_equal(nu, u)
    assert valid


def test_normalize_zero_first_phase_guarded():
    ns, nu, valid = fitting.normalize_pixel(np.array([0.0, 1e-9]), np.array([0.0, 1e-9]), threshold=0.0)
    assert not valid
    np.testing.assert_allclose(ns, [0.0, 1e-9 / fitting.NORM_EPS])


def test_normalize_threshold_default():
    s = np.array([[1.0, 0.5], [1.0, 0.4], [0.01, 0.0]])
    _, _, valid = fitting.normalize_pixel(s, np.zeros_like(s))
    np.testing.assert_array_equal(valid, [True, True, False])


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_normalize_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.1, 2.0, 8)
    u = rng.uniform(0, 0.1, 8)
    a = fitting.normalize_pixel(s, u, threshold=0.0)
    b = fitting.normalize_pixel(c * s, c * u, threshold=0.0)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)


def _stack(seed=0, s=2, p=8, h=6, w=6):
    rng = np.random.default_rng(seed)
    mean = rng.uniform(0.2, 1.0, (s, p, h, w)) * np.exp(1j * rng.uniform(0, 6, (s, p, h, w)))
    sigma = rng.uniform(0, 0.05, (s, p, h, w))
    fg = rng.uniform(size=(s, h, w)) > 0.3
    target = rng.uniform(40, 250, (s, h, w))
    return mean, sigma, target, fg


def test_dataset_widths_and_counts():
    mean, sigma, target, fg = _stack()
    g = fitting.build_fit_dataset(mean, sigma, target, fg, guided=True)
    u = fitting.build_fit_dataset(mean, sigma, target, fg, guided=False)
    assert g.inputs.shape == (fg.sum(), 16) and u.inputs.shape == (fg.sum(), 8)
    np.testing.assert_array_equal(g.inputs[:, :8], u.inputs)
    np.testing.assert_allclose(g.inputs[:, 0], 1.0, rtol=1e-6)
    np.testing.assert_array_equal(g.targets, target[fg])


def test_dataset_rejects_empty_foreground_and_bad_shapes():
    mean, sigma, target, fg = _stack()
    with pytest.raises(ValueError):
        fitting.build_fit_dataset(mean, sigma, target, np.zeros_like(fg), True)
    with pytest.raises(ValueError):
        fitting.build_fit_dataset(mean, sigma[:, :4], target, fg, True)


# --- MLP ---------------------------------------------------------------------


def test_mlp_structure():
    g = FitMlp(MlpConfig(guided=True))
    u = FitMlp(MlpConfig(guided=False))
    assert [w.shape for w, _ in g.layers] == [(64, 16), (64, 64), (64, 64), (64, 64), (1, 64)]
    assert u.layers[0][0].shape == (64, 8)


def test_cosine_schedule():
    assert dn.cosine_lr(1e-3, 0, 200) == 1e-3
    assert dn.cosine_lr(1e-3, 100, 200) == pytest.approx(5e-4)
    assert dn.cosine_lr(1e-3, 199, 200) < 1e-6


def _constant_ds(guided, n=256):
    p = 8
    x = np.tile(np.linspace(1.0, 0.3, p), (n, 1))
    if guided:
        x = np.concatenate([x, np.full((n, p), 0.01)], axis=1)
    return fitting.FitDataset(x.astype(np.float32), np.full(n, 100.0), np.ones(n, bool), guided)


def test_constant_target_regression_and_prediction():
    cfg = MlpConfig(guided=False, epochs=200, batch_size=64, seed=3)
    mlp, curve = fitting.train_fit_mlp(_constant_ds(False), cfg)
    assert curve[-1] <= curve[0]
    mag = np.tile(np.linspace(1.0, 0.3, 8)[:, None, None], (1, 4, 4))
    fg = np.ones((4, 4), bool)
    fg[0, 0] = False
    out = fitting.predict_fit_mlp(mlp, mag, None, fg, guided=False, threshold=0.0)
    np.testing.assert_allclose(out.values[fg], 100.0, atol=1.0)
    assert out.values[0, 0] == 0


def test_mlp_training_deterministic_and_lr_zero():
    cfg = MlpConfig(guided=True, epochs=3, batch_size=50, seed=1)
    a, _ = fitting.train_fit_mlp(_constant_ds(True), cfg)
    b, _ = fitting.train_fit_mlp(_constant_ds(True), cfg)
    for x, y in zip(a.parameters(), b.parameters()):
        assert x.data.tobytes() == y.data.tobytes()
    c, _ = fitting.train_fit_mlp(_constant_ds(True), MlpConfig(guided=True, epochs=3, lr=0.0, seed=1))
    for x, y in zip(FitMlp(MlpConfig(guided=True, seed=1)).parameters(), c.parameters()):
        np.testing.assert_array_equal(x.data, y.data)


def test_mlp_guidance_mismatch_rejected():
    with pytest.raises(ValueError):
        fitting.train_fit_mlp(_constant_ds(True), MlpConfig(guided=False, epochs=1))
    mlp = FitMlp(MlpConfig(guided=True))
    mean, sigma, _, fg = _stack(s=1)
    with pytest.raises(ValueError):
        fitting.predict_fit_mlp(mlp, mean[0], sigma[0], fg[0], guided=False)
    # guided weights loaded into an unguided model fail the width check
    arrays = {(it, l, n): t.data for it, l, n, t in mlp.named_tensors()}
    with pytest.raises(ValueError):
        FitMlp(MlpConfig(guided=False)).load_arrays(arrays)


def test_mlp_nan_loss_aborts():
    ds = _constant_ds(False, 8)
    ds.targets[0] = np.nan
    with pytest.raises(FloatingPointError, match="epoch 0"):
        fitting.train_fit_mlp(ds, MlpConfig(guided=False, epochs=1))


def test_prediction_clamped_to_physical_range():
    mlp = FitMlp(MlpConfig(guided=False, param="T2"))
    w, b = mlp.layers[-1]
    w.data[:] = 0
    b.data[:] = -5.0
    out = fitting.predict_fit_mlp(mlp, np.ones((8, 3, 3)), None, np.ones((3, 3), bool), False, threshold=0.0)
    assert np.all(out.values == fitting.T2_CLAMP[0])


def test_guided_unguided_parity_at_zero_uncertainty():
    u = FitMlp(MlpConfig(guided=False, seed=4))
    g = FitMlp(MlpConfig(guided=True, seed=9))
    for (wg, bg), (wu, bu) in zip(g.layers, u.layers):
        if wg.shape[1] == 16:
            wg.data[:] = 0
            wg.data[:, :8] = wu.data
        else:
            wg.data[:] = wu.data
        bg.data[:] = bu.data
    mean, sigma, _, fg = _stack(s=1)
    zero = np.zeros_like(sigma[0])
    a = fitting.predict_fit_mlp(g, mean[0], zero, fg[0], True)
    b = fitting.predict_fit_mlp(u, mean[0], None, fg[0], False)
    np.testing.assert_array_equal(a.values, b.values)


# --- NLL uncertainty -------------------------------------------------------------


def test_combine_pure_aleatoric():
    x = np.ones((5, 2, 3)) * (1 + 2j)
    np.testing.assert_allclose(fitting.combine_uncertainty_nll_md(x, np.full(x.shape, 0.25)), 0.5)


def test_combine_pure_epistemic_matches_population_sigma():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 3, 4)) + 1j * rng.standard_normal((7, 3, 4))
    ref = np.sqrt(np.mean(np.abs(x - x.mean(0)) ** 2, axis=0))
    np.testing.assert_allclose(fitting.combine_uncertainty_nll_md(x, np.zeros(x.shape)), ref, rtol=1e-12)


def test_combine_components_add():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 2, 2)) + 1j * rng.standard_normal((6, 2, 2))
    v = rng.uniform(0, 1, x.shape)
    epi = np.mean(np.abs(x - x.mean(0)) ** 2, axis=0)
    total = fitting.combine_uncertainty_nll_md(x, v) ** 2
    np.testing.assert_allclose(total, epi + v.mean(0), rtol=1e-6)
    with pytest.raises(ValueError):
        fitting.combine_uncertainty_nll_md(x, v[:3])


def test_aleatoric_sigma():
    np.testing.assert_allclose(fitting.aleatoric_sigma(np.array([0.0, 2.0])), [1.0, np.e])
    assert np.all(fitting.aleatoric_sigma(np.array([-50.0])) > 0)
