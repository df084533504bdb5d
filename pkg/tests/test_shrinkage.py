import numpy as np
import pytest

from spectral_damp import models, rmt, shrinkage
from oracles import population_variance_of_matrices


def test_damping_shrinkage_correspondence():
    params = shrinkage.shrinkage_from_delta(1.0)
    assert params.beta == pytest.approx(0.5)
    assert params.kappa == pytest.approx(2.0)
    assert shrinkage.delta_from_shrinkage(0.5) == pytest.approx(1.0)
    assert shrinkage.shrinkage_from_delta(0.0).beta == 1.0


def test_identity_holds_for_random_spectra():
    # 1/(lam + delta) equals kappa^-1 / (beta lam + 1 - beta)
    rng = np.random.default_rng(0)
    for _ in range(200):
        delta = float(rng.uniform(0.001, 20.0))
        lam = float(rng.uniform(0.0, 50.0))
        params = shrinkage.shrinkage_from_delta(delta)
        lhs = 1.0 / (lam + delta)
        rhs = (1.0 / params.kappa) / (params.beta * lam + 1.0 - params.beta)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_shrunk_matrix_default_target():
    h = np.diag([3.0, 1.0])
    out = shrinkage.shrunk_matrix(h, beta=0.25)
    assert np.allclose(out, 0.25 * h + 0.75 * np.eye(2))
    tgt = np.diag([2.0, 2.0])
    out2 = shrinkage.shrunk_matrix(h, beta=0.5, target=tgt)
    assert np.allclose(out2, 0.5 * h + 0.5 * tgt)


def test_mse_curve_and_optimum():
    # E(beta) = beta^2 mu2 + (1-beta)^2, minimized at 1/(1+mu2)
    for mu2 in (0.0, 0.1, 1.0, 3.0, 10.0):
        bstar = shrinkage.optimal_beta(mu2)
        assert bstar == pytest.approx(1.0 / (1.0 + mu2))
        grid = np.linspace(1e-4, 1.0, 10001)
        vals = shrinkage.shrinkage_mse(grid, mu2)
        assert abs(grid[np.argmin(vals)] - bstar) < 2e-4
    assert shrinkage.optimal_beta(0.0) == 1.0
    assert shrinkage.optimal_damping(0.0) == 0.0
    assert shrinkage.optimal_beta(1.0) == pytest.approx(0.5)
    assert shrinkage.optimal_damping(1.0) == pytest.approx(1.0)


def test_matrix_second_moment():
    x = np.array([[1.0, 2.0], [2.0, -1.0]])
    # ||X||_F^2 / P = (1 + 4 + 4 + 1) / 2
    assert shrinkage.matrix_second_moment(x) == pytest.approx(5.0)


def test_second_moment_matches_ensemble_scale():
    # for the fluctuation ensemble E mu2 ~ s^2 = sigma^2 P / B
    spec = rmt.SpikedEnsembleSpec(p=256, b=64, sigma=1.0)
    vals = [shrinkage.matrix_second_moment(rmt.sample_fluctuation(spec, seed=i)) for i in range(10)]
    assert np.isclose(np.mean(vals), spec.s**2, rtol=0.1)


def test_estimate_variance_two_scalar_hessians():
    # two 1x1 matrices [1] and [3]: mean 2, variance (1+1)/2 = 1
    ops = [lambda v: 1.0 * v, lambda v: 3.0 * v]
    est = shrinkage.estimate_variance_from_ops(ops, dim=1, n_probes=4, seed=0)
    assert est == pytest.approx(1.0, abs=1e-12)


def test_estimate_variance_identical_hessians_zero():
    h = np.diag([2.0, 5.0, 1.0])
    ops = [lambda v: h @ v for _ in range(6)]
    est = shrinkage.estimate_variance_from_ops(ops, dim=3, n_probes=8, seed=1)
    assert est == pytest.approx(0.0, abs=1e-12)


def test_estimate_variance_matches_dense_oracle():
    rng = np.random.default_rng(2)
    mats = []
    base = rng.standard_normal((30, 30))
    base = (base + base.T) / 2
    for i in range(12):
        d = rng.standard_normal((30, 30)) * 0.3
        mats.append(base + (d + d.T) / 2)
    oracle = population_variance_of_matrices(mats)
    ops = [(lambda m: (lambda v: m @ v))(m) for m in mats]
    est = shrinkage.estimate_variance_from_ops(ops, dim=30, n_probes=64, seed=3)
    assert abs(est - oracle) / oracle < 0.15


def test_estimate_hessian_variance_on_model():
    rng = np.random.default_rng(4)
    spec = models.softmax_spec(n_features=6, n_classes=3)
    w = rng.standard_normal(spec.param_dim) * 0.3
    batches = []
    for i in range(8):
        x = rng.standard_normal((32, 6))
        y = rng.integers(0, 3, size=32)
        batches.append((x, y))
    est = shrinkage.estimate_hessian_variance(spec, w, batches, n_probes=32, seed=5)
    mats = [models.dense_hessian(spec, w, x, y) for x, y in batches]
    oracle = population_variance_of_matrices(mats)
    assert oracle > 0
    assert abs(est - oracle) / oracle < 0.2


def test_estimate_variance_requires_two_ops():
    with pytest.raises(ValueError):
        shrinkage.estimate_variance_from_ops([lambda v: v], dim=2, n_probes=4, seed=0)


def test_auto_damp_update_schedule():
    st = shrinkage.initial_damping_state(floor=0.01)
    assert st.delta == pytest.approx(0.01)
    # not due off-interval: state unchanged
    st2 = shrinkage.auto_damp_update(st, step=37, sigma_sq=9.0)
    assert st2.delta == st.delta
    assert not st.update_due(0)
    assert st.update_due(100)
    # EMA: 0.7 * 0.01 + 0.3 * 0.5 = 0.157
    st3 = shrinkage.auto_damp_update(st, step=100, sigma_sq=0.5)
    assert st3.delta == pytest.approx(0.7 * 0.01 + 0.3 * 0.5)
    assert st3.last_estimate == pytest.approx(0.5)
    step_rec, delta_rec = st3.history[-1]
    assert step_rec == 100
    assert delta_rec == pytest.approx(st3.delta)


def test_auto_damp_floor_modes():
    st = shrinkage.initial_damping_state(floor=0.1)
    # strict floor: tiny estimate cannot pull delta below floor
    st2 = shrinkage.auto_damp_update(st, step=100, sigma_sq=1e-8)
    assert st2.delta == pytest.approx(0.1)
    loose = shrinkage.DampingState(
        delta=0.1, floor=0.1, strict_floor=False, ema=0.0, update_interval=100
    )
    st3 = shrinkage.auto_damp_update(loose, step=100, sigma_sq=1e-8)
    # loose mode bottoms out at a fraction of the floor instead
    assert st3.delta == pytest.approx(shrinkage.LOOSE_FLOOR_FACTOR * 0.1)


def test_damping_state_validation():
    with pytest.raises(ValueError):
        shrinkage.DampingState(delta=0.0, floor=0.01)
    with pytest.raises(ValueError):
        shrinkage.DampingState(delta=0.1, floor=0.01, ema=1.0)
