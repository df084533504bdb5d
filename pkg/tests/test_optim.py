import numpy as np
import pytest

from spectral_damp import models, optim
from spectral_damp.lanczos import SpectralDecomposition


def spd_matrix(p, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, p))
    return a @ a.T / p + 0.1 * np.eye(p)


# ---------------------------------------------------------------- schedules


def test_flat_schedule_constant():
    s = optim.ScheduleSpec(kind="flat", alpha0=0.3, total=100)
    assert all(optim.schedule_lr(s, t) == 0.3 for t in (0, 17, 50, 99, 100, 200))


def test_linear_decay_profile():
    a0 = 0.02
    s = optim.ScheduleSpec(kind="linear_decay", alpha0=a0, total=1000, r=0.01)
    assert optim.schedule_lr(s, 0) == a0
    assert optim.schedule_lr(s, 500) == a0
    # at u = 0.7, halfway through the ramp: a0 * (1 + 0.01) / 2
    assert optim.schedule_lr(s, 700) == pytest.approx(a0 * 0.505)
    assert optim.schedule_lr(s, 900) == pytest.approx(a0 * 0.01)
    assert optim.schedule_lr(s, 950) == pytest.approx(a0 * 0.01)


def test_warmup_profile():
    a0 = 0.1
    s = optim.ScheduleSpec(kind="warmup", alpha0=a0, total=1000, r=0.01, kappa=5.0)
    assert optim.schedule_lr(s, 0) == a0
    assert optim.schedule_lr(s, 100) == a0
    # ramp midpoint u = 0.2: a0 * (1 + 4 * 0.5)
    assert optim.schedule_lr(s, 200) == pytest.approx(3.0 * a0)
    assert optim.schedule_lr(s, 300) == pytest.approx(5.0 * a0)
    assert optim.schedule_lr(s, 950) == pytest.approx(0.01 * a0)


def test_schedule_continuity():
    # piecewise segments meet at the knots
    for kind in ("linear_decay", "warmup"):
        s = optim.ScheduleSpec(kind=kind, alpha0=1.0, total=10_000)
        ts = np.arange(10_001)
        lrs = np.array([optim.schedule_lr(s, t) for t in ts])
        jumps = np.abs(np.diff(lrs))
        assert jumps.max() < 5e-3


def test_schedule_validation():
    with pytest.raises(ValueError):
        optim.ScheduleSpec(kind="cosine", alpha0=0.1, total=10)
    with pytest.raises(ValueError):
        optim.ScheduleSpec(kind="flat", alpha0=0.0, total=10)


def test_config_default_schedule_is_flat():
    cfg = optim.OptimConfig(alpha0=0.05)
    assert cfg.lr(0) == 0.05
    assert cfg.lr(10_000) == 0.05


# -------------------------------------------------------------- first order


def test_sgd_plain_step():
    cfg = optim.OptimConfig(alpha0=0.1, rho=0.0)
    st = optim.init_state(np.array([1.0, -2.0]))
    g = np.array([0.5, 0.5])
    st2 = optim.sgd_step(st, g, cfg)
    assert np.allclose(st2.w, [1.0 - 0.05, -2.0 - 0.05])
    assert st2.t == 1
    # input state untouched
    assert np.allclose(st.w, [1.0, -2.0])


def test_sgd_momentum_accumulates():
    cfg = optim.OptimConfig(alpha0=1.0, rho=0.9)
    st = optim.init_state(np.zeros(1))
    g1, g2 = np.array([1.0]), np.array([2.0])
    st = optim.sgd_step(st, g1, cfg)
    assert np.allclose(st.momentum, [1.0])
    st = optim.sgd_step(st, g2, cfg)
    assert np.allclose(st.momentum, [0.9 * 1.0 + 2.0])
    assert np.allclose(st.w, [-(1.0) - (2.9)])


def test_weight_decay_coupled_vs_decoupled():
    w0 = np.array([2.0])
    g = np.array([0.0])
    coupled = optim.OptimConfig(alpha0=0.1, gamma=0.5, decouple_wd=False)
    st = optim.sgd_step(optim.init_state(w0), g, coupled)
    assert np.allclose(st.w, [2.0 - 0.1 * 0.5 * 2.0])
    decoupled = optim.OptimConfig(alpha0=0.1, gamma=0.5, decouple_wd=True)
    st2 = optim.sgd_step(optim.init_state(w0), g, decoupled)
    assert np.allclose(st2.w, [2.0 * (1.0 - 0.1 * 0.5)])


def test_adam_zero_gradient_is_noop():
    cfg = optim.OptimConfig(alpha0=0.1, delta=0.0)
    st = optim.init_state(np.array([3.0, -1.0]))
    st2 = optim.adam_step(st, np.zeros(2), cfg)
    # 0/0 guarded: parameters unchanged even with delta = 0
    assert np.array_equal(st2.w, st.w)


def test_adam_matches_reference_implementation():
    rng = np.random.default_rng(0)
    cfg = optim.OptimConfig(alpha0=0.01, delta=1e-8, beta1=0.9, beta2=0.999)
    w = rng.standard_normal(5)
    st = optim.init_state(w)
    m = np.zeros(5)
    v = np.zeros(5)
    wr = w.copy()
    for t in range(1, 8):
        g = rng.standard_normal(5)
        st = optim.adam_step(st, g, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.999**t)
        wr = wr - 0.01 * mh / (np.sqrt(vh) + 1e-8)
        assert np.allclose(st.w, wr, atol=1e-12)


def test_adam_delta_placement_differs():
    cfg_out = optim.OptimConfig(alpha0=0.1, delta=0.5, adam_delta_inside_sqrt=False)
    cfg_in = optim.OptimConfig(alpha0=0.1, delta=0.5, adam_delta_inside_sqrt=True)
    g = np.array([1.0])
    a = optim.adam_step(optim.init_state(np.zeros(1)), g, cfg_out)
    b = optim.adam_step(optim.init_state(np.zeros(1)), g, cfg_in)
    assert not np.allclose(a.w, b.w)
    # first step closed forms: m_hat = g, v_hat = g^2
    assert np.isclose(a.w[0], -0.1 * 1.0 / (1.0 + 0.5))
    assert np.isclose(b.w[0], -0.1 * 1.0 / np.sqrt(1.0 + 0.5))


# ------------------------------------------------------------ damped update


def test_lanczos_step_full_rank_matches_dense_inverse():
    p = 12
    h = spd_matrix(p, 1)
    mspec = models.quadratic_spec(h)
    rng = np.random.default_rng(2)
    w0 = rng.standard_normal(p)
    delta, eta, lr = 0.5, 2.0, 0.1
    cfg = optim.OptimConfig(alpha0=lr, delta=delta, eta=eta, k=p, seed=0)
    st, ev = optim.lanczos_opt_step(optim.init_state(w0), mspec, None, None, cfg)
    vals, vecs = np.linalg.eigh(h)
    g = h @ w0
    want = w0 - lr * (vecs @ ((vecs.T @ g) / (eta * (np.maximum(vals, 0.0) + delta))))
    assert np.allclose(st.w, want, atol=1e-8)
    assert np.isclose(ev.loss, 0.5 * w0 @ h @ w0)


def test_lanczos_step_partial_rank_split():
    # sharp directions scaled by 1/(eta (lam + delta)), remainder by 1/delta
    p, k = 30, 8
    h = spd_matrix(p, 3)
    mspec = models.quadratic_spec(h)
    rng = np.random.default_rng(4)
    w0 = rng.standard_normal(p)
    delta, eta, lr = 0.2, 3.0, 0.05
    cfg = optim.OptimConfig(alpha0=lr, delta=delta, eta=eta, k=k, seed=7)
    st, _ = optim.lanczos_opt_step(optim.init_state(w0), mspec, None, None, cfg)
    dec = st.decomp
    g = h @ w0
    coeffs = dec.vectors.T @ g
    flat = g - dec.vectors @ coeffs
    lam = np.maximum(dec.values, 0.0)
    want = w0 - lr * (dec.vectors @ (coeffs / (eta * (lam + delta))) + flat / delta)
    assert np.allclose(st.w, want, atol=1e-10)


def test_negative_curvature_clamped():
    h = np.diag([4.0, -2.0])
    mspec = models.quadratic_spec(h)
    w0 = np.array([1.0, 1.0])
    delta = 0.5
    cfg = optim.OptimConfig(alpha0=1.0, delta=delta, eta=1.0, k=2, seed=0)
    st, _ = optim.lanczos_opt_step(optim.init_state(w0), mspec, None, None, cfg)
    g = h @ w0  # (4, -2)
    # negative eigenvalue treated as zero curvature: scale 1/delta, not 1/(lam+delta)
    want = w0 - np.array([g[0] / (4.0 + delta), g[1] / delta])
    assert np.allclose(st.w, want, atol=1e-9)


def test_lanczos_step_delta_override():
    h = np.diag([1.0, 2.0])
    mspec = models.quadratic_spec(h)
    cfg = optim.OptimConfig(alpha0=0.1, delta=1.0, eta=1.0, k=2, seed=0)
    base = optim.init_state(np.array([1.0, 1.0]))
    a, _ = optim.lanczos_opt_step(base, mspec, None, None, cfg)
    b, _ = optim.lanczos_opt_step(base, mspec, None, None, cfg, delta=10.0)
    assert not np.allclose(a.w, b.w)
    with pytest.raises(ValueError):
        optim.lanczos_opt_step(base, mspec, None, None, cfg, delta=0.0)


def test_lanczos_step_refresh_interval_reuses_basis():
    h = spd_matrix(10, 5)
    mspec = models.quadratic_spec(h)
    cfg = optim.OptimConfig(alpha0=0.01, delta=0.5, eta=1.0, k=4, refresh_every=3, seed=1)
    st = optim.init_state(np.random.default_rng(6).standard_normal(10))
    st, _ = optim.lanczos_opt_step(st, mspec, None, None, cfg)  # t=0: computes
    d0 = st.decomp
    st, _ = optim.lanczos_opt_step(st, mspec, None, None, cfg)  # t=1: reuses
    assert st.decomp is d0
    st, _ = optim.lanczos_opt_step(st, mspec, None, None, cfg)  # t=2: reuses
    assert st.decomp is d0
    st, _ = optim.lanczos_opt_step(st, mspec, None, None, cfg)  # t=3: refresh
    assert st.decomp is not d0


def test_lanczos_step_deterministic():
    h = spd_matrix(15, 8)
    mspec = models.quadratic_spec(h)
    w0 = np.random.default_rng(9).standard_normal(15)
    cfg = optim.OptimConfig(alpha0=0.05, delta=0.1, eta=1.0, k=6, seed=3)
    a, _ = optim.lanczos_opt_step(optim.init_state(w0), mspec, None, None, cfg)
    b, _ = optim.lanczos_opt_step(optim.init_state(w0), mspec, None, None, cfg)
    assert np.array_equal(a.w, b.w)


def test_lanczos_step_descends_quadratic():
    h = spd_matrix(20, 10)
    mspec = models.quadratic_spec(h)
    cfg = optim.OptimConfig(alpha0=0.3, delta=0.05, eta=1.0, k=20, seed=0)
    st = optim.init_state(np.random.default_rng(11).standard_normal(20))
    losses = []
    for _ in range(30):
        st, ev = optim.lanczos_opt_step(st, mspec, None, None, cfg)
        losses.append(ev.loss)
    assert losses[-1] < 1e-3 * losses[0]


# ------------------------------------------------------------- diagnostics


def fake_decomp(values, dim):
    values = np.asarray(values, dtype=np.float64)
    k = len(values)
    vecs = np.eye(dim)[:, :k]
    return SpectralDecomposition(
        values=values,
        vectors=vecs,
        residuals=np.zeros(k),
        flagged=np.zeros(k, dtype=bool),
    )


def test_r_est_curv_cases():
    assert optim.r_est_curv(None, 0.1) == 1.0
    # partial decomposition: untouched complement pins lam_min at 0
    dec = fake_decomp([10.0, 2.0], dim=5)
    assert optim.r_est_curv(dec, 0.1) == pytest.approx((10.0 + 0.1) / 0.1)
    # full decomposition uses the smallest clamped eigenvalue
    full = fake_decomp([10.0, 2.0, 1.0], dim=3)
    assert optim.r_est_curv(full, 0.1) == pytest.approx(10.1 / 1.1)
    neg = fake_decomp([5.0, -3.0], dim=2)
    assert optim.r_est_curv(neg, 0.5) == pytest.approx(5.5 / 0.5)
    with pytest.raises(ValueError):
        optim.r_est_curv(dec, 0.0)


def test_stable_lr_bound_gd():
    h = np.diag([4.0, 1.0])
    # identity preconditioner: classic 2 / lam_max
    assert optim.stable_lr_bound(h, np.ones(2)) == pytest.approx(0.5)


def test_stable_lr_bound_perfect_preconditioner():
    h = np.diag([9.0, 4.0, 1.0])
    vals = np.array([9.0, 4.0, 1.0])
    # preconditioner eigenvalues equal to the curvature: bound is exactly 2
    assert optim.stable_lr_bound(h, vals) == pytest.approx(2.0)


def test_stable_lr_bound_damped():
    h = np.diag([10.0, 1.0])
    vals = np.array([10.0, 1.0])
    delta = 0.5
    want = 2.0 / max(10.0 / 10.5, 1.0 / 1.5)
    assert optim.stable_lr_bound(h, vals, delta=delta) == pytest.approx(want)


def test_stable_lr_bound_with_basis():
    h = np.diag([4.0, 1.0])
    basis = np.eye(2)[:, ::-1]  # evaluate along swapped axes
    got = optim.stable_lr_bound(h, np.array([1.0, 1.0]), basis=basis)
    assert got == pytest.approx(0.5)


def test_stable_lr_bound_validates():
    with pytest.raises(ValueError):
        optim.stable_lr_bound(np.eye(2), np.array([0.0, 1.0]), delta=0.0)
    assert optim.stable_lr_bound(np.zeros((2, 2)), np.ones(2)) == np.inf


def test_gd_stability_bracket_on_quadratic():
    # empirical check of the 2/lam_max boundary with plain gradient steps
    h = np.diag([4.0, 1.0])
    mspec = models.quadratic_spec(h)
    for alpha, should_diverge in ((0.45, False), (0.55, True)):
        cfg = optim.OptimConfig(alpha0=alpha)
        st = optim.init_state(np.array([1.0, 1.0]))
        for _ in range(300):
            ev = models.batch_loss_grad(mspec, st.w, None, None)
            st = optim.sgd_step(st, ev.grad, cfg)
        assert (np.linalg.norm(st.w) > 10.0) == should_diverge
