import numpy as np
import pytest

from panelmix import engines as eng
from panelmix.engines import (EwmDemeaner, ewm_demean, ewm_weights, exact_dmd,
                              fit_diag_ar, fit_engine, fit_pca_basis,
                              fit_ridge_full, fit_ridge_var, forecast_residual,
                              kalman_gain, kalman_run, spectral_radius_clip)


def ar1_rows(rng, k, t, rho, scale=1.0):
    x = np.empty((k, t))
    x[:, 0] = rng.normal(0, scale / np.sqrt(1 - rho**2) if rho else scale, k)
    for s in range(1, t):
        x[:, s] = rho * x[:, s - 1] + rng.normal(0, scale, k)
    return x


# -- EWM demeaning -------------------------------------------------------------


def test_ewm_decay_closed_form():
    w = ewm_weights(30, 12.0)
    lam = 0.5 ** (1.0 / 12.0)
    assert abs(lam - 0.9438743126816935) < 1e-15
    # weight 12 quarters older is exactly half
    assert np.allclose(w[:-12] / w[12:], 0.5)
    assert abs(w.sum() - 1.0) < 1e-12


def test_ewm_constant_series():
    r = np.tile(np.array([[2.0], [-1.0]]), (1, 9))
    demeaned, dm = ewm_demean(r, 12.0)
    assert np.allclose(demeaned, 0.0)
    assert np.allclose(dm.mean, [2.0, -1.0])


def test_ewm_infinite_half_life_limit(rng):
    # the gap to the simple mean is O(T / half_life)
    r = rng.standard_normal((4, 25))
    _, dm = ewm_demean(r, 1e6)
    assert np.allclose(dm.mean, r.mean(axis=1), atol=1e-4)
    _, dm = ewm_demean(r, 1e12)
    assert np.allclose(dm.mean, r.mean(axis=1), atol=1e-9)


# -- PCA basis -------------------------------------------------------------------


def test_pca_planted_rank_one(rng):
    v = rng.standard_normal(8)
    v /= np.linalg.norm(v)
    s = rng.standard_normal(40) * 3.0
    data = np.outer(v, s) + 1e-6 * rng.standard_normal((8, 40))
    basis = fit_pca_basis(data, 1, ewm_weights(40, 12.0))
    cosine = abs(float(basis.U[:, 0] @ v))
    assert cosine >= 1.0 - 1e-10


def test_pca_orthonormal_on_noise(rng):
    data = rng.standard_normal((10, 30))
    basis = fit_pca_basis(data, 2, ewm_weights(30, 12.0))
    assert np.allclose(basis.U.T @ basis.U, np.eye(2), atol=1e-10)


def test_pca_equal_weights_matches_eigendecomposition(rng):
    data = rng.standard_normal((7, 25))
    w = np.full(25, 1.0 / 25)
    basis = fit_pca_basis(data, 3, w)
    # brute-force oracle: eigendecomposition of the unweighted covariance
    cov = data @ data.T / 25
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, np.argsort(evals)[::-1][:3]]
    for k in range(3):
        cosine = abs(float(basis.U[:, k] @ top[:, k]))
        assert cosine >= 1.0 - 1e-8


def test_pca_rank_overflow():
    with pytest.raises(ValueError, match="rank overflow"):
        fit_pca_basis(np.zeros((4, 5)), 5, ewm_weights(5, 12.0))


def test_pca_sign_convention(rng):
    data = rng.standard_normal((6, 20))
    basis = fit_pca_basis(data, 2, ewm_weights(20, 12.0))
    for k in range(2):
        j = int(np.argmax(np.abs(basis.U[:, k])))
        assert basis.U[j, k] > 0


# -- exact DMD -------------------------------------------------------------------


def planted_linear_system(rng, n, k, t, radius=0.9):
    """x_{t+1} = M x_t with M of exact rank k and known nonzero spectrum."""
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    moduli = np.linspace(radius, 0.7, k)
    # real block-diagonal core: conjugate pairs as rotation blocks
    core = np.zeros((k, k))
    i = 0
    angles = np.linspace(0.3, 1.1, k)
    while i + 1 < k:
        r, th = moduli[i], angles[i]
        core[i : i + 2, i : i + 2] = r * np.array(
            [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        i += 2
    if i < k:
        core[i, i] = moduli[i]
    m = q @ core @ q.T
    x = np.empty((n, t))
    x[:, 0] = q @ rng.standard_normal(k)
    for s in range(1, t):
        x[:, s] = m @ x[:, s - 1]
    return x, np.linalg.eigvals(core)


def test_dmd_recovers_planted_spectrum(rng):
    data, true_eigs = planted_linear_system(rng, n=30, k=4, t=60)
    basis = exact_dmd(data, 4)
    got = np.sort_complex(basis.eigvals)
    want = np.sort_complex(true_eigs)
    assert np.max(np.abs(got - want)) < 1e-8


def test_dmd_scalar_oracle(rng):
    # one snapshot pair, K=1: the transition is <y,x>/<x,x> after projection on U
    x = rng.standard_normal(5)
    y = 0.7 * x
    data = np.column_stack([x, y])
    basis = exact_dmd(data, 1)
    u = basis.U[:, 0]
    expected = float((u @ y) * (u @ x)) / float((u @ x) ** 2)
    assert abs(float(basis.A_reduced[0, 0]) - expected) < 1e-12


def test_dmd_zero_matrix_rank_deficient():
    with pytest.raises(ValueError, match="rank deficient"):
        exact_dmd(np.zeros((6, 10)), 2)


def test_dmd_needs_k_plus_one_snapshots():
    with pytest.raises(ValueError, match="rank overflow"):
        exact_dmd(np.ones((6, 3)), 3)


# -- spectral radius clip ---------------------------------------------------------


def test_clip_worked_example():
    # modes at 1.05 and 0.90: after the clip the 0.90 mode sits at 0.8486
    a = np.diag([1.05, 0.90])
    clipped = spectral_radius_clip(a, 0.99)
    assert abs(clipped[1, 1] - 0.9 * 0.99 / 1.05) < 1e-12
    assert abs(clipped[1, 1] - 0.8486) < 5e-5


def test_clip_noop_below_cap():
    a = np.diag([0.5, -0.3])
    assert np.array_equal(spectral_radius_clip(a, 0.99), a)


def test_clip_identity():
    assert np.allclose(spectral_radius_clip(np.eye(3), 0.99), 0.99 * np.eye(3))


def test_clip_preserves_eigenvectors(rng):
    a = rng.standard_normal((4, 4)) * 0.6
    clipped = spectral_radius_clip(a, 0.2)
    va = np.linalg.eig(a).eigenvectors
    vc = np.linalg.eig(clipped).eigenvectors
    # uniform scaling: same eigenvectors up to ordering/phase
    assert np.allclose(np.abs(va.conj().T @ vc).max(axis=1), 1.0, atol=1e-8)
    radius = np.max(np.abs(np.linalg.eigvals(clipped)))
    assert radius <= 0.2 * (1 + 1e-12)


# -- reduced transitions -----------------------------------------------------------


def test_diag_ar_simulation_oracle():
    factors = ar1_rows(np.random.default_rng(61), 1, 500, 0.7)
    coef = fit_diag_ar(factors)[0, 0]
    assert 0.65 <= coef <= 0.75


def test_diag_ar_white_noise():
    factors = np.random.default_rng(62).standard_normal((1, 500))
    assert abs(fit_diag_ar(factors)[0, 0]) < 0.1


def test_diag_ar_zero_row():
    factors = np.zeros((2, 10))
    assert np.allclose(fit_diag_ar(factors), 0.0)


def test_ridge_var_penalty_dominates(rng):
    factors = rng.standard_normal((3, 50))
    fit = fit_ridge_var(factors, 1e12)
    assert np.max(np.abs(fit.coeffs)) < 1e-6


def test_ridge_var_recovers_planted_var(rng):
    a0 = spectral_radius_clip(rng.standard_normal((3, 3)), 0.8)
    f = np.empty((3, 300))
    f[:, 0] = rng.standard_normal(3)
    for s in range(1, 300):
        f[:, s] = a0 @ f[:, s - 1]  # noiseless: exact recovery at lam -> 0
    fit = fit_ridge_var(f, 1e-10)
    assert np.max(np.abs(fit.coeffs - a0)) < 1e-6


def test_ridge_var_matches_normal_equations(rng):
    f = rng.standard_normal((4, 40))
    fit = fit_ridge_var(f, 1.0)
    x, y = f[:, :-1], f[:, 1:]
    oracle = np.linalg.solve((x @ x.T + np.eye(4)).T, (y @ x.T).T).T
    assert np.allclose(fit.coeffs, oracle, atol=1e-10)


# -- Kalman filter -------------------------------------------------------------------


def small_basis(rng, n, k, data=None):
    data = rng.standard_normal((n, 30)) if data is None else data
    demeaned, dm = ewm_demean(data, 12.0)
    return exact_dmd(demeaned, k), dm, data


def test_kalman_zero_input():
    n, t = 6, 40
    residuals = np.zeros((n, t))
    u = np.eye(n)[:, :2]
    basis = eng.SubspaceBasis(u, 0.5 * np.eye(2), 2, 0.5 * np.ones(2, dtype=complex))
    dm = EwmDemeaner(12.0, ewm_weights(t, 12.0), np.zeros(n))
    forecasts, state = kalman_run(basis, dm, residuals, "diag")
    assert np.allclose(forecasts, 0.0)
    assert np.all(np.diag(state.Q) >= 1e-6)
    assert np.max(np.diag(state.Q)) < 0.01  # decayed from 0.5 toward the floor


def test_kalman_woodbury_equals_direct(rng):
    n, k = 12, 3
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    m = rng.standard_normal((k, k))
    p = m @ m.T + 0.1 * np.eye(k)
    for sigma2 in (0.5, 0.02):
        kw = kalman_gain(q, p, sigma2, "woodbury")
        kd = kalman_gain(q, p, sigma2, "direct")
        assert np.max(np.abs(kw - kd)) < 1e-9


def test_kalman_joseph_keeps_p_psd(rng):
    residuals = rng.standard_normal((10, 120))
    basis, dm, _ = small_basis(rng, 10, 3, residuals[:, :30])
    _, state = kalman_run(basis, dm, residuals, "full")
    assert np.allclose(state.P, state.P.T)
    assert np.min(np.linalg.eigvalsh(state.P)) >= -1e-10
    assert np.min(np.linalg.eigvalsh(state.Q)) >= -1e-10


def test_kalman_noiseless_limit_matches_projection(rng):
    # K = N, noiseless linear dynamics: filtered forecasts converge on U A U' r
    n = 6
    data, _ = planted_linear_system(rng, n=n, k=n, t=50, radius=0.9)
    demeaned, dm = ewm_demean(data, 1e6)
    basis = exact_dmd(demeaned, n)
    forecasts, state = kalman_run(basis, dm, data, "full")
    u, a = basis.U, basis.A_reduced
    f = spectral_radius_clip(a)
    # one-step forecast for the next column, from the filtered state
    pred = u @ (f @ state.alpha) + dm.mean
    direct = u @ (f @ (u.T @ (data[:, -1] - dm.mean))) + dm.mean
    assert np.max(np.abs(pred - direct)) < 1e-6


def test_kalman_divergence_reports_quarter():
    n = 4
    residuals = np.zeros((n, 10))
    residuals[:, 5] = np.inf
    u = np.eye(n)[:, :2]
    basis = eng.SubspaceBasis(u, 0.5 * np.eye(2), 2, 0.5 * np.ones(2, dtype=complex))
    dm = EwmDemeaner(12.0, ewm_weights(10, 12.0), np.zeros(n))
    with pytest.raises(FloatingPointError, match="quarter index 5"):
        kalman_run(basis, dm, residuals, "diag")


# -- full-dimension ridge --------------------------------------------------------------


def test_ridge_full_penalty_limit(rng):
    demeaned = rng.standard_normal((6, 20))
    coeffs = fit_ridge_full(demeaned, [1e12])
    assert np.max(np.abs(coeffs)) < 1e-6


def test_ridge_full_planted_dynamics():
    # r_{t+1} = 0.6 r_t + noise: the fitted map's one-step MSE on a fresh
    # trajectory stays within 5% of the oracle map's
    rng = np.random.default_rng(64)
    n = 10

    def trajectory(t):
        r = np.empty((n, t))
        r[:, 0] = rng.standard_normal(n) * 0.375
        for s in range(1, t):
            r[:, s] = 0.6 * r[:, s - 1] + 0.3 * rng.standard_normal(n)
        return r

    train = trajectory(100)
    demeaned, _ = ewm_demean(train, 1e6)
    coeffs = fit_ridge_full(demeaned)
    test = trajectory(2000)
    mse_model = np.mean((test[:, 1:] - coeffs @ test[:, :-1]) ** 2)
    mse_oracle = np.mean((test[:, 1:] - 0.6 * test[:, :-1]) ** 2)
    mse_zero = np.mean(test[:, 1:] ** 2)
    # estimating n^2=100 coefficients from 99 transitions floors the excess
    # risk near k/T ~ 10%; the fitted map must sit close to that floor and
    # decisively beat the no-dynamics forecast
    assert mse_model < 1.25 * mse_oracle
    assert mse_model < 0.8 * mse_zero


def test_ridge_full_cv_selects_middle_alpha():
    # strongly persistent data: both degenerate outer candidates force the
    # zero map and lose the holdout to the middle penalty
    demeaned = ar1_rows(np.random.default_rng(65), 5, 40, 0.95)
    chosen = eng._ridge_cv_choose(demeaned, [1e9, 1.0, 1e9])
    assert chosen == 1.0


def test_ridge_full_cv_ties_prefer_larger_alpha(rng):
    demeaned = rng.standard_normal((4, 20))
    chosen = eng._ridge_cv_choose(demeaned, [2.0, 2.0])
    assert chosen == 2.0


# -- engine wrappers ----------------------------------------------------------------


def test_forecast_residual_fixed_points(rng):
    residuals = rng.standard_normal((8, 30))
    for kind in ("pca_ridge_var", "pca_diag_ar", "dmd_full", "ridge_full"):
        engine = fit_engine(kind, residuals, 3)
        out = forecast_residual(engine, engine.demeaner.mean)
        assert np.allclose(out, engine.demeaner.mean, atol=1e-12)


def test_zeroed_transition_forecasts_mean(rng):
    residuals = rng.standard_normal((8, 30))
    engine = fit_engine("pca_ridge_var", residuals, 3)
    zeroed_basis = engine.basis.with_transition(np.zeros((3, 3)))
    silent = eng.SubspaceEngine(zeroed_basis, engine.demeaner)
    r_last = rng.standard_normal(8)
    assert np.allclose(silent.residual_forecast(r_last), engine.demeaner.mean)


def test_pca_full_rank_matches_ridge_full(rng):
    # K=N with equal weights and lam -> 0 reduces to the OLS propagator,
    # and so does ridge_full with alpha -> 0 on well-conditioned data
    n, t = 5, 60
    data = rng.standard_normal((n, t))
    demeaned, dm = ewm_demean(data, 1e9)
    w = np.full(t, 1.0 / t)
    basis = fit_pca_basis(demeaned, n, w)
    factors = basis.U.T @ demeaned
    var = fit_ridge_var(factors, 1e-10)
    subspace = eng.SubspaceEngine(basis.with_transition(var.coeffs), dm)
    coeffs = fit_ridge_full(demeaned, [1e-10])
    full = eng.FullRidgeEngine(coeffs, dm, 1e-10)
    r_last = rng.standard_normal(n)
    assert np.allclose(subspace.residual_forecast(r_last),
                       full.residual_forecast(r_last), atol=1e-6)


def test_engine_kind_validation(rng):
    with pytest.raises(ValueError, match="unknown engine kind"):
        fit_engine("nope", rng.standard_normal((4, 10)), 2)
    with pytest.raises(ValueError, match="rank"):
        fit_engine("pca_ridge_var", rng.standard_normal((4, 10)), None)
