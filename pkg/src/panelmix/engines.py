"""Stage 2: residual-dynamics engines.

Everything here operates on Stage-1 residual matrices (actors by quarters).
The engines share a common recipe: exponentially-weighted demeaning, a
low-rank basis (weighted PCA or exact DMD), and a reduced transition
(per-component AR, ridge VAR, the reduced DMD propagator, or a modal
Kalman filter).  A full N-dimensional ridge map is provided as the
unreduced alternative.

Every fit is a pure function of its inputs; fitted objects are immutable
and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

AR_CLIP = 0.995
SPECTRAL_CAP = 0.99
Q_FLOOR = 1e-6
Q0 = 0.5
LAMBDA_Q = 0.3
SIGMA2_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# EWM demeaning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EwmDemeaner:
    """Exponentially-weighted mean of training residuals.

    Weights decay going back in time with w[t] / w[t + half_life] = 0.5,
    normalized to sum to one.
    """

    half_life: float
    weights: np.ndarray
    mean: np.ndarray

    def demean(self, residuals: np.ndarray) -> np.ndarray:
        return residuals - self.mean[:, None]


def ewm_weights(n: int, half_life: float) -> np.ndarray:
    """Normalized geometric weights over n quarters, newest last."""
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    lam = 0.5 ** (1.0 / half_life)
    w = lam ** np.arange(n - 1, -1, -1, dtype=float)
    return w / w.sum()


def ewm_demean(residuals: np.ndarray, half_life: float = 12.0):
    """Remove the EWM mean from each actor's residual series.

    Returns the demeaned matrix and the fitted EwmDemeaner.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim != 2 or residuals.shape[1] < 2:
        raise ValueError("need an N x T residual matrix with T >= 2")
    w = ewm_weights(residuals.shape[1], half_life)
    mean = residuals @ w
    demeaner = EwmDemeaner(half_life, w, mean)
    return residuals - mean[:, None], demeaner


# ---------------------------------------------------------------------------
# Bases and reduced transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal N x K basis with its K x K reduced propagator."""

    U: np.ndarray
    A_reduced: np.ndarray
    K: int
    eigvals: np.ndarray

    def __post_init__(self):
        gram = self.U.T @ self.U
        if not np.allclose(gram, np.eye(self.K), atol=1e-10):
            raise ValueError("basis not orthonormal")

    def with_transition(self, A: np.ndarray, clip: bool = False) -> "SubspaceBasis":
        A = np.asarray(A, dtype=float)
        if clip:
            A = spectral_radius_clip(A)
        return replace(self, A_reduced=A, eigvals=np.linalg.eigvals(A))


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Deterministic orientation: largest-|entry| coordinate positive."""
    U = U.copy()
    for k in range(U.shape[1]):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0:
            U[:, k] = -U[:, k]
    return U


def fit_pca_basis(demeaned: np.ndarray, K: int, weights: np.ndarray) -> SubspaceBasis:
    """Top-K eigenvectors of the weighted residual covariance.

    The transition starts as the identity; callers attach a fitted one via
    `with_transition`.
    """
    demeaned = np.asarray(demeaned, dtype=float)
    n, t = demeaned.shape
    if K > min(n, t - 1):
        raise ValueError(f"rank overflow: K={K} exceeds min(N, T-1)={min(n, t - 1)}")
    w = np.asarray(weights, dtype=float)
    if w.shape != (t,):
        raise ValueError("alignment error: weights length mismatch")
    cov = (demeaned * w) @ demeaned.T
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:K]
    U = _fix_signs(evecs[:, order])
    return SubspaceBasis(U, np.eye(K), K, np.ones(K, dtype=complex))


def exact_dmd(demeaned: np.ndarray, K: int, cap: float = SPECTRAL_CAP) -> SubspaceBasis:
    """Exact DMD on consecutive snapshot pairs of the demeaned residuals.

    X collects columns 1..T-1 and Y columns 2..T; the reduced propagator is
    Ur' Y Vr inv(Sr), spectral-radius clipped at `cap`.
    """
    demeaned = np.asarray(demeaned, dtype=float)
    n, t = demeaned.shape
    if t < K + 1:
        raise ValueError(f"rank overflow: need at least K+1={K + 1} snapshots")
    X, Y = demeaned[:, :-1], demeaned[:, 1:]
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if K > s.size or np.any(s[:K] < 1e-12):
        raise ValueError("rank deficient: singular values below 1e-12 in the top K")
    # orient U deterministically, carrying the flips into V so X = U S V' holds
    flips = np.ones(K)
    for k in range(K):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0:
            flips[k] = -1.0
    Ur = U[:, :K] * flips
    Vr = (Vt[:K].T) * flips
    Atilde = Ur.T @ Y @ Vr / s[:K]
    Atilde = spectral_radius_clip(Atilde, cap)
    return SubspaceBasis(Ur, Atilde, K, np.linalg.eigvals(Atilde))


def spectral_radius_clip(A: np.ndarray, cap: float = SPECTRAL_CAP) -> np.ndarray:
    """Scale A by min(1, cap / max|eig|); eigenvectors are untouched."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite transition matrix")
    radius = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if radius <= cap:
        return A.copy()
    return A * (cap / radius)


def fit_diag_ar(factors: np.ndarray) -> np.ndarray:
    """Per-component AR(1) coefficients as a diagonal K x K transition.

    No intercept: factors are already demeaned.  Coefficients are clipped
    to +/-0.995; a zero-variance row gets coefficient 0.
    """
    factors = np.asarray(factors, dtype=float)
    if factors.shape[1] < 3:
        raise ValueError("need at least 3 factor observations")
    x, y = factors[:, :-1], factors[:, 1:]
    denom = np.sum(x * x, axis=1)
    coef = np.zeros(factors.shape[0])
    ok = denom > 0
    coef[ok] = np.sum(x * y, axis=1)[ok] / denom[ok]
    return np.diag(np.clip(coef, -AR_CLIP, AR_CLIP))


@dataclass(frozen=True)
class RidgeVarFit:
    """Ridge-penalized VAR(1) on factor series."""

    coeffs: np.ndarray
    lam: float


def fit_ridge_var(factors: np.ndarray, lam: float = 1.0) -> RidgeVarFit:
    """Closed-form ridge VAR(1): F+ F-' (F- F-' + lam I)^-1."""
    factors = np.asarray(factors, dtype=float)
    if factors.shape[1] < 3:
        raise ValueError("need at least 3 factor observations")
    if lam <= 0:
        raise ValueError("ridge penalty must be positive")
    f_minus, f_plus = factors[:, :-1], factors[:, 1:]
    k = factors.shape[0]
    coeffs = f_plus @ f_minus.T @ np.linalg.inv(f_minus @ f_minus.T + lam * np.eye(k))
    return RidgeVarFit(coeffs, float(lam))


# ---------------------------------------------------------------------------
# Modal Kalman filter
# ---------------------------------------------------------------------------


@dataclass
class KalmanState:
    """Filtered modal state at the training boundary."""

    alpha: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    sigma2_perp: float


def _woodbury_factors(P: np.ndarray, sigma2: float):
    """K x K piece of the spherical-noise gain; only a K x K inversion.

    With S = U P U' + sigma2 I and U'U = I, the Woodbury inverse of S
    collapses via the push-through identity U'(U P U' + sigma2 I)^-1 =
    (P + sigma2 I_K)^-1 U', so the gain is K = G U' with
    G = P (P + sigma2 I_K)^-1.  Stable down to sigma2 = 0, where the gain
    degenerates to the exact subspace projection.
    """
    k = P.shape[0]
    return P @ np.linalg.inv(P + sigma2 * np.eye(k))


def kalman_gain(U: np.ndarray, P: np.ndarray, sigma2: float,
                method: str = "woodbury") -> np.ndarray:
    """K x N Kalman gain for the spherical observation model."""
    if method == "woodbury":
        return _woodbury_factors(P, sigma2) @ U.T
    if method == "direct":
        n = U.shape[0]
        S = U @ P @ U.T + sigma2 * np.eye(n)
        return P @ U.T @ np.linalg.inv(S)
    raise ValueError(f"unknown method {method!r}")


def kalman_run(basis: SubspaceBasis, demeaner: EwmDemeaner,
               residuals: np.ndarray, transition_mode: str = "diag",
               return_trace: bool = False):
    """Run the modal Kalman filter through a residual history.

    Prediction uses the spectral-radius-clipped transition (diagonal of the
    reduced propagator by default, the full matrix otherwise); observation
    noise is spherical at the mean squared projection residual; covariance
    updates use the Joseph form; the innovation covariance is inverted via
    Woodbury so only K x K systems are solved; process noise adapts by
    exponential smoothing of the state correction with a 1e-6 floor.

    Returns the N x T matrix of one-step-ahead residual predictions (the
    prediction for column t is formed before observing it) and the final
    filtered state; with return_trace, also the per-step filtered (P, Q)
    pairs for numerical diagnostics.
    """
    residuals = np.asarray(residuals, dtype=float)
    n, t = residuals.shape
    U = basis.U
    k = basis.K
    if k > n:
        raise ValueError("rank overflow: K exceeds N")
    if transition_mode == "diag":
        F = spectral_radius_clip(np.diag(np.diag(basis.A_reduced)))
    elif transition_mode == "full":
        F = spectral_radius_clip(basis.A_reduced)
    else:
        raise ValueError(f"unknown transition_mode {transition_mode!r}")

    demeaned = demeaner.demean(residuals)
    # observation noise from finite snapshots; a non-finite snapshot will
    # surface as filter divergence at its own quarter below
    finite_cols = np.all(np.isfinite(demeaned), axis=0)
    if not np.any(finite_cols):
        raise FloatingPointError("filter divergence at quarter index 0")
    clean = demeaned[:, finite_cols]
    proj = U @ (U.T @ clean)
    sigma2 = max(float(np.mean((clean - proj) ** 2)), SIGMA2_FLOOR)

    alpha = np.zeros(k)
    P = np.eye(k)
    Q = Q0 * np.eye(k)
    eye_k = np.eye(k)
    forecasts = np.empty_like(residuals)
    trace = []

    for step in range(t):
        alpha_pred = F @ alpha
        P_pred = F @ P @ F.T + Q
        forecasts[:, step] = U @ alpha_pred + demeaner.mean

        obs = demeaned[:, step]
        with np.errstate(invalid="ignore"):
            innovation = (U.T @ obs) - alpha_pred
        if not np.all(np.isfinite(innovation)):
            raise FloatingPointError(f"filter divergence at quarter index {step}")
        G = _woodbury_factors(P_pred, sigma2)
        alpha = alpha_pred + G @ innovation
        IKG = eye_k - G
        P = IKG @ P_pred @ IKG.T + sigma2 * (G @ G.T)
        P = 0.5 * (P + P.T)
        nu = alpha - alpha_pred
        Q = (1.0 - LAMBDA_Q) * Q + LAMBDA_Q * np.outer(nu, nu)
        Q = 0.5 * (Q + Q.T) + Q_FLOOR * eye_k
        if return_trace:
            trace.append((P.copy(), Q.copy()))

    state = KalmanState(alpha, P, Q, sigma2)
    if return_trace:
        return forecasts, state, trace
    return forecasts, state


# ---------------------------------------------------------------------------
# Full-dimension ridge
# ---------------------------------------------------------------------------


def _ridge_map(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    n = x.shape[0]
    return y @ x.T @ np.linalg.inv(x @ x.T + alpha * np.eye(n))


def _ridge_cv_choose(demeaned: np.ndarray, alphas) -> float:
    """Hold-last-2 cross-validation; ties resolved toward the larger penalty."""
    x_all, y_all = demeaned[:, :-1], demeaned[:, 1:]
    n_trans = x_all.shape[1]
    x_fit, y_fit = x_all[:, : n_trans - 2], y_all[:, : n_trans - 2]
    x_ho, y_ho = x_all[:, n_trans - 2 :], y_all[:, n_trans - 2 :]
    best_alpha, best_err = None, np.inf
    for alpha in sorted(float(a) for a in alphas):
        c = _ridge_map(x_fit, y_fit, alpha)
        err = float(np.sum((y_ho - c @ x_ho) ** 2))
        if err <= best_err:  # <= keeps the larger alpha on exact ties
            best_alpha, best_err = alpha, err
    return best_alpha


def fit_ridge_full(demeaned: np.ndarray, alphas=None) -> np.ndarray:
    """N x N ridge map from one demeaned residual snapshot to the next.

    The penalty is selected on the last two training transitions and the
    map is refit on the full training window.  Default candidate penalties
    are {0.1, 1, 10} scaled by N.
    """
    demeaned = np.asarray(demeaned, dtype=float)
    n, t = demeaned.shape
    if t < 5:
        raise ValueError("need at least 5 training quarters for hold-last-2 CV")
    if alphas is None:
        alphas = [m * n for m in (0.1, 1.0, 10.0)]
    alpha = _ridge_cv_choose(demeaned, alphas)
    return _ridge_map(demeaned[:, :-1], demeaned[:, 1:], alpha)


# ---------------------------------------------------------------------------
# Engine wrappers
# ---------------------------------------------------------------------------


class SubspaceEngine:
    """Low-rank residual propagator with in-span mean restoration.

    The routed Stage-2 term is U (A U'(r - rbar) + U' rbar): demeaned
    dynamics through the reduced transition, plus the EWM mean's
    projection onto the basis.  Structured residual means (factor levels)
    live inside the span and are carried into the forecast, yet the whole
    term vanishes when U is zeroed, which keeps pooled-only recovery
    exact.  The standalone residual forecast restores the full mean.
    """

    def __init__(self, basis: SubspaceBasis, demeaner: EwmDemeaner):
        self.basis = basis
        self.demeaner = demeaner

    @property
    def n_actors(self) -> int:
        return self.basis.U.shape[0]

    def deviation_forecast(self, r_last: np.ndarray) -> np.ndarray:
        r_last = np.asarray(r_last, dtype=float)
        if r_last.shape != self.demeaner.mean.shape:
            raise ValueError("alignment error: residual length mismatch")
        dev = r_last - self.demeaner.mean
        U, A = self.basis.U, self.basis.A_reduced
        return U @ (A @ (U.T @ dev) + U.T @ self.demeaner.mean)

    def residual_forecast(self, r_last: np.ndarray) -> np.ndarray:
        r_last = np.asarray(r_last, dtype=float)
        if r_last.shape != self.demeaner.mean.shape:
            raise ValueError("alignment error: residual length mismatch")
        dev = r_last - self.demeaner.mean
        U, A = self.basis.U, self.basis.A_reduced
        return U @ (A @ (U.T @ dev)) + self.demeaner.mean

    def zeroed(self):
        return _zero_engine_like(self)


class KalmanEngine:
    """Kalman-filtered modal state at the training boundary."""

    def __init__(self, basis: SubspaceBasis, demeaner: EwmDemeaner,
                 transition_mode: str, state: KalmanState,
                 filtered_forecasts: np.ndarray):
        self.basis = basis
        self.demeaner = demeaner
        self.transition_mode = transition_mode
        self.state = state
        self.filtered_forecasts = filtered_forecasts
        if transition_mode == "diag":
            self._F = spectral_radius_clip(np.diag(np.diag(basis.A_reduced)))
        else:
            self._F = spectral_radius_clip(basis.A_reduced)

    @property
    def n_actors(self) -> int:
        return self.basis.U.shape[0]

    def deviation_forecast(self, r_last: np.ndarray) -> np.ndarray:
        r_last = np.asarray(r_last, dtype=float)
        if r_last.shape != self.demeaner.mean.shape:
            raise ValueError("alignment error: residual length mismatch")
        U = self.basis.U
        return U @ (self._F @ self.state.alpha + U.T @ self.demeaner.mean)

    def residual_forecast(self, r_last: np.ndarray) -> np.ndarray:
        r_last = np.asarray(r_last, dtype=float)
        if r_last.shape != self.demeaner.mean.shape:
            raise ValueError("alignment error: residual length mismatch")
        return self.basis.U @ (self._F @ self.state.alpha) + self.demeaner.mean

    def zeroed(self):
        return _zero_engine_like(self)


class FullRidgeEngine:
    """Unreduced N x N ridge propagator on demeaned residuals."""

    def __init__(self, coeffs: np.ndarray, demeaner: EwmDemeaner, alpha: float):
        self.coeffs = coeffs
        self.demeaner = demeaner
        self.alpha = alpha

    @property
    def n_actors(self) -> int:
        return self.coeffs.shape[0]

    def deviation_forecast(self, r_last: np.ndarray) -> np.ndarray:
        r_last = np.asarray(r_last, dtype=float)
        if r_last.shape != self.demeaner.mean.shape:
            raise ValueError("alignment error: residual length mismatch")
        return self.coeffs @ (r_last - self.demeaner.mean)

    def residual_forecast(self, r_last: np.ndarray) -> np.ndarray:
        return self.deviation_forecast(r_last) + self.demeaner.mean

    def zeroed(self):
        return _zero_engine_like(self)


class _ZeroEngine:
    """Stage-2 stand-in whose deviation forecast is identically zero."""

    def __init__(self, n_actors: int, demeaner: EwmDemeaner):
        self._n = n_actors
        self.demeaner = demeaner

    @property
    def n_actors(self) -> int:
        return self._n

    def deviation_forecast(self, r_last: np.ndarray) -> np.ndarray:
        return np.zeros(self._n)

    def residual_forecast(self, r_last: np.ndarray) -> np.ndarray:
        return self.demeaner.mean.copy()

    def zeroed(self):
        return self


def _zero_engine_like(engine) -> _ZeroEngine:
    return _ZeroEngine(engine.n_actors, engine.demeaner)


ENGINE_KINDS = (
    "pca_ridge_var",
    "pca_diag_ar",
    "dmd_full",
    "dmd_diag",
    "dmd_kalman_diag",
    "dmd_kalman_full",
    "ridge_full",
)


def fit_engine(kind: str, residuals: np.ndarray, K: int | None = None, *,
               half_life: float = 12.0, ridge_lambda: float = 1.0,
               alpha_multipliers=(0.1, 1.0, 10.0), cap: float = SPECTRAL_CAP):
    """Fit one Stage-2 engine on a raw residual matrix (actors x quarters)."""
    residuals = np.asarray(residuals, dtype=float)
    demeaned, demeaner = ewm_demean(residuals, half_life)
    if kind == "ridge_full":
        alphas = [m * residuals.shape[0] for m in alpha_multipliers]
        coeffs = fit_ridge_full(demeaned, alphas)
        alpha = _ridge_cv_choose(demeaned, alphas)
        return FullRidgeEngine(coeffs, demeaner, alpha)
    if K is None:
        raise ValueError("reduced-rank engines need a rank K")
    if kind.startswith("pca"):
        basis = fit_pca_basis(demeaned, K, demeaner.weights)
        factors = basis.U.T @ demeaned
        if kind == "pca_ridge_var":
            basis = basis.with_transition(fit_ridge_var(factors, ridge_lambda).coeffs)
        elif kind == "pca_diag_ar":
            basis = basis.with_transition(fit_diag_ar(factors))
        else:
            raise ValueError(f"unknown engine kind {kind!r}")
        return SubspaceEngine(basis, demeaner)
    if kind.startswith("dmd"):
        basis = exact_dmd(demeaned, K, cap)
        if kind == "dmd_full":
            return SubspaceEngine(basis, demeaner)
        if kind == "dmd_diag":
            diag = spectral_radius_clip(np.diag(np.diag(basis.A_reduced)), cap)
            return SubspaceEngine(basis.with_transition(diag), demeaner)
        mode = "diag" if kind == "dmd_kalman_diag" else "full"
        if kind not in ("dmd_kalman_diag", "dmd_kalman_full"):
            raise ValueError(f"unknown engine kind {kind!r}")
        filtered, state = kalman_run(basis, demeaner, residuals, mode)
        return KalmanEngine(basis, demeaner, mode, state, filtered)
    raise ValueError(f"unknown engine kind {kind!r}")


def forecast_residual(model, r_last: np.ndarray) -> np.ndarray:
    """One-step residual forecast from any fitted Stage-2 engine."""
    return model.residual_forecast(np.asarray(r_last, dtype=float))
