"""Principal angles, Grassmannian geodesics, and random-subspace controls.

The geodesic distance between two K-dimensional subspaces is the l2 norm
of their principal angles (reported in degrees); l1 and max-angle variants
are available for sensitivity.  Monte Carlo baselines draw Haar-uniform
subspaces by orthonormalizing gaussian matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .engines import ewm_weights, fit_pca_basis
from .panel import Panel
from .persistence import fit_pooled_ar1_fe


def _check_orthonormal(U: np.ndarray, name: str) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim != 2:
        raise ValueError(f"{name} must be an N x K matrix")
    gram = U.T @ U
    if not np.allclose(gram, np.eye(U.shape[1]), atol=1e-8):
        raise ValueError(f"{name} is not orthonormal")
    return U


def principal_angles(U1: np.ndarray, U2: np.ndarray, degrees: bool = True) -> np.ndarray:
    """Canonical angles between two orthonormal bases, ascending."""
    U1 = _check_orthonormal(U1, "U1")
    U2 = _check_orthonormal(U2, "U2")
    if U1.shape != U2.shape:
        raise ValueError("bases must have matching shapes")
    sigma = np.linalg.svd(U1.T @ U2, compute_uv=False)
    angles = np.arccos(np.clip(sigma, 0.0, 1.0))  # descending sigma: ascending angles
    return np.degrees(angles) if degrees else angles


def geodesic_distance(angles, norm: str = "l2") -> float:
    """Scalar rotation measure from a principal-angle vector (degrees in, degrees out)."""
    a = np.asarray(angles, dtype=float)
    if np.any(a < 0) or np.any(a > 90 + 1e-9):
        raise ValueError("angles must lie in [0, 90] degrees")
    if norm == "l2":
        return float(np.sqrt(np.sum(a**2)))
    if norm == "l1":
        return float(np.sum(a))
    if norm == "max":
        return float(a.max()) if a.size else 0.0
    raise ValueError(f"unknown norm {norm!r}")


def residual_bases_per_quarter(residuals: np.ndarray, K: int, window: int,
                               half_life: float = 12.0) -> list[np.ndarray]:
    """Rolling EWM-weighted PCA bases over a residual history.

    One basis per quarter t >= window, fit on the trailing `window`
    columns.  Raw residuals are demeaned with the window's own EWM mean.
    """
    residuals = np.asarray(residuals, dtype=float)
    t_total = residuals.shape[1]
    if t_total < window + 1:
        raise ValueError("history too short for the rolling window")
    w = ewm_weights(window, half_life)
    bases = []
    for t in range(window, t_total + 1):
        chunk = residuals[:, t - window : t]
        demeaned = chunk - (chunk @ w)[:, None]
        bases.append(fit_pca_basis(demeaned, K, w).U)
    return bases


@dataclass(frozen=True)
class RotationDiagnostics:
    steps: np.ndarray  # consecutive-quarter geodesic distances, degrees
    acf1: float
    ljung_box_p: float
    degenerate: bool

    @property
    def mean_step(self) -> float:
        return float(self.steps.mean())


def rotation_series(bases, norm: str = "l2") -> RotationDiagnostics:
    """Consecutive geodesic steps plus their lag-1 dependence diagnostics."""
    bases = list(bases)
    if len(bases) < 3:
        raise ValueError("need at least 3 consecutive bases")
    steps = np.array([
        geodesic_distance(principal_angles(a, b), norm)
        for a, b in zip(bases, bases[1:])
    ])
    centered = steps - steps.mean()
    gamma0 = float(centered @ centered) / steps.size
    # constant or identically-zero step series has no defined dependence
    if gamma0 <= 1e-16 * max(float(np.mean(steps**2)), np.finfo(float).tiny):
        return RotationDiagnostics(steps, float("nan"), float("nan"), True)
    acf1 = (float(centered[1:] @ centered[:-1]) / steps.size) / gamma0
    n = steps.size
    q = n * (n + 2.0) * acf1**2 / (n - 1.0)
    p = float(stats.chi2.sf(q, df=1))
    return RotationDiagnostics(steps, float(acf1), p, False)


def haar_basis(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random K-dimensional subspace basis via QR of a gaussian."""
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class RandomBaseline:
    mean: float
    quantiles: dict[float, float]
    distances: np.ndarray


def random_baseline(N: int, K: int, draws: int = 500, seed: int = 0,
                    norm: str = "l2") -> RandomBaseline:
    """Monte Carlo geodesic distance between independent uniform subspaces."""
    if K > N:
        raise ValueError("rank overflow: K exceeds N")
    rng = np.random.default_rng(seed)
    dists = np.array([
        geodesic_distance(principal_angles(haar_basis(N, K, rng),
                                           haar_basis(N, K, rng)), norm)
        for _ in range(draws)
    ])
    qs = {q: float(np.quantile(dists, q)) for q in (0.05, 0.5, 0.95)}
    return RandomBaseline(float(dists.mean()), qs, dists)


@dataclass(frozen=True)
class SubpanelControl:
    p: float
    block_mean_rotation: float
    draw_rotations: np.ndarray


def matched_subpanel_control(panel: Panel, block_actors, draws: int = 200,
                             K: int = 4, window: int = 20, seed: int = 0,
                             half_life: float = 12.0) -> SubpanelControl:
    """Is a block's within-rotation lower than random same-size sub-panels?

    Rotation is the mean consecutive geodesic step of rolling PCA bases on
    Stage-1 residuals restricted to the chosen rows.  The empirical p is
    the fraction of random sub-panels rotating no faster than the block,
    so a planted coherent block yields a small p.
    """
    block_rows = np.array([panel.row_of(a) for a in block_actors], dtype=int)
    if block_rows.size > panel.n_actors:
        raise ValueError("block larger than the panel")
    stage1 = fit_pooled_ar1_fe(panel)
    residuals = stage1.residuals(panel.values)

    def mean_rotation(rows: np.ndarray) -> float:
        bases = residual_bases_per_quarter(residuals[rows], K, window, half_life)
        return rotation_series(bases).mean_step

    block_rotation = mean_rotation(np.sort(block_rows))
    rng = np.random.default_rng(seed)
    draw_vals = np.array([
        mean_rotation(np.sort(rng.choice(panel.n_actors, size=block_rows.size,
                                         replace=False)))
        for _ in range(draws)
    ])
    p = float(np.mean(draw_vals <= block_rotation))
    return SubpanelControl(p, float(block_rotation), draw_vals)
