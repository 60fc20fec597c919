"""Gaussian mixtures with isotropic components and the classical EM baselines.

Holds the mixture representation, the closed-form mixture update from soft
assignments (`m_theta`), the analytic posterior over point-to-component
assignments (`posterior_gamma`), mixture fitting by EM (`em_fit`) and
EM-based rigid registration of a cloud against a fitted mixture
(`em_register`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geom3d import RigidTransform, apply_transform, as_points, compose, invert, rotation_angle

SIGMA_SQ_FLOOR = 1e-6
# Components whose effective point count drops below WEIGHT_FLOOR_FRACTION * N
# are re-centered on the cloud centroid with floored variance.
WEIGHT_FLOOR_FRACTION = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


class DegenerateMixtureError(ValueError):
    """Every component is effectively infinitely far from some point."""


@dataclass(frozen=True)
class Gmm:
    """Isotropic Gaussian mixture: weights (J,), means (J, 3), variances (J,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        var = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if not (w.shape[0] == mu.shape[0] == var.shape[0]):
            raise ValueError("weights, means and variances must agree on J")
        if w.shape[0] < 1:
            raise ValueError("mixture needs at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(var < SIGMA_SQ_FLOOR * (1.0 - 1e-12)):
            raise ValueError(f"variances must be >= {SIGMA_SQ_FLOOR}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("mixture contains non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]


def _component_log_densities(points: np.ndarray, gmm: Gmm) -> np.ndarray:
    """(N, J) matrix of log(pi_j) + log N(p_i | mu_j, sigma_j^2 I)."""
    with np.errstate(over="ignore"):  # inf distances signal degeneracy upstream
        d2 = np.sum((points[:, None, :] - gmm.means[None, :, :]) ** 2, axis=2)
    var = gmm.variances[None, :]
    with np.errstate(divide="ignore"):
        log_pi = np.log(gmm.weights)[None, :]
    return log_pi - 1.5 * (LOG_2PI + np.log(var)) - 0.5 * d2 / var


def posterior_gamma(points: np.ndarray, gmm: Gmm) -> np.ndarray:
    """Posterior assignment probabilities, a row-stochastic (N, J) matrix.

    Computed in log space with per-row max subtraction; raises
    DegenerateMixtureError if a row has no finite component log-density.
    """
    pts = as_points(points)
    log_p = _component_log_densities(pts, gmm)
    row_max = np.max(log_p, axis=1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        raise DegenerateMixtureError("a point is infinitely unlikely under every component")
    g = np.exp(log_p - row_max)
    return g / g.sum(axis=1, keepdims=True)


def validate_gamma(gamma: np.ndarray, n_points: int | None = None) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("gamma must be a 2-D (N, J) matrix")
    if n_points is not None and g.shape[0] != n_points:
        raise ValueError(f"gamma has {g.shape[0]} rows, expected {n_points}")
    if np.any(g < -1e-12):
        raise ValueError("gamma entries must be non-negative")
    if np.max(np.abs(g.sum(axis=1) - 1.0)) > 1e-7:
        raise ValueError("gamma rows must sum to 1")
    return g


class MThetaStats(NamedTuple):
    """Intermediates of the mixture update, kept for reverse-mode use."""

    gmm: Gmm
    counts: np.ndarray          # S_j = sum_i gamma_ij
    raw_variances: np.ndarray   # before flooring
    low_weight: np.ndarray      # components re-centered on the centroid
    floored: np.ndarray         # components whose variance was floored
    centroid: np.ndarray
    sq_dists: np.ndarray        # (N, J) against the pre-substitution means


def m_theta_stats(gamma: np.ndarray, points: np.ndarray) -> MThetaStats:
    pts = as_points(points)
    g = validate_gamma(gamma, pts.shape[0])
    n = pts.shape[0]
    counts = g.sum(axis=0)
    weights = counts / n
    centroid = pts.mean(axis=0)

    low_weight = counts < WEIGHT_FLOOR_FRACTION * n
    safe_counts = np.where(low_weight, 1.0, counts)
    means = (g.T @ pts) / safe_counts[:, None]
    d2 = np.sum((pts[:, None, :] - means[None, :, :]) ** 2, axis=2)
    # isotropic variance: trace of the scatter spread over three equal axes
    raw_var = np.einsum("ij,ij->j", g, d2) / (3.0 * safe_counts)

    means = np.where(low_weight[:, None], centroid[None, :], means)
    floored = raw_var < SIGMA_SQ_FLOOR
    variances = np.where(low_weight | floored, SIGMA_SQ_FLOOR, raw_var)
    # rounding in the row sums can leave the weights a few ulps off the simplex
    gmm = Gmm(weights / weights.sum(), means, variances)
    return MThetaStats(gmm, counts, raw_var, low_weight, floored, centroid, d2)


def m_theta(gamma: np.ndarray, points: np.ndarray) -> Gmm:
    """Closed-form mixture update from soft assignments.

    pi_j is the mean assignment mass, mu_j the assignment-weighted mean and
    sigma_j^2 the assignment-weighted mean squared deviation divided by 3
    (maximum-likelihood convention for an isotropic 3-D covariance), floored
    at SIGMA_SQ_FLOOR. Components receiving less than WEIGHT_FLOOR_FRACTION*N
    total mass are parked at the cloud centroid with floored variance.
    """
    return m_theta_stats(gamma, points).gmm


def log_likelihood(points: np.ndarray, gmm: Gmm) -> float:
    """Total log density of the points under the mixture (log-sum-exp stabilized)."""
    pts = as_points(points)
    log_p = _component_log_densities(pts, gmm)
    row_max = np.max(log_p, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    return float(np.sum(row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))))


def _kmeanspp_seeds(points: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new seed drawn with probability proportional
    to squared distance from the nearest chosen seed."""
    n = points.shape[0]
    seeds = np.empty((j, 3))
    seeds[0] = points[rng.integers(n)]
    d2 = np.sum((points - seeds[0]) ** 2, axis=1)
    for idx in range(1, j):
        total = d2.sum()
        if total <= 0:
            seeds[idx] = points[rng.integers(n)]
        else:
            seeds[idx] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - seeds[idx]) ** 2, axis=1))
    return seeds


def em_fit(
    points: np.ndarray,
    n_components: int,
    iters: int = 100,
    rng: np.random.Generator | None = None,
) -> Gmm:
    """Fit an isotropic mixture by EM from a k-means++ initialization.

    Stops after `iters` iterations or once the relative log-likelihood
    improvement drops below 1e-7.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if n < n_components:
        raise ValueError(f"need at least {n_components} points to fit {n_components} components")
    if rng is None:
        rng = np.random.default_rng()

    seeds = _kmeanspp_seeds(pts, n_components, rng)
    d2 = np.sum((pts[:, None, :] - seeds[None, :, :]) ** 2, axis=2)
    var0 = max(float(np.mean(d2.min(axis=1))), SIGMA_SQ_FLOOR)
    gmm = Gmm(
        np.full(n_components, 1.0 / n_components),
        seeds,
        np.full(n_components, var0),
    )

    prev_ll = -np.inf
    for _ in range(max(1, iters)):
        gamma = posterior_gamma(pts, gmm)
        gmm = m_theta(gamma, pts)
        ll = log_likelihood(pts, gmm)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) < 1e-7 * (1.0 + abs(ll)):
            break
        prev_ll = ll
    return gmm


def em_register(
    source: np.ndarray,
    gmm: Gmm,
    initial: RigidTransform | None = None,
    iters: int = 50,
    return_trace: bool = False,
):
    """Register a source cloud to a fitted mixture by alternating the analytic
    posterior with the closed-form pose update.

    Local method: convergence to the global optimum is only expected when the
    initial transform is in the right basin. Each pose update minimizes the
    expected complete-data objective exactly, so the objective never increases
    within an iteration. Stops early once the pose update angle is below 1e-6
    rad and the translation update below 1e-8.
    """
    from .mt_solver import mt_block, objective_double_sum  # circular at module level

    pts = as_points(source)
    transform = RigidTransform.identity() if initial is None else initial
    trace = []
    for _ in range(max(1, iters)):
        moved = apply_transform(transform, pts)
        gamma = posterior_gamma(moved, gmm)
        source_gmm = m_theta(gamma, pts)
        # only the self-consistent centroid weighting is an exact minimizer,
        # which the monotonicity contract requires
        new_transform = mt_block(gamma, source_gmm, gmm, centroid_mode="objective")
        if return_trace:
            trace.append(
                (
                    objective_double_sum(transform, gamma, pts, gmm),
                    objective_double_sum(new_transform, gamma, pts, gmm),
                )
            )
        delta = compose(new_transform, invert(transform))
        transform = new_transform
        if rotation_angle(delta.R) < 1e-6 and np.linalg.norm(delta.t) < 1e-8:
            break
    if return_trace:
        return transform, trace
    return transform


# ---------------------------------------------------------------------------
# Text format: header line J, then J lines "pi mux muy muz sigma2".
# ---------------------------------------------------------------------------


def save_gmm(path, gmm: Gmm) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{gmm.n_components}\n")
        for w, mu, var in zip(gmm.weights, gmm.means, gmm.variances):
            f.write(f"{w:.17g} {mu[0]:.17g} {mu[1]:.17g} {mu[2]:.17g} {var:.17g}\n")


def load_gmm(path) -> Gmm:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    j = int(lines[0])
    if len(lines) != j + 1:
        raise ValueError(f"{path}: expected {j} component lines, got {len(lines) - 1}")
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if rows.shape != (j, 5):
        raise ValueError(f"{path}: component lines must hold 5 numbers")
    return Gmm(rows[:, 0], rows[:, 1:4], rows[:, 4])
