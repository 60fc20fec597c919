"""Closed-form pose estimation between matched mixtures.

Implements the expected complete-data objective in both its double-sum
(point-to-component) and reduced single-sum (component-to-component) forms,
the reflection-safe weighted SVD alignment that minimizes the single-sum
form, and a Monte-Carlo cross-entropy estimator used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom3d import RigidTransform, apply_transform, as_points
from .latent_gmm import Gmm, validate_gamma

DEGENERACY_RATIO = 1e-12
JACOBI_TOL = 1e-14


class DegenerateConfiguration(ValueError):
    """The correspondence means do not pin down a unique rotation."""


@dataclass(frozen=True)
class WeightedCorrespondences:
    """Matched mean pairs with positive weights.

    `weights` scales each pair's squared residual in the alignment objective;
    three non-collinear pairs are needed for a unique rotation in general
    position.
    """

    source_means: np.ndarray  # (J, 3)
    target_means: np.ndarray  # (J, 3)
    weights: np.ndarray       # (J,)

    def __post_init__(self):
        src = np.asarray(self.source_means, dtype=np.float64).reshape(-1, 3)
        tgt = np.asarray(self.target_means, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not (src.shape[0] == tgt.shape[0] == w.shape[0]) or src.shape[0] < 1:
            raise ValueError("need equal, non-zero numbers of means and weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and positive")
        object.__setattr__(self, "source_means", src)
        object.__setattr__(self, "target_means", tgt)
        object.__setattr__(self, "weights", w)


def svd3(m: np.ndarray):
    """SVD of a 3x3 matrix by one-sided Jacobi sweeps.

    Returns (u, s, v) with m = u @ diag(s) @ v.T, s descending and >= 0.
    Column rotations are applied until the off-diagonal mass of the implicit
    Gram matrix falls below JACOBI_TOL relative to the column norms.
    """
    b = np.array(m, dtype=np.float64)
    if b.shape != (3, 3):
        raise ValueError("svd3 expects a 3x3 matrix")
    v = np.eye(3)
    for _ in range(60):
        converged = True
        for p, q in ((0, 1), (0, 2), (1, 2)):
            app = float(b[:, p] @ b[:, p])
            aqq = float(b[:, q] @ b[:, q])
            apq = float(b[:, p] @ b[:, q])
            if abs(apq) <= JACOBI_TOL * np.sqrt(app * aqq) or apq == 0.0:
                continue
            converged = False
            zeta = (aqq - app) / (2.0 * apq)
            t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            if zeta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            bp = b[:, p].copy()
            b[:, p] = c * bp - s * b[:, q]
            b[:, q] = s * bp + c * b[:, q]
            vp = v[:, p].copy()
            v[:, p] = c * vp - s * v[:, q]
            v[:, q] = s * vp + c * v[:, q]
        if converged:
            break

    sing = np.linalg.norm(b, axis=0)
    order = np.argsort(-sing, kind="stable")
    sing = sing[order]
    b = b[:, order]
    v = v[:, order]

    u = np.zeros((3, 3))
    tiny = max(sing[0], 1.0) * 1e-300
    for j in range(3):
        if sing[j] > tiny:
            u[:, j] = b[:, j] / sing[j]
        else:
            sing[j] = 0.0
    # complete zero columns of u into an orthonormal basis
    for j in range(3):
        if sing[j] == 0.0:
            for cand in np.eye(3):
                w = cand - u[:, :j] @ (u[:, :j].T @ cand)
                n = np.linalg.norm(w)
                if n > 1e-6:
                    u[:, j] = w / n
                    break
    return u, sing, v


def _resolve_centroid_weights(weights, centroid_weights, mode):
    if centroid_weights is not None:
        cw = np.asarray(centroid_weights, dtype=np.float64).reshape(-1)
        if cw.shape != weights.shape or np.any(cw <= 0) or not np.all(np.isfinite(cw)):
            raise ValueError("centroid weights must be positive, finite and match J")
        return cw
    if mode not in ("objective", "mixture"):
        raise ValueError(f"unknown centroid mode {mode!r}")
    return weights


def umeyama_cached(
    source_means: np.ndarray,
    target_means: np.ndarray,
    weights: np.ndarray,
    centroid_weights: np.ndarray,
) -> dict:
    """Weighted alignment with all intermediates kept (for reverse-mode use).

    Returns a dict holding the centroids, centred means, cross-covariance SVD
    factors, sign factor `d`, and the resulting rotation `r` / translation `t`.
    """
    cn = centroid_weights / centroid_weights.sum()
    src_c = cn @ source_means
    tgt_c = cn @ target_means
    a = target_means - tgt_c
    b = source_means - src_c
    m = (a * weights[:, None]).T @ b

    u, s, v = svd3(m)
    if s[0] <= 0.0 or (s[1] < DEGENERACY_RATIO * s[0] and s[2] < DEGENERACY_RATIO * s[0]):
        raise DegenerateConfiguration(
            "rotation is not unique: correspondence means are collinear or coincident"
        )
    d = float(np.sign(np.linalg.det(u @ v.T)))
    r = (u * np.array([1.0, 1.0, d])) @ v.T
    return dict(
        src_c=src_c, tgt_c=tgt_c, a=a, b=b, u=u, s=s, v=v, d=d,
        r=r, t=tgt_c - r @ src_c,
        weights=weights, cn=cn, csum=centroid_weights.sum(),
        src_means=source_means, tgt_means=target_means,
    )


def weighted_umeyama(
    corr: WeightedCorrespondences,
    centroid_weights: np.ndarray | None = None,
) -> RigidTransform:
    """Best proper rigid motion mapping source means onto target means.

    Minimizes sum_j w_j ||R s_j + t - g_j||^2: centroids weighted by the
    normalized weights are subtracted, the weighted cross-covariance
    M = sum_j w_j (g_j - g_c)(s_j - s_c)^T is decomposed as U S V^T, and
    R = U diag(1, 1, det(UV^T)) V^T so that reflections are never returned,
    t = g_c - R s_c. Passing `centroid_weights` overrides the weighting used
    for the centroids only (see `mt_block`).

    Raises DegenerateConfiguration when the two smallest singular values of M
    both vanish relative to the largest (collinear or coincident means).
    """
    w = corr.weights
    cw = _resolve_centroid_weights(w, centroid_weights, "objective")
    cache = umeyama_cached(corr.source_means, corr.target_means, w, cw)
    return RigidTransform(cache["r"], cache["t"])


def objective_double_sum(
    transform: RigidTransform,
    gamma: np.ndarray,
    source: np.ndarray,
    gmm: Gmm,
) -> float:
    """Assignment-weighted squared Mahalanobis distance from the transformed
    source points to the component means: sum_ij gamma_ij ||T(p_i) - mu_j||^2 / sigma_j^2."""
    pts = as_points(source)
    g = validate_gamma(gamma, pts.shape[0])
    if g.shape[1] != gmm.n_components:
        raise ValueError("gamma column count must match the mixture size")
    moved = apply_transform(transform, pts)
    d2 = np.sum((moved[:, None, :] - gmm.means[None, :, :]) ** 2, axis=2)
    return float(np.sum(g * d2 / gmm.variances[None, :]))


def objective_single_sum(transform: RigidTransform, source_gmm: Gmm, target_gmm: Gmm) -> float:
    """Reduced component-to-component form:
    sum_j (pi_src_j / sigma_tgt_j^2) ||T(mu_src_j) - mu_tgt_j||^2."""
    if source_gmm.n_components != target_gmm.n_components:
        raise ValueError("mixtures must have the same number of components")
    moved = apply_transform(transform, source_gmm.means)
    d2 = np.sum((moved - target_gmm.means) ** 2, axis=1)
    return float(np.sum(source_gmm.weights / target_gmm.variances * d2))


def mt_block(
    gamma: np.ndarray,
    source_gmm: Gmm,
    target_gmm: Gmm,
    centroid_mode: str = "mixture",
) -> RigidTransform:
    """Pose from matched mixtures: weighted alignment of the source means onto
    the target means with weights w_j = pi_src_j / sigma_tgt_j^2.

    `centroid_mode` selects the centroid weighting: "mixture" uses the source
    mixture weights (matching the closed-form derivation as published),
    "objective" uses w itself, which makes the result the exact minimizer of
    `objective_single_sum`. The two coincide when all target variances are
    equal; the residual discrepancy is a documented modeling choice, not a bug.

    `source_gmm` must be the mixture computed from (`gamma`, current source
    cloud); `gamma` is accepted to mirror that calling contract and is only
    shape-checked here.
    """
    if source_gmm.n_components != target_gmm.n_components:
        raise ValueError("mixtures must have the same number of components")
    g = validate_gamma(gamma)
    if g.shape[1] != source_gmm.n_components:
        raise ValueError("gamma column count must match the mixtures")
    w = source_gmm.weights / target_gmm.variances
    if np.any(w <= 0):
        raise DegenerateConfiguration("a source component carries no weight")
    corr = WeightedCorrespondences(source_gmm.means, target_gmm.means, w)
    cw = source_gmm.weights if centroid_mode == "mixture" else None
    if centroid_mode not in ("mixture", "objective"):
        raise ValueError(f"unknown centroid mode {centroid_mode!r}")
    return weighted_umeyama(corr, centroid_weights=cw)


def cross_entropy_mc(
    source_gmm: Gmm,
    target_gmm: Gmm,
    samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of E_{x ~ source}[log p(x | target)] by ancestral
    sampling. Test oracle only: maximizing it over poses is equivalent to
    minimizing the KL divergence from the transformed source mixture."""
    if samples < 1:
        raise ValueError("need at least one sample")
    comp = rng.choice(source_gmm.n_components, size=samples, p=source_gmm.weights)
    x = source_gmm.means[comp] + rng.standard_normal((samples, 3)) * np.sqrt(
        source_gmm.variances[comp]
    )[:, None]
    d2 = np.sum((x[:, None, :] - target_gmm.means[None, :, :]) ** 2, axis=2)
    with np.errstate(divide="ignore"):
        log_p = (
            np.log(target_gmm.weights)[None, :]
            - 1.5 * np.log(2.0 * np.pi * target_gmm.variances)[None, :]
            - 0.5 * d2 / target_gmm.variances[None, :]
        )
    row_max = log_p.max(axis=1, keepdims=True)
    return float(np.mean(row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))))
