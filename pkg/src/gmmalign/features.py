"""Pose-invariant per-point input features for the correspondence network.

Each point is described by its k nearest neighbours through quantities that
depend only on norms about the cloud centroid and relative angles, so the
feature matrix is unchanged by any rigid rotation of the input (translations
are removed by centring). Feature rows have dimension 4k.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geom3d import as_points

RADIAL_EPS = 1e-9
PROJECTION_EPS = 1e-12
# extra neighbours fetched from the k-d tree so exact-distance ties at the
# boundary can be re-ranked by (distance, index) like the brute-force oracle
TIE_BUFFER = 4


def knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbours of every point (self excluded),
    ordered by increasing squared distance with ties broken by point index."""
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need N > k >= 1, got N={n}, k={k}")
    tree = cKDTree(pts)
    m = min(n, k + 1 + TIE_BUFFER)
    _, idx = tree.query(pts, k=m)
    if m == 1:
        idx = idx[:, None]
    # drop self, then re-rank candidates on exactly the oracle's key
    rows = np.arange(n)[:, None]
    keep = idx != rows
    # self can be absent from the candidate list when duplicates tie; pad by
    # dropping the last candidate instead
    counts = keep.sum(axis=1)
    for i in np.nonzero(counts == m)[0]:
        keep[i, m - 1] = False
    cand = idx[keep].reshape(n, m - 1)
    diff = pts[cand] - pts[:, None, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    order = np.lexsort((cand, d2), axis=1)[:, :k]
    return np.take_along_axis(cand, order, axis=1)


def knn_indices_bruteforce(points: np.ndarray, k: int) -> np.ndarray:
    """O(N^2) reference neighbour search with the same ordering contract."""
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need N > k >= 1, got N={n}, k={k}")
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("nmd,nmd->nm", diff, diff)
    np.fill_diagonal(d2, np.inf)
    idx = np.tile(np.arange(n), (n, 1))
    order = np.lexsort((idx, d2), axis=1)[:, :k]
    return order


def invariant_features(
    points: np.ndarray,
    k: int = 8,
    neighbor_indices: np.ndarray | None = None,
) -> np.ndarray:
    """Rotation-invariant feature matrix of shape (N, 4k).

    The cloud is centred on its centroid; for each point p and each of its k
    nearest neighbours q (in distance order) the feature tuple is
    (|p|, |q|, angle(p, q), azimuthal gap of q about the p axis), where the
    gap is the angle to the azimuthally-next neighbour around p's radial
    direction. All four are functions of norms and relative angles only.
    Points closer than RADIAL_EPS to the centroid get zero angular features.
    """
    pts = as_points(points)
    centered = pts - pts.mean(axis=0)
    nbr = knn_indices(centered, k) if neighbor_indices is None else neighbor_indices
    n = centered.shape[0]

    norms = np.linalg.norm(centered, axis=1)
    q = centered[nbr]                      # (N, k, 3)
    qnorms = np.linalg.norm(q, axis=2)     # (N, k)

    ok_radial = norms > RADIAL_EPS
    safe_norms = np.where(ok_radial, norms, 1.0)
    u = centered / safe_norms[:, None]     # radial axes

    cosang = np.einsum("nd,nkd->nk", u, q) / np.where(qnorms > RADIAL_EPS, qnorms, 1.0)
    angles = np.arccos(np.clip(cosang, -1.0, 1.0))
    angles[~ok_radial] = 0.0
    angles[qnorms <= RADIAL_EPS] = 0.0

    # orthonormal in-plane basis (e1, e2) with e2 = u x e1: right-handed about
    # u, so azimuths shift by a common offset under any global rotation and
    # the sorted gaps are invariant
    pivot = np.argmin(np.abs(u), axis=1)
    h = np.zeros((n, 3))
    h[np.arange(n), pivot] = 1.0
    e1 = np.cross(u, h)
    e1 /= np.maximum(np.linalg.norm(e1, axis=1, keepdims=True), 1e-30)
    e2 = np.cross(u, e1)

    x = np.einsum("nd,nkd->nk", e1, q)
    y = np.einsum("nd,nkd->nk", e2, q)
    proj = np.hypot(x, y)
    phi = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    phi[proj <= PROJECTION_EPS] = 0.0

    order = np.argsort(phi, axis=1, kind="stable")
    phi_sorted = np.take_along_axis(phi, order, axis=1)
    gaps_sorted = np.empty_like(phi_sorted)
    gaps_sorted[:, :-1] = phi_sorted[:, 1:] - phi_sorted[:, :-1]
    gaps_sorted[:, -1] = phi_sorted[:, 0] + 2.0 * np.pi - phi_sorted[:, -1]
    gaps = np.empty_like(gaps_sorted)
    np.put_along_axis(gaps, order, gaps_sorted, axis=1)
    gaps[~ok_radial] = 0.0

    feats = np.stack(
        [np.broadcast_to(norms[:, None], (n, k)), qnorms, angles, gaps], axis=2
    )
    return feats.reshape(n, 4 * k)
