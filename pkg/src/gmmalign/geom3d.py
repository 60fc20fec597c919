"""Core 3D types: point clouds, rigid transforms, rotation sampling and measurement.

Point clouds are plain float64 arrays of shape (N, 3). Rigid transforms are
`RigidTransform` values (rotation matrix + translation); rotations are kept as
3x3 matrices internally, quaternions are used only for uniform sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Type invariant on rotations; inputs drifting past REPAIR_LIMIT are rejected
# instead of silently projected.
ORTHONORMAL_TOL = 1e-9
REPAIR_LIMIT = 1e-5


def as_points(points) -> np.ndarray:
    """Validate and return an (N, 3) float64 point array, N >= 1, all finite."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("point cloud must contain at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


def orthonormalized(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar projection via symmetric eigendecomposition)."""
    m = np.asarray(matrix, dtype=np.float64)
    # polar factor of m: m (m^T m)^(-1/2)
    w, v = np.linalg.eigh(m.T @ m)
    w = np.clip(w, 1e-30, None)
    r = m @ (v * (1.0 / np.sqrt(w))) @ v.T
    if np.linalg.det(r) < 0:
        raise ValueError("matrix is closer to a reflection than a rotation")
    return r


def _rotation_defect(r: np.ndarray) -> float:
    return float(np.linalg.norm(r.T @ r - np.eye(3)))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> R x + t with R in SO(3)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite entries")
        defect = _rotation_defect(r)
        if defect > ORTHONORMAL_TOL:
            if defect > REPAIR_LIMIT:
                raise ValueError(f"rotation defect {defect:.3e} too large to repair")
            r = orthonormalized(r)
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "t", t)
        self.R.setflags(write=False)
        self.t.setflags(write=False)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(h: np.ndarray) -> "RigidTransform":
        """Build from a 4x4 homogeneous matrix with last row (0, 0, 0, 1)."""
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {h.shape}")
        if not np.allclose(h[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("last row of a homogeneous rigid matrix must be 0 0 0 1")
        return RigidTransform(h[:3, :3], h[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        h = np.eye(4)
        h[:3, :3] = self.R
        h[:3, 3] = self.t
        return h


def apply_transform(transform: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Apply x -> R x + t to every point; returns a new (N, 3) array."""
    pts = as_points(points)
    return pts @ transform.R.T + transform.t


def compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """Transform equal to applying `second`, then `first`."""
    r = first.R @ second.R
    if _rotation_defect(r) > ORTHONORMAL_TOL:
        r = orthonormalized(r)
    return RigidTransform(r, first.R @ second.t + first.t)


def invert(transform: RigidTransform) -> RigidTransform:
    return RigidTransform(transform.R.T, -transform.R.T @ transform.t)


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in [0, pi]; the arccos argument is clamped against rounding."""
    r = np.asarray(rotation, dtype=np.float64)
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3) (normalized Gaussian quaternion)."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.normal(size=4)
    return quaternion_to_matrix(q)


def random_transform(
    rng: np.random.Generator, translation_range: float = 0.5
) -> RigidTransform:
    """Uniform rotation plus translation uniform in [-range, range]^3."""
    t = rng.uniform(-translation_range, translation_range, size=3)
    return RigidTransform(random_rotation(rng), t)


def axis_angle_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about `axis` by `angle` radians."""
    u = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(u)
    if n < 1e-15:
        raise ValueError("rotation axis must be non-zero")
    u = u / n
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


# ---------------------------------------------------------------------------
# Text formats.
# Cloud: one point per line, three whitespace-separated decimals, '#' comments.
# Transform: 4 lines x 4 decimals, row-major homogeneous, last row 0 0 0 1.
# ---------------------------------------------------------------------------


def save_cloud(path, points: np.ndarray) -> None:
    pts = as_points(points)
    with open(path, "w", encoding="utf-8") as f:
        for p in pts:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_cloud(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            rows.append([float(v) for v in parts])
    if not rows:
        raise ValueError(f"{path}: no points found")
    return as_points(np.array(rows))


def save_transform(path, transform: RigidTransform) -> None:
    h = transform.matrix()
    with open(path, "w", encoding="utf-8") as f:
        for row in h:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_transform(path) -> RigidTransform:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            rows.append([float(v) for v in body.split()])
    h = np.array(rows)
    if h.shape != (4, 4):
        raise ValueError(f"{path}: expected a 4x4 matrix, got shape {h.shape}")
    return RigidTransform.from_matrix(h)
