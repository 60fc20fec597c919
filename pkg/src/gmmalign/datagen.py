"""Procedural registration-pair datasets.

Twelve parameterized shape families stand in for CAD model categories; every
protocol draws unrestricted rotations, translations uniform in [-0.5, 0.5]^3
and, where enabled, independent Gaussian noise on source and target.

Noise convention: the noise parameter is a variance. sigma2 = 0.01 means the
per-coordinate standard deviation is 0.1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geom3d import (
    RigidTransform,
    apply_transform,
    as_points,
    compose,
    invert,
    load_cloud,
    load_transform,
    random_rotation,
    random_transform,
    save_cloud,
    save_transform,
)

FAMILIES = (
    "box",
    "cylinder",
    "cone",
    "torus",
    "l_bracket",
    "stairs",
    "table",
    "lamp",
    "sphere_cluster",
    "extruded_polygon",
    "helix",
    "composite",
)

# fixed disjoint split for the unseen protocol; rotationally symmetric
# families (cylinder/lamp vs cone/torus) are balanced across the halves
UNSEEN_TRAIN_FAMILIES = ("box", "cylinder", "stairs", "lamp", "extruded_polygon", "composite")
UNSEEN_TEST_FAMILIES = ("cone", "torus", "l_bracket", "table", "sphere_cluster", "helix")

PARTIAL_GRID = 200          # cells per axis over [-1, 1]^2
PARTIAL_DENSITY = 50        # dense-base multiplier so the depth test occludes
PROTOCOLS = ("clean", "noisy", "unseen", "partial")
NOISE_VARIANCE = 0.01       # variance, i.e. sigma = 0.1
TRANSLATION_RANGE = 0.5


@dataclass(frozen=True)
class ShapeSpec:
    """One sampled shape: family name, family parameters, point-sampling seed."""

    category: str
    params: dict
    seed: int


@dataclass(frozen=True)
class RegistrationPair:
    source: np.ndarray
    target: np.ndarray
    transform: RigidTransform  # maps source onto target (up to noise/partiality)
    category: str
    sigma2: float
    partial: bool
    pair_id: str = ""


@dataclass
class PairDataset:
    protocol: str
    seed: int
    points_per_cloud: int
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    train_families: tuple = FAMILIES
    test_families: tuple = FAMILIES


# ---------------------------------------------------------------------------
# Surface patches: each family builds (area, sampler) pairs; shapes are
# sampled area-uniformly across patches and normalized into [-1, 1]^3.
# ---------------------------------------------------------------------------


def _rect_patch(origin, edge_u, edge_v):
    origin = np.asarray(origin, dtype=float)
    edge_u = np.asarray(edge_u, dtype=float)
    edge_v = np.asarray(edge_v, dtype=float)
    area = float(np.linalg.norm(np.cross(edge_u, edge_v)))

    def sample(count, rng, o=origin, eu=edge_u, ev=edge_v):
        uv = rng.random((count, 2))
        return o + uv[:, :1] * eu + uv[:, 1:] * ev

    return area, sample


def _box_patches(center, half):
    cx, cy, cz = center
    hx, hy, hz = half
    patches = []
    for sign in (-1.0, 1.0):
        patches.append(
            _rect_patch((cx + sign * hx, cy - hy, cz - hz), (0, 2 * hy, 0), (0, 0, 2 * hz))
        )
        patches.append(
            _rect_patch((cx - hx, cy + sign * hy, cz - hz), (2 * hx, 0, 0), (0, 0, 2 * hz))
        )
        patches.append(
            _rect_patch((cx - hx, cy - hy, cz + sign * hz), (2 * hx, 0, 0), (0, 2 * hy, 0))
        )
    return patches


def _disk_patch(center, radius, z_sign=1.0):
    center = np.asarray(center, dtype=float)

    def sample(count, rng, c=center, r=radius):
        rho = r * np.sqrt(rng.random(count))
        ang = rng.uniform(0.0, 2.0 * np.pi, count)
        pts = np.column_stack([rho * np.cos(ang), rho * np.sin(ang), np.zeros(count)])
        return c + pts

    return float(np.pi * radius**2), sample


def _cylinder_lateral_patch(center, radius, height):
    center = np.asarray(center, dtype=float)

    def sample(count, rng, c=center, r=radius, h=height):
        ang = rng.uniform(0.0, 2.0 * np.pi, count)
        z = rng.uniform(-h / 2.0, h / 2.0, count)
        return c + np.column_stack([r * np.cos(ang), r * np.sin(ang), z])

    return float(2.0 * np.pi * radius * height), sample


def _cone_lateral_patch(base_center, radius, height):
    base_center = np.asarray(base_center, dtype=float)

    def sample(count, rng, c=base_center, r=radius, h=height):
        f = np.sqrt(rng.random(count))  # area density grows linearly from apex
        ang = rng.uniform(0.0, 2.0 * np.pi, count)
        return c + np.column_stack(
            [f * r * np.cos(ang), f * r * np.sin(ang), h * (1.0 - f)]
        )

    slant = float(np.hypot(radius, height))
    return float(np.pi * radius * slant), sample


def _sphere_patch(center, radius):
    center = np.asarray(center, dtype=float)

    def sample(count, rng, c=center, r=radius):
        v = rng.standard_normal((count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return c + r * v

    return float(4.0 * np.pi * radius**2), sample


def _torus_patches(ring_radius, tube_radius):
    def sample(count, rng, rr=ring_radius, tr=tube_radius):
        out = np.empty((count, 3))
        done = 0
        while done < count:
            m = max(count - done, 32) * 2
            theta = rng.uniform(0.0, 2.0 * np.pi, m)
            phi = rng.uniform(0.0, 2.0 * np.pi, m)
            # area element proportional to rr + tr*cos(phi)
            accept = rng.random(m) < (rr + tr * np.cos(phi)) / (rr + tr)
            theta, phi = theta[accept], phi[accept]
            take = min(count - done, theta.size)
            radial = rr + tr * np.cos(phi[:take])
            out[done : done + take] = np.column_stack(
                [
                    radial * np.cos(theta[:take]),
                    radial * np.sin(theta[:take]),
                    tr * np.sin(phi[:take]),
                ]
            )
            done += take
        return out

    area = float(4.0 * np.pi**2 * ring_radius * tube_radius)
    return [(area, sample)]


def _polygon_patches(vertices_2d, height):
    verts = np.asarray(vertices_2d, dtype=float)
    k = verts.shape[0]
    patches = []
    # caps: fan triangulation from the centroid (polygon is convex)
    centroid = verts.mean(axis=0)
    for z in (0.0, height):
        for i in range(k):
            a2, b2 = verts[i], verts[(i + 1) % k]
            pa = np.array([centroid[0], centroid[1], z])
            ea = np.array([a2[0] - centroid[0], a2[1] - centroid[1], 0.0])
            eb = np.array([b2[0] - centroid[0], b2[1] - centroid[1], 0.0])
            area = 0.5 * float(np.linalg.norm(np.cross(ea, eb)))

            def sample(count, rng, o=pa, u=ea, v=eb):
                r1 = rng.random((count, 1))
                r2 = rng.random((count, 1))
                flip = (r1 + r2) > 1.0
                r1 = np.where(flip, 1.0 - r1, r1)
                r2 = np.where(flip, 1.0 - r2, r2)
                return o + r1 * u + r2 * v

            patches.append((area, sample))
    # sides
    for i in range(k):
        a2, b2 = verts[i], verts[(i + 1) % k]
        patches.append(
            _rect_patch(
                (a2[0], a2[1], 0.0),
                (b2[0] - a2[0], b2[1] - a2[1], 0.0),
                (0.0, 0.0, height),
            )
        )
    return patches


def _helix_patches(helix_radius, pitch, turns, tube_radius):
    b = pitch / (2.0 * np.pi)
    t_max = 2.0 * np.pi * turns
    speed = np.hypot(helix_radius, b)
    curvature = helix_radius / (helix_radius**2 + b**2)

    def sample(count, rng, a=helix_radius, bb=b, tm=t_max, r=tube_radius, kap=curvature):
        out = np.empty((count, 3))
        done = 0
        while done < count:
            m = max(count - done, 32) * 2
            t = rng.uniform(0.0, tm, m)
            th = rng.uniform(0.0, 2.0 * np.pi, m)
            accept = rng.random(m) < (1.0 - kap * r * np.cos(th)) / (1.0 + kap * r)
            t, th = t[accept], th[accept]
            take = min(count - done, t.size)
            t, th = t[:take], th[:take]
            ct, st = np.cos(t), np.sin(t)
            center = np.column_stack([a * ct, a * st, bb * t])
            normal = np.column_stack([-ct, -st, np.zeros_like(t)])
            tangent = np.column_stack([-a * st, a * ct, np.full_like(t, bb)]) / speed
            binormal = np.cross(tangent, normal)
            out[done : done + take] = (
                center + r * (np.cos(th)[:, None] * normal + np.sin(th)[:, None] * binormal)
            )
            done += take
        return out

    area = float(2.0 * np.pi * tube_radius * speed * t_max)
    return [(area, sample)]


def _require(params, names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"shape parameters missing {missing}")


def _family_patches(category: str, params: dict):
    if category == "box":
        _require(params, ["half_extents"])
        h = np.asarray(params["half_extents"], dtype=float)
        if h.shape != (3,) or np.any(h <= 0):
            raise ValueError("box half_extents must be three positive numbers")
        return _box_patches((0.0, 0.0, 0.0), h)

    if category == "cylinder":
        _require(params, ["radius", "height"])
        r, h = float(params["radius"]), float(params["height"])
        if r <= 0 or h <= 0:
            raise ValueError("cylinder radius and height must be positive")
        top = _disk_patch((0, 0, h / 2), r)
        bottom = _disk_patch((0, 0, -h / 2), r)
        return [top, bottom, _cylinder_lateral_patch((0, 0, 0), r, h)]

    if category == "cone":
        _require(params, ["radius", "height"])
        r, h = float(params["radius"]), float(params["height"])
        if r <= 0 or h <= 0:
            raise ValueError("cone radius and height must be positive")
        return [_disk_patch((0, 0, 0), r), _cone_lateral_patch((0, 0, 0), r, h)]

    if category == "torus":
        _require(params, ["ring_radius", "tube_radius"])
        rr, tr = float(params["ring_radius"]), float(params["tube_radius"])
        if not 0 < tr < rr:
            raise ValueError("torus needs 0 < tube_radius < ring_radius")
        return _torus_patches(rr, tr)

    if category == "l_bracket":
        _require(params, ["leg", "thickness", "width"])
        leg, th, w = float(params["leg"]), float(params["thickness"]), float(params["width"])
        return _box_patches((0, 0, leg / 2), (th / 2, w / 2, leg / 2)) + _box_patches(
            (leg / 2, 0, th / 2), (leg / 2, w / 2, th / 2)
        )

    if category == "stairs":
        _require(params, ["steps", "run", "rise", "width"])
        steps = int(params["steps"])
        run, rise, w = float(params["run"]), float(params["rise"]), float(params["width"])
        if steps < 2:
            raise ValueError("stairs need at least 2 steps")
        patches = []
        for i in range(steps):
            patches += _box_patches(
                ((i + 0.5) * run, 0.0, (i + 1) * rise / 2.0),
                (run / 2, w / 2, (i + 1) * rise / 2.0),
            )
        return patches

    if category == "table":
        _require(params, ["top", "top_thickness", "leg_height", "leg_thickness"])
        tw, td = params["top"]
        tt = float(params["top_thickness"])
        lh, lt = float(params["leg_height"]), float(params["leg_thickness"])
        patches = _box_patches((0, 0, lh + tt / 2), (tw / 2, td / 2, tt / 2))
        for sx in (-1, 1):
            for sy in (-1, 1):
                patches += _box_patches(
                    (sx * (tw / 2 - lt), sy * (td / 2 - lt), lh / 2),
                    (lt / 2, lt / 2, lh / 2),
                )
        return patches

    if category == "lamp":
        _require(params, ["base_radius", "stem_radius", "stem_height", "shade_radius", "shade_height"])
        br = float(params["base_radius"])
        sr, sh = float(params["stem_radius"]), float(params["stem_height"])
        cr, ch = float(params["shade_radius"]), float(params["shade_height"])
        base_h = 0.1 * sh
        patches = [
            _disk_patch((0, 0, 0), br),
            _disk_patch((0, 0, base_h), br),
            _cylinder_lateral_patch((0, 0, base_h / 2), br, base_h),
            _cylinder_lateral_patch((0, 0, base_h + sh / 2), sr, sh),
        ]
        cone_area, cone_sample = _cone_lateral_patch((0, 0, base_h + sh), cr, ch)
        patches.append((cone_area, cone_sample))
        return patches

    if category == "sphere_cluster":
        _require(params, ["centers", "radii"])
        centers = np.asarray(params["centers"], dtype=float)
        radii = np.asarray(params["radii"], dtype=float)
        if centers.ndim != 2 or centers.shape[0] != radii.shape[0] or np.any(radii <= 0):
            raise ValueError("sphere cluster needs matching centers and positive radii")
        return [_sphere_patch(c, r) for c, r in zip(centers, radii)]

    if category == "extruded_polygon":
        _require(params, ["vertices", "height"])
        return _polygon_patches(params["vertices"], float(params["height"]))

    if category == "helix":
        _require(params, ["helix_radius", "pitch", "turns", "tube_radius"])
        return _helix_patches(
            float(params["helix_radius"]),
            float(params["pitch"]),
            float(params["turns"]),
            float(params["tube_radius"]),
        )

    if category == "composite":
        _require(params, ["parts"])
        patches = []
        for part in params["parts"]:
            kind = part["kind"]
            offset = np.asarray(part.get("offset", (0, 0, 0)), dtype=float)
            if kind == "box":
                sub = _box_patches(offset, np.asarray(part["half_extents"], dtype=float))
            elif kind == "cylinder":
                r, h = float(part["radius"]), float(part["height"])
                sub = [
                    _disk_patch(offset + (0, 0, h / 2), r),
                    _disk_patch(offset + (0, 0, -h / 2), r),
                    _cylinder_lateral_patch(offset, r, h),
                ]
            elif kind == "sphere":
                sub = [_sphere_patch(offset, float(part["radius"]))]
            else:
                raise ValueError(f"unknown composite part kind {kind!r}")
            patches += sub
        return patches

    raise ValueError(f"unknown shape family {category!r}")


def random_spec(category: str, rng: np.random.Generator) -> ShapeSpec:
    """Draw family parameters from the per-family ranges."""
    seed = int(rng.integers(2**63))
    if category == "box":
        params = {"half_extents": rng.uniform(0.35, 1.0, 3).tolist()}
    elif category == "cylinder":
        params = {"radius": float(rng.uniform(0.25, 0.6)), "height": float(rng.uniform(1.0, 2.0))}
    elif category == "cone":
        params = {"radius": float(rng.uniform(0.4, 0.8)), "height": float(rng.uniform(0.9, 1.8))}
    elif category == "torus":
        ring = float(rng.uniform(0.6, 1.0))
        params = {"ring_radius": ring, "tube_radius": float(rng.uniform(0.15, 0.35) * ring)}
    elif category == "l_bracket":
        params = {
            "leg": float(rng.uniform(0.8, 1.6)),
            "thickness": float(rng.uniform(0.15, 0.4)),
            "width": float(rng.uniform(0.4, 1.0)),
        }
    elif category == "stairs":
        params = {
            "steps": int(rng.integers(3, 7)),
            "run": float(rng.uniform(0.2, 0.4)),
            "rise": float(rng.uniform(0.15, 0.3)),
            "width": float(rng.uniform(0.8, 1.6)),
        }
    elif category == "table":
        params = {
            "top": [float(rng.uniform(1.0, 1.8)), float(rng.uniform(0.7, 1.4))],
            "top_thickness": float(rng.uniform(0.06, 0.15)),
            "leg_height": float(rng.uniform(0.6, 1.2)),
            "leg_thickness": float(rng.uniform(0.06, 0.14)),
        }
    elif category == "lamp":
        params = {
            "base_radius": float(rng.uniform(0.25, 0.4)),
            "stem_radius": float(rng.uniform(0.03, 0.06)),
            "stem_height": float(rng.uniform(0.8, 1.4)),
            "shade_radius": float(rng.uniform(0.25, 0.45)),
            "shade_height": float(rng.uniform(0.25, 0.45)),
        }
    elif category == "sphere_cluster":
        k = int(rng.integers(3, 7))
        params = {
            "centers": rng.uniform(-0.6, 0.6, (k, 3)).tolist(),
            "radii": rng.uniform(0.2, 0.45, k).tolist(),
        }
    elif category == "extruded_polygon":
        k = int(rng.integers(5, 10))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, k))
        radii = rng.uniform(0.5, 1.0, k)
        verts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        params = {"vertices": verts.tolist(), "height": float(rng.uniform(0.5, 1.5))}
    elif category == "helix":
        params = {
            "helix_radius": float(rng.uniform(0.45, 0.7)),
            "pitch": float(rng.uniform(0.35, 0.6)),
            "turns": float(rng.uniform(1.5, 2.75)),
            "tube_radius": float(rng.uniform(0.08, 0.14)),
        }
    elif category == "composite":
        kinds = rng.choice(["box", "cylinder", "sphere"], size=2, replace=True)
        parts = []
        for i, kind in enumerate(kinds):
            offset = rng.uniform(-0.5, 0.5, 3)
            offset[2] = i * rng.uniform(0.4, 0.8)
            if kind == "box":
                parts.append(
                    {"kind": "box", "offset": offset.tolist(),
                     "half_extents": rng.uniform(0.25, 0.6, 3).tolist()}
                )
            elif kind == "cylinder":
                parts.append(
                    {"kind": "cylinder", "offset": offset.tolist(),
                     "radius": float(rng.uniform(0.15, 0.4)),
                     "height": float(rng.uniform(0.5, 1.2))}
                )
            else:
                parts.append(
                    {"kind": "sphere", "offset": offset.tolist(),
                     "radius": float(rng.uniform(0.25, 0.5))}
                )
        params = {"parts": parts}
    else:
        raise ValueError(f"unknown shape family {category!r}")
    return ShapeSpec(category, params, seed)


def sample_shape(spec: ShapeSpec, n_points: int) -> np.ndarray:
    """Sample n_points area-uniformly on the shape surface, then centre on the
    bounding-box midpoint and scale so the cloud exactly fits [-1, 1]^3."""
    if n_points < 1:
        raise ValueError("need at least one point")
    patches = _family_patches(spec.category, spec.params)
    areas = np.array([a for a, _ in patches])
    if np.any(areas <= 0):
        raise ValueError("shape has a degenerate zero-area patch")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    counts = np.bincount(
        rng.choice(len(patches), size=n_points, p=areas / areas.sum()),
        minlength=len(patches),
    )
    chunks = [
        patches[i][1](int(c), rng) for i, c in enumerate(counts) if c > 0
    ]
    pts = np.concatenate(chunks, axis=0)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    scale = float(np.max(hi - lo)) / 2.0
    if scale <= 0:
        scale = 1.0
    return (pts - center) / scale


# ---------------------------------------------------------------------------
# Pair assembly
# ---------------------------------------------------------------------------


def make_pair(
    points: np.ndarray,
    sigma_noise: float,
    rng: np.random.Generator,
    category: str = "",
    pair_id: str = "",
) -> RegistrationPair:
    """Two independent rigid placements of the same points, plus independent
    per-coordinate Gaussian noise of variance `sigma_noise` on each side.

    The recorded transform is target-placement o inverse(source-placement),
    so target = transform(source) exactly when sigma_noise is 0.
    """
    if sigma_noise < 0:
        raise ValueError("noise variance must be non-negative")
    pts = as_points(points)
    t_src = random_transform(rng, TRANSLATION_RANGE)
    t_tgt = random_transform(rng, TRANSLATION_RANGE)
    source = apply_transform(t_src, pts)
    target = apply_transform(t_tgt, pts)
    if sigma_noise > 0:
        std = float(np.sqrt(sigma_noise))
        source = source + rng.normal(0.0, std, source.shape)
        target = target + rng.normal(0.0, std, target.shape)
    return RegistrationPair(
        source=source,
        target=target,
        transform=compose(t_tgt, invert(t_src)),
        category=category,
        sigma2=float(sigma_noise),
        partial=False,
        pair_id=pair_id,
    )


def make_partial(
    points: np.ndarray,
    rng: np.random.Generator,
    rotation: np.ndarray | None = None,
) -> np.ndarray:
    """Orthographic depth-camera approximation: rotate the cloud, bin into a
    PARTIAL_GRID x PARTIAL_GRID grid over [-1, 1]^2 in xy, and keep the point
    with the smallest z in each occupied cell. Noise is the caller's job.

    Pass `rotation` to pin the view; by default one is drawn from `rng`.
    Points rotated outside the grid are clamped into the border cells.
    """
    pts = as_points(points)
    if rotation is None:
        rotation = random_rotation(rng)
    rotated = pts @ np.asarray(rotation, dtype=float).T
    ij = np.floor((rotated[:, :2] + 1.0) / 2.0 * PARTIAL_GRID).astype(int)
    ij = np.clip(ij, 0, PARTIAL_GRID - 1)
    cells = ij[:, 0] * PARTIAL_GRID + ij[:, 1]
    order = np.argsort(rotated[:, 2], kind="stable")
    _, first = np.unique(cells[order], return_index=True)
    keep = np.sort(order[first])
    return rotated[keep]


def _make_partial_pair(
    base: np.ndarray,
    n_points: int,
    sigma_noise: float,
    rng: np.random.Generator,
    category: str,
    pair_id: str,
) -> RegistrationPair:
    """Partial pair: independent views of a dense base cloud, each depth-culled,
    subsampled to at most n_points, translated and noised."""
    sides = []
    transforms = []
    for _ in range(2):
        rot = random_rotation(rng)
        visible = make_partial(base, rng, rotation=rot)
        if visible.shape[0] > n_points:
            idx = np.sort(rng.choice(visible.shape[0], size=n_points, replace=False))
            visible = visible[idx]
        t = rng.uniform(-TRANSLATION_RANGE, TRANSLATION_RANGE, 3)
        cloud = visible + t
        if sigma_noise > 0:
            cloud = cloud + rng.normal(0.0, float(np.sqrt(sigma_noise)), cloud.shape)
        sides.append(cloud)
        transforms.append(RigidTransform(rot, t))
    return RegistrationPair(
        source=sides[0],
        target=sides[1],
        transform=compose(transforms[1], invert(transforms[0])),
        category=category,
        sigma2=float(sigma_noise),
        partial=True,
        pair_id=pair_id,
    )


def build_dataset(
    protocol: str,
    n_train: int,
    n_test: int,
    points_per_cloud: int = 256,
    seed: int = 0,
) -> PairDataset:
    """Deterministic dataset of registration pairs for one protocol.

    clean: no noise; noisy/partial: variance NOISE_VARIANCE on both sides;
    unseen: noisy pairs with disjoint family sets between train and test.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if n_train < 0 or n_test < 0 or points_per_cloud < 1:
        raise ValueError("invalid dataset sizes")

    if protocol == "unseen":
        train_families, test_families = UNSEEN_TRAIN_FAMILIES, UNSEEN_TEST_FAMILIES
    else:
        train_families = test_families = FAMILIES
    sigma2 = 0.0 if protocol == "clean" else NOISE_VARIANCE

    ds = PairDataset(
        protocol=protocol,
        seed=seed,
        points_per_cloud=points_per_cloud,
        train_families=tuple(train_families),
        test_families=tuple(test_families),
    )
    for split_id, (split, count, families) in enumerate(
        [("train", n_train, train_families), ("test", n_test, test_families)]
    ):
        out = ds.train if split == "train" else ds.test
        for i in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(split_id, i)))
            family = families[i % len(families)]
            spec = random_spec(family, rng)
            pair_id = f"{split}_{i:05d}"
            if protocol == "partial":
                base = sample_shape(spec, PARTIAL_DENSITY * points_per_cloud)
                pair = _make_partial_pair(base, points_per_cloud, sigma2, rng, family, pair_id)
            else:
                base = sample_shape(spec, points_per_cloud)
                pair = make_pair(base, sigma2, rng, category=family, pair_id=pair_id)
            out.append(pair)
    return ds


# ---------------------------------------------------------------------------
# On-disk layout: manifest.json plus one directory per pair holding
# source.txt / target.txt / transform.txt in the geom3d text formats.
# ---------------------------------------------------------------------------


def dataset_manifest(ds: PairDataset) -> dict:
    pairs = []
    for split in ("train", "test"):
        for pair in getattr(ds, split):
            pairs.append(
                {
                    "id": pair.pair_id,
                    "split": split,
                    "category": pair.category,
                    "sigma2": pair.sigma2,
                    "partial": pair.partial,
                    "files": {
                        "source": f"pairs/{pair.pair_id}/source.txt",
                        "target": f"pairs/{pair.pair_id}/target.txt",
                        "transform": f"pairs/{pair.pair_id}/transform.txt",
                    },
                }
            )
    return {
        "protocol": ds.protocol,
        "seed": ds.seed,
        "points_per_cloud": ds.points_per_cloud,
        "train_families": list(ds.train_families),
        "test_families": list(ds.test_families),
        "pairs": pairs,
    }


def write_dataset(ds: PairDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset_manifest(ds)
    for split in ("train", "test"):
        for pair in getattr(ds, split):
            pdir = out / "pairs" / pair.pair_id
            pdir.mkdir(parents=True, exist_ok=True)
            save_cloud(pdir / "source.txt", pair.source)
            save_cloud(pdir / "target.txt", pair.target)
            save_transform(pdir / "transform.txt", pair.transform)
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(in_dir) -> PairDataset:
    root = Path(in_dir)
    with open(root / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    ds = PairDataset(
        protocol=manifest["protocol"],
        seed=manifest["seed"],
        points_per_cloud=manifest["points_per_cloud"],
        train_families=tuple(manifest["train_families"]),
        test_families=tuple(manifest["test_families"]),
    )
    for row in manifest["pairs"]:
        pair = RegistrationPair(
            source=load_cloud(root / row["files"]["source"]),
            target=load_cloud(root / row["files"]["target"]),
            transform=load_transform(root / row["files"]["transform"]),
            category=row["category"],
            sigma2=row["sigma2"],
            partial=row["partial"],
            pair_id=row["id"],
        )
        (ds.train if row["split"] == "train" else ds.test).append(pair)
    return ds
