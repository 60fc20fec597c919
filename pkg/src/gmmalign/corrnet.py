"""Correspondence network and training loop for one-shot registration.

A point-wise shared MLP with a max-pooled global descriptor scores every
point against J mixture components; the soft assignments feed the closed-form
mixture update and pose solver, and a mean-squared pose error is
backpropagated through the whole chain (softmax, mixture update, weighted SVD
alignment) by hand-written reverse-mode differentiation. No autodiff
framework is used; the gradient is exact for this fixed graph and is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .features import invariant_features
from .geom3d import RigidTransform, as_points
from .latent_gmm import MThetaStats, m_theta_stats
from .mt_solver import DegenerateConfiguration, umeyama_cached

HIDDEN1 = 64
HIDDEN2 = 128
HEAD_HIDDEN = 128
# two singular values closer than this (relative to the largest) make the
# alignment differential blow up; the sample's gradient is zeroed instead
SVD_GAP_RTOL = 1e-6

CHECKPOINT_MAGIC = b"GMALIGN\x00"
CHECKPOINT_VERSION = 1


class GradientClampWarning(RuntimeWarning):
    """A sample's gradient was zeroed near a repeated-singular-value point."""


class DegenerateSampleWarning(RuntimeWarning):
    """A sample was skipped because its pose solve was degenerate."""


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule; the defaults are the full-scale recipe, tests and
    demos override to desk scale."""

    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lr_patience: int = 10
    lr_decay: float = 0.5
    seed: int = 0
    n_components: int = 16
    input_mode: str = "invariant_features"  # or "raw_xyz"
    neighbors: int = 8
    centroid_mode: str = "mixture"
    skip_degenerate: bool = True

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr_patience", "n_components", "neighbors"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.input_mode not in ("invariant_features", "raw_xyz"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")
        if self.centroid_mode not in ("mixture", "objective"):
            raise ValueError(f"unknown centroid_mode {self.centroid_mode!r}")

    @property
    def input_dim(self) -> int:
        return 4 * self.neighbors if self.input_mode == "invariant_features" else 3


def _layer_shapes(input_dim: int, n_components: int):
    return [
        ("w1", (input_dim, HIDDEN1)),
        ("b1", (HIDDEN1,)),
        ("w2", (HIDDEN1, HIDDEN2)),
        ("b2", (HIDDEN2,)),
        ("w3", (2 * HIDDEN2, HEAD_HIDDEN)),
        ("b3", (HEAD_HIDDEN,)),
        ("w4", (HEAD_HIDDEN, n_components)),
        ("b4", (n_components,)),
    ]


@dataclass(frozen=True)
class CorrNetParams:
    """Network weights stored as one flat vector plus a layout map."""

    theta: np.ndarray
    input_dim: int
    n_components: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        expected = sum(int(np.prod(s)) for _, s in self.layout_shapes())
        if theta.shape[0] != expected:
            raise ValueError(f"flat vector has {theta.shape[0]} entries, layout needs {expected}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "theta", theta)

    def layout_shapes(self):
        return _layer_shapes(self.input_dim, self.n_components)

    def layout(self):
        """(name, offset, length, shape) rows covering theta exactly once."""
        rows = []
        offset = 0
        for name, shape in self.layout_shapes():
            length = int(np.prod(shape))
            rows.append((name, offset, length, shape))
            offset += length
        return rows

    def views(self) -> dict:
        """Name -> array view into the flat vector (no copies)."""
        return {
            name: self.theta[off : off + length].reshape(shape)
            for name, off, length, shape in self.layout()
        }

    def copy_with(self, theta: np.ndarray) -> "CorrNetParams":
        return CorrNetParams(theta, self.input_dim, self.n_components)


def init_params(input_dim: int, n_components: int, rng: np.random.Generator) -> CorrNetParams:
    """Uniform fan-in initialization for weights, zero biases."""
    chunks = []
    for name, shape in _layer_shapes(input_dim, n_components):
        if name.startswith("w"):
            bound = 1.0 / np.sqrt(shape[0])
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        else:
            chunks.append(np.zeros(int(np.prod(shape))))
    return CorrNetParams(np.concatenate(chunks), input_dim, n_components)


# ---------------------------------------------------------------------------
# Forward / backward through the network
# ---------------------------------------------------------------------------


def _forward_cached(params: CorrNetParams, feats: np.ndarray):
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != params.input_dim:
        raise ValueError(
            f"feature matrix has dimension {f.shape[1] if f.ndim == 2 else f.shape}, "
            f"network expects {params.input_dim}"
        )
    p = params.views()
    z1 = f @ p["w1"] + p["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ p["w2"] + p["b2"]
    h2 = np.maximum(z2, 0.0)
    pool_idx = np.argmax(h2, axis=0)  # first max index: deterministic ties
    pooled = h2[pool_idx, np.arange(h2.shape[1])]
    u = np.concatenate([h2, np.broadcast_to(pooled, h2.shape)], axis=1)
    z3 = u @ p["w3"] + p["b3"]
    h3 = np.maximum(z3, 0.0)
    z4 = h3 @ p["w4"] + p["b4"]
    zmax = z4.max(axis=1, keepdims=True)
    e = np.exp(z4 - zmax)
    gamma = e / e.sum(axis=1, keepdims=True)
    cache = dict(f=f, z1=z1, h1=h1, z2=z2, h2=h2, pool_idx=pool_idx, z3=z3, h3=h3, gamma=gamma)
    return gamma, cache


def forward(params: CorrNetParams, feats: np.ndarray) -> np.ndarray:
    """Row-stochastic (N, J) assignment matrix from per-point features."""
    gamma, _ = _forward_cached(params, feats)
    return gamma


def _network_backward(params: CorrNetParams, cache: dict, d_gamma: np.ndarray, grad_views: dict):
    """Accumulate d(loss)/d(theta) for one cloud given d(loss)/d(gamma)."""
    p = params.views()
    gamma = cache["gamma"]
    dz4 = gamma * (d_gamma - np.sum(d_gamma * gamma, axis=1, keepdims=True))
    grad_views["w4"] += cache["h3"].T @ dz4
    grad_views["b4"] += dz4.sum(axis=0)
    dh3 = dz4 @ p["w4"].T
    dz3 = dh3 * (cache["z3"] > 0)
    u = np.concatenate(
        [cache["h2"], np.broadcast_to(cache["h2"][cache["pool_idx"], np.arange(HIDDEN2)], cache["h2"].shape)],
        axis=1,
    )
    grad_views["w3"] += u.T @ dz3
    grad_views["b3"] += dz3.sum(axis=0)
    du = dz3 @ p["w3"].T
    dh2 = du[:, :HIDDEN2].copy()
    dpool = du[:, HIDDEN2:].sum(axis=0)
    dh2[cache["pool_idx"], np.arange(HIDDEN2)] += dpool
    dz2 = dh2 * (cache["z2"] > 0)
    grad_views["w2"] += cache["h1"].T @ dz2
    grad_views["b2"] += dz2.sum(axis=0)
    dh1 = dz2 @ p["w2"].T
    dz1 = dh1 * (cache["z1"] > 0)
    grad_views["w1"] += cache["f"].T @ dz1
    grad_views["b1"] += dz1.sum(axis=0)


# ---------------------------------------------------------------------------
# Forward / backward through the mixture update and the pose solver
# ---------------------------------------------------------------------------


def _svd_rotation_backward(cache, d_r):
    """d(loss)/dM given d(loss)/dR for R = U diag(1,1,d) V^T, with the sign
    factor treated as locally constant. Returns None when two singular values
    are too close for the differential to be trusted."""
    u, s, v, d = cache["u"], cache["s"], cache["v"], cache["d"]
    if s[0] <= 0.0:
        return None
    if (s[0] - s[1]) < SVD_GAP_RTOL * s[0] or (s[1] - s[2]) < SVD_GAP_RTOL * s[0] or (
        s[0] - s[2]
    ) < SVD_GAP_RTOL * s[0]:
        return None
    g = u.T @ d_r @ v
    dvec = np.array([1.0, 1.0, d])
    si, sj = s[:, None], s[None, :]
    di, dj = dvec[:, None], dvec[None, :]
    denom = sj**2 - si**2
    np.fill_diagonal(denom, 1.0)
    k = (g * (dj * sj - di * si) - g.T * (di * sj - dj * si)) / denom
    np.fill_diagonal(k, 0.0)
    return u @ k @ v.T


def _umeyama_backward(cache, d_r, d_t):
    """Backward of the weighted alignment. Returns (d_src_means, d_tgt_means,
    d_weights, d_cweights) or None if the SVD differential was clamped."""
    r = cache["r"]
    # t = tgt_c - R src_c
    d_tgt_c = d_t.copy()
    d_src_c = -(r.T @ d_t)
    d_r = d_r - np.outer(d_t, cache["src_c"])
    d_m = _svd_rotation_backward(cache, d_r)
    if d_m is None:
        return None
    a, b, w = cache["a"], cache["b"], cache["weights"]
    d_w = np.einsum("jd,de,je->j", a, d_m, b)
    d_a = w[:, None] * (b @ d_m.T)
    d_b = w[:, None] * (a @ d_m)
    d_tgt = d_a.copy()
    d_src = d_b.copy()
    d_tgt_c = d_tgt_c - d_a.sum(axis=0)
    d_src_c = d_src_c - d_b.sum(axis=0)
    cn = cache["cn"]
    d_tgt += cn[:, None] * d_tgt_c
    d_src += cn[:, None] * d_src_c
    d_cn = cache["tgt_means"] @ d_tgt_c + cache["src_means"] @ d_src_c
    d_cw = (d_cn - cn @ d_cn) / cache["csum"]
    return d_src, d_tgt, d_w, d_cw


def _m_theta_backward(stats: MThetaStats, points: np.ndarray, d_pi, d_mu, d_var):
    """d(loss)/d(gamma) for the closed-form mixture update."""
    counts = stats.counts
    low = stats.low_weight
    safe = np.where(low, 1.0, counts)
    n = points.shape[0]
    var_blocked = low | stats.floored
    d_var = np.where(var_blocked, 0.0, d_var)
    d_mu = np.where(low[:, None], 0.0, d_mu)

    gq = d_var / (3.0 * safe)
    d_counts = d_pi / n
    d_counts = d_counts - stats.raw_variances / safe * d_var
    dm = d_mu / safe[:, None]                      # (J, 3)
    d_counts = d_counts - np.einsum("jd,jd->j", stats.gmm.means, dm)
    # means of low-weight components were replaced by the centroid; the
    # pre-substitution means define sq_dists, but dm is already zeroed there
    d_gamma = points @ dm.T + d_counts[None, :] + stats.sq_dists * gq[None, :]
    return d_gamma


# ---------------------------------------------------------------------------
# Pose loss
# ---------------------------------------------------------------------------


def loss(transform: RigidTransform, inverse_transform: RigidTransform, truth: RigidTransform) -> float:
    """Mean-squared pose error over homogeneous 4x4 entries:
    ||H(T) H(T_gt)^-1 - I||_F^2 + ||H(T_hat) H(T_gt) - I||_F^2."""
    h_gt = truth.matrix()
    a = transform.matrix() @ np.linalg.inv(h_gt) - np.eye(4)
    b = inverse_transform.matrix() @ h_gt - np.eye(4)
    return float(np.sum(a * a) + np.sum(b * b))


def _homogeneous(r, t):
    h = np.eye(4)
    h[:3, :3] = r
    h[:3, 3] = t
    return h


# ---------------------------------------------------------------------------
# Full pipeline for one pair
# ---------------------------------------------------------------------------


def pipeline_features(points: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.input_mode == "invariant_features":
        return invariant_features(points, cfg.neighbors)
    return as_points(points)


def _direction_forward(gamma_stats_src: MThetaStats, gamma_stats_tgt: MThetaStats, centroid_mode):
    src = gamma_stats_src.gmm
    tgt = gamma_stats_tgt.gmm
    w = src.weights / tgt.variances
    cw = src.weights if centroid_mode == "mixture" else w
    return umeyama_cached(src.means, tgt.means, w, cw)


def _direction_backward(cache, stats_src, stats_tgt, d_r, d_t, centroid_mode):
    """Distribute pose gradients onto the two mixtures' parameters.

    Returns (d_pi_src, d_mu_src, d_mu_tgt, d_var_tgt) or None on clamp."""
    out = _umeyama_backward(cache, d_r, d_t)
    if out is None:
        return None
    d_src_means, d_tgt_means, d_w, d_cw = out
    src = stats_src.gmm
    tgt = stats_tgt.gmm
    if centroid_mode == "objective":
        d_w = d_w + d_cw
        d_pi_src = d_w / tgt.variances
    else:
        d_pi_src = d_w / tgt.variances + d_cw
    d_var_tgt = -(src.weights / tgt.variances**2) * d_w
    return d_pi_src, d_src_means, d_tgt_means, d_var_tgt


def _pair_loss_and_grad(
    params: CorrNetParams,
    feats_src: np.ndarray,
    src: np.ndarray,
    feats_tgt: np.ndarray,
    tgt: np.ndarray,
    h_gt: np.ndarray,
    centroid_mode: str,
    compute_grad: bool = True,
):
    """Loss (and flat gradient) of one registration pair.

    Returns (loss, grad_or_None, clamped_flag). Raises DegenerateConfiguration
    if either direction's pose solve is degenerate.
    """
    gamma_src, cache_src = _forward_cached(params, feats_src)
    gamma_tgt, cache_tgt = _forward_cached(params, feats_tgt)
    stats_src = m_theta_stats(gamma_src, src)
    stats_tgt = m_theta_stats(gamma_tgt, tgt)

    fwd = _direction_forward(stats_src, stats_tgt, centroid_mode)   # src -> tgt
    rev = _direction_forward(stats_tgt, stats_src, centroid_mode)   # tgt -> src

    h_gt_inv = np.linalg.inv(h_gt)
    a = _homogeneous(fwd["r"], fwd["t"]) @ h_gt_inv - np.eye(4)
    b = _homogeneous(rev["r"], rev["t"]) @ h_gt - np.eye(4)
    value = float(np.sum(a * a) + np.sum(b * b))
    if not compute_grad:
        return value, None, False

    d_h_fwd = 2.0 * a @ h_gt_inv.T
    d_h_rev = 2.0 * b @ h_gt.T

    bwd_f = _direction_backward(
        fwd, stats_src, stats_tgt, d_h_fwd[:3, :3], d_h_fwd[:3, 3], centroid_mode
    )
    bwd_r = _direction_backward(
        rev, stats_tgt, stats_src, d_h_rev[:3, :3], d_h_rev[:3, 3], centroid_mode
    )
    if bwd_f is None or bwd_r is None:
        return value, None, True

    d_pi_src = bwd_f[0]
    d_mu_src = bwd_f[1] + bwd_r[2]
    d_var_src = bwd_r[3]
    d_pi_tgt = bwd_r[0]
    d_mu_tgt = bwd_f[2] + bwd_r[1]
    d_var_tgt = bwd_f[3]

    d_gamma_src = _m_theta_backward(stats_src, as_points(src), d_pi_src, d_mu_src, d_var_src)
    d_gamma_tgt = _m_theta_backward(stats_tgt, as_points(tgt), d_pi_tgt, d_mu_tgt, d_var_tgt)

    grad_theta = np.zeros_like(params.theta)
    grad_params = params.copy_with(grad_theta)
    grad_views = grad_params.views()
    _network_backward(params, cache_src, d_gamma_src, grad_views)
    _network_backward(params, cache_tgt, d_gamma_tgt, grad_views)
    return value, grad_theta, False


def register_pair(
    params: CorrNetParams,
    source: np.ndarray,
    target: np.ndarray,
    cfg: TrainConfig | None = None,
):
    """One-shot registration of a pair: returns (T, T_hat) where T maps the
    source onto the target and T_hat the target onto the source."""
    cfg = cfg or TrainConfig()
    feats_src = pipeline_features(source, cfg)
    feats_tgt = pipeline_features(target, cfg)
    gamma_src = forward(params, feats_src)
    gamma_tgt = forward(params, feats_tgt)
    stats_src = m_theta_stats(gamma_src, as_points(source))
    stats_tgt = m_theta_stats(gamma_tgt, as_points(target))
    fwd = _direction_forward(stats_src, stats_tgt, cfg.centroid_mode)
    rev = _direction_forward(stats_tgt, stats_src, cfg.centroid_mode)
    return RigidTransform(fwd["r"], fwd["t"]), RigidTransform(rev["r"], rev["t"])


def _prepare_batch(batch, cfg: TrainConfig):
    prepared = []
    for sample in batch:
        if hasattr(sample, "source"):
            src, tgt, transform = sample.source, sample.target, sample.transform
        else:
            src, tgt, transform = sample
        prepared.append(
            (
                pipeline_features(src, cfg),
                as_points(src),
                pipeline_features(tgt, cfg),
                as_points(tgt),
                transform.matrix(),
            )
        )
    return prepared


def _batch_loss_and_grad(params, prepared, cfg: TrainConfig, compute_grad=True):
    """Mean loss over prepared samples and its gradient. Degenerate samples
    are skipped (with a warning) when cfg.skip_degenerate is set; samples
    whose SVD differential is clamped keep their loss but contribute zero
    gradient."""
    total = 0.0
    grad = np.zeros_like(params.theta) if compute_grad else None
    used = 0
    for feats_src, src, feats_tgt, tgt, h_gt in prepared:
        try:
            value, g, clamped = _pair_loss_and_grad(
                params, feats_src, src, feats_tgt, tgt, h_gt, cfg.centroid_mode, compute_grad
            )
        except DegenerateConfiguration:
            if not cfg.skip_degenerate:
                raise
            warnings.warn("skipping degenerate sample", DegenerateSampleWarning, stacklevel=2)
            continue
        if compute_grad and clamped:
            warnings.warn(
                "clamping gradient of a sample near repeated singular values",
                GradientClampWarning,
                stacklevel=2,
            )
            g = None
        total += value
        if compute_grad and g is not None:
            grad += g
        used += 1
    if used == 0:
        return 0.0, grad, 0
    if compute_grad:
        grad /= used
    return total / used, grad, used


def grad(params: CorrNetParams, batch, cfg: TrainConfig) -> np.ndarray:
    """Exact gradient of the mean batch loss with respect to the flat
    parameter vector."""
    if not batch:
        raise ValueError("batch must be non-empty")
    prepared = _prepare_batch(batch, cfg)
    _, g, _ = _batch_loss_and_grad(params, prepared, cfg, compute_grad=True)
    return g


def batch_loss(params: CorrNetParams, batch, cfg: TrainConfig) -> float:
    """Mean loss of a batch without computing gradients."""
    if not batch:
        raise ValueError("batch must be non-empty")
    prepared = _prepare_batch(batch, cfg)
    value, _, _ = _batch_loss_and_grad(params, prepared, cfg, compute_grad=False)
    return value


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, theta: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (new_theta, new_state)."""
    if state.m.shape != theta.shape or grads.shape != theta.shape:
        raise ValueError("parameter, gradient and moment lengths must match")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(dataset, cfg: TrainConfig):
    """Train the correspondence network on registration pairs.

    `dataset` is either a PairDataset (its train split is used) or a list of
    pairs. 10% of the pairs (at least one) are held out for validation; the
    learning rate is multiplied by cfg.lr_decay whenever the validation loss
    has not improved for cfg.lr_patience consecutive epochs, and the
    parameters with the best validation loss are returned together with the
    per-epoch history.
    """
    pairs = list(dataset.train) if hasattr(dataset, "train") else list(dataset)
    if len(pairs) < 2:
        raise ValueError("need at least two pairs to form train and validation splits")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(101,)))
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(0.1 * len(pairs))))
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if train_idx.size == 0:
        raise ValueError("training split is empty")

    prepared = _prepare_batch(pairs, cfg)
    train_set = [prepared[i] for i in train_idx]
    val_set = [prepared[i] for i in val_idx]

    params = init_params(cfg.input_dim, cfg.n_components, rng)
    state = AdamState.zeros(params.theta.size)
    lr = cfg.lr
    best_theta = params.theta.copy()
    best_val = np.inf
    stale = 0
    history = []

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_set))
        epoch_loss = 0.0
        epoch_count = 0
        for start in range(0, len(train_set), cfg.batch_size):
            batch = [train_set[i] for i in perm[start : start + cfg.batch_size]]
            value, g, used = _batch_loss_and_grad(params, batch, cfg, compute_grad=True)
            if used == 0:
                continue
            new_theta, state = adam_step(state, params.theta, g, lr)
            params = params.copy_with(new_theta)
            epoch_loss += value * used
            epoch_count += used

        val_loss, _, val_used = _batch_loss_and_grad(params, val_set, cfg, compute_grad=False)
        if val_used == 0:
            val_loss = np.inf
        train_loss = epoch_loss / max(epoch_count, 1)
        history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_theta = params.theta.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.lr_patience:
                lr *= cfg.lr_decay
                stale = 0

    return params.copy_with(best_theta), history


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version, JSON header with the layout map
# (name/offset/length rows) and config, then little-endian float64 weights.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: CorrNetParams, meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "input_dim": params.input_dim,
        "n_components": params.n_components,
        "layout": [
            {"name": name, "offset": off, "length": length, "shape": list(shape)}
            for name, off, length, shape in params.layout()
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(params.theta.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, meta)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a gmmalign checkpoint")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(blob_len).decode("utf-8"))
        theta = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    params = CorrNetParams(theta, header["input_dim"], header["n_components"])
    return params, header.get("meta", {})
