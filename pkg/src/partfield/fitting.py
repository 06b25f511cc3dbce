"""Contrastive objective, exact gradients, Adam, and the fitting loop.

The per-pair loss over a triplet batch is

    L = -1/2 [ log(s_ab / (s_ab + sum_c s_ac))
             + log(s_ba / (s_ba + sum_c s_bc)) ]

with s_uv = exp(cos(f(p_u), f(p_v)) / tau) and a learnable temperature
tau. Both log terms share the pair anchor's negative set. Everything is
evaluated in log space via log-sum-exp; gradients are hand-derived and
flow through the cosine, the normalization, and the bilinear field query.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import scatter_rows
from .field import (
    TAU_MAX,
    TAU_MIN,
    TriplaneField,
    new_triplane,
    query_grad,
    query_raw,
)
from .geometry import PointSet, TriMesh, sample_surface
from .sampler import (
    SamplerConfig,
    TripletBatch,
    build_sampler_context,
    build_triplet_batch,
    valid_proposals,
)

DEGENERATE_NORM = 1e-12


class LossError(ValueError):
    pass


class FitError(RuntimeError):
    pass


def derive_seed(*keys: int) -> int:
    """Stable child seed from integer keys; splits one stream into many."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def cosine_sim(u, v, with_flag: bool = False):
    """Cosine of two vectors; near-zero vectors yield 0 with a degeneracy flag."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    degenerate = nu <= DEGENERATE_NORM or nv <= DEGENERATE_NORM
    value = 0.0 if degenerate else float(np.dot(u, v) / (nu * nv))
    value = min(1.0, max(-1.0, value))
    if with_flag:
        return value, degenerate
    return value


def loss_from_similarities(cos_ab: np.ndarray, cos_ac: np.ndarray,
                           cos_bc: np.ndarray, tau: float):
    """Loss and its derivatives in similarity space.

    cos_ab: (P,), cos_ac and cos_bc: (P, M). Returns
    (loss, d_cos_ab, d_cos_ac, d_cos_bc, d_theta) where theta = log tau.
    """
    cos_ab = np.atleast_1d(np.asarray(cos_ab, dtype=np.float64))
    cos_ac = np.atleast_2d(np.asarray(cos_ac, dtype=np.float64))
    cos_bc = np.atleast_2d(np.asarray(cos_bc, dtype=np.float64))
    n_pairs, n_neg = cos_ac.shape
    if n_neg == 0:
        raise LossError("pair has an empty negative set")
    za = np.concatenate([cos_ab[:, None], cos_ac], axis=1) / tau  # (P, 1+M)
    zb = np.concatenate([cos_ab[:, None], cos_bc], axis=1) / tau
    ma = za.max(axis=1, keepdims=True)
    mb = zb.max(axis=1, keepdims=True)
    lse_a = np.log(np.exp(za - ma).sum(axis=1)) + ma[:, 0]
    lse_b = np.log(np.exp(zb - mb).sum(axis=1)) + mb[:, 0]
    loss = float(np.mean(0.5 * ((lse_a - za[:, 0]) + (lse_b - zb[:, 0]))))

    w = 0.5 / n_pairs
    dza = np.exp(za - lse_a[:, None]) * w
    dza[:, 0] -= w
    dzb = np.exp(zb - lse_b[:, None]) * w
    dzb[:, 0] -= w
    # z = cos / tau with tau = exp(theta), so dz/dtheta = -z
    d_theta = -float(np.sum(dza * za) + np.sum(dzb * zb))
    d_ab = (dza[:, 0] + dzb[:, 0]) / tau
    d_ac = dza[:, 1:] / tau
    d_bc = dzb[:, 1:] / tau
    return loss, d_ab, d_ac, d_bc, d_theta


def _batch_similarities(batch: TripletBatch, field: TriplaneField):
    """Resolve ids, query the field once per unique point, build cosines."""
    n_pairs, n_neg = batch.n_pairs, batch.n_negatives
    if n_pairs == 0:
        raise LossError("empty batch")
    if n_neg == 0:
        raise LossError("batch has no negatives")
    ids = np.concatenate([batch.anchors, batch.positives, batch.negatives.ravel()])
    uniq, inv = np.unique(ids, return_inverse=True)
    pts = batch.points[uniq]
    feats = query_raw(field, pts)
    if not np.all(np.isfinite(feats)):
        raise LossError("non-finite feature encountered")
    norms = np.sqrt(np.einsum("uc,uc->u", feats, feats))
    safe = norms > DEGENERATE_NORM
    denom = np.where(safe, norms, 1.0)
    unit = np.where(safe[:, None], feats / denom[:, None], 0.0)
    ia = inv[:n_pairs]
    ib = inv[n_pairs:2 * n_pairs]
    ic = inv[2 * n_pairs:].reshape(n_pairs, n_neg)
    ua, ub, uc = unit[ia], unit[ib], unit[ic]
    cos_ab = np.einsum("pc,pc->p", ua, ub)
    cos_ac = np.einsum("pc,pmc->pm", ua, uc)
    cos_bc = np.einsum("pc,pmc->pm", ub, uc)
    return {
        "uniq": uniq, "pts": pts, "unit": unit, "norms": denom, "safe": safe,
        "ia": ia, "ib": ib, "ic": ic, "ua": ua, "ub": ub, "uc": uc,
        "cos_ab": cos_ab, "cos_ac": cos_ac, "cos_bc": cos_bc,
    }


def contrastive_loss(batch: TripletBatch, field: TriplaneField) -> float:
    s = _batch_similarities(batch, field)
    loss, *_ = loss_from_similarities(s["cos_ab"], s["cos_ac"], s["cos_bc"], field.tau)
    return loss


def loss_grad(batch: TripletBatch, field: TriplaneField):
    """Gradient of the batch loss w.r.t. plane parameters and log tau.

    Returns (plane_grads (3, R, R, C) float64, theta_grad float, loss).
    """
    s = _batch_similarities(batch, field)
    loss, d_ab, d_ac, d_bc, d_theta = loss_from_similarities(
        s["cos_ab"], s["cos_ac"], s["cos_bc"], field.tau
    )
    unit, ua, ub, uc = s["unit"], s["ua"], s["ub"], s["uc"]
    d_unit = np.zeros_like(unit)
    scatter_rows(d_unit, s["ia"], d_ab[:, None] * ub + np.einsum("pm,pmc->pc", d_ac, uc))
    scatter_rows(d_unit, s["ib"], d_ab[:, None] * ua + np.einsum("pm,pmc->pc", d_bc, uc))
    neg_rows = d_ac[..., None] * ua[:, None, :] + d_bc[..., None] * ub[:, None, :]
    scatter_rows(d_unit, s["ic"].ravel(), neg_rows.reshape(-1, unit.shape[1]))
    # through row normalization u = f / |f|
    proj = np.einsum("uc,uc->u", unit, d_unit)
    d_feats = (d_unit - proj[:, None] * unit) / s["norms"][:, None]
    d_feats[~s["safe"]] = 0.0
    plane_grads = query_grad(field, s["pts"], d_feats)
    return plane_grads, d_theta, loss


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros(p.shape, dtype=np.float64) for p in params],
                   v=[np.zeros(p.shape, dtype=np.float64) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[np.ndarray]:
    """One bias-corrected adaptive-moment update; returns new parameter arrays.

    A non-finite gradient rejects the step (parameters and state untouched)
    and reports via a warning.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must pair up")
    for g in grads:
        if not np.all(np.isfinite(g)):
            warnings.warn("non-finite gradient; step rejected", stacklevel=2)
            return params
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1 ** t)
        v_hat = state.v[i] / (1 - beta2 ** t)
        new = np.asarray(p, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
        out.append(new.astype(p.dtype))
    return out


# ---------------------------------------------------------------------------
# fitting loop


@dataclass
class FitConfig:
    iterations: int = 2000
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    feature_hard_start: int = 500  # iteration at which feature-hard mining begins
    seed: int = 0
    snapshot_period: int = 10
    resolution: int = 128
    channels: int = 64
    init_scale: float = 0.05
    canonical_points: int = 100_000

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig.from_json(self.sampler)

    def to_json(self) -> dict:
        d = self.__dict__.copy()
        d["sampler"] = self.sampler.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "FitConfig":
        return cls(**d)


@dataclass
class FitReport:
    loss_curve: list[list]  # [iteration, loss]
    iterations: int
    wall_clock_s: float
    final_loss: float

    def to_json(self) -> dict:
        return {
            "loss_curve": [[int(i), float(l)] for i, l in self.loss_curve],
            "iterations": self.iterations,
            "wall_clock_s": self.wall_clock_s,
            "final_loss": self.final_loss,
        }


def canonical_point_set(shape, cfg: FitConfig) -> PointSet:
    """The shape's canonical element set under this fitting configuration.

    Proposals and the fit must index the same set, so both sides call this.
    """
    if isinstance(shape, PointSet):
        return shape
    if isinstance(shape, TriMesh):
        return sample_surface(shape, cfg.canonical_points, derive_seed(cfg.seed, 0xCA0))
    raise TypeError(f"unsupported shape type {type(shape).__name__}")


def fit_field(shape, proposals, cfg: FitConfig, snapshot_callback=None):
    """Optimize a fresh triplane field against the proposals.

    Iterates batch sampling, loss gradients, and optimizer steps;
    feature-hard mining activates at ``cfg.feature_hard_start`` using the
    field as it then stands. Returns (field, FitReport).
    """
    t_start = time.perf_counter()
    points = canonical_point_set(shape, cfg)
    coords = points.points
    if np.abs(coords).max() > 1.0 + 1e-6:
        warnings.warn("shape exceeds [-1, 1]^3; normalize before fitting", stacklevel=2)
    if not valid_proposals(proposals):
        raise FitError("all proposals are degenerate or unusable for triplets")

    fld = new_triplane(cfg.resolution, cfg.channels, cfg.init_scale, seed=cfg.seed)
    theta = np.array([fld.log_temperature], dtype=np.float32)
    state = AdamState.for_params([fld.planes, theta])
    quiet_sampler = replace(cfg.sampler, feature_hard_negatives=0)
    context = build_sampler_context(proposals, coords, cfg.sampler)

    loss_curve: list[list] = []
    last_loss = float("nan")
    for it in range(cfg.iterations):
        use_feature_hard = (cfg.sampler.feature_hard_negatives > 0
                            and it >= cfg.feature_hard_start)
        if use_feature_hard:
            feats = query_raw(fld, coords)
            batch = build_triplet_batch(proposals, coords, cfg.sampler, feats,
                                        seed=derive_seed(cfg.seed, 1, it),
                                        context=context)
        else:
            batch = build_triplet_batch(proposals, coords, quiet_sampler,
                                        seed=derive_seed(cfg.seed, 1, it),
                                        context=context)
        plane_grads, theta_grad, loss = loss_grad(batch, fld)
        if not np.isfinite(loss):
            raise FitError(f"loss diverged at iteration {it}")
        last_loss = loss
        new_planes, new_theta = adam_step(
            state, [fld.planes, theta], [plane_grads, np.array([theta_grad])],
            cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam,
        )
        fld.planes = new_planes
        theta = np.clip(new_theta, np.log(TAU_MIN), np.log(TAU_MAX)).astype(np.float32)
        fld.log_temperature = np.float32(theta[0])
        if it % cfg.snapshot_period == 0 or it == cfg.iterations - 1:
            loss_curve.append([it, loss])
            if snapshot_callback is not None:
                snapshot_callback(it, fld, loss)
    report = FitReport(
        loss_curve=loss_curve,
        iterations=cfg.iterations,
        wall_clock_s=time.perf_counter() - t_start,
        final_loss=last_loss,
    )
    return fld, report


def fit_config_to_file(cfg: FitConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2)


def fit_config_from_file(path) -> FitConfig:
    with open(path) as fh:
        return FitConfig.from_json(json.load(fh))
