"""Triplet sampling: positive pairs plus mined negative sets per anchor.

Negatives come from a proposal's complement under three strategies:
uniform draws, 3D-hard draws weighted toward candidates near the anchor
in Euclidean space (prob proportional to exp(-d / sigma)), and
feature-hard draws weighted toward candidates similar to the anchor in
feature space (prob proportional to exp(cos / tau_m)). All draws are with
replacement and reproducible from (inputs, seed); streams are split per
proposal slot so batch assembly could run concurrently.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .proposals import PartProposal


class SamplerError(ValueError):
    pass


@dataclass
class SamplerConfig:
    masks_per_batch: int = 8  # proposals drawn per batch
    positive_pairs: int = 64  # pairs per proposal
    uniform_negatives: int = 256
    hard3d_negatives: int = 256
    feature_hard_negatives: int = 256
    hard3d_bandwidth: float | str = "median"  # sigma rule or fixed value
    feature_temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.positive_pairs < 1:
            raise SamplerError("positive_pairs must be >= 1")
        for name in ("masks_per_batch", "uniform_negatives", "hard3d_negatives",
                     "feature_hard_negatives"):
            if getattr(self, name) < 0:
                raise SamplerError(f"{name} must be >= 0")
        if self.uniform_negatives + self.hard3d_negatives + self.feature_hard_negatives < 1:
            raise SamplerError("at least one negative strategy needs a positive count")
        if isinstance(self.hard3d_bandwidth, str) and self.hard3d_bandwidth != "median":
            raise SamplerError("hard3d_bandwidth must be 'median' or a positive number")
        if not isinstance(self.hard3d_bandwidth, str) and not self.hard3d_bandwidth > 0:
            raise SamplerError("hard3d_bandwidth must be positive")
        if not self.feature_temperature > 0:
            raise SamplerError("feature_temperature must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SamplerConfig":
        return cls(**d)


@dataclass
class TripletBatch:
    """Anchors, positives, and per-anchor negative id lists.

    ``negatives`` columns are grouped by strategy: the first
    ``counts[0]`` are uniform, then 3D-hard, then feature-hard.
    """

    anchors: np.ndarray  # (P,) element ids
    positives: np.ndarray  # (P,)
    negatives: np.ndarray  # (P, M)
    counts: tuple[int, int, int]
    proposal_ids: np.ndarray  # (P,) index into the proposal list used
    points: np.ndarray  # (n_elements, 3) canonical positions

    @property
    def n_pairs(self) -> int:
        return len(self.anchors)

    @property
    def n_negatives(self) -> int:
        return self.negatives.shape[1]


def _pair_indices(n_members: int, n: int, rng: np.random.Generator):
    """n index pairs (a, b), a != b, uniform over ordered distinct pairs."""
    a = rng.integers(0, n_members, size=n)
    b = rng.integers(0, n_members - 1, size=n)
    b = b + (b >= a)
    return a, b


def sample_positive_pairs(proposal: PartProposal, n: int, seed: int):
    """Uniform positive pairs from the proposal, no within-pair duplicates."""
    members = proposal.members
    if len(members) < 2:
        raise SamplerError("cannot form pairs from a singleton proposal")
    rng = np.random.default_rng(seed)
    a, b = _pair_indices(len(members), n, rng)
    return members[a], members[b]


def sample_uniform_negatives(proposal: PartProposal, m: int, seed: int) -> np.ndarray:
    domain = proposal.negative_domain()
    if len(domain) == 0:
        raise SamplerError("proposal covers its whole domain; no negatives exist")
    rng = np.random.default_rng(seed)
    return domain[rng.integers(0, len(domain), size=m)]


def _weighted_rows(weights: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m column indices per row, with replacement, prob proportional to weights."""
    cdf = np.cumsum(weights, axis=1)
    totals = cdf[:, -1]
    if np.any(totals <= 0):
        raise SamplerError("degenerate negative weights")
    u = (rng.random((weights.shape[0], m)) * totals[:, None]).astype(cdf.dtype)
    out = np.empty((weights.shape[0], m), dtype=np.int64)
    for i in range(weights.shape[0]):
        out[i] = np.searchsorted(cdf[i], u[i], side="right")
    np.clip(out, 0, weights.shape[1] - 1, out=out)
    return out


def _pairwise_dist32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances as float32, computed in place to limit passes."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    m = a @ b.T
    m *= -2.0
    m += np.einsum("ij,ij->i", a, a)[:, None]
    m += np.einsum("ij,ij->i", b, b)[None, :]
    np.maximum(m, 0.0, out=m)
    np.sqrt(m, out=m)
    return m


def _hard3d_weights(anchor_pts: np.ndarray, domain_pts: np.ndarray,
                    bandwidth: float | str,
                    sigma: np.ndarray | None = None) -> np.ndarray:
    """Per-anchor weights exp(-d / sigma) over the domain.

    ``sigma`` can carry precomputed per-anchor bandwidths; otherwise the
    median rule (or a fixed value) is applied here.
    """
    d = _pairwise_dist32(anchor_pts, domain_pts)
    if sigma is None:
        if isinstance(bandwidth, str):
            sigma = np.maximum(np.median(d, axis=1), 1e-12)
        else:
            sigma = np.full(len(d), np.float32(bandwidth))
    d *= (-1.0 / sigma.astype(np.float32))[:, None]
    np.exp(d, out=d)
    return d


def median_anchor_bandwidths(member_pts: np.ndarray, domain_pts: np.ndarray,
                             chunk: int = 512) -> np.ndarray:
    """Median distance to the domain for every member, the sigma rule."""
    out = np.empty(len(member_pts), dtype=np.float32)
    for s in range(0, len(member_pts), chunk):
        d = _pairwise_dist32(member_pts[s:s + chunk], domain_pts)
        out[s:s + chunk] = np.maximum(np.median(d, axis=1), 1e-12)
    return out


@dataclass
class ProposalSampling:
    """Reusable per-proposal sampling state for repeated batch building."""

    index: int
    members: np.ndarray
    domain: np.ndarray
    member_pts: np.ndarray  # float32 (|members|, 3)
    domain_pts: np.ndarray  # float32 (|domain|, 3)
    member_sigma: np.ndarray | None  # median-rule bandwidths per member


def build_sampler_context(proposals: list[PartProposal], points: np.ndarray,
                          config: SamplerConfig) -> list[ProposalSampling]:
    """Precompute per-proposal domains and hard-negative bandwidths."""
    points = np.asarray(getattr(points, "points", points), dtype=np.float64)
    ctx = []
    for i in valid_proposals(proposals):
        prop = proposals[i]
        domain = prop.negative_domain()
        member_pts = np.ascontiguousarray(points[prop.members], dtype=np.float32)
        domain_pts = np.ascontiguousarray(points[domain], dtype=np.float32)
        sigma = None
        if config.hard3d_negatives > 0 and isinstance(config.hard3d_bandwidth, str):
            sigma = median_anchor_bandwidths(member_pts, domain_pts)
        ctx.append(ProposalSampling(index=i, members=prop.members, domain=domain,
                                    member_pts=member_pts, domain_pts=domain_pts,
                                    member_sigma=sigma))
    return ctx


def sample_3d_hard_negatives(anchor: int, proposal: PartProposal, m: int,
                             sigma: float | str, seed: int,
                             points: np.ndarray) -> np.ndarray:
    """Negatives preferring candidates close to the anchor in Euclidean space."""
    domain = proposal.negative_domain()
    if len(domain) == 0:
        raise SamplerError("proposal covers its whole domain; no negatives exist")
    points = np.asarray(getattr(points, "points", points), dtype=np.float64)
    rng = np.random.default_rng(seed)
    w = _hard3d_weights(points[None, anchor], points[domain], sigma)
    idx = _weighted_rows(w, m, rng)[0]
    return domain[idx]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    n = np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
    return np.where(n > 1e-12, x / np.where(n > 0, n, 1.0), np.float32(0.0))


def _feature_hard_weights(anchor_unit: np.ndarray, domain_unit: np.ndarray,
                          tau_m: float) -> np.ndarray:
    """exp(cos / tau) over pre-normalized rows, float32 in place."""
    cos = anchor_unit @ domain_unit.T
    cos *= np.float32(1.0 / tau_m)
    np.exp(cos, out=cos)
    return cos


def sample_feature_hard_negatives(anchor: int, proposal: PartProposal,
                                  features: np.ndarray, m: int, tau_m: float,
                                  seed: int) -> np.ndarray:
    """Negatives preferring candidates similar to the anchor in feature space."""
    domain = proposal.negative_domain()
    if len(domain) == 0:
        raise SamplerError("proposal covers its whole domain; no negatives exist")
    features = np.asarray(getattr(features, "values", features), dtype=np.float64)
    rng = np.random.default_rng(seed)
    unit = _unit_rows(features)
    w = _feature_hard_weights(unit[None, anchor], unit[domain], tau_m)
    idx = _weighted_rows(w, m, rng)[0]
    return domain[idx]


def valid_proposals(proposals: list[PartProposal]) -> list[int]:
    """Indices of proposals usable for triplets: pairable with a nonempty complement."""
    out = []
    for i, p in enumerate(proposals):
        if p.degenerate or len(p.members) < 2:
            continue
        if p.visible is not None:
            if len(p.visible) - len(np.intersect1d(p.visible, p.members)) == 0:
                continue
        elif len(p.members) >= p.n_elements:
            continue
        out.append(i)
    return out


def build_triplet_batch(proposals: list[PartProposal], points: np.ndarray,
                        config: SamplerConfig, features: np.ndarray | None = None,
                        seed: int | None = None,
                        context: list[ProposalSampling] | None = None) -> TripletBatch:
    """Assemble one training batch across uniformly drawn proposals.

    Negatives are mined per pair anchor; both sides of a pair share the
    anchor's negative set downstream. When no features are supplied the
    feature-hard count silently drops to zero (with a warning), which is
    the state of the first fitting iterations. Callers building many
    batches over the same proposals should pass a precomputed ``context``
    (see build_sampler_context).
    """
    points = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if context is None:
        context = build_sampler_context(proposals, points, config)
    if not context:
        raise SamplerError("no valid proposal to sample from")
    if seed is None:
        seed = config.seed
    m3 = config.feature_hard_negatives
    if features is None and m3 > 0:
        warnings.warn("no features supplied; disabling feature-hard negatives", stacklevel=2)
        m3 = 0
    unit_features = None
    if features is not None and m3 > 0:
        unit_features = _unit_rows(np.asarray(getattr(features, "values", features)))
    m1, m2 = config.uniform_negatives, config.hard3d_negatives
    if m1 + m2 + m3 < 1:
        raise SamplerError("no negative strategy active")

    pick_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    chosen = pick_rng.integers(0, len(context), size=config.masks_per_batch)

    anchors, positives, negatives, prop_ids = [], [], [], []
    for slot, which in enumerate(chosen):
        ps = context[which]
        rng = np.random.default_rng(np.random.SeedSequence([seed, slot]))
        n = config.positive_pairs
        a_idx, b_idx = _pair_indices(len(ps.members), n, rng)
        a = ps.members[a_idx]
        b = ps.members[b_idx]
        neg_parts = []
        if m1:
            neg_parts.append(ps.domain[rng.integers(0, len(ps.domain), size=(n, m1))])
        if m2:
            sigma = ps.member_sigma[a_idx] if ps.member_sigma is not None else None
            w = _hard3d_weights(ps.member_pts[a_idx], ps.domain_pts,
                                config.hard3d_bandwidth, sigma=sigma)
            neg_parts.append(ps.domain[_weighted_rows(w, m2, rng)])
        if m3:
            w = _feature_hard_weights(unit_features[a], unit_features[ps.domain],
                                      config.feature_temperature)
            neg_parts.append(ps.domain[_weighted_rows(w, m3, rng)])
        anchors.append(a)
        positives.append(b)
        negatives.append(np.concatenate(neg_parts, axis=1))
        prop_ids.append(np.full(n, ps.index, dtype=np.int32))

    if not anchors:
        raise SamplerError("no valid proposal to sample from")
    return TripletBatch(
        anchors=np.concatenate(anchors),
        positives=np.concatenate(positives),
        negatives=np.concatenate(negatives, axis=0),
        counts=(m1, m2, m3),
        proposal_ids=np.concatenate(prop_ids),
        points=points,
    )


def sampler_config_to_file(config: SamplerConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)


def sampler_config_from_file(path) -> SamplerConfig:
    with open(path) as fh:
        return SamplerConfig.from_json(json.load(fh))
