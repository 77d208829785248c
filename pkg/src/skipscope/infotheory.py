"""Exact discrete entropies and distance-based information bounds.

Hidden states are continuous, so the bound machinery first quantizes a
layer pair with a shared seeded codebook; everything downstream is exact
arithmetic on finite joints. Entropies are reported in bits; the
functional-gap bound converts to nats internally because it multiplies
an L2 quantity.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyModality, InvalidArgument, MissingMetric
from .traceio import HiddenTrace

LN2 = math.log(2.0)


def _xlogx_bits(p: np.ndarray) -> np.ndarray:
    """p * log2(p) with the 0 log 0 = 0 convention."""
    out = np.zeros_like(p, dtype=np.float64)
    mask = p > 0
    out[mask] = p[mask] * np.log2(p[mask])
    return out


def binary_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) variable, in bits."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument(f"probability out of [0, 1]: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


@dataclass(frozen=True)
class DiscreteJoint:
    """Finite-support joint over (X, Y) with an optional dissimilarity.

    ``pmf[i, j] = P[X = support_x[i], Y = support_y[j]]``. The bound
    operations require a shared support and a symmetric ``dissimilarity``
    matrix over it with zero diagonal. ``support_points`` optionally maps
    labels to vectors realizing them (used by the theorem oracles).
    """

    support_x: tuple
    support_y: tuple
    pmf: np.ndarray
    dissimilarity: Optional[np.ndarray] = None
    support_points: Optional[np.ndarray] = None

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.shape != (len(self.support_x), len(self.support_y)):
            raise InvalidArgument(
                f"pmf shape {pmf.shape} does not match supports "
                f"({len(self.support_x)}, {len(self.support_y)})"
            )
        if (pmf < 0).any():
            raise InvalidArgument("pmf entries must be nonnegative")
        if abs(float(pmf.sum()) - 1.0) > 1e-9:
            raise InvalidArgument(f"pmf sums to {pmf.sum()!r}, expected 1 within 1e-9")
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "support_x", tuple(self.support_x))
        object.__setattr__(self, "support_y", tuple(self.support_y))
        if self.dissimilarity is not None:
            d = np.asarray(self.dissimilarity, dtype=np.float64)
            n = len(self.support_x)
            if self.support_x != self.support_y:
                raise InvalidArgument("dissimilarity requires a shared support")
            if d.shape != (n, n):
                raise InvalidArgument(f"dissimilarity shape {d.shape}, expected ({n}, {n})")
            if not np.allclose(d, d.T, atol=1e-12):
                raise InvalidArgument("dissimilarity must be symmetric")
            if not np.allclose(np.diag(d), 0.0, atol=1e-12):
                raise InvalidArgument("dissimilarity must vanish on the diagonal")
            object.__setattr__(self, "dissimilarity", d)

    @property
    def shared_support(self) -> bool:
        return self.support_x == self.support_y


def joint_from_pairs(pairs: Sequence[tuple], dissimilarity: Optional[np.ndarray] = None) -> DiscreteJoint:
    """Empirical joint from observed (x, y) label pairs.

    Support is the sorted union of observed labels on both axes, so the
    result always has a shared support; ``dissimilarity`` indexed by label
    must cover it.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgument("pairs must be nonempty")
    labels = sorted({a for a, _ in pairs} | {b for _, b in pairs})
    index = {lab: i for i, lab in enumerate(labels)}
    pmf = np.zeros((len(labels), len(labels)), dtype=np.float64)
    for a, b in pairs:
        pmf[index[a], index[b]] += 1.0
    pmf /= len(pairs)
    d = None
    if dissimilarity is not None:
        if not all(isinstance(lab, (int, np.integer)) for lab in labels):
            raise InvalidArgument("matrix dissimilarity requires integer labels")
        dissimilarity = np.asarray(dissimilarity, dtype=np.float64)
        sel = np.array([int(lab) for lab in labels])
        d = dissimilarity[np.ix_(sel, sel)]
    return DiscreteJoint(support_x=tuple(labels), support_y=tuple(labels), pmf=pmf, dissimilarity=d)


def entropy_stats(joint: DiscreteJoint) -> dict:
    """Exact Shannon quantities of the joint, in bits."""
    pmf = joint.pmf
    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    h_xy = -float(_xlogx_bits(pmf).sum())
    h_x = -float(_xlogx_bits(px).sum())
    h_y = -float(_xlogx_bits(py).sum())
    h_x_given_y = h_xy - h_y
    h_y_given_x = h_xy - h_x
    i_xy = h_x - h_x_given_y
    clip = lambda v: 0.0 if -1e-12 < v <= 0.0 else v
    return {
        "H_X": clip(h_x),
        "H_Y": clip(h_y),
        "H_XY": clip(h_xy),
        "H_X_given_Y": clip(h_x_given_y),
        "H_Y_given_X": clip(h_y_given_x),
        "I": clip(i_xy),
    }


@dataclass(frozen=True)
class BoundReport:
    """Distance-based bounds on H(X|Y) and I(X;Y) at radius t.

    ``fano_upper`` caps the conditional entropy from ball sizes over the
    shared support; ``mi_lower`` floors the mutual information from the
    extreme ball masses under Y's marginal. ``applicable_*`` record
    whether each bound's side conditions held; values are still reported
    when they did not, with the Fano middle term clamped at zero.
    """

    t: float
    P_t: float
    H2_Pt: float
    N_t_max: int
    N_t_min: int
    p_min: float
    p_max: float
    fano_upper: float
    mi_lower: float
    applicable_fano: bool
    applicable_mi: bool
    H_cond: float
    I_exact: float
    k: Optional[int] = None
    warnings: tuple = field(default_factory=tuple)


def _require_metric(joint: DiscreteJoint) -> np.ndarray:
    if joint.dissimilarity is None:
        raise MissingMetric("bound requires a dissimilarity on the shared support")
    if not joint.shared_support:
        raise MissingMetric("bound requires X and Y to share a support")
    return joint.dissimilarity


def bound_report(joint: DiscreteJoint, t: float, k: Optional[int] = None) -> BoundReport:
    """Evaluate both bounds plus the exact quantities they constrain."""
    if t < 0:
        raise InvalidArgument(f"radius t must be >= 0, got {t}")
    d = _require_metric(joint)
    pmf = joint.pmf
    n = len(joint.support_x)
    stats = entropy_stats(joint)

    in_ball = d <= t
    ball_sizes = in_ball.sum(axis=1)
    n_max = int(ball_sizes.max())
    n_min = int(ball_sizes.min())

    # P_t = P[rho(Y, X) > t]; rho symmetric so orientation is immaterial.
    p_t = float(pmf[~in_ball.T].sum()) if n else 0.0
    p_t = min(max(p_t, 0.0), 1.0)
    h2 = binary_entropy(p_t)

    applicable_fano = (n - n_min) >= n_max
    middle = 0.0
    if p_t > 0.0 and applicable_fano:
        middle = p_t * math.log2((n - n_min) / n_max)
    fano_upper = h2 + middle + math.log2(n_max)

    py = pmf.sum(axis=0)
    ball_mass = in_ball @ py
    p_min = float(ball_mass.min())
    p_max = float(ball_mass.max())
    applicable_mi = (0.0 <= p_min < 1.0) and (0.0 < p_max <= 1.0) and (p_min + p_max < 1.0)
    mi_lower = 0.0
    if p_max > 0.0:
        mi_lower += (1.0 - p_t) * math.log2(1.0 / p_max)
    if p_t > 0.0 and p_min < 1.0:
        mi_lower -= p_t * math.log2(1.0 - p_min)
    mi_lower -= h2

    return BoundReport(
        t=float(t),
        P_t=p_t,
        H2_Pt=h2,
        N_t_max=n_max,
        N_t_min=n_min,
        p_min=p_min,
        p_max=p_max,
        fano_upper=float(fano_upper),
        mi_lower=float(mi_lower),
        applicable_fano=bool(applicable_fano),
        applicable_mi=bool(applicable_mi),
        H_cond=stats["H_X_given_Y"],
        I_exact=stats["I"],
        k=k,
    )


def fano_upper_bound(joint: DiscreteJoint, t: float) -> BoundReport:
    """Ball-size upper bound on H(X|Y); see ``bound_report``."""
    return bound_report(joint, t)


def mi_lower_bound(joint: DiscreteJoint, t: float) -> BoundReport:
    """Ball-mass lower bound on I(X;Y); see ``bound_report``."""
    return bound_report(joint, t)


def functional_gap_bound(B: float, H_cond_bits: float) -> float:
    """2 B^2 H(X|Y) with the entropy converted from bits to nats.

    Upper-bounds the expected squared gap between conditional means of a
    task variable bounded by B in L2, when the layers form a Markov chain
    with it.
    """
    if B < 0 or H_cond_bits < 0:
        raise InvalidArgument(f"inputs must be nonnegative, got B={B}, H={H_cond_bits}")
    return 2.0 * B * B * H_cond_bits * LN2


@dataclass(frozen=True)
class QuantizedPair:
    """Shared-codebook labels for a (layer-1, layer) token population."""

    labels_prev: np.ndarray
    labels_curr: np.ndarray
    centroids: np.ndarray
    dissimilarity: np.ndarray
    k: int
    warnings: tuple = field(default_factory=tuple)

    def pairs_curr_prev(self) -> list[tuple[int, int]]:
        """(current, previous) label pairs, X = current layer first."""
        return list(zip(self.labels_curr.tolist(), self.labels_prev.tolist()))

    def joint(self) -> DiscreteJoint:
        return joint_from_pairs(self.pairs_curr_prev(), dissimilarity=self.dissimilarity)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        from .errors import DegenerateVector

        raise DegenerateVector("zero-norm hidden state cannot be quantized")
    return x / norms


def _farthest_point_init(vectors: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(vectors)))
    chosen = [first]
    dist = np.linalg.norm(vectors - vectors[first], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(vectors - vectors[nxt], axis=1))
    return vectors[chosen].copy()


def quantize_vectors(vectors: np.ndarray, k: int, seed: int, iterations: int = 25) -> QuantizedPair:
    """Seeded spherical k-centroid clustering of unit-normalized rows.

    Farthest-point initialization followed by a fixed number of Lloyd
    passes in a fixed order; ties break toward the lowest centroid index,
    so the labeling is deterministic given the seed. Returns labels for
    the two halves of ``vectors`` (first half = previous layer).
    """
    if k < 2:
        raise InvalidArgument(f"codebook size k must be >= 2, got {k}")
    unit = _unit_rows(np.asarray(vectors, dtype=np.float64))
    warnings = []
    n_distinct = len(np.unique(unit, axis=0))
    if n_distinct < k:
        warnings.append(f"only {n_distinct} distinct vectors; reduced codebook from {k} to {n_distinct}")
        k = max(1, n_distinct)

    centroids = _farthest_point_init(unit, k, seed)
    labels = np.zeros(len(unit), dtype=int)
    for _ in range(iterations):
        d2 = ((unit[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        for c in range(k):
            members = unit[labels == c]
            if len(members) == 0:
                continue
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[c] = mean / norm

    d2 = ((unit[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)

    gram = np.clip(centroids @ centroids.T, -1.0, 1.0)
    dis = 1.0 - gram
    np.fill_diagonal(dis, 0.0)
    dis = np.clip((dis + dis.T) / 2.0, 0.0, 2.0)
    np.fill_diagonal(dis, 0.0)

    half = len(unit) // 2
    return QuantizedPair(
        labels_prev=labels[:half],
        labels_curr=labels[half:],
        centroids=centroids,
        dissimilarity=dis,
        k=k,
        warnings=tuple(warnings),
    )


def quantize_trace(trace: HiddenTrace, layer: int, modality: str, k: int, seed: int) -> QuantizedPair:
    """Fit one codebook on the union of layers (layer-1, layer) and label both.

    The shared codebook gives the two layers a shared finite support, the
    precondition for the Fano-style and mutual-information bounds; the
    attached dissimilarity is the cosine distance between codebook
    centroids.
    """
    if not 1 <= layer <= trace.layer_count - 1:
        raise InvalidArgument(f"layer must be in [1, {trace.layer_count - 1}], got {layer}")
    idx = trace.token_indices(modality)
    if len(idx) == 0:
        raise EmptyModality(f"trace has no {modality!r} tokens", sample_id=trace.sample_id)
    prev = trace.states[layer - 1, idx].astype(np.float64)
    curr = trace.states[layer, idx].astype(np.float64)
    return quantize_vectors(np.vstack([prev, curr]), k=k, seed=seed)


def layer_bound_report(
    trace: HiddenTrace, layer: int, modality: str, k: int, t: float, seed: int
) -> BoundReport:
    """Quantize one layer pair and evaluate both bounds on the result."""
    q = quantize_trace(trace, layer, modality, k=k, seed=seed)
    report = bound_report(q.joint(), t, k=q.k)
    if q.warnings:
        report = dataclasses.replace(report, warnings=q.warnings)
    return report
