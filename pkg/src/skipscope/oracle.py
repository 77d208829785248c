"""Brute-force verification of the redundancy bounds on small instances.

Every check enumerates its instance exactly: conditional means are finite
sums, Lipschitz constants are measured over the whole support rather than
trusted from construction, and premises are tested before the conclusion
so a vacuous instance is reported as PREMISE_FAILED instead of a pass.
Suites are embarrassingly parallel; each check is a pure function of its
instance, and a failing instance can be dumped as a reproducible fixture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainViolation, InvalidArgument, PremiseFailed
from .infotheory import DiscreteJoint, entropy_stats

LN2 = math.log(2.0)

DEFAULT_SIZES = {"support_x": 4, "support_y": 4, "d": 3}


@dataclass(frozen=True)
class OracleInstance:
    """One exactly-solvable instance shared by the expectation-gap checks.

    ``joint`` couples the two layer variables; ``points_x``/``points_y``
    are the unit vectors realizing their labels. ``h[x, y]`` tabulates the
    conditional mean of the task variable, with measured Lipschitz
    constants ``alpha`` (first argument) and ``beta`` (second).
    ``z_support``/``z_given_x`` give a bounded task variable depending on
    the current layer only, which makes the chain prev-curr-task Markov by
    construction.
    """

    joint: DiscreteJoint
    points_x: np.ndarray
    points_y: np.ndarray
    h: np.ndarray
    alpha: float
    beta: float
    epsilon: float
    f_hat_curr: np.ndarray
    f_hat_prev: np.ndarray
    eta_curr: float
    eta_prev: float
    z_support: Optional[np.ndarray] = None
    z_given_x: Optional[np.ndarray] = None
    z_bound: Optional[float] = None
    seed: object = None
    sizes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CheckReport:
    name: str
    lhs: float
    rhs: float
    passed: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class Prop1Report:
    premise_holds: bool
    conclusion_holds: bool
    P_gt_t: float
    mean: float

    @property
    def passed(self) -> bool:
        return (not self.premise_holds) or self.conclusion_holds


@dataclass(frozen=True)
class DiscreteLaw:
    """Finite law of a dissimilarity value."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if v.shape != p.shape or v.ndim != 1 or len(v) == 0:
            raise InvalidArgument("values and probs must be equal-length 1-d arrays")
        if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-9:
            raise InvalidArgument("probs must be a distribution")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _distinct_unit_points(rng: np.random.Generator, count: int, d: int, base: np.ndarray, spread: float) -> np.ndarray:
    """Unit support points with pairwise gaps, so labels are genuine outcomes.

    Colliding points would merge two labels of the random variable and
    silently invalidate the table-measured Lipschitz constants.
    """
    if d == 1:
        if count > 2:
            raise InvalidArgument(f"at most 2 distinct unit points exist in 1-d, requested {count}")
        return np.array([[1.0], [-1.0]])[:count]
    for attempt in range(100):
        pts = np.stack([_unit(base + (spread + 0.05 * attempt) * rng.normal(size=d)) for _ in range(count)])
        gaps = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() > 1e-6:
            return pts
    raise InvalidArgument("could not draw distinct unit support points")


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    gram = np.clip(a @ b.T, -1.0, 1.0)
    return 1.0 - gram


def random_instance(seed, sizes: Optional[dict] = None) -> OracleInstance:
    """Deterministic omnibus instance for all expectation-gap checks.

    Support points cluster around a common direction so the mean adjacent
    distance is small, and epsilon is then chosen strictly above twice
    that mean: generated instances always satisfy the theorem premises.
    """
    sizes = dict(DEFAULT_SIZES, **(sizes or {}))
    sx, sy, d = int(sizes["support_x"]), int(sizes["support_y"]), int(sizes["d"])
    if sx < 2 or sy < 2 or d < 1:
        raise InvalidArgument(f"sizes must have supports >= 2 and d >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    d_out = int(sizes.get("d_out", rng.integers(1, 4)))
    n_z = int(sizes.get("z_support", rng.integers(2, 5)))

    base = _unit(rng.normal(size=d)) if d > 1 else np.ones(1)
    spread = rng.uniform(0.05, 0.4)
    points_x = _distinct_unit_points(rng, sx, d, base, spread)
    points_y = _distinct_unit_points(rng, sy, d, base, spread)

    pmf = rng.random((sx, sy)) + 0.05
    # Extra diagonal-ish mass keeps the coupling tight without forcing it.
    boost = rng.uniform(0.0, 3.0)
    for i in range(min(sx, sy)):
        pmf[i, i] += boost
    pmf /= pmf.sum()

    rho = _cosine_matrix(points_x, points_y)
    mean_rho = float((pmf * rho).sum())
    epsilon = max(2.0 * mean_rho * rng.uniform(1.05, 2.5), 1e-9)

    m1 = rng.normal(size=(d_out, d)) * rng.uniform(0.2, 2.0)
    m2 = rng.normal(size=(d_out, d)) * rng.uniform(0.2, 2.0)
    bias = rng.normal(size=d_out)
    noise = rng.normal(size=(sx, sy, d_out)) * rng.uniform(0.0, 0.3)
    h = np.empty((sx, sy, d_out))
    for i in range(sx):
        for j in range(sy):
            h[i, j] = m1 @ points_x[i] + m2 @ points_y[j] + bias + noise[i, j]

    alpha = _measured_lipschitz(h, points_x, axis=0)
    beta = _measured_lipschitz(h, points_y, axis=1)

    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    f_star_curr = np.einsum("xy,xyd->xd", pmf / px[:, None], h)
    f_star_prev = np.einsum("xy,xyd->yd", pmf / py[None, :], h)
    pert_scale = rng.uniform(0.0, 0.5) * (np.abs(h).mean() + 0.1)
    f_hat_curr = f_star_curr + rng.normal(size=f_star_curr.shape) * pert_scale
    f_hat_prev = f_star_prev + rng.normal(size=f_star_prev.shape) * pert_scale
    eta_curr = float(np.einsum("x,xd->", px, (f_hat_curr - f_star_curr) ** 2))
    eta_prev = float(np.einsum("y,yd->", py, (f_hat_prev - f_star_prev) ** 2))

    z_support = rng.normal(size=(n_z, d_out)) * rng.uniform(0.2, 2.0)
    z_given_x = rng.random((sx, n_z)) + 0.05
    z_given_x /= z_given_x.sum(axis=1, keepdims=True)
    z_bound = float(np.linalg.norm(z_support, axis=1).max())

    joint = DiscreteJoint(
        support_x=tuple(range(sx)),
        support_y=tuple(range(sy)),
        pmf=pmf,
        support_points=points_x if sx == sy and np.array_equal(points_x, points_y) else None,
    )
    return OracleInstance(
        joint=joint,
        points_x=points_x,
        points_y=points_y,
        h=h,
        alpha=alpha,
        beta=beta,
        epsilon=epsilon,
        f_hat_curr=f_hat_curr,
        f_hat_prev=f_hat_prev,
        eta_curr=eta_curr,
        eta_prev=eta_prev,
        z_support=z_support,
        z_given_x=z_given_x,
        z_bound=z_bound,
        seed=seed,
        sizes={"support_x": sx, "support_y": sy, "d": d, "d_out": d_out, "z_support": n_z},
    )


def _measured_lipschitz(h: np.ndarray, points: np.ndarray, axis: int) -> float:
    """Max ratio of table differences to point distances along one slot."""
    table = h if axis == 0 else h.transpose(1, 0, 2)
    n = table.shape[0]
    worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            gap = np.linalg.norm(points[i] - points[j])
            if gap < 1e-12:
                continue
            diff = float(np.linalg.norm(table[i] - table[j], axis=-1).max())
            worst = max(worst, diff / gap)
    return worst


def _mean_rho(inst: OracleInstance) -> float:
    rho = _cosine_matrix(inst.points_x, inst.points_y)
    return float((inst.joint.pmf * rho).sum())


def _require_premise(inst: OracleInstance, name: str) -> None:
    mean_rho = _mean_rho(inst)
    if not mean_rho < inst.epsilon / 2.0:
        raise PremiseFailed(
            f"{name} premise E[rho] < eps/2 fails",
            mean_rho=mean_rho,
            epsilon=inst.epsilon,
        )


def _conditional_means(inst: OracleInstance) -> tuple[np.ndarray, np.ndarray]:
    pmf = inst.joint.pmf
    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    f_curr = np.einsum("xy,xyd->xd", pmf / px[:, None], inst.h)
    f_prev = np.einsum("xy,xyd->yd", pmf / py[None, :], inst.h)
    return f_curr, f_prev


def _expected_gap(pmf: np.ndarray, g_curr: np.ndarray, g_prev: np.ndarray) -> float:
    diff = g_curr[:, None, :] - g_prev[None, :, :]
    return float((pmf * (diff**2).sum(axis=2)).sum())


def check_thm1(inst: OracleInstance) -> CheckReport:
    """Optimal-predictor gap against 2 (alpha^2 + beta^2) epsilon."""
    _require_premise(inst, "thm1")
    f_curr, f_prev = _conditional_means(inst)
    lhs = _expected_gap(inst.joint.pmf, f_curr, f_prev)
    rhs = 2.0 * (inst.alpha**2 + inst.beta**2) * inst.epsilon
    return CheckReport("thm1", lhs, rhs, lhs <= rhs + 1e-9)


def check_thm2(inst: OracleInstance) -> CheckReport:
    """Finite-sample predictor gap against 3 eta + 3 eta' + 6 (a^2+b^2) eps."""
    _require_premise(inst, "thm2")
    if inst.f_hat_curr is None or inst.f_hat_prev is None:
        raise InvalidArgument("thm2 requires estimator tables")
    lhs = _expected_gap(inst.joint.pmf, inst.f_hat_curr, inst.f_hat_prev)
    rhs = 3.0 * inst.eta_curr + 3.0 * inst.eta_prev + 6.0 * (inst.alpha**2 + inst.beta**2) * inst.epsilon
    return CheckReport("thm2", lhs, rhs, lhs <= rhs + 1e-9)


def check_thm5(inst: OracleInstance) -> CheckReport:
    """Conditional-mean gap of a bounded task against 2 B^2 H(curr|prev) nats."""
    if inst.z_support is None or inst.z_given_x is None:
        raise PremiseFailed("thm5 requires a Markov task table indexed by the current layer")
    pmf = inst.joint.pmf
    px = pmf.sum(axis=1)
    py = pmf.sum(axis=0)
    ez_x = inst.z_given_x @ inst.z_support
    ez_y = ((pmf / py[None, :]).T @ ez_x)
    lhs = _expected_gap(pmf, ez_x, ez_y)
    h_cond_nats = entropy_stats(inst.joint)["H_X_given_Y"] * LN2
    b = inst.z_bound if inst.z_bound is not None else float(np.linalg.norm(inst.z_support, axis=1).max())
    rhs = 2.0 * b * b * h_cond_nats
    return CheckReport("thm5", lhs, rhs, lhs <= rhs + 1e-9)


def check_prop1(dist: DiscreteLaw, t: float, epsilon: float) -> Prop1Report:
    """Tail condition P[rho > t] < (eps - t)/(1 - t) against E[rho] < eps."""
    if not 0.0 < t < 1.0:
        raise InvalidArgument(f"t must lie in (0, 1), got {t}")
    if not t < epsilon <= 1.0:
        raise InvalidArgument(f"epsilon must lie in (t, 1], got {epsilon}")
    v = dist.values
    if (v < 0).any() or (v > 1).any():
        raise DomainViolation("rho values must lie in [0, 1]", min=float(v.min()), max=float(v.max()))
    p_gt_t = float(dist.probs[v > t].sum())
    mean = float((dist.values * dist.probs).sum())
    return Prop1Report(
        premise_holds=p_gt_t < (epsilon - t) / (1.0 - t),
        conclusion_holds=mean < epsilon,
        P_gt_t=p_gt_t,
        mean=mean,
    )


def random_rho_law(seed) -> tuple[DiscreteLaw, float, float]:
    """A seeded law on [0, 1] plus thresholds; half are biased low so the
    tail premise holds in a substantial fraction of draws."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    values = rng.random(n)
    if rng.random() < 0.5:
        values *= rng.uniform(0.05, 0.3)
    probs = rng.random(n) + 0.05
    probs /= probs.sum()
    t = rng.uniform(0.05, 0.9)
    epsilon = t + (1.0 - t) * rng.uniform(0.05, 1.0)
    return DiscreteLaw(values=values, probs=probs), t, epsilon


# --- Lemma equalities -------------------------------------------------------


def lemma_unit_identity_error(seed) -> float:
    """| ||x - y||^2 - 2 rho(x, y) | for one random unit-vector pair."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 16))
    x = _unit(rng.normal(size=d))
    y = _unit(rng.normal(size=d))
    lhs = float(((x - y) ** 2).sum())
    rho = 1.0 - float(x @ y)
    return abs(lhs - 2.0 * rho)


def lemma_three_vector_slack(seed) -> float:
    """3 (|a|^2+|b|^2+|c|^2) - |a+b+c|^2 for one random triple (>= 0)."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 12))
    a, b, c = rng.normal(size=(3, d)) * rng.uniform(0.1, 5.0)
    lhs = float(((a + b + c) ** 2).sum())
    rhs = 3.0 * float((a**2).sum() + (b**2).sum() + (c**2).sum())
    return rhs - lhs


def lemma_triangle_am_gm_slack(seed) -> float:
    """2 d(x,z)^2 + 2 d(z,y)^2 - d(x,y)^2 for random Euclidean points (>= 0)."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 8))
    x, y, z = rng.normal(size=(3, d)) * rng.uniform(0.1, 5.0)
    dxy = np.linalg.norm(x - y)
    dxz = np.linalg.norm(x - z)
    dzy = np.linalg.norm(z - y)
    return float(2 * dxz**2 + 2 * dzy**2 - dxy**2)


def lemma_kl_cmi_error(seed) -> float:
    """|E_(X,Y)[KL(p_Z|X || p_Z|Y)] - I(Z;X|Y)| for a random Markov table.

    The chain is prev-curr-task: the task law is indexed by the current
    layer only. Both sides are enumerated exactly, in bits.
    """
    rng = np.random.default_rng(seed)
    sy, sx, m = (int(rng.integers(2, 5)) for _ in range(3))
    pyx = rng.random((sy, sx)) + 0.05
    pyx /= pyx.sum()
    pz_x = rng.random((sx, m)) + 0.05
    pz_x /= pz_x.sum(axis=1, keepdims=True)

    py = pyx.sum(axis=1)
    px_given_y = pyx / py[:, None]
    pz_y = px_given_y @ pz_x

    expected_kl = 0.0
    for y in range(sy):
        for x in range(sx):
            kl = float((pz_x[x] * np.log2(pz_x[x] / pz_y[y])).sum())
            expected_kl += pyx[y, x] * kl

    cmi = 0.0
    for y in range(sy):
        pxz_y = px_given_y[y][:, None] * pz_x
        px_y = px_given_y[y]
        pz_given_y = pz_y[y]
        ratio = pxz_y / (px_y[:, None] * pz_given_y[None, :])
        cmi += py[y] * float((pxz_y * np.log2(ratio)).sum())
    return abs(expected_kl - cmi)


# --- Suites -----------------------------------------------------------------

THEOREMS = ("thm1", "thm2", "thm5", "prop1")
LEMMAS = ("unit_identity", "three_vector", "triangle_am_gm", "kl_cmi")

_LEMMA_TOL = 1e-9


@dataclass
class SuiteSummary:
    theorem: str
    instances: int
    passes: int
    premise_failures: int
    worst_slack: Optional[float]
    failures: list = field(default_factory=list)

    @property
    def substantive_failures(self) -> int:
        return self.instances - self.passes - self.premise_failures

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "instances": self.instances,
            "passes": self.passes,
            "premise_failures": self.premise_failures,
            "worst_slack": self.worst_slack,
            "substantive_failures": self.substantive_failures,
            "failure_seeds": [f["seed"] for f in self.failures],
        }


def _instance_fixture(inst: OracleInstance, report) -> dict:
    return {
        "seed": list(inst.seed) if isinstance(inst.seed, (list, tuple)) else inst.seed,
        "sizes": inst.sizes,
        "pmf": inst.joint.pmf.tolist(),
        "points_x": inst.points_x.tolist(),
        "points_y": inst.points_y.tolist(),
        "h": inst.h.tolist(),
        "alpha": inst.alpha,
        "beta": inst.beta,
        "epsilon": inst.epsilon,
        "eta_curr": inst.eta_curr,
        "eta_prev": inst.eta_prev,
        "z_support": None if inst.z_support is None else inst.z_support.tolist(),
        "z_given_x": None if inst.z_given_x is None else inst.z_given_x.tolist(),
        "lhs": report.lhs,
        "rhs": report.rhs,
    }


def _random_sizes(rng: np.random.Generator) -> dict:
    return {
        "support_x": int(rng.integers(2, 6)),
        "support_y": int(rng.integers(2, 6)),
        "d": int(rng.integers(2, 5)),
    }


def run_suite(theorem: str, instances: int, seed: int, fixture_dir: Optional[Path] = None) -> SuiteSummary:
    """Run one check over seeded random instances and tally the outcomes."""
    checks = {"thm1": check_thm1, "thm2": check_thm2, "thm5": check_thm5}
    if theorem not in THEOREMS:
        raise InvalidArgument(f"unknown theorem {theorem!r}, expected one of {THEOREMS}")
    passes = 0
    premise_failures = 0
    worst: Optional[float] = None
    failures: list = []
    for i in range(instances):
        inst_seed = [int(seed), i]
        if theorem == "prop1":
            law, t, eps = random_rho_law(inst_seed)
            report = check_prop1(law, t, eps)
            if not report.premise_holds:
                premise_failures += 1
                continue
            if report.passed:
                passes += 1
            slack = eps - report.mean
            worst = slack if worst is None else min(worst, slack)
            if not report.passed:
                failures.append({"seed": inst_seed, "P_gt_t": report.P_gt_t, "mean": report.mean})
            continue
        inst = random_instance(inst_seed, _random_sizes(np.random.default_rng(inst_seed)))
        try:
            report = checks[theorem](inst)
        except PremiseFailed:
            premise_failures += 1
            continue
        worst = report.slack if worst is None else min(worst, report.slack)
        if report.passed:
            passes += 1
        else:
            failures.append(_instance_fixture(inst, report))
    summary = SuiteSummary(
        theorem=theorem,
        instances=instances,
        passes=passes,
        premise_failures=premise_failures,
        worst_slack=worst,
        failures=failures,
    )
    if fixture_dir is not None and failures:
        fixture_dir = Path(fixture_dir)
        fixture_dir.mkdir(parents=True, exist_ok=True)
        for j, fixture in enumerate(failures):
            path = fixture_dir / f"failure_{theorem}_{j}.json"
            path.write_text(json.dumps(fixture, sort_keys=True, indent=1))
    return summary


def run_lemma_suite(lemma: str, instances: int, seed: int) -> SuiteSummary:
    """Check one appendix lemma equality/inequality on seeded instances."""
    fns = {
        "unit_identity": (lemma_unit_identity_error, lambda e: e <= _LEMMA_TOL, lambda e: _LEMMA_TOL - e),
        "three_vector": (lemma_three_vector_slack, lambda s: s >= -_LEMMA_TOL, lambda s: s),
        "triangle_am_gm": (lemma_triangle_am_gm_slack, lambda s: s >= -_LEMMA_TOL, lambda s: s),
        "kl_cmi": (lemma_kl_cmi_error, lambda e: e <= _LEMMA_TOL, lambda e: _LEMMA_TOL - e),
    }
    if lemma not in fns:
        raise InvalidArgument(f"unknown lemma {lemma!r}, expected one of {LEMMAS}")
    fn, ok, slack_of = fns[lemma]
    passes = 0
    worst: Optional[float] = None
    failures = []
    for i in range(instances):
        value = fn([int(seed), i])
        slack = slack_of(value)
        worst = slack if worst is None else min(worst, slack)
        if ok(value):
            passes += 1
        else:
            failures.append({"seed": [int(seed), i], "value": value})
    return SuiteSummary(
        theorem=f"lemma:{lemma}",
        instances=instances,
        passes=passes,
        premise_failures=0,
        worst_slack=worst,
        failures=failures,
    )
