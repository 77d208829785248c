"""Partial information decomposition of I(X; Y, Z) into four components.

Unique information is the minimum of I_Q(X;Y|Z) over the polytope of
joints Q agreeing with the input on the (X,Y) and (X,Z) marginals. On
that polytope H(X|Z) is fixed, so the objective is convex; it is solved
by projected gradient descent on the polytope's free coordinates, with
feasibility maintained by Dykstra alternating projections between the
marginal-constraint affine subspace and the nonnegative orthant.
Redundancy and synergy follow from the decomposition identities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, SolverStalled
from .infotheory import _xlogx_bits

MAX_SUPPORT = 16

_GRAD_FLOOR = 1e-18
_N_RESTARTS = 20
_MAX_ITERS = 100_000
_PLATEAU_WINDOW = 50
_PLATEAU_TOL = 1e-9
_STALL_GAP = 1e-3


@dataclass(frozen=True)
class TripleJoint:
    """Joint pmf over (X, Y, Z) with finite supports of size <= 16 each."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 3:
            raise InvalidArgument(f"triple pmf must be 3-d, got rank {pmf.ndim}")
        if max(pmf.shape) > MAX_SUPPORT:
            raise InvalidArgument(f"support sizes must be <= {MAX_SUPPORT}, got {pmf.shape}")
        if min(pmf.shape) < 1:
            raise InvalidArgument(f"empty support in shape {pmf.shape}")
        if (pmf < 0).any():
            raise InvalidArgument("pmf entries must be nonnegative")
        if abs(float(pmf.sum()) - 1.0) > 1e-9:
            raise InvalidArgument(f"pmf sums to {pmf.sum()!r}, expected 1 within 1e-9")
        object.__setattr__(self, "pmf", pmf)

    @property
    def shape(self) -> tuple:
        return self.pmf.shape

    def swap_yz(self) -> "TripleJoint":
        return TripleJoint(self.pmf.transpose(0, 2, 1))


@dataclass(frozen=True)
class PIDResult:
    """The four decomposition components in bits, plus solver metadata."""

    uni_xy: float
    uni_xz: float
    red: float
    syn: float
    solver_gap: float
    q_star: np.ndarray
    mi_xy: float
    mi_xz: float
    mi_x_yz: float


def _entropy_bits(p: np.ndarray) -> float:
    return -float(_xlogx_bits(np.asarray(p, dtype=np.float64)).sum())


def mutual_information_bits(pxy: np.ndarray) -> float:
    """I(X;Y) of a 2-d joint, in bits."""
    pxy = np.asarray(pxy, dtype=np.float64)
    return _entropy_bits(pxy.sum(1)) + _entropy_bits(pxy.sum(0)) - _entropy_bits(pxy)


def conditional_mi_bits(pmf: np.ndarray) -> float:
    """I(X;Y|Z) of a 3-d joint, in bits: H(XZ) + H(YZ) - H(Z) - H(XYZ)."""
    pmf = np.maximum(np.asarray(pmf, dtype=np.float64), 0.0)
    h_xz = _entropy_bits(pmf.sum(axis=1))
    h_yz = _entropy_bits(pmf.sum(axis=0))
    h_z = _entropy_bits(pmf.sum(axis=(0, 1)))
    h_xyz = _entropy_bits(pmf)
    return h_xz + h_yz - h_z - h_xyz


class _MarginalPolytope:
    """Joints with the (X,Y) and (X,Z) marginals of a reference pmf."""

    def __init__(self, pmf: np.ndarray):
        self.shape = pmf.shape
        nx, ny, nz = pmf.shape
        n = nx * ny * nz
        rows = []
        for x in range(nx):
            for y in range(ny):
                r = np.zeros(pmf.shape)
                r[x, y, :] = 1.0
                rows.append(r.ravel())
        for x in range(nx):
            for z in range(nz):
                r = np.zeros(pmf.shape)
                r[x, :, z] = 1.0
                rows.append(r.ravel())
        a = np.array(rows)
        _, s, vh = np.linalg.svd(a, full_matrices=True)
        rank = int((s > s[0] * max(a.shape) * np.finfo(float).eps).sum()) if len(s) else 0
        self.null_basis = vh[rank:].T  # orthonormal columns spanning null(A)
        self.q_ref = pmf.ravel().copy()

    @property
    def free_dim(self) -> int:
        return self.null_basis.shape[1]

    def project_affine(self, q: np.ndarray) -> np.ndarray:
        delta = q - self.q_ref
        return self.q_ref + self.null_basis @ (self.null_basis.T @ delta)

    def project(self, q: np.ndarray, max_iter: int = 5000, tol: float = 1e-14) -> np.ndarray:
        """Dykstra alternating projection onto {A q = b} intersect {q >= 0}."""
        x = self.project_affine(q)
        p_corr = np.zeros_like(x)
        for _ in range(max_iter):
            y = np.maximum(x + p_corr, 0.0)
            p_corr = x + p_corr - y
            x_new = self.project_affine(y)
            if np.max(np.abs(x_new - x)) < tol and x_new.min() > -1e-12:
                x = x_new
                break
            x = x_new
        return np.maximum(x, 0.0)

    def marginal_violation(self, q3: np.ndarray) -> float:
        ref = self.q_ref.reshape(self.shape)
        dxy = np.abs(q3.sum(axis=2) - ref.sum(axis=2)).max()
        dxz = np.abs(q3.sum(axis=1) - ref.sum(axis=1)).max()
        return float(max(dxy, dxz))


def _objective_grad_bits(q3: np.ndarray) -> np.ndarray:
    # Descent direction for -H(X|YZ); the fixed-marginal H(X|Z) part of
    # I(X;Y|Z) has zero directional derivative inside the polytope.
    q = np.maximum(q3, _GRAD_FLOOR)
    q_yz = np.maximum(q3.sum(axis=0, keepdims=True), _GRAD_FLOOR)
    return np.log2(q / q_yz)


@dataclass
class _RestartResult:
    objective: float
    q: np.ndarray
    converged: bool
    history: list = field(default_factory=list)


_ACTIVE_TOL = 1e-14


def _feasible_descent_direction(polytope: _MarginalPolytope, q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Descent direction respecting the active q >= 0 constraints.

    The plain null-space projection of -g can point out of the feasible
    cone at a face (it decreases cells already at zero) and lose its
    descent once clipped. Alternating projection between the null space
    and the cone of directions that do not decrease active cells escapes
    that; with no active cells it reduces to the plain projected gradient.
    """
    basis = polytope.null_basis
    v = basis @ (basis.T @ -g)
    active = q <= _ACTIVE_TOL
    if not active.any():
        return v
    for _ in range(400):
        if not (v[active] < -1e-13).any():
            break
        v = v.copy()
        v[active] = np.maximum(v[active], 0.0)
        v = basis @ (basis.T @ v)
    return v


def _max_feasible_step(q: np.ndarray, v: np.ndarray) -> float:
    """Largest alpha keeping q + alpha v >= 0 (up to projection dust).

    Components below 1e-12 in magnitude are treated as non-shrinking: the
    active-set cleanup leaves that much dust on zero cells, and the step
    update clips it away. Every unit null-space direction has a real
    negative component somewhere (cell sums are fixed), so the result is
    effectively finite; 0 means the ray immediately leaves the polytope.
    """
    shrink = v < -1e-12
    if not shrink.any():
        return 1e6
    return float(np.min(np.maximum(q[shrink], 0.0) / -v[shrink]))


_INV_GOLDEN = 0.6180339887498949


def _ray_minimize(polytope: _MarginalPolytope, q: np.ndarray, f0: float, v: np.ndarray):
    """1-d minimization of the objective along a feasible ray.

    q + alpha v stays inside the polytope for alpha in [0, alpha_max], and
    the objective is convex along the segment, so golden-section search
    finds the ray minimum without any projections.
    """
    alpha_max = _max_feasible_step(q, v)
    if alpha_max <= 0.0:
        return 0.0, f0
    shape = polytope.shape

    def fun(alpha):
        return conditional_mi_bits((q + alpha * v).reshape(shape))

    lo, hi = 0.0, alpha_max
    m1 = hi - _INV_GOLDEN * (hi - lo)
    m2 = lo + _INV_GOLDEN * (hi - lo)
    f1, f2 = fun(m1), fun(m2)
    best_f, best_a = min((f0, 0.0), (fun(alpha_max), alpha_max), (f1, m1), (f2, m2))
    for _ in range(72):
        if f1 <= f2:
            hi, m2, f2 = m2, m1, f1
            m1 = hi - _INV_GOLDEN * (hi - lo)
            f1 = fun(m1)
        else:
            lo, m1, f1 = m1, m2, f2
            m2 = lo + _INV_GOLDEN * (hi - lo)
            f2 = fun(m2)
        if (f1, m1) < (best_f, best_a):
            best_f, best_a = f1, m1
        if (f2, m2) < (best_f, best_a):
            best_f, best_a = f2, m2
        if hi - lo < 1e-14 * alpha_max or abs(f1 - f2) < 1e-14:
            break
    if best_a == 0.0 or best_f >= f0 - 1e-15:
        return 0.0, f0
    return best_a, best_f


def _arc_search(polytope: _MarginalPolytope, q: np.ndarray, f: float, v: np.ndarray):
    """Backtracking over projections of q + step v onto the polytope.

    Unlike a straight feasible ray, the projection arc slides along the
    faces it hits, which unblocks descent at corners. Accepts the first
    improving projected point, sweeping from a fixed cap so one pinned
    step never poisons later searches. Probe projections run on a reduced
    budget; the accepted point is re-projected in full by the caller's
    next iteration and at the end of the descent.
    """
    step = 4.0
    for _ in range(48):
        trial = polytope.project(q + step * v, max_iter=800)
        if np.max(np.abs(trial - q)) < 1e-15:
            break
        f_trial = conditional_mi_bits(trial.reshape(polytope.shape))
        if f_trial < f - 1e-15 and polytope.marginal_violation(trial.reshape(polytope.shape)) < 1e-10:
            return trial, f_trial
        step *= 0.5
    return None, f


def _improving_step(polytope: _MarginalPolytope, q: np.ndarray, f: float, g: np.ndarray):
    """One descent move from q, or (None, f) at a constrained minimum.

    Tries, in order: exact minimization along the feasible gradient rays,
    the free-parameter axes, and projection-arc backtracking along the
    gradient rays (the arcs slide along faces but pay for projections, so
    they come last).
    """
    basis = polytope.null_basis
    rays = []
    for v in (_feasible_descent_direction(polytope, q, g), basis @ (basis.T @ -g)):
        norm = np.linalg.norm(v)
        if norm >= 1e-15:
            rays.append(v / norm)
    for v in rays:
        alpha, f_trial = _ray_minimize(polytope, q, f, v)
        if alpha > 0.0:
            return np.maximum(q + alpha * v, 0.0), f_trial
    for i in range(polytope.free_dim):
        for sign in (1.0, -1.0):
            v = sign * basis[:, i]
            alpha, f_trial = _ray_minimize(polytope, q, f, v)
            if alpha > 0.0:
                return np.maximum(q + alpha * v, 0.0), f_trial
    for v in rays:
        trial, f_trial = _arc_search(polytope, q, f, v)
        if trial is not None:
            return trial, f_trial
    return None, f


def _descend(polytope: _MarginalPolytope, q_start: np.ndarray, max_iters: int = _MAX_ITERS) -> _RestartResult:
    shape = polytope.shape
    q = polytope.project(q_start)
    f = conditional_mi_bits(q.reshape(shape))
    history = [f]
    converged = False
    for _ in range(max_iters):
        g = _objective_grad_bits(q.reshape(shape)).ravel()
        q_next, f_trial = _improving_step(polytope, q, f, g)
        if q_next is None:
            converged = True
            break
        q = q_next
        f = f_trial
        history.append(f)
        if len(history) > _PLATEAU_WINDOW and history[-_PLATEAU_WINDOW - 1] - history[-1] < _PLATEAU_TOL:
            converged = True
            break
    return _RestartResult(objective=f, q=q, converged=converged, history=history)


_VERIFY_SCALES = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


def broja_unique(joint: TripleJoint, n_restarts: int = _N_RESTARTS, collect_histories: bool = False):
    """Uni(X:Y\\Z) = min over Q in the marginal polytope of I_Q(X;Y|Z), bits.

    Phase 1 runs ``n_restarts`` independent descents from deterministic
    seeded starts (the input joint, the projected uniform joint, then
    seeded perturbations) and takes the minimum; restarts are order-free,
    so they may run concurrently. Independent descents of this boundary-
    heavy objective can park on faces above the optimum, so a second
    phase re-descends from seeded perturbations of the incumbent: if any
    returns lower, the incumbent was a trap and the phase repeats; the
    spread of the verification endpoints is the reported solver_gap.
    Returns (uni_bits, q_star, solver_gap); raises SOLVER_STALLED when
    the verification spread exceeds 1e-3 bits after the budget.
    """
    pmf = joint.pmf
    polytope = _MarginalPolytope(pmf)
    results: list[_RestartResult] = []

    if polytope.free_dim == 0:
        f = conditional_mi_bits(pmf)
        q_star = pmf.copy()
        if collect_histories:
            return max(0.0, f), q_star, 0.0, [[f]]
        return max(0.0, f), q_star, 0.0

    starts = [pmf.ravel().copy(), polytope.project(np.full(pmf.size, 1.0 / pmf.size))]
    scale = float(np.linalg.norm(pmf.ravel())) or 1.0
    for r in range(max(0, n_restarts - len(starts))):
        rng = np.random.default_rng(90001 + 7 * r)
        w = rng.normal(size=polytope.free_dim) * 0.5 * scale
        starts.append(polytope.project(pmf.ravel() + polytope.null_basis @ w))
    seen: list[tuple[np.ndarray, _RestartResult]] = []
    for q_start in starts[:n_restarts]:
        cached = next((res for s, res in seen if np.max(np.abs(s - q_start)) < 1e-12), None)
        if cached is None:
            cached = _descend(polytope, q_start)
            seen.append((q_start, cached))
        results.append(cached)

    incumbent = min(results, key=lambda r: r.objective)
    verification: list[_RestartResult] = []
    for round_idx in range(3):
        verification = []
        improved = False
        for i, vscale in enumerate(_VERIFY_SCALES):
            rng = np.random.default_rng(777001 + 13 * i + 1009 * round_idx)
            delta = polytope.null_basis @ rng.normal(size=polytope.free_dim) * (vscale * scale)
            res = _descend(polytope, incumbent.q + delta)
            verification.append(res)
            if res.objective < incumbent.objective - 1e-9:
                improved = True
        if not improved:
            break
        incumbent = min(verification, key=lambda r: r.objective)
    pool = verification + [incumbent]
    gap = max(r.objective for r in pool) - incumbent.objective
    all_converged = incumbent.converged and all(r.converged for r in verification)
    if not all_converged or gap > _STALL_GAP:
        raise SolverStalled(
            "unique-information descent did not converge",
            gap=gap,
            converged_restarts=sum(r.converged for r in results),
            restarts=len(results),
            best_objective=incumbent.objective,
        )
    q_star = polytope.project(incumbent.q).reshape(pmf.shape)
    uni = max(0.0, conditional_mi_bits(q_star))
    if collect_histories:
        return uni, q_star, float(gap), [r.history for r in results + verification]
    return uni, q_star, float(gap)


def pid_decompose(joint: TripleJoint) -> PIDResult:
    """Split I(X; Y, Z) into unique, redundant, and synergistic parts.

    Both unique terms come from the convex program; redundancy and
    synergy are derived from the identities
    Red = I(X;Y) - Uni(X:Y\\Z) and
    Syn = I(X;Y,Z) - Uni(X:Y\\Z) - Uni(X:Z\\Y) - Red.
    """
    pmf = joint.pmf
    mi_xy = mutual_information_bits(pmf.sum(axis=2))
    mi_xz = mutual_information_bits(pmf.sum(axis=1))
    nx = pmf.shape[0]
    mi_x_yz = mutual_information_bits(pmf.reshape(nx, -1))

    uni_xy, q_star, gap_y = broja_unique(joint)
    uni_xz, _, gap_z = broja_unique(joint.swap_yz())
    red = mi_xy - uni_xy
    syn = mi_x_yz - uni_xy - uni_xz - red
    return PIDResult(
        uni_xy=uni_xy,
        uni_xz=uni_xz,
        red=red,
        syn=syn,
        solver_gap=float(max(gap_y, gap_z)),
        q_star=q_star,
        mi_xy=mi_xy,
        mi_xz=mi_xz,
        mi_x_yz=mi_x_yz,
    )


def marginal_violation(joint: TripleJoint, q3: np.ndarray) -> float:
    """Largest per-cell deviation of q3 from the joint's fixed marginals."""
    return _MarginalPolytope(joint.pmf).marginal_violation(np.asarray(q3, dtype=np.float64))
