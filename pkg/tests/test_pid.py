import numpy as np
import pytest

from skipscope.errors import InvalidArgument
from skipscope.infotheory import DiscreteJoint, entropy_stats
from skipscope.pid import (
    TripleJoint,
    broja_unique,
    conditional_mi_bits,
    marginal_violation,
    mutual_information_bits,
    pid_decompose,
)

from oracles import broja_grid_2x2x2, cond_mi_bits


def xor_joint():
    pmf = np.zeros((2, 2, 2))
    for y in range(2):
        for z in range(2):
            pmf[y ^ z, y, z] = 0.25
    return TripleJoint(pmf)


def copy_joint():
    pmf = np.zeros((2, 2, 2))
    pmf[0, 0, 0] = pmf[1, 1, 1] = 0.5
    return TripleJoint(pmf)


def indep_joint():
    return TripleJoint(np.full((2, 2, 2), 0.125))


def xy_copy_z_indep():
    pmf = np.zeros((2, 2, 2))
    for x in range(2):
        for z in range(2):
            pmf[x, x, z] = 0.25
    return TripleJoint(pmf)


def self_unique_triple(pxy):
    nx, ny = pxy.shape
    pmf = np.zeros((nx, nx, ny))
    for x in range(nx):
        pmf[x, x, :] = pxy[x, :]
    return TripleJoint(pmf)


def test_triple_joint_validation():
    with pytest.raises(InvalidArgument):
        TripleJoint(np.full((2, 2), 0.25))
    with pytest.raises(InvalidArgument):
        TripleJoint(np.full((2, 2, 2), 0.2))
    with pytest.raises(InvalidArgument):
        TripleJoint(np.zeros((17, 2, 2)))


def test_cond_mi_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pmf = rng.random((3, 2, 3)) ** 2
        pmf /= pmf.sum()
        assert conditional_mi_bits(pmf) == pytest.approx(cond_mi_bits(pmf), abs=1e-9)


def test_unique_xy_copy_z_independent():
    uni, q_star, gap = broja_unique(xy_copy_z_indep())
    assert uni == pytest.approx(1.0, abs=1e-3)


def test_unique_xor_matches_grid():
    uni, _, _ = broja_unique(xor_joint())
    grid = broja_grid_2x2x2(xor_joint().pmf)
    assert uni == pytest.approx(0.0, abs=1e-3)
    assert abs(uni - grid) <= 2e-3


def test_unique_copy_matches_grid():
    uni, _, _ = broja_unique(copy_joint())
    grid = broja_grid_2x2x2(copy_joint().pmf)
    assert uni == pytest.approx(0.0, abs=1e-3)
    assert abs(uni - grid) <= 2e-3


def test_decompose_independent():
    r = pid_decompose(indep_joint())
    for v in (r.uni_xy, r.uni_xz, r.red, r.syn):
        assert abs(v) <= 1e-3


def test_decompose_xor():
    r = pid_decompose(xor_joint())
    assert r.syn == pytest.approx(1.0, abs=1e-3)
    for v in (r.uni_xy, r.uni_xz, r.red):
        assert abs(v) <= 1e-3


def test_decompose_copy():
    r = pid_decompose(copy_joint())
    assert r.red == pytest.approx(1.0, abs=1e-3)
    for v in (r.uni_xy, r.uni_xz, r.syn):
        assert abs(v) <= 1e-3


def test_decomposition_identities_random():
    rng = np.random.default_rng(7)
    for _ in range(4):
        pmf = rng.random((2, 3, 2)) ** 2
        pmf /= pmf.sum()
        joint = TripleJoint(pmf)
        r = pid_decompose(joint)
        assert r.uni_xy + r.red == pytest.approx(r.mi_xy, abs=1e-4)
        assert r.uni_xz + r.red == pytest.approx(r.mi_xz, abs=1e-4)
        assert r.uni_xy + r.uni_xz + r.red + r.syn == pytest.approx(r.mi_x_yz, abs=1e-4)
        for v in (r.uni_xy, r.uni_xz, r.red, r.syn):
            assert v >= -1e-6
        assert marginal_violation(joint, r.q_star) <= 1e-7


def test_random_2x2x2_match_grid_oracle():
    rng = np.random.default_rng(21)
    for _ in range(6):
        pmf = rng.random((2, 2, 2)) + 0.02
        pmf /= pmf.sum()
        joint = TripleJoint(pmf)
        uni, _, _ = broja_unique(joint)
        grid = broja_grid_2x2x2(pmf)
        assert abs(uni - grid) <= 2e-3


def test_self_unique_equals_conditional_entropy():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(25):
        nx, ny = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        pxy = rng.random((nx, ny)) + 0.05
        pxy /= pxy.sum()
        uni, _, _ = broja_unique(self_unique_triple(pxy))
        h = entropy_stats(DiscreteJoint(tuple(range(nx)), tuple(range(ny)), pxy))["H_X_given_Y"]
        worst = max(worst, abs(uni - h))
    assert worst <= 1e-4


def test_monotone_descent_histories():
    uni, q_star, gap, histories = broja_unique(xor_joint(), collect_histories=True)
    assert len(histories) >= 1
    for hist in histories:
        diffs = np.diff(np.asarray(hist))
        assert (diffs <= 1e-12).all()


def test_q_star_feasible():
    joint = xor_joint()
    _, q_star, _ = broja_unique(joint)
    assert q_star.min() >= -1e-12
    assert marginal_violation(joint, q_star) <= 1e-7


def test_solver_gap_reported_small():
    _, _, gap = broja_unique(xor_joint())
    assert 0.0 <= gap <= 1e-3


def test_mutual_information_helper():
    pxy = np.array([[0.4, 0.1], [0.1, 0.4]])
    assert mutual_information_bits(pxy) == pytest.approx(0.2780719051126377, abs=1e-9)
