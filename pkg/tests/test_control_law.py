import numpy as np
import pytest

from cpc.control_law import (
    CoordSplit,
    GainSpec,
    Reparam,
    cpc_tau,
    estimate_control_matrix,
    feedforward_tau,
    null_covector,
    renormalized_target,
    reparam_params,
    split_coordinates,
)
from cpc.dynamics import (
    ChainParams,
    State,
    accel,
    acrobot_params,
    capsule_mass_props,
    exact_control_matrix,
    step,
)
from cpc.errors import (
    NotFullyActuated,
    RankDeficient,
    VelocityBarDegenerate,
)


# ---------------------------------------------------------------------------
# split_coordinates / null_covector
# ---------------------------------------------------------------------------


def test_split_prefers_larger_row():
    assert split_coordinates(np.array([[1.0], [0.5]])).controlled == (0,)
    assert split_coordinates(np.array([[0.0], [1.0]])).controlled == (1,)


def test_split_rank_deficient():
    with pytest.raises(RankDeficient):
        split_coordinates(np.zeros((3, 1)))
    with pytest.raises(RankDeficient):
        split_coordinates(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))


def test_split_deterministic(rng):
    B = rng.normal(size=(4, 2))
    assert split_coordinates(B) == split_coordinates(B.copy())


def test_null_covector_hand_case():
    B = np.array([[1.0], [0.5]])
    split = split_coordinates(B)
    b = null_covector(B, split)
    assert np.allclose(b, [[0.5], [-1.0]])
    assert abs(b.T @ B).max() < 1e-12


def test_null_covector_fully_actuated_empty():
    B = np.array([[2.0, 0.1], [0.3, 1.5]])
    b = null_covector(B, split_coordinates(B))
    assert b.shape == (2, 0)


def test_null_identity_random(rng):
    for _ in range(200):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, n))
        B = rng.normal(size=(n, m))
        split = split_coordinates(B)
        b = null_covector(B, split)
        assert np.abs(b.T @ B).max() < 1e-9
        # Free rows carry minus identity.
        assert np.allclose(b[list(split.free), :], -np.eye(n - m))
        tau = rng.normal(size=m)
        assert np.abs(b.T @ (B @ tau)).max() < 1e-9


# ---------------------------------------------------------------------------
# reparam_params / renormalized_target
# ---------------------------------------------------------------------------


def _acrobot_split_b(q):
    p = acrobot_params()
    B = exact_control_matrix(p, q)
    split = split_coordinates(B)
    return B, split, null_covector(B, split)


def test_reparam_identity_state(rng):
    q = rng.uniform(-1, 1, size=2)
    qdot = rng.uniform(0.5, 1.5, size=2)
    _, _, b = _acrobot_split_b(q)
    rep = reparam_params(State(q, qdot), State(q, qdot), b)
    assert rep.t0 == pytest.approx(0.0, abs=1e-14)
    assert rep.s == pytest.approx(1.0)


def test_reparam_scalar_formula():
    # One free coordinate, constructed so qbar_d - qbar = 0.1, qdbar = 1,
    # qdbar_d = 2 in the projected variables.
    b = np.array([[1.0], [0.0]])  # stand-in covector; only projections matter
    x0 = State(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    xd = State(np.array([0.1, 0.0]), np.array([2.0, 0.0]))
    rep = reparam_params(x0, xd, b)
    assert rep.t0 == pytest.approx(0.1)
    assert rep.s == pytest.approx(2.0)


def test_reparam_guard():
    b = np.array([[1.0], [0.0]])
    x0 = State(np.zeros(2), np.array([1e-9, 0.0]))
    xd = State(np.ones(2), np.array([1.0, 0.0]))
    with pytest.raises(VelocityBarDegenerate):
        reparam_params(x0, xd, b)


def test_reparam_general_matches_scalar_reduction(rng):
    # Two free coordinates with parallel projected velocities reduce to the
    # scalar formulas applied along the common direction.
    d = np.array([2.0, 1.0])
    x0 = State(np.zeros(3), np.zeros(3))
    xd = State(np.zeros(3), np.zeros(3))
    # Choose q, qdot giving qdbar0 = 1.5 d, qdbard = 0.75 d, qbard - qbar0 = 0.2 d.
    x0.qdot[:2] = 1.5 * d
    xd.qdot[:2] = 0.75 * d
    xd.q[:2] = 0.2 * d
    bt = np.zeros((3, 2))
    bt[0, 0] = 1.0
    bt[1, 1] = 1.0
    rep = reparam_params(x0, xd, bt)
    assert rep.t0 == pytest.approx(0.2 / 1.5)
    assert rep.s == pytest.approx(0.75 / 1.5)


def test_reparam_reduction_bitlevel(rng):
    # General formula with one free coordinate agrees with the scalar one.
    for _ in range(100):
        q0, qd0 = rng.normal(size=2), rng.normal(size=2)
        q1, qd1 = rng.normal(size=2), rng.normal(size=2)
        b = rng.normal(size=(2, 1))
        x0, xd = State(q0, qd0), State(q1, qd1)
        try:
            rep = reparam_params(x0, xd, b)
        except VelocityBarDegenerate:
            continue
        qbar0, qdbar0 = float(b[:, 0] @ q0), float(b[:, 0] @ qd0)
        qbard, qdbard = float(b[:, 0] @ q1), float(b[:, 0] @ qd1)
        assert rep.t0 == pytest.approx((qbard - qbar0) / qdbar0, abs=1e-12, rel=1e-12)
        assert rep.s == pytest.approx(qdbard / qdbar0, abs=1e-12, rel=1e-12)


def test_renormalized_identity_reparam(rng):
    xd = State(rng.normal(size=2), rng.normal(size=2))
    q_r0, qdot_r = renormalized_target(xd, Reparam(0.0, 1.0))
    assert np.allclose(q_r0, xd.q)
    assert np.allclose(qdot_r, xd.qdot)


def test_renormalized_time_reversal(rng):
    xd = State(rng.normal(size=2), rng.normal(size=2))
    q_r0, qdot_r = renormalized_target(xd, Reparam(0.0, -1.0))
    assert np.allclose(q_r0, xd.q)
    assert np.allclose(qdot_r, -xd.qdot)


def test_renormalized_projection_identity(rng):
    # The covector projection of the renormalized start equals that of the
    # current state, exactly, for one free coordinate.
    for _ in range(100):
        q = rng.uniform(-1.5, 1.5, size=2)
        x0 = State(q, rng.normal(size=2))
        xd = State(rng.uniform(-1.5, 1.5, size=2), rng.normal(size=2))
        _, _, b = _acrobot_split_b(q)
        try:
            rep = reparam_params(x0, xd, b)
        except VelocityBarDegenerate:
            continue
        q_r0, qdot_r = renormalized_target(xd, rep)
        assert abs(b[:, 0] @ q_r0 - b[:, 0] @ x0.q) < 1e-10
        assert abs(b[:, 0] @ qdot_r - b[:, 0] @ x0.qdot) < 1e-10


# ---------------------------------------------------------------------------
# cpc_tau
# ---------------------------------------------------------------------------


def test_cpc_tau_on_target_returns_tau_d(rng):
    q = rng.uniform(-1, 1, size=2)
    qdot = rng.uniform(0.5, 1.0, size=2)
    B, split, b = _acrobot_split_b(q)
    x0 = State(q, qdot)
    rep = reparam_params(x0, x0, b)
    tau_d = rng.normal(size=1)
    tau = cpc_tau(x0, x0, B, split, rep, GainSpec(100.0), tau_d)
    assert np.abs(tau - tau_d).max() < 1e-9


def test_cpc_tau_scalar_hand_case():
    B = np.array([[1.0], [0.5]])
    split = CoordSplit((0,), (1,))
    x0 = State(np.array([0.1, 0.0]), np.zeros(2))
    xd = State(np.zeros(2), np.zeros(2))
    tau = cpc_tau(x0, xd, B, split, Reparam(0.0, 1.0), GainSpec(4.0), np.zeros(1))
    assert tau[0] == pytest.approx(-0.4)


def test_cpc_tau_fully_actuated_reduces_to_linear_feedback(rng):
    # With M = N and the identity reparameterization, the law is the plain
    # linear state feedback tau_d - B^-1 (k dq + 2 sqrt(k) dqdot).
    B = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    split = split_coordinates(B)
    assert split.controlled == (0, 1)
    x0 = State(rng.normal(size=2), rng.normal(size=2))
    xd = State(rng.normal(size=2), rng.normal(size=2))
    gain = GainSpec(25.0)
    tau_d = rng.normal(size=2)
    tau = cpc_tau(x0, xd, B, split, Reparam(0.0, 1.0), gain, tau_d)
    expected = tau_d - np.linalg.solve(B, 25.0 * (x0.q - xd.q) + 10.0 * (x0.qdot - xd.qdot))
    assert np.abs(tau - expected).max() < 1e-12


def test_cpc_tau_invariant_under_coordinate_maps(rng):
    # With one free coordinate the law is exactly invariant under invertible
    # linear coordinate changes, because the reparameterized target carries
    # identical unactuated projections.
    for _ in range(50):
        q = rng.uniform(-1, 1, size=2)
        qdot = rng.uniform(-2, 2, size=2)
        qd = rng.uniform(-1, 1, size=2)
        qdd = rng.uniform(-2, 2, size=2)
        B = exact_control_matrix(acrobot_params(), q)
        x0, xd = State(q, qdot), State(qd, qdd)
        split = split_coordinates(B)
        b = null_covector(B, split)
        try:
            rep = reparam_params(x0, xd, b)
        except VelocityBarDegenerate:
            continue
        gain = GainSpec(400.0)
        tau = cpc_tau(x0, xd, B, split, rep, gain, np.zeros(1))

        C = rng.normal(size=(2, 2))
        while abs(np.linalg.det(C)) < 0.3:
            C = rng.normal(size=(2, 2))
        Bt = C @ B
        x0t = State(C @ q, C @ qdot)
        xdt = State(C @ qd, C @ qdd)
        splitt = split_coordinates(Bt)
        btt = null_covector(Bt, splitt)
        rept = reparam_params(x0t, xdt, btt)
        taut = cpc_tau(x0t, xdt, Bt, splitt, rept, gain, np.zeros(1))
        scale = max(1.0, np.abs(tau).max())
        assert np.abs(taut - tau).max() / scale < 1e-7


# ---------------------------------------------------------------------------
# feedforward_tau
# ---------------------------------------------------------------------------


def test_feedforward_rest_zero():
    p = ChainParams(n_links=2, actuated_joints=(0, 1), gravity=0.0)
    tau = feedforward_tau(p, np.array([0.3, 0.1]), np.zeros(2), np.zeros(2))
    assert np.abs(tau).max() < 1e-12


def test_feedforward_gravity_compensation():
    p = ChainParams(n_links=1, actuated_joints=(0,))
    mass, l_com, _ = capsule_mass_props(1.0, 0.1, 1.0)
    tau = feedforward_tau(p, np.array([np.pi / 2]), np.zeros(1), np.zeros(1))
    assert abs(tau[0]) == pytest.approx(mass * p.gravity * l_com)
    # Holding torque yields zero acceleration.
    a = accel(p, State(np.array([np.pi / 2]), np.zeros(1)), tau)
    assert abs(a[0]) < 1e-12


def test_feedforward_roundtrip_acceleration(rng):
    p = ChainParams(n_links=2, actuated_joints=(0, 1))
    for _ in range(20):
        q = rng.uniform(-2, 2, size=2)
        qdot = rng.uniform(-2, 2, size=2)
        u = rng.normal(size=2)
        tau = feedforward_tau(p, q, qdot, u)
        a = accel(p, State(q, qdot), tau)
        assert np.abs(a - u).max() < 1e-9


def test_feedforward_underactuated_raises():
    with pytest.raises(NotFullyActuated):
        feedforward_tau(acrobot_params(), np.zeros(2), np.zeros(2), np.zeros(2))


# ---------------------------------------------------------------------------
# estimate_control_matrix
# ---------------------------------------------------------------------------


def test_estimate_recovers_exact_linear_map(rng):
    B0 = rng.normal(size=(2, 1))
    taus = rng.normal(size=(7, 1))
    us = taus @ B0.T
    B = estimate_control_matrix(taus, us, ridge=0.0)
    assert np.abs(B - B0).max() < 1e-9


def test_estimate_zero_torques_rank_deficient():
    with pytest.raises(RankDeficient):
        estimate_control_matrix(np.zeros((7, 1)), np.ones((7, 2)), ridge=0.0)


def test_estimate_affine_removes_constant_bias(rng):
    B0 = rng.normal(size=(2, 1))
    bias = np.array([0.5, -0.2])
    taus = rng.normal(size=(20, 1))
    us = taus @ B0.T + bias
    B_plain = estimate_control_matrix(taus, us, ridge=0.0)
    B_affine = estimate_control_matrix(taus, us, ridge=0.0, affine=True)
    assert np.abs(B_affine - B0).max() < 1e-9
    assert np.abs(B_plain - B0).max() > 1e-3


def test_estimate_on_acrobot_rollout(rng):
    # Small noisy motions near upright: the regressed matrix lands within
    # 25% of the true torque-to-acceleration map, which is all the runtime
    # loop needs.
    p = acrobot_params()
    dt = 0.01
    st = State(np.array([0.01, -0.02]), np.array([0.02, 0.01]))
    taus, us = [], []
    for _ in range(7):
        tau = rng.normal(0.0, 0.02, size=1)
        nxt = step(p, st, tau, dt)
        taus.append(tau)
        us.append((nxt.qdot - st.qdot) / dt)
        st = nxt
    B = estimate_control_matrix(np.array(taus), np.array(us))
    B_true = exact_control_matrix(p, st.q)
    assert np.abs((B - B_true) / B_true).max() < 0.25
