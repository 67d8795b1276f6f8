import numpy as np
import pytest

from dloplan import dlo_sim, kernels
from dloplan.dlo_sim import CableParams, SimError, SimState

CABLE = CableParams()
ROBOT = [[0.2, 0.2, 0.5], [0.44, 0.2, -0.5]]


@pytest.fixture(scope="module")
def base():
    return dlo_sim.init_sim(CABLE, ROBOT, seed=0)


def links(s):
    return np.hypot(*np.diff(s.shape, axis=0).T)


def rot(th):
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s], [s, c]])


def test_straight_grasp_gives_straight_chain():
    st = dlo_sim.init_sim(CABLE, [[0.1, 0.3, 0.0], [0.4, 0.3, 0.0]])
    assert np.allclose(st.shape[:, 1], 0.3, atol=1e-12)
    assert dlo_sim.bending_energy(st.link_angles, CABLE.joint_stiffness) == pytest.approx(0, abs=1e-12)
    again = dlo_sim.relax(st, CABLE)
    assert np.array_equal(again.shape, st.shape) and again.iterations == 0


def test_overstretched_grasp_rejected():
    with pytest.raises(SimError):
        dlo_sim.init_sim(CABLE, [[0.1, 0.3, 0.0], [0.41, 0.3, 0.0]])


def test_mirror_symmetric_equilibrium(base):
    s = base.shape
    cx = 0.5 * (ROBOT[0][0] + ROBOT[1][0])
    mirrored = np.stack([2 * cx - s[::-1, 0], s[::-1, 1]], 1)
    assert np.allclose(mirrored, s, atol=1e-8)


def test_zero_action_is_fixed_point(base):
    nxt = dlo_sim.step(base, np.zeros(6), CABLE)
    assert np.abs(nxt.shape - base.shape).max() < 1e-9


def test_translation_moves_shape(base):
    nxt = dlo_sim.step(base, [0.01, 0, 0, 0.01, 0, 0], CABLE)
    assert np.allclose(nxt.shape, base.shape + [0.01, 0], atol=1e-9)


def test_single_eef_motion_residual(base):
    nxt = dlo_sim.step(base, [0.0, 0.0, 0.0, 0.005, 0.008, 0.03], CABLE)
    assert nxt.converged
    assert dlo_sim.equilibrium_residual(nxt, CABLE) < 1e-8


def test_basin_returns_to_same_equilibrium(base, rng):
    phi = base.link_angles.copy()
    phi[1:-1] += rng.normal(scale=0.02, size=len(phi) - 2)
    perturbed = SimState(base.shape, base.robot, phi)
    back = dlo_sim.relax(perturbed, CABLE)
    assert np.abs(back.shape - base.shape).max() < 1e-8


def test_energy_trace_non_increasing(base, rng):
    phi = base.link_angles.copy()
    phi[1:-1] += rng.normal(scale=0.05, size=len(phi) - 2)
    target = base.robot[1, :2] - base.robot[0, :2]
    *_, trace = kernels.chain_relax(phi, CABLE.link_length, target, CABLE.joint_stiffness, CABLE.joint_damping,
                                    1e-12, 200)
    e = trace[np.isfinite(trace)]
    assert len(e) > 1 and np.all(np.diff(e) <= 1e-15)


def random_walk(rng, state, k=20):
    out = [state]
    for _ in range(k):
        a = rng.uniform(-1, 1, 6) * np.tile([0.01, 0.01, 0.05], 2)
        try:
            state = dlo_sim.step(state, a, CABLE)
        except SimError:
            continue
        out.append(state)
    return out


def test_invariants_along_random_walk(base, rng):
    for st in random_walk(rng, base):
        assert np.abs(links(st) - CABLE.link_length).max() <= 1e-6
        assert np.array_equal(st.shape[0], st.robot[0, :2])
        assert np.allclose(st.shape[-1], st.robot[1, :2], atol=1e-12)
        d0, d1 = st.shape[1] - st.shape[0], st.shape[-1] - st.shape[-2]
        assert np.cos(np.arctan2(d0[1], d0[0]) - st.robot[0, 2]) == pytest.approx(1, abs=1e-12)
        assert np.cos(np.arctan2(d1[1], d1[0]) - st.robot[1, 2]) == pytest.approx(1, abs=1e-12)
        if st.converged:
            assert dlo_sim.equilibrium_residual(st, CABLE) < 1e-8


def test_frame_equivariance(base):
    act = [0.004, -0.003, 0.02, -0.002, 0.005, -0.01]
    ref = dlo_sim.step(base, act, CABLE)
    shift = np.array([0.05, 0.07])
    moved = SimState(base.shape + shift, base.robot + [*shift, 0], base.link_angles)
    assert np.abs(dlo_sim.step(moved, act, CABLE).shape - (ref.shape + shift)).max() <= 1e-8
    R = rot(np.pi / 2)
    rshape = base.shape @ R.T
    rrobot = np.concatenate([base.robot[:, :2] @ R.T, base.robot[:, 2:] + np.pi / 2], axis=1)
    ract = np.asarray(act).reshape(2, 3).copy()
    ract[:, :2] = ract[:, :2] @ R.T
    rstate = SimState(rshape, rrobot, base.link_angles + np.pi / 2)
    out = dlo_sim.step(rstate, ract.ravel(), CABLE)
    assert np.abs(out.shape - ref.shape @ R.T).max() <= 1e-8


def test_determinism(base):
    act = [0.003, 0.002, -0.01, 0.0, -0.004, 0.02]
    a = dlo_sim.step(base, act, CABLE)
    b = dlo_sim.step(base, act, CABLE)
    assert a.shape.tobytes() == b.shape.tobytes()
    c = dlo_sim.init_sim(CABLE, ROBOT, seed=0)
    assert c.shape.tobytes() == base.shape.tobytes()
