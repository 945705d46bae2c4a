import numpy as np
import pytest

from gpfl import control, dyncomp, gpr, robot, simulator
from gpfl.errors import ControllerFaultError, InvalidInputError
from gpfl.robot import JointState

from oracles import overdamped_error

ARM = robot.desk_arm()
ZERO = np.zeros(3)
ONES = np.ones(3)


def test_gain_construction():
    g = control.Gains.from_natural(100.0, 2.0, 3)
    assert np.all(g.kp == 1e4) and np.all(g.kd == 400.0)
    np.testing.assert_array_equal(g.Kp, 1e4 * np.eye(3))
    with pytest.raises(InvalidInputError):
        control.Gains([-1.0], [1.0])
    with pytest.raises(InvalidInputError):
        control.Gains([1.0, 2.0], [1.0])


def test_commanded_acceleration_examples():
    g = control.Gains.from_natural(100.0, 2.0, 3)
    assert np.all(control.commanded_acceleration((ZERO, ZERO, ZERO), ZERO, ZERO, g) == 0)
    a = control.commanded_acceleration((0.1 * ONES, ZERO, ZERO), ZERO, ZERO, g)
    np.testing.assert_allclose(a, 1000.0, rtol=1e-15)
    a = control.commanded_acceleration((ZERO, 0.1 * ONES, ZERO), ZERO, ZERO, g)
    np.testing.assert_allclose(a, 40.0, rtol=1e-15)
    with pytest.raises(InvalidInputError):
        control.commanded_acceleration((ZERO, ZERO, ZERO), np.zeros(2), ZERO, g)


def test_pd_examples():
    g = control.Gains.uniform(200.0, 20.0, 3)
    np.testing.assert_allclose(control.pd_controller((0.01 * ONES, ZERO, ZERO), ZERO, ZERO, g), 2.0, rtol=1e-14)
    assert np.all(control.pd_controller((ONES, ZERO, ZERO), ONES, ZERO, g) == 0)


def test_pd_leaves_gravity_offset():
    g = control.Gains.uniform(200.0, 20.0, 3)
    ref = simulator.growing_sine_reference([0.0, 0.0, 0.0], 2.0, 1e-3, rate=0.0)
    log = simulator.simulate(ARM, control.make_controller("pd", g), ref, JointState(ZERO, ZERO, ZERO),
                             simulator.SimConfig(duration=2.0))
    # settles where K_p e balances gravity
    np.testing.assert_allclose(200.0 * log.e[-1], robot.gravity_vector(ARM, log.q[-1]), atol=1e-3)
    assert np.abs(log.e[-1]).max() > 1e-3


def test_exact_fl_compensation_cases():
    q, dq = np.array([0.3, -0.5, 0.8]), np.array([0.4, 0.1, -0.7])
    g = control.Gains.from_natural(100.0, 2.0, 3)
    tau = control.exact_fl(ARM, (q, ZERO, ZERO), q, ZERO, g)
    np.testing.assert_allclose(tau, robot.gravity_vector(ARM, q), rtol=1e-13, atol=1e-13)
    zero = control.Gains.uniform(0.0, 0.0, 3)
    tau = control.exact_fl(ARM, (ONES, ONES, ZERO), q, dq, zero)
    np.testing.assert_allclose(tau, robot.bias_forces(ARM, q, dq), rtol=1e-13, atol=1e-13)


def test_exact_fl_matches_error_oracle():
    omega, zeta, e0 = 100.0, 2.0, 0.1
    ref = simulator.growing_sine_reference([0.6, 0.35, 1.1], 1.0, 1e-3)
    init = JointState(ref.r[0] - e0, ref.dr[0], ZERO)
    ctrl = control.make_controller("exact", control.Gains.from_natural(omega, zeta, 3), robot_model=ARM)
    # RK4 keeps plant integration error out of the comparison; what remains is
    # the zero-order hold on the torque (semi-implicit Euler adds ~1e-3 more)
    log = simulator.simulate(ARM, ctrl, ref, init, simulator.SimConfig(duration=1.0, integrator="rk4"))
    expected = overdamped_error(log.t, e0, 0.0, omega, zeta)
    assert np.abs(log.e - expected).max() < 2e-3


def test_gp_fl_and_dce_agree_with_gip(gip_models):
    rng = np.random.default_rng(3)
    g = control.Gains.from_natural(100.0, 2.0, 3)
    for _ in range(50):
        q, dq = rng.uniform(-1, 1, 3), rng.normal(0, 1, 3)
        ref = (q + rng.uniform(-0.1, 0.1, 3), dq + rng.normal(0, 0.5, 3), rng.normal(0, 5, 3))
        a = control.gp_fl(gip_models, ref, q, dq, g)
        b = control.gp_fl_dce(gip_models, ref, q, dq, g)
        assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max()


def test_se_gp_fl_collapses_but_dce_does_not(se_models):
    q, dq = np.array([0.2, -0.1, 0.3]), np.zeros(3)
    g = control.Gains.from_natural(100.0, 2.0, 3)
    ref = (q + 0.1, dq, ZERO)
    big = control.commanded_acceleration(ref, q, dq, control.Gains.uniform(1e6, 0.0, 3))
    assert np.all(big >= 1e5)
    tau = control.gp_fl(se_models, ref, q, dq, control.Gains.uniform(1e6, 0.0, 3))
    assert np.abs(tau).max() < 1e-6
    dce = control.gp_fl_dce(se_models, ref, q, dq, control.Gains.uniform(1e6, 0.0, 3))
    B_hat, n_hat, _ = dyncomp.components(se_models, q, dq)
    np.testing.assert_allclose(dce, B_hat @ big + n_hat, rtol=1e-12)
    assert np.abs(dce).max() > 1e3
    assert np.all(np.isfinite(control.gp_fl(se_models, ref, q, dq, g)))


def test_zero_target_controllers(zero_models):
    g = control.Gains.from_natural(100.0, 2.0, 3)
    ref = (ONES, ONES, ONES)
    assert np.all(control.gp_fl(zero_models, ref, ZERO, ZERO, g) == 0)
    assert np.all(control.gp_fl_dce(zero_models, ref, ZERO, ZERO, g) == 0)


def test_controllers_are_pure(gip_models):
    g = control.Gains.from_natural(100.0, 2.0, 3)
    ref = (0.1 * ONES, ZERO, ONES)
    for kind in control.KINDS:
        c = control.make_controller(kind, g, robot_model=ARM, gp_models=gip_models)
        first = c(0.0, ZERO, ZERO, ref)
        assert np.array_equal(c(0.5, ZERO, ZERO, ref), first)


def test_non_finite_prediction_faults(arm_data):
    X, Y = arm_data
    bad = [gpr.GpModel(gpr.default_gip(X, Y[:, 0], ARM.joint_types), 0.1, X, np.full(X.shape[0], np.nan))] * 3
    g = control.Gains.from_natural(100.0, 2.0, 3)
    with pytest.raises(ControllerFaultError):
        control.gp_fl(bad, (ZERO, ZERO, ZERO), ZERO, ZERO, g)
    with pytest.raises(ControllerFaultError):
        control.gp_fl_dce(bad, (ZERO, ZERO, ZERO), ZERO, ZERO, g)


def test_make_controller_validation():
    g = control.Gains.from_natural(100.0, 2.0, 3)
    with pytest.raises(InvalidInputError):
        control.make_controller("exact", g)
    with pytest.raises(InvalidInputError):
        control.make_controller("gp-fl", g)
    with pytest.raises(InvalidInputError):
        control.make_controller("lqr", g)
