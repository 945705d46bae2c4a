import json

import numpy as np
import pytest

from gpfl import cli, experiment as ex, robot, simulator
from gpfl.errors import InvalidInputError

ARM = robot.desk_arm()

SMALL = {
    "seed": 3,
    "kernel": "GIP",
    "data": {"duration": 2.0, "amplitude": 0.5},
    "training": {"budget": 5, "restarts": 1, "max_points": 150},
    "controller": {"kind": "gp-fl-dce", "omega": 100.0, "zeta": 2.0},
    "reference": {"frequencies": [0.5, 0.3, 0.8]},
    "duration": 0.3,
    "initial_error": [0.1, 0.1, 0.1],
}


def write_config(tmp_path, **changes):
    doc = {**SMALL, "output_dir": "out", **changes}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class Exact:
    """Stand-in model predicting a fixed vector."""

    def __init__(self, values, input_dim=9):
        self.values, self.input_dim = values, input_dim

    def predict(self, X):
        return self.values


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = ex.Dataset(rng.normal(size=(7, 9)) * 1e3, rng.normal(size=(7, 3)) / 7)
    ds.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == (
        "q1,q2,q3,dq1,dq2,dq3,ddq1,ddq2,ddq3,tau1,tau2,tau3")
    back = ex.Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.Y, ds.Y)
    with pytest.raises(InvalidInputError):
        ex.Dataset(np.zeros((3, 9)), np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        ex.Dataset.from_csv(tmp_path / "missing.csv")


def test_dataset_from_log_counts_and_values():
    t = np.arange(1000) * 1e-3
    dq = np.column_stack([np.sin(t), t**2, np.ones_like(t)])
    log = simulator.TrajectoryLog(t, dq, dq, dq, dq, dq)
    ds = ex.dataset_from_log(log, 1e-3, 10)
    assert len(ds) == 100
    # first row is sample 1, whose acceleration is the central difference
    np.testing.assert_allclose(ds.X[0, 6:], (dq[2] - dq[0]) / 2e-3)
    np.testing.assert_allclose(ds.X[1, :3], dq[11])
    assert ds.dt == pytest.approx(1e-2)


def test_zero_amplitude_data_is_gravity_at_rest():
    data = dict(ex.DATA_DEFAULTS, duration=1.0, amplitude=0.0)
    ds = ex.generate_dataset(ARM, 0, data)
    assert len(ds) == 100
    # the arm sags by about g / K_p, then stays put
    assert np.abs(ds.X[:, :3]).max() < 0.06
    assert np.abs(ds.X[50:, 3:6]).max() < 1e-3
    # PD settles against gravity; torque is gravity at the settled pose
    np.testing.assert_allclose(ds.Y[-1], robot.gravity_vector(ARM, ds.X[-1, :3]), atol=1e-2)


def test_config_loading_and_validation(tmp_path):
    cfg = ex.ExperimentConfig.load(write_config(tmp_path))
    assert cfg.kernel == "GIP" and cfg.data["downsample"] == 10 and cfg.data["duration"] == 2.0
    assert cfg.train_path == tmp_path / "out" / "train.csv"
    for bad in ({"kernel": "RBF"}, {"duration": -1}, {"robot": "nope.json"}, {"surprise": 1},
                {"controller": {"kind": "lqr"}}, {"data": {"cutof": 2.0}}, {"seed": -2}):
        with pytest.raises(InvalidInputError):
            ex.ExperimentConfig.load(write_config(tmp_path, **bad))
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(InvalidInputError):
        ex.ExperimentConfig.load(tmp_path / "broken.json")


def test_robot_file_in_config(tmp_path):
    robot.save_model(robot.planar_two_link(), tmp_path / "arm.json")
    cfg = ex.ExperimentConfig.load(write_config(tmp_path, robot="arm.json"))
    assert cfg.robot_model().n == 2


def test_evaluate_reference_cases():
    rng = np.random.default_rng(1)
    ds = ex.Dataset(rng.normal(size=(50, 9)), rng.normal(size=(50, 3)))
    rows = ex.evaluate([Exact(ds.Y[:, j]) for j in range(3)], ds)
    assert [r[1] for r in rows] == [0.0, 0.0, 0.0]
    assert all(r[2:] == [0.0] * 5 for r in rows)
    rows = ex.evaluate([Exact(np.full(50, ds.Y[:, j].mean())) for j in range(3)], ds)
    np.testing.assert_allclose([r[1] for r in rows], 100.0)
    with pytest.raises(InvalidInputError):
        ex.evaluate([Exact(ds.Y[:, 0])] * 2, ds)


def _log(tau, e, dt=1e-3):
    t = np.arange(tau.shape[0]) * dt
    z = np.zeros_like(tau)
    return simulator.TrajectoryLog(t, z, z, tau, z, e)


def test_degradation_detector():
    N = 200
    big_error = np.full((N, 3), 0.1)
    healthy = _log(np.full((N, 3), 10.0), big_error)
    assert ex.detect_degradation(healthy) is None
    collapse = np.full((N, 3), 10.0)
    collapse[150:] = 1e-3
    assert ex.detect_degradation(_log(collapse, big_error)) == pytest.approx(0.15)
    # collapsed from the start: only the torque floor catches it
    dead = _log(np.full((N, 3), 1e-4), big_error)
    assert ex.detect_degradation(dead) is None
    assert ex.detect_degradation(dead, torque_floor=1.0) == 0.0
    # small torques with small errors are fine
    assert ex.detect_degradation(_log(np.full((N, 3), 1e-4), np.zeros((N, 3))), torque_floor=1.0) is None


def test_per_joint_degradation():
    N = 100
    tau = np.full((N, 3), 10.0)
    tau[:, 0] = 1e-4
    log = _log(tau, np.full((N, 3), 0.1))
    # a loaded joint keeps ||tau||_inf up, hiding the collapsed one
    assert ex.detect_degradation(log, torque_floor=10.0) is None
    assert ex.detect_degradation(log, torque_floor=[1.0, 10.0, 10.0], per_joint=True) == 0.0


def test_tracking_summary_units():
    N = 3000
    e = np.zeros((N, 3))
    e[:, 0] = np.pi / 180
    e[-500:, 1] = -0.5 * np.pi / 180
    s = ex.tracking_summary(_log(np.zeros((N, 3)), e))
    np.testing.assert_allclose(s["max_abs_error_deg"], [1.0, 0.5, 0.0])
    np.testing.assert_allclose(s["steady_abs_error_deg"], [1.0, 0.5, 0.0])
    np.testing.assert_allclose(s["steady_abs_error_rad"][0], np.pi / 180)


def test_exact_tracking_without_initial_error(tmp_path):
    cfg = ex.ExperimentConfig.load(write_config(tmp_path, controller={"kind": "exact"}, initial_error=None,
                                                duration=5.0))
    res = ex.run_tracking(cfg)
    assert not res.failed
    assert max(res.summary["max_abs_error_deg"]) < 0.06


def test_cli_pipeline(tmp_path, capsys):
    cfg = write_config(tmp_path, plots=True)
    out = tmp_path / "out"
    assert cli.main(["generate-data", "--config", str(cfg)]) == 0
    assert len(ex.Dataset.from_csv(out / "train.csv")) == 200
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert (out / "model_GIP.json").is_file() and (out / "model_GIP.stats.json").is_file()
    assert cli.main(["evaluate", "--config", str(cfg)]) == 0
    table = np.loadtxt(out / "eval_GIP.csv", delimiter=",", skiprows=1)
    assert table.shape == (3, 7) and np.all(table[:, 1] >= 0)
    assert cli.main(["track", "--config", str(cfg)]) == 0
    log = simulator.TrajectoryLog.from_csv(out / "track_gp-fl-dce_GIP.csv")
    assert len(log) == 300
    summary = json.loads((out / "track_gp-fl-dce_GIP.summary.json").read_text())
    assert summary["diverged"] is False and summary["degraded_at_s"] is None
    assert (out / "track_gp-fl-dce_GIP.svg").read_text().lstrip().startswith("<?xml")
    assert cli.main(["components", "--config", str(cfg), "--grid", "2"]) == 0
    comp = np.loadtxt(out / "components_GIP.csv", delimiter=",", skiprows=1)
    assert comp.shape == (8, 36)
    # loaded model reproduces its training-set fit
    models, kind, types = ex.load_models(out / "model_GIP.json")
    assert kind == "GIP" and types == ARM.joint_types
    train = ex.Dataset.from_csv(out / "train.csv")
    assert all(r[1] < 100 for r in ex.evaluate(models, train))


def test_cli_overrides(tmp_path):
    cfg = write_config(tmp_path, controller={"kind": "exact"})
    assert cli.main(["track", "--config", str(cfg), "--out", str(tmp_path / "other"), "--seed", "5"]) == 0
    assert (tmp_path / "other" / "track_exact.csv").is_file()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["train", "--config", str(write_config(tmp_path, kernel="RBF"))]) == 2
    # no dataset yet
    assert cli.main(["train", "--config", str(write_config(tmp_path))]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly", "--config", "x"])
    assert exc.value.code == 2
    # PD with zero gains drops the arm: collapsed torque with a growing error
    diverging = write_config(tmp_path, controller={"kind": "pd", "omega": 0.0, "zeta": 0.0}, duration=1.0)
    assert cli.main(["track", "--config", str(diverging)]) == 4
    assert "degraded" in capsys.readouterr().err
