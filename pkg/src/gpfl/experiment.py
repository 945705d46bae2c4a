"""End-to-end experiment plumbing: datasets, model files, evaluation, tracking.

The ``cli`` module is a thin argparse layer over the ``cmd_*`` functions
defined here. Every artifact is written deterministically: CSVs with 17
significant digits, JSON with sorted keys, and anything that depends on the
wall clock goes to a separate ``*.stats.json`` sidecar.
"""

from __future__ import annotations

import bisect
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import control, gpr, robot, simulator
from .errors import DivergenceError, GpflError, InvalidInputError, OptimizationFailedError

log = logging.getLogger(__name__)

MODEL_FORMAT = "gpfl-model"
MODEL_VERSION = 1
KERNELS = ("SE", "GIP")
DEG = 180.0 / np.pi


# ----------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Inverse-dynamics samples: inputs (q, dq, ddq) and joint torques."""

    X: np.ndarray
    Y: np.ndarray
    dt: float = 0.0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[0] != self.Y.shape[0] or self.X.shape[1] != 3 * self.Y.shape[1]:
            raise InvalidInputError(f"dataset shapes {self.X.shape} and {self.Y.shape} are inconsistent")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    def header(self) -> str:
        cols = []
        for name in ("q", "dq", "ddq", "tau"):
            cols += [f"{name}{j + 1}" for j in range(self.n)]
        return ",".join(cols)

    def to_csv(self, path):
        np.savetxt(path, np.hstack([self.X, self.Y]), fmt="%.17g", delimiter=",",
                   header=self.header(), comments="")

    @classmethod
    def from_csv(cls, path, dt=0.0) -> Dataset:
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"dataset {path} does not exist")
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if len(header) % 4 or not header[0].startswith("q"):
            raise InvalidInputError(f"{path} is not a dataset CSV")
        n = len(header) // 4
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :3 * n], data[:, 3 * n:], dt)


def dataset_from_log(traj: simulator.TrajectoryLog, dt, downsample=10) -> Dataset:
    """Central-difference accelerations at the full rate, then keep every ``downsample``-th row."""
    if downsample < 1:
        raise InvalidInputError("downsample rate must be >= 1")
    ddq, idx = simulator.central_difference(traj.dq, dt)
    X = np.hstack([traj.q[idx], traj.dq[idx], ddq])
    return Dataset(X[::downsample], traj.tau[idx][::downsample], dt * downsample)


# ----------------------------------------------------------------------------
# configuration


def _section(doc, key, defaults):
    given = doc.get(key) or {}
    unknown = set(given) - set(defaults)
    if unknown:
        raise InvalidInputError(f"unknown keys in '{key}': {sorted(unknown)}")
    return {**defaults, **given}


DATA_DEFAULTS = {"duration": 50.0, "dt": 1e-3, "cutoff": 1.0, "amplitude": 0.5, "downsample": 10,
                 "kp": 200.0, "kd": 20.0, "integrator": "semi-implicit-euler"}
TRAIN_DEFAULTS = {"budget": 80, "restarts": 2, "max_points": 1000}
CONTROLLER_DEFAULTS = {"kind": "gp-fl", "omega": 100.0, "zeta": 2.0}
REFERENCE_DEFAULTS = {"kind": "growing-sine", "frequencies": None, "rate": 0.165, "seed": None,
                      "cutoff": 1.0, "amplitude": 0.5}
TOP_KEYS = {"robot", "friction", "kernel", "seed", "output_dir", "datasets", "model", "data",
            "training", "controller", "reference", "duration", "dt", "integrator", "initial_error",
            "noise", "plots", "degradation"}


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, loaded from a JSON file.

    Relative paths are resolved against the config file's directory. The
    robot defaults to the built-in desk arm.
    """

    robot: Optional[Path] = None
    friction: bool = True
    kernel: str = "GIP"
    seed: int = 0
    output_dir: Path = Path("out")
    train_data: Optional[Path] = None
    test_data: Optional[Path] = None
    model: Optional[Path] = None
    data: dict = field(default_factory=lambda: dict(DATA_DEFAULTS))
    training: dict = field(default_factory=lambda: dict(TRAIN_DEFAULTS))
    controller: dict = field(default_factory=lambda: dict(CONTROLLER_DEFAULTS))
    reference: dict = field(default_factory=lambda: dict(REFERENCE_DEFAULTS))
    duration: float = 5.0
    dt: float = 1e-3
    integrator: str = "semi-implicit-euler"
    initial_error: Optional[list] = None
    noise: tuple = (0.0, 0.0)
    plots: bool = False
    degradation: dict = field(default_factory=lambda: {"collapse": 0.01, "error_deg": 1.0})

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kernel not in KERNELS:
            raise InvalidInputError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if not self.duration > 0 or not self.data["duration"] > 0:
            raise InvalidInputError("durations must be positive")
        if self.robot is not None and not Path(self.robot).is_file():
            raise InvalidInputError(f"robot model {self.robot} does not exist")
        if self.controller["kind"] not in control.KINDS:
            raise InvalidInputError(f"controller kind must be one of {control.KINDS}")
        if self.reference["kind"] not in ("growing-sine", "filtered-noise"):
            raise InvalidInputError("reference kind must be 'growing-sine' or 'filtered-noise'")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")
        if int(self.data["downsample"]) < 1:
            raise InvalidInputError("downsample rate must be >= 1")

    @classmethod
    def from_dict(cls, doc, base_dir=".") -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise InvalidInputError("config must be a JSON object")
        unknown = set(doc) - TOP_KEYS
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        base = Path(base_dir)

        def path(value):
            return None if value is None else base / value

        datasets = doc.get("datasets") or {}
        try:
            return cls(
                robot=path(doc.get("robot")),
                friction=bool(doc.get("friction", True)),
                kernel=doc.get("kernel", "GIP"),
                seed=doc.get("seed", 0),
                output_dir=path(doc.get("output_dir", "out")),
                train_data=path(datasets.get("train")),
                test_data=path(datasets.get("test")),
                model=path(doc.get("model")),
                data=_section(doc, "data", DATA_DEFAULTS),
                training=_section(doc, "training", TRAIN_DEFAULTS),
                controller=_section(doc, "controller", CONTROLLER_DEFAULTS),
                reference=_section(doc, "reference", REFERENCE_DEFAULTS),
                duration=float(doc.get("duration", 5.0)),
                dt=float(doc.get("dt", 1e-3)),
                integrator=doc.get("integrator", "semi-implicit-euler"),
                initial_error=doc.get("initial_error"),
                noise=tuple(doc.get("noise", (0.0, 0.0))),
                plots=bool(doc.get("plots", False)),
                degradation=_section(doc, "degradation", {"collapse": 0.01, "error_deg": 1.0}),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"bad config value: {exc}") from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    # derived settings

    def robot_model(self) -> robot.RobotModel:
        model = robot.load_model(self.robot) if self.robot is not None else robot.desk_arm()
        return model.with_friction(self.friction)

    def out(self, name) -> Path:
        return Path(self.output_dir) / name

    @property
    def train_path(self) -> Path:
        return self.train_data or self.out("train.csv")

    @property
    def test_path(self) -> Path:
        return self.test_data or self.out("test.csv")

    @property
    def model_path(self) -> Path:
        return self.model or self.out(f"model_{self.kernel}.json")


def _dump_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# data generation


def generate_dataset(model: robot.RobotModel, seed, data: dict) -> Dataset:
    """PD tracking of a filtered-noise reference, differenced and downsampled."""
    duration, dt = float(data["duration"]), float(data["dt"])
    ref = simulator.filtered_noise_reference(seed, duration, dt, data["cutoff"], data["amplitude"], model.n)
    gains = control.Gains.uniform(data["kp"], data["kd"], model.n)
    init = robot.JointState(ref.r[0], ref.dr[0], np.zeros(model.n))
    cfg = simulator.SimConfig(duration=duration, dt=dt, integrator=data["integrator"], seed=seed)
    traj = simulator.simulate(model, control.make_controller("pd", gains), ref, init, cfg)
    return dataset_from_log(traj, dt, int(data["downsample"]))


def cmd_generate_data(config: ExperimentConfig) -> dict:
    """Write the training and held-out datasets; the test set uses seed + 1."""
    model = config.robot_model()
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    written = {}
    for split, seed, path in (("train", config.seed, config.train_path),
                              ("test", config.seed + 1, config.test_path)):
        try:
            ds = generate_dataset(model, seed, config.data)
        except DivergenceError:
            Path(path).unlink(missing_ok=True)
            raise
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        ds.to_csv(path)
        written[split] = {"path": str(path), "rows": len(ds), "seed": seed}
        log.info("%s dataset: %d rows -> %s", split, len(ds), path)
    return written


# ----------------------------------------------------------------------------
# training and model files


def initial_kernel(kind, X, y, joint_types):
    if kind == "SE":
        return gpr.default_se(X, y)
    return gpr.default_gip(X, y, joint_types)


def train_models(dataset: Dataset, kind, joint_types, seed=0, budget=80, restarts=2, max_points=1000):
    """Per-joint hyperparameter search and full-data fit.

    Returns (models, info) where info holds per-joint likelihoods and timings.
    """
    if len(dataset) < 100:
        raise InvalidInputError(f"need at least 100 training rows, got {len(dataset)}")
    if kind not in KERNELS:
        raise InvalidInputError(f"kernel must be one of {KERNELS}")
    models, info = [], []
    for j in range(dataset.n):
        y = dataset.Y[:, j]
        k0 = initial_kernel(kind, dataset.X, y, joint_types)
        noise0 = 0.05 * (y.std() or 1.0)
        t0 = time.perf_counter()
        try:
            res = gpr.optimize_hyperparameters(k0, noise0, dataset.X, y, budget=budget, restarts=restarts,
                                               seed=seed + j, max_points=max_points)
        except OptimizationFailedError as exc:
            raise OptimizationFailedError(f"joint {j + 1}: {exc}", best=exc.best) from exc
        t1 = time.perf_counter()
        m = gpr.fit(dataset.X, y, res.kernel, res.noise)
        t2 = time.perf_counter()
        models.append(m)
        info.append({"joint": j + 1, "search_log_likelihood": res.log_likelihood,
                     "log_likelihood": m.log_likelihood, "iterations": len(res.history) - 1,
                     "starts_failed": res.starts_failed, "optimize_seconds": t1 - t0, "fit_seconds": t2 - t1})
        log.info("joint %d: lml %.6g, noise %.4g (%.1f s)", j + 1, m.log_likelihood, m.noise, t2 - t0)
    return models, info


def model_to_dict(models, kind, joint_types, extra=None) -> dict:
    X = models[0].X
    joints = []
    for j, m in enumerate(models):
        if m.X is not X and not np.array_equal(m.X, X):
            raise InvalidInputError("all joint models must share the training inputs")
        std = None if m.standardizer is None else {"mean": m.standardizer.mean.tolist(),
                                                   "std": m.standardizer.std.tolist()}
        joints.append({"joint": j + 1, "kernel": m.kernel.to_dict(), "noise": m.noise,
                       "alpha": m.alpha.tolist(), "standardizer": std, "log_likelihood": m.log_likelihood})
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kernel": kind,
           "joint_types": list(joint_types), "inputs": X.tolist(), "joints": joints}
    doc.update(extra or {})
    return doc


def model_from_dict(doc) -> tuple:
    """(models, kernel kind, joint types) from a model-file document."""
    if doc.get("format") != MODEL_FORMAT:
        raise InvalidInputError("not a gpfl model file")
    if doc.get("version") != MODEL_VERSION:
        raise InvalidInputError(f"unsupported model file version {doc.get('version')}")
    X = np.asarray(doc["inputs"], dtype=float)
    models = []
    for entry in doc["joints"]:
        std = entry["standardizer"]
        standardizer = None if std is None else gpr.Standardizer(np.asarray(std["mean"]), np.asarray(std["std"]))
        models.append(gpr.GpModel(gpr.kernel_from_dict(entry["kernel"]), float(entry["noise"]), X,
                                  np.asarray(entry["alpha"], dtype=float), standardizer,
                                  log_likelihood=entry["log_likelihood"]))
    return models, doc["kernel"], tuple(doc["joint_types"])


def save_models(models, kind, joint_types, path, extra=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(model_to_dict(models, kind, joint_types, extra), path)
    return path


def load_models(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"model file {path} does not exist")
    return model_from_dict(json.loads(path.read_text()))


def stats_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".stats.json")


def cmd_train(config: ExperimentConfig) -> Path:
    """Train one GP per joint and write the model file plus a timing sidecar."""
    dataset = Dataset.from_csv(config.train_path)
    joint_types = config.robot_model().joint_types
    if len(joint_types) != dataset.n:
        raise InvalidInputError(f"dataset has {dataset.n} joints, robot has {len(joint_types)}")
    tr = config.training
    t0 = time.perf_counter()
    models, info = train_models(dataset, config.kernel, joint_types, seed=config.seed, budget=int(tr["budget"]),
                                restarts=int(tr["restarts"]), max_points=tr["max_points"])
    total = time.perf_counter() - t0
    likelihoods = [{k: v for k, v in row.items() if not k.endswith("seconds")} for row in info]
    path = save_models(models, config.kernel, joint_types, config.model_path,
                       {"training": {"dataset": Path(config.train_path).name, "rows": len(dataset),
                                     "seed": config.seed, **tr, "joints": likelihoods}})
    _dump_json({"total_seconds": total,
                "joints": [{k: v for k, v in row.items() if k == "joint" or k.endswith("seconds")}
                           for row in info]}, stats_path(path))
    return path


# ----------------------------------------------------------------------------
# evaluation


QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


def evaluate(models, dataset: Dataset):
    """Per-joint nMSE (percent) and absolute-error quantiles (min, q25, median, q75, max)."""
    if len(models) != dataset.n or models[0].input_dim != dataset.X.shape[1]:
        raise InvalidInputError("model and dataset dimensions disagree")
    rows = []
    for j, m in enumerate(models):
        pred = m.predict(dataset.X)
        err = np.abs(pred - dataset.Y[:, j])
        rows.append([j + 1, gpr.nmse(pred, dataset.Y[:, j])] + list(np.quantile(err, QUANTILES)))
    return rows


EVAL_HEADER = "joint,nmse_percent,abs_min,abs_q25,abs_median,abs_q75,abs_max"


def cmd_evaluate(config: ExperimentConfig, dataset_path=None) -> Path:
    models, kind, _ = load_models(config.model_path)
    dataset = Dataset.from_csv(dataset_path or config.test_path)
    rows = evaluate(models, dataset)
    path = config.out(f"eval_{kind}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.array(rows), fmt=["%d"] + ["%.17g"] * 6, delimiter=",", header=EVAL_HEADER,
               comments="")
    return path


# ----------------------------------------------------------------------------
# tracking


def detect_degradation(traj: simulator.TrajectoryLog, torque_floor=0.0, collapse=0.01, error_deg=1.0,
                       per_joint=False):
    """Time of the first step whose torque has collapsed while the error is large.

    A step is flagged when ``||tau||_inf < collapse * max(running median of
    ||tau||_inf, torque_floor)`` and ``||e||_inf`` exceeds ``error_deg``.
    The floor covers runs whose torques are near zero from the first step,
    where the running median alone would collapse with them. With
    ``per_joint`` the same test runs on each joint's |tau_j| and |e_j|
    separately (``torque_floor`` may then be a vector). Returns None if
    nothing is flagged.
    """
    if per_joint:
        tau, err = np.abs(traj.tau), np.abs(traj.e)
    else:
        tau, err = np.abs(traj.tau).max(axis=1, keepdims=True), np.abs(traj.e).max(axis=1, keepdims=True)
    floor = np.broadcast_to(np.asarray(torque_floor, dtype=float), (tau.shape[1],))
    history = [[] for _ in range(tau.shape[1])]
    for k in range(tau.shape[0]):
        for j, seen in enumerate(history):
            bisect.insort(seen, tau[k, j])
            m = len(seen)
            median = seen[m // 2] if m % 2 else 0.5 * (seen[m // 2 - 1] + seen[m // 2])
            if tau[k, j] < collapse * max(median, floor[j]) and err[k, j] > error_deg / DEG:
                return float(traj.t[k])
    return None


def nominal_torque(model: robot.RobotModel, ref: simulator.Reference, stride=10, per_joint=False):
    """Median torque the true inverse dynamics needs along the reference.

    ``||tau||_inf`` by default, or the per-joint median of |tau_j|.
    """
    idx = np.arange(0, len(ref), stride)
    tau = np.abs([robot.rnea(model, ref.r[k], ref.dr[k], ref.ddr[k]) for k in idx])
    if per_joint:
        return np.median(tau, axis=0)
    return float(np.median(tau.max(axis=1)))


def tracking_summary(traj: simulator.TrajectoryLog, final=1.0) -> dict:
    abs_e = np.abs(traj.e)
    tail = traj.t >= traj.t[-1] - final + 1e-12 if len(traj) else np.zeros(0, bool)
    peak = abs_e.max(axis=0)
    steady = abs_e[tail].max(axis=0) if np.any(tail) else np.full(traj.n, np.nan)
    return {"max_abs_error_rad": peak.tolist(), "max_abs_error_deg": (peak * DEG).tolist(),
            "steady_abs_error_rad": steady.tolist(), "steady_abs_error_deg": (steady * DEG).tolist(),
            "final_window_s": final}


def make_reference(config: ExperimentConfig, n) -> simulator.Reference:
    ref_cfg = config.reference
    seed = config.seed if ref_cfg["seed"] is None else ref_cfg["seed"]
    if ref_cfg["kind"] == "filtered-noise":
        return simulator.filtered_noise_reference(seed, config.duration, config.dt, ref_cfg["cutoff"],
                                                  ref_cfg["amplitude"], n)
    freqs = ref_cfg["frequencies"]
    if freqs is None:
        freqs = simulator.sample_frequencies(seed, n)
    freqs = np.asarray(freqs, dtype=float)
    if freqs.shape != (n,):
        raise InvalidInputError(f"need {n} reference frequencies")
    return simulator.growing_sine_reference(freqs, config.duration, config.dt, ref_cfg["rate"])


@dataclass
class TrackResult:
    log: simulator.TrajectoryLog
    summary: dict
    diverged: bool = False
    degraded_at: Optional[float] = None

    @property
    def failed(self) -> bool:
        return self.diverged or self.degraded_at is not None


def run_tracking(config: ExperimentConfig, models=None) -> TrackResult:
    """Closed loop with the configured controller; GP models are loaded if not given."""
    plant = config.robot_model()
    n = plant.n
    kind = config.controller["kind"]
    if kind in ("gp-fl", "gp-fl-dce") and models is None:
        models, _, _ = load_models(config.model_path)
    gains = control.Gains.from_natural(config.controller["omega"], config.controller["zeta"], n)
    ctrl = control.make_controller(kind, gains, robot_model=plant, gp_models=models)
    ref = make_reference(config, n)
    e0 = np.zeros(n) if config.initial_error is None else np.broadcast_to(
        np.asarray(config.initial_error, dtype=float), (n,))
    init = robot.JointState(ref.r[0] - e0, ref.dr[0].copy(), np.zeros(n))
    sim_cfg = simulator.SimConfig(duration=config.duration, dt=config.dt, integrator=config.integrator,
                                  seed=config.seed, noise_q=config.noise[0], noise_dq=config.noise[1])
    diverged = False
    try:
        traj = simulator.simulate(plant, ctrl, ref, init, sim_cfg)
    except GpflError as exc:
        if getattr(exc, "log", None) is None:
            raise
        log.warning("%s", exc)
        traj, diverged = exc.log, True
    floor = nominal_torque(plant, ref)
    opts = (config.degradation["collapse"], config.degradation["error_deg"])
    degraded = detect_degradation(traj, floor, *opts)
    # diagnostic only: a single joint can collapse while gravity-loaded joints
    # keep ||tau||_inf up
    joint_floor = nominal_torque(plant, ref, per_joint=True)
    joint_degraded = detect_degradation(traj, joint_floor, *opts, per_joint=True)
    summary = tracking_summary(traj)
    summary.update({"controller": kind, "kernel": None if kind in ("pd", "exact") else config.kernel,
                    "diverged": diverged, "degraded_at_s": degraded, "torque_floor": floor,
                    "joint_degraded_at_s": joint_degraded, "steps": len(traj)})
    return TrackResult(traj, summary, diverged, degraded)


def _plot(traj: simulator.TrajectoryLog, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for j in range(traj.n):
        axes[0].plot(traj.t, traj.r[:, j], "--", lw=0.8, label=f"r{j + 1}")
        axes[0].plot(traj.t, traj.q[:, j], lw=0.8, label=f"q{j + 1}")
        axes[1].plot(traj.t, traj.e[:, j] * DEG, lw=0.8, label=f"e{j + 1}")
    axes[0].set_ylabel("rad")
    axes[1].set_ylabel("error [deg]")
    axes[1].set_xlabel("t [s]")
    axes[0].legend(ncol=2, fontsize=7)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_track(config: ExperimentConfig, models=None) -> TrackResult:
    result = run_tracking(config, models)
    kind = config.controller["kind"]
    stem = f"track_{kind}" if kind in ("pd", "exact") else f"track_{kind}_{config.kernel}"
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    result.log.to_csv(config.out(stem + ".csv"))
    _dump_json(result.summary, config.out(stem + ".summary.json"))
    if config.plots:
        _plot(result.log, config.out(stem + ".svg"))
    return result


def cmd_components(config: ExperimentConfig, configs, velocities=None) -> Path:
    """CSV of estimated gravity, inertia and bias next to the true values."""
    from . import dyncomp

    models, kind, _ = load_models(config.model_path)
    header, rows = dyncomp.component_table(models, config.robot_model(), configs, velocities)
    path = config.out(f"components_{kind}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    return path
