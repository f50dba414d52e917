"""Experiment harness: MSE sweeps, solver convergence curves and timing.

All studies share one data layout. Test and validation signals come from
``seeds.data``; noise is drawn per sample from ``seeds.noise``, so every
measurement matrix sees the same signals and the same noise realization.
GROUP LASSO solvers get a scalar lambda per grid point, picked from
``lambda_grid * mean KKT threshold`` on the validation set.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .network import NetworkArch, NetworkParams, decode, init_params, load_params
from .signal_model import (
    ComplexMatrix,
    NoiseModel,
    RngStream,
    SparsityConfig,
    gen_measurement_matrix,
    gen_sample_set,
    measure_set,
)
from .solvers import (
    ScheduleForm,
    StepSchedule,
    amp_mmv_batch,
    bcd_mmv_batch,
    kkt_threshold,
    pcd_mmv_batch,
)
from .training import TrainingConfig, TrainResult, extract_measurement_matrix, mse_loss, train

log = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "REPORT_FIELDS",
    "ConfigError",
    "Scenario",
    "NetSettings",
    "ExperimentConfig",
    "ReportRow",
    "ConvergenceResult",
    "eval_mse",
    "scenario_data",
    "load_network",
    "tune_lambda",
    "evaluate",
    "run_convergence_study",
    "run_mse_sweep",
    "run_timing_bench",
    "train_network",
    "write_report",
    "read_report",
    "write_curves",
]

ALGORITHMS = ("BCD", "PCD", "AMP", "LEARNED", "GROUP_LASSO_DL", "AMP_DL")
NEEDS_NETWORK = frozenset({"LEARNED", "GROUP_LASSO_DL", "AMP_DL"})
REPORT_FIELDS = ["scenario_id", "alg", "N", "L", "M", "p_or_G", "lambda", "k_max", "U", "V",
                 "mse", "wall_time_s", "seed"]
DEFAULT_LAMBDA_GRID = (0.01, 0.02, 0.05, 0.1, 0.2)

PURPOSE_TEST = 31
PURPOSE_VALIDATION = 32
PURPOSE_PILOTS = 33


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    N: int
    L: int
    M: int
    mode: str = "iid"
    p: float = 0.1
    G: int = 1
    sigma2: float = 0.1

    @property
    def sparsity(self) -> SparsityConfig:
        return SparsityConfig(self.mode, self.N, p=self.p, G=self.G)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma2)

    @property
    def p_or_G(self) -> float:
        return self.p if self.mode == "iid" else self.G

    @property
    def scenario_id(self) -> str:
        tag = f"p{self.p:g}" if self.mode == "iid" else f"G{self.G}"
        return f"{self.mode}-N{self.N}-L{self.L}-M{self.M}-{tag}-s{self.sigma2:g}"

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class NetSettings:
    U: int = 20
    V: int = 3
    hidden: tuple[int, ...] | None = None
    lam: float = 16.0
    schedule: StepSchedule = field(
        default_factory=lambda: StepSchedule(ScheduleForm.CONSTANT, 0.2, 0.51))
    # path to a params checkpoint; may contain {N}, {L}, {M} and {p_or_G}
    checkpoint: str | None = None

    def arch(self, s: Scenario) -> NetworkArch:
        return NetworkArch(s.N, s.L, s.M, U=self.U, V=self.V, hidden=self.hidden, lam=self.lam,
                           schedule=self.schedule)

    def checkpoint_path(self, s: Scenario) -> Path | None:
        if self.checkpoint is None:
            return None
        return Path(self.checkpoint.format(N=s.N, L=s.L, M=s.M, p_or_G=f"{s.p_or_G:g}"))


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    algorithms: tuple[str, ...] = ("BCD", "PCD")
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    T: int = 1000
    validation: int = 100
    seed_data: int = 0
    seed_noise: int = 1
    seed_init: int = 2
    k_max: int = 200
    stop_tol: float = 1e-8
    schedule: StepSchedule = field(default_factory=StepSchedule)
    net: NetSettings = field(default_factory=NetSettings)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: dict = field(default_factory=dict)
    reps: int = 5
    output: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _parse_config(doc)


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"{path}{key}", "missing")
    return doc[key]


def _typed(value, kind, name, check=None, why=""):
    try:
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {kind.__name__}, got {value!r}") from None
    if check is not None and not check(out):
        raise ConfigError(name, why or f"invalid value {value!r}")
    return out


def _parse_schedule(doc, name) -> StepSchedule:
    if not isinstance(doc, dict):
        raise ConfigError(name, "expected an object")
    try:
        return StepSchedule.from_dict(doc)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(name, str(e)) from None


def _parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = {"scenario", "algorithms", "lambda_grid", "T", "validation", "seeds", "solver",
             "net", "train", "sweep", "reps", "output"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown key")

    sc = _need(doc, "scenario", "")
    if not isinstance(sc, dict):
        raise ConfigError("scenario", "expected an object")
    mode = sc.get("mode", "iid")
    if mode not in ("iid", "grouped"):
        raise ConfigError("scenario.mode", f"expected 'iid' or 'grouped', got {mode!r}")
    pos = lambda v: v > 0  # noqa: E731
    scenario = Scenario(
        N=_typed(_need(sc, "N", "scenario."), int, "scenario.N", pos, "must be positive"),
        L=_typed(_need(sc, "L", "scenario."), int, "scenario.L", pos, "must be positive"),
        M=_typed(_need(sc, "M", "scenario."), int, "scenario.M", pos, "must be positive"),
        mode=mode,
        p=_typed(sc.get("p", 0.1), float, "scenario.p", lambda v: 0 <= v <= 1,
                 "must lie in [0, 1]"),
        G=_typed(sc.get("G", 1), int, "scenario.G", pos, "must be positive"),
        sigma2=_typed(sc.get("sigma2", 0.1), float, "scenario.sigma2", lambda v: v >= 0,
                      "must be non-negative"),
    )
    try:
        scenario.sparsity
    except ValueError as e:
        raise ConfigError("scenario.G" if mode == "grouped" else "scenario.p", str(e)) from None

    kw: dict = {"scenario": scenario}
    if "algorithms" in doc:
        algs = doc["algorithms"]
        if not isinstance(algs, list) or not algs:
            raise ConfigError("algorithms", "expected a non-empty list")
        for a in algs:
            if a not in ALGORITHMS:
                raise ConfigError("algorithms", f"unknown algorithm {a!r}; "
                                                f"choose from {', '.join(ALGORITHMS)}")
        kw["algorithms"] = tuple(algs)
    if "lambda_grid" in doc:
        grid = doc["lambda_grid"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("lambda_grid", "expected a non-empty list")
        kw["lambda_grid"] = tuple(_typed(v, float, "lambda_grid", lambda x: x >= 0,
                                         "entries must be non-negative") for v in grid)
    if "T" in doc:
        kw["T"] = _typed(doc["T"], int, "T", pos, "must be at least 1")
    if "validation" in doc:
        kw["validation"] = _typed(doc["validation"], int, "validation", pos,
                                  "must be at least 1")
    if "reps" in doc:
        kw["reps"] = _typed(doc["reps"], int, "reps", pos, "must be at least 1")
    if "output" in doc:
        if not isinstance(doc["output"], str):
            raise ConfigError("output", "expected a path string")
        kw["output"] = doc["output"]

    seeds = doc.get("seeds", {})
    if not isinstance(seeds, dict):
        raise ConfigError("seeds", "expected an object")
    for key in seeds:
        if key not in ("data", "noise", "init"):
            raise ConfigError(f"seeds.{key}", "unknown key")
        kw[f"seed_{key}"] = _typed(seeds[key], int, f"seeds.{key}", lambda v: v >= 0,
                                   "must be non-negative")

    solver = doc.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("solver", "expected an object")
    for key in solver:
        if key not in ("k_max", "stop_tol", "schedule"):
            raise ConfigError(f"solver.{key}", "unknown key")
    if "k_max" in solver:
        kw["k_max"] = _typed(solver["k_max"], int, "solver.k_max", pos, "must be positive")
    if "stop_tol" in solver:
        kw["stop_tol"] = _typed(solver["stop_tol"], float, "solver.stop_tol",
                                lambda v: v >= 0, "must be non-negative")
    if "schedule" in solver:
        kw["schedule"] = _parse_schedule(solver["schedule"], "solver.schedule")

    net = doc.get("net", {})
    if not isinstance(net, dict):
        raise ConfigError("net", "expected an object")
    nkw = {}
    for key, value in net.items():
        name = f"net.{key}"
        if key in ("U", "V"):
            nkw[key] = _typed(value, int, name, lambda v: v >= 0, "must be non-negative")
        elif key == "hidden":
            if value is not None and not isinstance(value, list):
                raise ConfigError(name, "expected a list of widths")
            nkw[key] = None if value is None else tuple(_typed(h, int, name, pos) for h in value)
        elif key == "lambda":
            nkw["lam"] = _typed(value, float, name, lambda v: v >= 0, "must be non-negative")
        elif key == "schedule":
            nkw[key] = _parse_schedule(value, name)
        elif key == "checkpoint":
            nkw[key] = str(value)
        else:
            raise ConfigError(name, "unknown key")
    kw["net"] = NetSettings(**nkw)
    try:
        kw["net"].arch(scenario)
    except ValueError as e:
        raise ConfigError("net.hidden", str(e)) from None

    tr = doc.get("train", {})
    if not isinstance(tr, dict):
        raise ConfigError("train", "expected an object")
    tkw = {"seed": kw.get("seed_init", 2)}
    fields = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
    for key, value in tr.items():
        if key not in fields or key == "seed":
            raise ConfigError(f"train.{key}", "unknown key")
        default = getattr(TrainingConfig(), key)
        tkw[key] = _typed(value, type(default), f"train.{key}")
    try:
        kw["train"] = TrainingConfig(**tkw)
    except ValueError as e:
        raise ConfigError("train", str(e)) from None

    sweep = doc.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "expected an object")
    for key, values in sweep.items():
        if key not in ("ratio", "p"):
            raise ConfigError(f"sweep.{key}", "unknown sweep axis (use 'ratio' or 'p')")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}", "expected a non-empty list")
        for v in values:
            _typed(v, float, f"sweep.{key}", lambda x: 0 <= x <= 1 if key == "p" else x > 0)
    kw["sweep"] = dict(sweep)

    cfg = ExperimentConfig(**kw)
    if NEEDS_NETWORK & set(cfg.algorithms) and cfg.net.checkpoint is None:
        raise ConfigError("net.checkpoint", "required by LEARNED, GROUP_LASSO_DL and AMP_DL")
    return cfg


# -- reports -----------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    scenario_id: str
    alg: str
    N: int
    L: int
    M: int
    p_or_G: float
    lam: float
    k_max: int
    U: int
    V: int
    mse: float
    wall_time_s: float
    seed: int

    def to_csv(self) -> list[str]:
        vals = dataclasses.astuple(self)
        return [repr(v) if isinstance(v, float) else str(v) for v in vals]

    @classmethod
    def from_csv(cls, rec: dict) -> "ReportRow":
        return cls(rec["scenario_id"], rec["alg"], int(rec["N"]), int(rec["L"]), int(rec["M"]),
                   float(rec["p_or_G"]), float(rec["lambda"]), int(rec["k_max"]), int(rec["U"]),
                   int(rec["V"]), float(rec["mse"]), float(rec["wall_time_s"]), int(rec["seed"]))


class _ReportWriter:
    """Appends rows as they are produced so partial results survive a crash."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(REPORT_FIELDS)

    def add(self, row: ReportRow) -> None:
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow(row.to_csv())


def write_report(path, rows: list[ReportRow]) -> None:
    w = _ReportWriter(path)
    for r in rows:
        w.add(r)


def read_report(path) -> list[ReportRow]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != REPORT_FIELDS:
            raise ValueError(f"unexpected report header {reader.fieldnames}")
        return [ReportRow.from_csv(rec) for rec in reader]


def write_curves(path, curves: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "alg", "mse"])
        for alg, curve in curves.items():
            for k, v in enumerate(curve, start=1):
                w.writerow([k, alg, repr(float(v))])


# -- data --------------------------------------------------------------------

def eval_mse(x_true: ComplexMatrix, x_hat: ComplexMatrix) -> float:
    """``sum_t ||X_t - X_hat_t||_F^2 / (N * T)`` over a ``(T, N, M)`` stack."""
    return mse_loss(x_true, x_hat)


@dataclass
class ScenarioData:
    """Signals and noise streams of one grid point; ``measure`` applies any A."""

    scenario: Scenario
    x_test: ComplexMatrix
    x_val: ComplexMatrix
    noise_test: RngStream
    noise_val: RngStream
    a_iid: ComplexMatrix

    def measure(self, a: ComplexMatrix, which: str = "test") -> ComplexMatrix:
        if which == "test":
            return measure_set(a, self.x_test, self.scenario.noise, self.noise_test)
        return measure_set(a, self.x_val, self.scenario.noise, self.noise_val)


def scenario_data(cfg: ExperimentConfig, scenario: Scenario) -> ScenarioData:
    data = RngStream(cfg.seed_data)
    noise = RngStream(cfg.seed_noise)
    sp = scenario.sparsity
    return ScenarioData(
        scenario,
        gen_sample_set(sp, scenario.M, cfg.T, data.child(PURPOSE_TEST)),
        gen_sample_set(sp, scenario.M, cfg.validation, data.child(PURPOSE_VALIDATION)),
        noise.child(PURPOSE_TEST),
        noise.child(PURPOSE_VALIDATION),
        gen_measurement_matrix(scenario.L, scenario.N, data.child(PURPOSE_PILOTS, scenario.L),
                               normalize=True),
    )


# -- algorithms --------------------------------------------------------------

def _recover(alg: str, a: ComplexMatrix, y: ComplexMatrix, lam: float, cfg: ExperimentConfig,
             activity: float, params: NetworkParams | None) -> ComplexMatrix:
    if alg in ("BCD", "GROUP_LASSO_DL"):
        return bcd_mmv_batch(a, y, lam, cfg.k_max, cfg.stop_tol).x_hat
    if alg == "PCD":
        return pcd_mmv_batch(a, y, lam, cfg.k_max, cfg.schedule, cfg.stop_tol).x_hat
    if alg in ("AMP", "AMP_DL"):
        return amp_mmv_batch(a, y, activity, cfg.k_max).x_hat
    if alg == "LEARNED":
        return decode(params, y)
    raise ValueError(f"unknown algorithm {alg!r}")


def _matrix_for(alg: str, data: ScenarioData, params: NetworkParams | None) -> ComplexMatrix:
    if alg in NEEDS_NETWORK:
        if params is None:
            raise ValueError(f"{alg} needs trained network parameters")
        return extract_measurement_matrix(params)
    return data.a_iid


def tune_lambda(alg: str, a: ComplexMatrix, data: ScenarioData, cfg: ExperimentConfig
                ) -> float:
    """Absolute lambda from ``cfg.lambda_grid`` (multiples of the mean KKT
    threshold) minimizing validation MSE; ties go to the earlier entry."""
    y_val = data.measure(a, "val")
    base = float(np.mean(kkt_threshold(a, y_val)))
    activity = data.scenario.sparsity.activity
    best, best_mse = None, math.inf
    for c in cfg.lambda_grid:
        lam = c * base
        mse = eval_mse(data.x_val, _recover(alg, a, y_val, lam, cfg, activity, None))
        if mse < best_mse:
            best, best_mse = lam, mse
    return best


def evaluate(alg: str, data: ScenarioData, cfg: ExperimentConfig,
             params: NetworkParams | None = None, reps: int = 1,
             lam: float | None = None) -> ReportRow:
    """Tune (if needed), run ``alg`` on the test set and build its report row.

    With ``reps > 1`` one untimed warm-up run precedes ``reps`` timed runs and
    the median time is reported.
    """
    s = data.scenario
    a = _matrix_for(alg, data, params)
    activity = s.sparsity.activity
    U = V = 0
    k_max = cfg.k_max
    if alg in ("BCD", "PCD", "GROUP_LASSO_DL"):
        if lam is None:
            lam = tune_lambda(alg, a, data, cfg)
    elif alg == "LEARNED":
        lam = params.arch.lam
        U, V, k_max = params.arch.U, params.arch.V, params.arch.U
    else:
        lam = math.nan
    y = data.measure(a)
    times = []
    runs = reps + 1 if reps > 1 else 1
    for _ in range(runs):
        t0 = time.perf_counter()
        x_hat = _recover(alg, a, y, lam, cfg, activity, params)
        times.append(time.perf_counter() - t0)
    if reps > 1:
        times = times[1:]
    row = ReportRow(s.scenario_id, alg, s.N, s.L, s.M, float(s.p_or_G), float(lam), k_max, U,
                    V, eval_mse(data.x_test, x_hat), statistics.median(times), cfg.seed_data)
    log.info("%s %s lambda=%.4g mse=%.6g time=%.3gs", s.scenario_id, alg, lam, row.mse,
             row.wall_time_s)
    return row


def load_network(cfg: ExperimentConfig, s: Scenario) -> NetworkParams | None:
    """Checkpoint for scenario ``s`` if any configured algorithm needs one."""
    if not NEEDS_NETWORK & set(cfg.algorithms):
        return None
    path = cfg.net.checkpoint_path(s)
    if path is None:
        raise ConfigError("net.checkpoint", "required by LEARNED, GROUP_LASSO_DL and AMP_DL")
    if not path.exists():
        raise ConfigError("net.checkpoint", f"no checkpoint at {path}")
    params = load_params(path)
    if (params.arch.N, params.arch.L, params.arch.M) != (s.N, s.L, s.M):
        raise ConfigError("net.checkpoint",
                          f"{path} is for N={params.arch.N}, L={params.arch.L}, "
                          f"M={params.arch.M}, not N={s.N}, L={s.L}, M={s.M}")
    return params


# -- studies -----------------------------------------------------------------

def _grid(cfg: ExperimentConfig, sweep: dict | None) -> list[Scenario]:
    sweep = cfg.sweep if sweep is None else sweep
    if not sweep:
        return [cfg.scenario]
    if len(sweep) != 1:
        raise ConfigError("sweep", "give exactly one axis")
    (axis, values), = sweep.items()
    s = cfg.scenario
    if axis == "ratio":
        return [s.replace(L=max(1, round(v * s.N))) for v in values]
    if axis == "p":
        if s.mode != "iid":
            raise ConfigError("sweep.p", "access-probability sweeps need scenario.mode 'iid'")
        return [s.replace(p=float(v)) for v in values]
    raise ConfigError(f"sweep.{axis}", "unknown sweep axis")


def run_mse_sweep(cfg: ExperimentConfig, sweep: dict | None = None,
                  networks: Callable[[Scenario], NetworkParams] | None = None
                  ) -> list[ReportRow]:
    """Every configured algorithm at every grid point (``{"ratio": [...]}`` for
    L/N or ``{"p": [...]}``). Rows are flushed to ``cfg.output`` as they come.

    ``networks`` supplies trained parameters per scenario; by default they are
    loaded from ``cfg.net.checkpoint``.
    """
    writer = _ReportWriter(cfg.output)
    rows = []
    for s in _grid(cfg, sweep):
        data = scenario_data(cfg, s)
        params = networks(s) if networks else load_network(cfg, s)
        for alg in cfg.algorithms:
            row = evaluate(alg, data, cfg, params)
            writer.add(row)
            rows.append(row)
    return rows


def run_timing_bench(cfg: ExperimentConfig, sweep: dict | None = None,
                     networks: Callable[[Scenario], NetworkParams] | None = None
                     ) -> list[ReportRow]:
    """Median wall time (after a discarded warm-up) of recovering the T test
    samples, per algorithm and grid point. Lambda tuning and data generation
    are outside the timed region."""
    writer = _ReportWriter(cfg.output)
    rows = []
    for s in _grid(cfg, sweep):
        data = scenario_data(cfg, s)
        params = networks(s) if networks else load_network(cfg, s)
        for alg in cfg.algorithms:
            row = evaluate(alg, data, cfg, params, reps=max(cfg.reps, 5))
            writer.add(row)
            rows.append(row)
    return rows


@dataclass
class ConvergenceResult:
    rows: list[ReportRow]
    curves: dict[str, np.ndarray]          # alg -> MSE after iteration k = 1..k_max
    per_iteration_s: dict[str, float]      # median over repetitions

    def iterations_to_within(self, alg: str, frac: float = 0.1) -> int:
        """First k whose MSE is within ``frac`` of the curve's final value."""
        c = self.curves[alg]
        ok = np.abs(c - c[-1]) <= frac * abs(c[-1])
        # first k after which the curve never leaves the band again
        bad = np.flatnonzero(~ok)
        return int(bad[-1] + 2) if bad.size else 1


def run_convergence_study(cfg: ExperimentConfig) -> ConvergenceResult:
    """BCD and PCD run for exactly ``k_max`` iterations on the T test samples
    with one shared lambda (tuned for BCD); MSE after every iteration plus
    the median per-iteration wall time over ``cfg.reps`` timed runs."""
    s = cfg.scenario
    data = scenario_data(cfg, s)
    a = data.a_iid
    lam = tune_lambda("BCD", a, data, cfg)
    y = data.measure(a)
    runners = {
        "BCD": lambda keep: bcd_mmv_batch(a, y, lam, cfg.k_max, 0.0, keep_iterates=keep),
        "PCD": lambda keep: pcd_mmv_batch(a, y, lam, cfg.k_max, cfg.schedule, 0.0,
                                          keep_iterates=keep),
    }
    writer = _ReportWriter(cfg.output)
    rows, curves, per_iter = [], {}, {}
    for alg, run in runners.items():
        res = run(True)
        curves[alg] = np.array([eval_mse(data.x_test, it) for it in res.iterates])
        run(False)  # warm-up
        times = [run(False).wall_time / cfg.k_max for _ in range(max(cfg.reps, 5))]
        per_iter[alg] = statistics.median(times)
        row = ReportRow(s.scenario_id, alg, s.N, s.L, s.M, float(s.p_or_G), float(lam),
                        cfg.k_max, 0, 0, float(curves[alg][-1]), per_iter[alg] * cfg.k_max,
                        cfg.seed_data)
        writer.add(row)
        rows.append(row)
    return ConvergenceResult(rows, curves, per_iter)


def train_network(cfg: ExperimentConfig, scenario: Scenario | None = None,
                  checkpoint_dir=None) -> TrainResult:
    """Train the auto-encoder for ``scenario`` (default: the configured one),
    reporting validation MSE after every epoch."""
    s = scenario or cfg.scenario
    params0 = init_params(cfg.net.arch(s), RngStream(cfg.seed_init))
    data = RngStream(cfg.seed_data)
    x_val = gen_sample_set(s.sparsity, s.M, cfg.validation, data.child(PURPOSE_VALIDATION))
    eval_set = (x_val, RngStream(cfg.seed_noise).child(PURPOSE_VALIDATION))
    return train(params0, s.sparsity, s.noise, cfg.train, eval_set=eval_set,
                 checkpoint_dir=checkpoint_dir)
