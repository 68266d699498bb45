"""Measurement harness: position errors, prediction horizons, tiers, CIs, reports.

Conventions
-----------
A prediction array row ``i`` corresponds to the truth sample ``i + 1``
sample intervals after the prediction start. Errors are mean absolute
errors over position coordinates only. The horizon is the time of the last
sample before the first step whose error exceeds the threshold, so a miss at
the first predicted step gives ``T = 0`` and a run that never misses gives
the full evaluated span ``n * dt``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import esn, hnn, lstm
from .dynamics import EPS_SEP, SystemState, min_separation, total_energy
from ._version import __version__
from .errors import (LengthMismatch, ModelDatasetMismatch, NonFiniteState, SingularState,
                     StepUnderflow, TooFewValues, VersionMismatch)
from .integrators import IntegratorConfig, converged_integrate, estimate_lyapunov

REPORT_VERSION = 1
TIERS = ("fail", "tier1", "tier2", "tier3")
MODEL_KINDS = ("esn", "hnn", "lstm", "oracle", "constant")
CSV_COLUMNS = ("index", "horizon", "tier", "t_lyap", "normalized_horizon", "mean_mae", "energy_drift")


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.1
    levels: tuple = (0.90, 0.95, 0.98)
    resamples: int = 1000
    seed: int = 0
    warmup: int = 20
    hnn_substeps: int = 10
    lyapunov: bool = True
    lyapunov_horizon: float = 200.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not all(0 < lv < 1 for lv in self.levels):
            raise ValueError("confidence levels must lie in (0, 1)")
        if self.resamples < 1:
            raise ValueError("resamples must be >= 1")
        if self.warmup < 1 or self.hnn_substeps < 1:
            raise ValueError("warmup and hnn_substeps must be >= 1")
        object.__setattr__(self, "levels", tuple(float(x) for x in self.levels))

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


# ------------------------------------------------------------------ metrics

def _positions(a, n_pos=None):
    """Position block of predictions given as (T, n, d) arrays or flat (T, 2nd) rows."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 3:
        return a.reshape(a.shape[0], -1)
    if a.ndim != 2:
        raise LengthMismatch(f"expected a 2-D or 3-D array, got shape {a.shape}")
    return a[:, : (n_pos if n_pos is not None else a.shape[1] // 2)]


def _aligned(pred, truth):
    p, t = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise LengthMismatch(f"prediction {p.shape} and truth {t.shape} are not aligned")
    return _positions(p), _positions(t)


def mae_curve(pred, truth) -> np.ndarray:
    """Per-step mean absolute position error.

    Inputs are either position arrays of shape (T, n, d) or flattened
    states (T, 2nd) with positions first.
    """
    p, t = _aligned(pred, truth)
    return np.mean(np.abs(p - t), axis=1)


def trajectory_mae(pred, truth) -> float:
    return float(np.mean(mae_curve(pred, truth)))


def horizon_from_curve(curve, threshold: float, dt: float) -> float:
    curve = np.asarray(curve, dtype=float)
    bad = ~(curve <= threshold)  # NaN counts as a miss
    if not bad.any():
        return curve.shape[0] * dt
    return int(np.argmax(bad)) * dt


def prediction_horizon(pred, truth, threshold: float = 0.1, dt: float = 0.1) -> float:
    """Time over which the position MAE stays at or below ``threshold``."""
    return horizon_from_curve(mae_curve(pred, truth), threshold, dt)


def tier_classify(T: float) -> str:
    """Half-open tiers: [0,3) fail, [3,10) tier1, [10,100) tier2, [100,inf) tier3."""
    if T < 0:
        raise ValueError("horizon must be non-negative")
    if T < 3:
        return "fail"
    if T < 10:
        return "tier1"
    if T < 100:
        return "tier2"
    return "tier3"


def bootstrap_means(values, resamples: int, seed: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(resamples, v.size))
    return v[idx].mean(axis=1)


def percentile_interval(means, level: float) -> tuple:
    lo, hi = np.quantile(means, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


def confidence_intervals(values, levels=None, config: EvalConfig = EvalConfig()) -> dict:
    """Bootstrap percentile intervals for the mean, one per level.

    All levels share one resample set, so higher levels always contain lower ones.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise TooFewValues(f"need at least 2 values for a bootstrap interval, got {v.size}")
    levels = config.levels if levels is None else levels
    means = bootstrap_means(v, config.resamples, config.seed)
    return {float(lv): percentile_interval(means, lv) for lv in levels}


def _flat_to_state(row, masses, dim):
    return SystemState.from_flat(row, masses, 0.0, dim)


def energy_drift(pred, masses, dim: int | None = None, eps_sep: float = EPS_SEP) -> tuple:
    """Max relative energy error of a predicted trajectory.

    ``pred`` holds flattened states (T, 2nd). Returns ``(drift, singular)``;
    on a singular or non-finite state the drift covers the states before it
    and ``singular`` is True.
    """
    pred = np.asarray(pred, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if dim is None:
        dim = pred.shape[1] // (2 * masses.shape[0])
    energies = []
    singular = False
    for row in pred:
        if not np.isfinite(row).all():
            singular = True
            break
        s = _flat_to_state(row, masses, dim)
        if min_separation(s) < eps_sep:
            singular = True
            break
        energies.append(total_energy(s))
    if not energies:
        return 0.0, singular
    e = np.asarray(energies)
    scale = abs(e[0]) if e[0] != 0 else 1.0
    return float(np.max(np.abs(e - e[0])) / scale), singular


def lyapunov_normalized_horizon(T: float, t_lyap: float):
    """``T / t_lyap``, or None (not applicable) when ``t_lyap`` is infinite or unknown."""
    if t_lyap is None or not math.isfinite(t_lyap):
        return None
    return T / t_lyap


# ------------------------------------------------------------- predictors

@dataclass
class Predictor:
    """A loaded model plus the recipe that turns a truth trajectory into predictions."""

    kind: str
    model: object = None
    integrator: IntegratorConfig | None = None

    @property
    def input_dim(self):
        if self.kind in ("esn", "lstm", "hnn"):
            return self.model.input_dim
        return None

    def start_index(self, config: EvalConfig) -> int:
        return config.warmup if self.kind in ("esn", "lstm") else 0

    def predict(self, traj, config: EvalConfig) -> np.ndarray:
        """Flattened predicted states for samples ``start+1 .. n-1``."""
        flat = traj.flat()
        n = flat.shape[0]
        start = self.start_index(config)
        n_pred = n - 1 - start
        if self.kind == "esn":
            return esn.forecast(self.model, flat[: start + 1], n_pred)
        if self.kind == "lstm":
            return lstm.rollout(self.model, flat[: start + 1], n_pred)
        if self.kind == "constant":
            return np.repeat(flat[start][None], n_pred, axis=0)
        dt = traj.sample_interval
        initial = traj.state(start)
        if self.kind == "hnn":
            k = config.hnn_substeps
            try:
                out = hnn.rollout(self.model, initial, n_pred * k, dt / k)
            except NonFiniteState:
                return np.full((n_pred, flat.shape[1]), np.nan)
            return out.flat()[k::k]
        # oracle: the ground-truth generator rerun from the initial state
        span = traj.times[-1] - traj.times[start]
        out = converged_integrate(initial, initial.time + span, self.integrator, raise_on_failure=False)
        return out.flat()[1:]


def load_predictor(kind: str, model_path=None, manifest=None) -> Predictor:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind in ("esn", "hnn", "lstm"):
        if model_path is None:
            raise ValueError(f"model kind {kind!r} needs a model file")
        loader = {"esn": esn.load_model, "hnn": hnn.load_model, "lstm": lstm.load_model}[kind]
        return Predictor(kind, loader(model_path))
    if kind == "oracle":
        cfg = IntegratorConfig(**manifest["integrator"]) if manifest else IntegratorConfig()
        return Predictor(kind, integrator=cfg)
    return Predictor(kind)


# ------------------------------------------------------------------ report

def _num(x):
    """JSON-safe float: non-finite values become None."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class EvalReport:
    provenance: dict
    config: dict
    per_trajectory: list
    aggregate: dict
    report_version: int = REPORT_VERSION

    def to_dict(self):
        return {"report_version": self.report_version, "provenance": self.provenance,
                "config": self.config, "per_trajectory": self.per_trajectory,
                "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, d) -> EvalReport:
        return cls(d["provenance"], d["config"], d["per_trajectory"], d["aggregate"],
                   d.get("report_version", REPORT_VERSION))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> EvalReport:
        d = json.loads(Path(path).read_text())
        if d.get("report_version") != REPORT_VERSION:
            raise VersionMismatch(f"{path}: report_version {d.get('report_version')!r}")
        return cls.from_dict(d)

    @property
    def horizons(self) -> np.ndarray:
        return np.array([r["horizon"] for r in self.per_trajectory])

    @property
    def tiers(self) -> list:
        return [r["tier"] for r in self.per_trajectory]


def evaluate_trajectory(predictor: Predictor, traj, index: int, config: EvalConfig) -> dict:
    flat = traj.flat()
    start = predictor.start_index(config)
    if flat.shape[0] - 1 - start < 1:
        raise LengthMismatch(f"trajectory {index} has {flat.shape[0]} samples; "
                             f"need more than {start + 1} to evaluate")
    pred = predictor.predict(traj, config)
    truth = flat[start + 1:]
    dt = traj.sample_interval
    curve = mae_curve(pred, truth)
    T = horizon_from_curve(curve, config.threshold, dt)
    half = flat.shape[1] // 2
    vel_mae = float(np.mean(np.abs(pred[:, half:] - truth[:, half:])))
    drift, singular = energy_drift(np.vstack([flat[start][None], pred]), traj.masses, traj.dim)
    lam = t_lyap = None
    if config.lyapunov:
        try:
            lam, t_lyap = estimate_lyapunov(traj.state(0), horizon=config.lyapunov_horizon,
                                            seed=config.seed)
        except (SingularState, StepUnderflow):
            lam = t_lyap = None
    norm = lyapunov_normalized_horizon(T, t_lyap)
    return {
        "index": index,
        "horizon": float(T),
        "span": float(curve.shape[0] * dt),
        "tier": tier_classify(T),
        "lambda_max": _num(lam),
        "t_lyap": None if t_lyap is None else (_num(t_lyap) if math.isfinite(t_lyap) else "inf"),
        "normalized_horizon": _num(norm),
        "mean_mae": _num(np.mean(curve)),
        "mean_velocity_mae": _num(vel_mae),
        "energy_drift": _num(drift),
        "energy_singular": bool(singular),
        "mae_curve": [_num(x) for x in curve],
    }


def _evaluate_job(args):
    predictor, traj, index, config = args
    return evaluate_trajectory(predictor, traj, index, config)


def _stats(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"count": 0, "mean": None, "median": None, "max": None}
    return {"count": int(v.size), "mean": float(v.mean()), "median": float(np.median(v)),
            "max": float(v.max())}


def aggregate(per_trajectory, config: EvalConfig) -> dict:
    horizons = np.array([r["horizon"] for r in per_trajectory])
    counts = {t: 0 for t in TIERS}
    for r in per_trajectory:
        counts[r["tier"]] += 1
    ci = None
    if horizons.size >= 2:
        ci = {str(lv): list(iv) for lv, iv in confidence_intervals(horizons, config=config).items()}
    return {
        "n_trajectories": int(horizons.size),
        "mean_horizon": float(horizons.mean()),
        "median_horizon": float(np.median(horizons)),
        "tier_counts": counts,
        "horizon_ci": ci,
        "energy_drift": _stats(r["energy_drift"] for r in per_trajectory),
        "n_energy_singular": sum(r["energy_singular"] for r in per_trajectory),
        "normalized_horizon": _stats(r["normalized_horizon"] for r in per_trajectory),
        "mean_mae": _stats(r["mean_mae"] for r in per_trajectory),
    }


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def evaluate_model(kind: str, model_path, manifest_path, config: EvalConfig = EvalConfig(),
                   out_dir=None, workers: int = 1) -> EvalReport:
    """Evaluate a model on the test split of a dataset; optionally write report files.

    Files written to ``out_dir``: ``report.json``, ``trajectories.csv`` and
    ``summary.svg``.
    """
    data = ds.read_dataset(manifest_path)
    predictor = load_predictor(kind, model_path, data.manifest)
    if not data.test:
        raise ModelDatasetMismatch("dataset has no test trajectories")
    state_dim = data.test[0].flat().shape[1]
    if predictor.input_dim is not None and predictor.input_dim != state_dim:
        raise ModelDatasetMismatch(f"{kind} model expects {predictor.input_dim} inputs, "
                                   f"dataset states have {state_dim}")
    indices = [e["index"] for e in data.manifest["trajectories"] if e["split"] == "test"]
    jobs = [(predictor, traj, idx, config) for traj, idx in zip(data.test, indices)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_job, jobs))
    else:
        rows = [_evaluate_job(j) for j in jobs]
    provenance = {
        "model_kind": kind,
        "model_file": None if model_path is None else Path(model_path).name,
        "model_sha256": None if model_path is None else _sha256(model_path),
        "manifest_hash": ds.manifest_hash(manifest_path),
        "package_version": __version__,
    }
    report = EvalReport(provenance, config.to_dict(), rows, aggregate(rows, config))
    if out_dir is not None:
        write_report_files(report, out_dir, data.test[0].sample_interval)
    return report


def write_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.per_trajectory:
            w.writerow(["" if r[c] is None else r[c] for c in CSV_COLUMNS])


def plot_summary(report: EvalReport, path, dt: float) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tribody"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.hist(report.horizons, bins=20, color="tab:blue")
    for edge in (3, 10, 100):
        ax1.axvline(edge, color="k", lw=0.8, ls="--")
    ax1.set_xlabel("prediction horizon")
    ax1.set_ylabel("trajectories")
    curves = [r["mae_curve"] for r in report.per_trajectory]
    L = min(len(c) for c in curves)
    M = np.array([[np.inf if x is None else x for x in c[:L]] for c in curves])
    t = dt * np.arange(1, L + 1)
    lo, med, hi = np.percentile(M, [25, 50, 75], axis=0)
    ax2.fill_between(t, lo, hi, alpha=0.3, color="tab:orange", label="25-75%")
    ax2.plot(t, med, color="tab:orange", label="median")
    ax2.axhline(report.config["threshold"], color="k", lw=0.8, ls="--", label="threshold")
    ax2.set_yscale("log")
    ax2.set_xlabel("time after prediction start")
    ax2.set_ylabel("position MAE")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report_files(report: EvalReport, out_dir, dt: float) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    write_csv(report, out / "trajectories.csv")
    plot_summary(report, out / "summary.svg", dt)
