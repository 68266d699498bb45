"""Initial-condition sampling, bulk ground-truth generation and on-disk formats.

Layout written by :func:`generate_dataset`::

    <out>/manifest.json
    <out>/train/traj_00000.csv ...
    <out>/test/traj_00500.csv ...

Each CSV starts with one ``#``-prefixed JSON line (format version, masses,
generation metadata) followed by a header row ``t,q1x,q1y[,q1z],...,v3y[,v3z]``
and one row per sample written with 17 significant digits.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import EPS_SEP, SystemState, min_separation, phase_derivative, recenter_to_com
from .errors import FormatError, NotConverged, RejectionExhausted, SingularState, StepUnderflow, VersionMismatch
from .integrators import IntegratorConfig, Trajectory, converged_integrate

FORMAT_VERSION = 1
MAX_REJECTIONS = 10_000

# Sizes used by the original experimental design; desk runs scale these down.
FULL_SCALE = {"n_train": 10_000, "n_test": 500, "steps": 100}
DESK_SCALE = {"n_train": 500, "n_test": 50, "steps": 100}


@dataclass(frozen=True)
class SamplerConfig:
    dim: int = 2
    masses: tuple = (1.0, 1.0, 1.0)
    min_separation: float = 0.1
    base_seed: int = 0
    velocity_mode: str = "zero"
    velocity_scale: float = 0.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not self.min_separation > 0:
            raise ValueError("min_separation must be positive")
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (3,) or (m < 0).any() or (m > 0).sum() < 2:
            raise ValueError(f"masses must be 3 non-negative values, at least two positive: {self.masses}")
        if self.velocity_mode not in ("zero", "gaussian"):
            raise ValueError(f"unknown velocity_mode {self.velocity_mode!r}")
        object.__setattr__(self, "masses", tuple(float(x) for x in m))

    def to_dict(self):
        d = asdict(self)
        d["masses"] = list(self.masses)
        d["law"] = "uniform-in-unit-disc" if self.dim == 2 else "uniform-in-unit-ball"
        return d


def _uniform_in_ball(rng, n, dim):
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.random(n) ** (1.0 / dim)
    return direction * radius[:, None]


def sample_initial(config: SamplerConfig, index: int, attempt: int = 0) -> SystemState:
    """Three bodies i.i.d. uniform in the unit disc/ball, barycentric, at rest.

    Draws are rejected until every pair is at least ``min_separation``
    apart. The result depends only on ``(base_seed, index, attempt)``.
    """
    rng = np.random.default_rng([config.base_seed, index, attempt])
    masses = np.asarray(config.masses)
    for _ in range(MAX_REJECTIONS):
        q = _uniform_in_ball(rng, 3, config.dim)
        if config.velocity_mode == "gaussian":
            v = config.velocity_scale * rng.standard_normal((3, config.dim))
        else:
            v = np.zeros((3, config.dim))
        state = recenter_to_com(SystemState(q, v, masses, 0.0))
        if min_separation(state) >= config.min_separation:
            return state
    raise RejectionExhausted(
        f"no configuration with separation >= {config.min_separation} in {MAX_REJECTIONS} draws")


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = DESK_SCALE["n_train"]
    n_test: int = DESK_SCALE["n_test"]
    steps: int = DESK_SCALE["steps"]
    sample_interval: float = 0.1
    tolerance: float = 1e-12
    conv_threshold: float = 1e-6
    policy: str = "resample"
    retry_budget: int = 500
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must both be >= 1")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.policy not in ("resample", "keep"):
            raise ValueError(f"policy must be 'resample' or 'keep', got {self.policy!r}")
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(method="bulirsch_stoer", tolerance=self.tolerance,
                                sample_interval=self.sample_interval,
                                conv_threshold=self.conv_threshold)

    @property
    def t_end(self) -> float:
        return (self.steps - 1) * self.sample_interval

    @classmethod
    def from_dict(cls, d) -> DatasetConfig:
        d = dict(d)
        sampler = d.pop("sampler", {}) or {}
        sampler = {k: v for k, v in sampler.items() if k != "law"}
        if "masses" in sampler:
            sampler["masses"] = tuple(sampler["masses"])
        return cls(sampler=SamplerConfig(**sampler), **d)

    def to_dict(self):
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict()
        return d


# ---------------------------------------------------------------- file formats

def _columns(n_bodies, dim):
    axes = "xyz"[:dim]
    q = [f"q{i + 1}{a}" for i in range(n_bodies) for a in axes]
    v = [f"v{i + 1}{a}" for i in range(n_bodies) for a in axes]
    return ["t"] + q + v


def write_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "masses": traj.masses.tolist(),
              "metadata": traj.metadata}
    cols = _columns(traj.masses.shape[0], traj.dim)
    rows = np.column_stack([traj.times, traj.flat()])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise FormatError("trajectory file not found", path=path) from exc
    if not lines or not lines[0].startswith("#"):
        raise FormatError("missing metadata line", path=path, line=1)
    try:
        header = json.loads(lines[0][1:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad metadata JSON ({exc.msg})", path=path, line=1) from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        masses = np.asarray(header["masses"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("metadata lacks a valid 'masses' list", path=path, line=1, field="masses") from exc
    if len(lines) < 2:
        raise FormatError("missing column header", path=path, line=2)
    cols = lines[1].split(",")
    n_bodies = masses.shape[0]
    dim = (len(cols) - 1) // (2 * n_bodies)
    if dim not in (2, 3) or cols != _columns(n_bodies, dim):
        raise FormatError(f"unexpected column header {lines[1]!r}", path=path, line=2)
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise FormatError(f"record has {len(parts)} fields, expected {len(cols)}",
                              path=path, line=lineno)
        row = []
        for name, text in zip(cols, parts):
            try:
                val = float(text)
            except ValueError:
                raise FormatError(f"not a number: {text!r}", path=path, line=lineno, field=name) from None
            if not math.isfinite(val):
                raise FormatError(f"non-finite value {text!r}", path=path, line=lineno, field=name)
            row.append(val)
        rows.append(row)
    if len(rows) < 2:
        raise FormatError(f"only {len(rows)} records; a trajectory needs at least 2", path=path)
    data = np.asarray(rows)
    try:
        traj = Trajectory.from_flat(data[:, 0], data[:, 1:], masses, header.get("metadata", {}))
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from exc
    return traj


def check_trajectory(traj: Trajectory, eps_sep: float = EPS_SEP) -> None:
    """Raise unless every stored state is finite and nonsingular."""
    for i in range(len(traj)):
        s = traj.state(i)
        if min_separation(s) < eps_sep:
            raise SingularState(f"stored state {i} is singular", time=float(traj.times[i]))


@dataclass
class Dataset:
    manifest: dict
    train: list
    test: list
    root: Path

    @property
    def dim(self) -> int:
        return int(self.manifest["sampler"]["dim"])


def manifest_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise FormatError("manifest not found", path=manifest_path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad manifest JSON ({exc.msg})", path=manifest_path, line=exc.lineno) from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{manifest_path}: format_version {manifest.get('format_version')!r}, "
                              f"expected {FORMAT_VERSION}")
    root = manifest_path.parent
    splits = {"train": [], "test": []}
    for entry in manifest["trajectories"]:
        path = root / entry["file"]
        if not path.exists():
            raise FormatError(f"manifest references missing trajectory file {entry['file']}",
                              path=path)
        traj = read_trajectory(path)
        check_trajectory(traj)
        splits[entry["split"]].append(traj)
    if len(splits["train"]) != manifest["counts"]["train"] or len(splits["test"]) != manifest["counts"]["test"]:
        raise FormatError("trajectory count disagrees with manifest counts", path=manifest_path)
    return Dataset(manifest, splits["train"], splits["test"], root)


# ------------------------------------------------------------------ generation

def generate_trajectory(config: DatasetConfig, index: int):
    """Ground truth for one dataset slot, honouring the non-converged policy.

    Returns ``(trajectory, attempts)``.
    """
    cfg = config.integrator
    last_error = None
    for attempt in range(config.retry_budget):
        state = sample_initial(config.sampler, index, attempt)
        try:
            traj = converged_integrate(state, config.t_end, cfg, seed=index,
                                       raise_on_failure=config.policy == "resample")
        except NotConverged as exc:
            last_error = exc
            continue
        except (StepUnderflow, SingularState) as exc:
            last_error = exc
            continue
        traj.metadata["attempt"] = attempt
        return traj, attempt + 1
    raise RuntimeError(f"slot {index}: no usable trajectory in {config.retry_budget} attempts "
                       f"(last failure: {last_error})")


def _generate_slot(args):
    config, index = args
    return generate_trajectory(config, index)


def generate_dataset(config: DatasetConfig, out_dir, workers: int = 1) -> dict:
    """Generate train/test trajectories, write them and the manifest.

    Train slots use indices ``0..n_train-1`` and test slots continue from
    ``n_train``, so the splits never share an initial condition.
    """
    out_dir = Path(out_dir)
    (out_dir / "train").mkdir(parents=True, exist_ok=True)
    (out_dir / "test").mkdir(parents=True, exist_ok=True)
    total = config.n_train + config.n_test
    jobs = [(config, i) for i in range(total)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_slot, jobs, chunksize=4))
    else:
        results = [_generate_slot(j) for j in jobs]

    entries = []
    for index, (traj, attempts) in enumerate(results):
        split = "train" if index < config.n_train else "test"
        rel = f"{split}/traj_{index:05d}.csv"
        write_trajectory(traj, out_dir / rel)
        entries.append({
            "split": split,
            "index": index,
            "seed": index,
            "attempts": attempts,
            "converged": bool(traj.metadata.get("converged")),
            "divergence_time": traj.metadata.get("divergence_time"),
            "file": rel,
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "counts": {"train": config.n_train, "test": config.n_test},
        "steps": config.steps,
        "sample_interval": config.sample_interval,
        "integrator": config.integrator.to_dict(),
        "sampler": config.sampler.to_dict(),
        "policy": config.policy,
        "retry_budget": config.retry_budget,
        "full_scale": dict(FULL_SCALE),
        "trajectories": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


# ------------------------------------------------------------ supervised pairs

@dataclass
class SupervisedPairs:
    inputs: np.ndarray
    targets: np.ndarray
    kind: str

    def __len__(self):
        return self.inputs.shape[0]

    @staticmethod
    def concat(pairs) -> SupervisedPairs:
        pairs = list(pairs)
        return SupervisedPairs(np.concatenate([p.inputs for p in pairs]),
                               np.concatenate([p.targets for p in pairs]), pairs[0].kind)


def to_next_state_pairs(traj: Trajectory) -> SupervisedPairs:
    """(state_k -> state_{k+1}) on flattened states, k = 0..n-2."""
    flat = traj.flat()
    return SupervisedPairs(flat[:-1].copy(), flat[1:].copy(), "next_state")


def canonical_inputs(traj: Trajectory) -> np.ndarray:
    """Per-sample (q, p) vectors with p = m v."""
    n = len(traj)
    p = traj.masses[None, :, None] * traj.velocities
    return np.concatenate([traj.positions.reshape(n, -1), p.reshape(n, -1)], axis=1)


def to_hnn_pairs(traj: Trajectory) -> SupervisedPairs:
    """((q, p)_k -> exact (dq/dt, dp/dt)_k) from the true dynamics."""
    targets = np.stack([phase_derivative(s).flat() for s in traj.states])
    return SupervisedPairs(canonical_inputs(traj), targets, "hnn")
