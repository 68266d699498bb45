"""Command-line entry point: generate, train, evaluate, simulate, lyapunov.

Every subcommand resolves its configuration as defaults < JSON file given by
``--config`` < explicit flags, validates it before doing any work and writes
a reproducibility record under ``OUT/runs/``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration error.
Failures also print one machine-readable line ``error: {json}`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import esn, evaluation, fixtures, hnn, lstm
from ._version import __version__
from .dynamics import SystemState
from .errors import ConfigError, TribodyError
from .integrators import (IntegratorConfig, LYAPUNOV_CONFIG, converged_integrate, estimate_lyapunov,
                          integrate)
from .kernels import BACKEND

RECIPES = ("periodic", "general-2d", "general-3d")
INITIAL_CHOICES = ("figure8", "circular-binary", "hierarchical-triple", "sample")


# ------------------------------------------------------------ flag schemas

def _fields(cls, skip=("seed",)):
    out = []
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out.append((f.name, default))
    return out


def _extra(**kw):
    return list(kw.items())


def _schemas():
    """Per-command list of ``(key, default)``; the single source of flag truth."""
    sampler = [(k, v) for k, v in _fields(ds.SamplerConfig, skip=("base_seed",))]
    generate = _fields(ds.DatasetConfig, skip=("sampler",)) + sampler
    common_train = _extra(recipe="general-2d", dataset="", init_model="", name="")
    evaluate = _extra(kind="esn", model="", dataset="") + _fields(evaluation.EvalConfig)
    integ = _fields(IntegratorConfig, skip=("max_steps_per_sample", "eps_sep"))
    simulate = _extra(initial="figure8", dim=2, t_end=10.0, converged=False) + integ
    lyap = _extra(initial="figure8", dim=2, delta0=1e-8, tau=1.0, horizon=200.0, floor=1e-3,
                  tolerance=LYAPUNOV_CONFIG.tolerance)
    return {
        "generate": generate,
        "train esn": common_train + _fields(esn.EsnConfig),
        "train hnn": common_train + _fields(hnn.HnnConfig),
        "train lstm": common_train + _fields(lstm.LstmConfig),
        "evaluate": evaluate,
        "simulate": simulate,
        "lyapunov": lyap,
    }


CHOICES = {
    "recipe": RECIPES,
    "kind": evaluation.MODEL_KINDS,
    "policy": ("resample", "keep"),
    "velocity_mode": ("zero", "gaussian"),
    "loss_mode": hnn.LOSS_MODES,
    "target_mode": ("full", "positions"),
    "readout_activation": ("identity", "tanh"),
    "method": ("rk4", "leapfrog", "bulirsch_stoer"),
}


def _show(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_tuple(elem_type):
    def parse(text):
        try:
            return tuple(elem_type(x) for x in text.split(",") if x.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
    return parse


def _add_flags(parser, schema):
    for key, default in schema:
        flag = "--" + key.replace("_", "-")
        kw = {"dest": key, "default": None, "help": f"(default: {_show(default)})"}
        if isinstance(default, bool):
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
            continue
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            kw["type"] = _parse_tuple(elem)
        elif isinstance(default, (int, float, str)):
            kw["type"] = type(default)
        if key in CHOICES:
            kw["choices"] = CHOICES[key]
        parser.add_argument(flag, **kw)


def _add_common(parser):
    g = parser.add_argument_group("common")
    g.add_argument("--config", metavar="PATH", help="JSON file with config keys (flags win)")
    g.add_argument("--seed", type=int, default=None, metavar="U64", help="base seed (default: 0)")
    g.add_argument("--out", metavar="DIR", default=None, help="output root (default: .)")
    g.add_argument("--workers", type=int, default=None, metavar="N", help="worker processes (default: 1)")
    g.add_argument("--quiet", action="store_true", help="suppress progress messages")


def build_parser() -> argparse.ArgumentParser:
    schemas = _schemas()
    parser = argparse.ArgumentParser(prog="tribody", description="Three-body simulation and forecasting.")
    parser.add_argument("--version", action="version", version=f"tribody {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "generate": "integrate a dataset of converged trajectories",
        "train": "fit a forecaster (esn, hnn or lstm)",
        "evaluate": "score a model on the test split and write a report",
        "simulate": "integrate one initial state to CSV and SVG",
        "lyapunov": "estimate the largest Lyapunov exponent of one initial state",
    }
    for name in ("generate", "train", "evaluate", "simulate", "lyapunov"):
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        if name == "train":
            kinds = p.add_subparsers(dest="kind", required=True, metavar="MODEL")
            for kind in ("esn", "hnn", "lstm"):
                kp = kinds.add_parser(kind, help=f"train the {kind} model")
                _add_common(kp)
                _add_flags(kp, schemas[f"train {kind}"])
        else:
            _add_common(p)
            _add_flags(p, schemas[name])
    return parser


def flag_table() -> str:
    """Markdown table of every subcommand flag and default (mirrored in the README)."""
    lines = ["| command | flag | default |", "|---|---|---|"]
    common = [("--config", "none"), ("--seed", "0"), ("--out", "."), ("--workers", "1"), ("--quiet", "off")]
    for flag, default in common:
        lines.append(f"| (all) | `{flag}` | {default} |")
    for cmd, schema in _schemas().items():
        for key, default in schema:
            shown = _show(default) if _show(default) != "" else "none"
            lines.append(f"| {cmd} | `--{key.replace('_', '-')}` | {shown} |")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------- config resolution

def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be true/false")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {key!r} must be a list")
        return tuple(value)
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if type(value) is not type(default):
        raise ConfigError(f"config key {key!r} must be of type {type(default).__name__}")
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"config key {key!r} must be one of {CHOICES[key]}")
    return value


def resolve(command: str, args) -> dict:
    schema = dict(_schemas()[command])
    resolved = dict(schema)
    common = {"seed": 0, "out": ".", "workers": 1}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in doc.items():
            if key in common:
                common[key] = value
            elif key in schema:
                resolved[key] = _coerce(key, value, schema[key])
            else:
                raise ConfigError(f"unknown config key {key!r} for '{command}'")
    for key in schema:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    for key in common:
        val = getattr(args, key, None)
        if val is not None:
            common[key] = val
    if not isinstance(common["seed"], int) or common["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(common["workers"], int) or common["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    resolved.update(common)
    return resolved


def _build(cls, cfg, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {k: v for k, v in cfg.items() if k in names}
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


# ------------------------------------------------------------ subcommands

def _log_fn(quiet):
    if quiet:
        return lambda msg: None
    return lambda msg: print(msg, file=sys.stderr)


def _initial_state(cfg) -> SystemState:
    name, dim = cfg["initial"], cfg["dim"]
    if name == "figure8":
        return fixtures.figure8(dim)
    if name == "circular-binary":
        return fixtures.circular_binary(dim=dim)
    if name == "hierarchical-triple":
        return fixtures.hierarchical_triple(dim)
    if name == "sample":
        return ds.sample_initial(ds.SamplerConfig(dim=dim, base_seed=cfg["seed"]), 0)
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"--initial must be one of {INITIAL_CHOICES} or a state JSON file, got {name!r}")
    try:
        doc = json.loads(path.read_text())
        return SystemState(np.asarray(doc["positions"], dtype=float), np.asarray(doc["velocities"], dtype=float),
                           np.asarray(doc["masses"], dtype=float), float(doc.get("time", 0.0)))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read initial state from {path}: {exc}") from None


def cmd_generate(cfg, log):
    sampler = _build(ds.SamplerConfig, cfg, base_seed=cfg["seed"])
    config = _build(ds.DatasetConfig, cfg, sampler=sampler)
    out = Path(cfg["out"]) / "dataset"
    log(f"generating {config.n_train} + {config.n_test} trajectories into {out}")
    manifest = ds.generate_dataset(config, out, workers=cfg["workers"])
    n_conv = sum(e["converged"] for e in manifest["trajectories"])
    log(f"done: {n_conv}/{len(manifest['trajectories'])} certified converged")
    return {"manifest": str(out / "manifest.json")}, {"dataset": config.to_dict()}


def _periodic_trajectory(sample_interval=0.1, steps=100):
    cfg = IntegratorConfig(method="leapfrog", step=1e-3, sample_interval=sample_interval)
    return integrate(fixtures.figure8(), (steps - 1) * sample_interval, cfg)


def _training_trajectories(cfg, log):
    recipe = cfg["recipe"]
    if recipe == "periodic":
        log("recipe periodic: figure-8 fixture trajectory")
        return [_periodic_trajectory()]
    manifest = Path(cfg["dataset"]) if cfg["dataset"] else Path(cfg["out"]) / "dataset" / "manifest.json"
    data = ds.read_dataset(manifest)
    want = 2 if recipe == "general-2d" else 3
    if data.dim != want:
        raise ConfigError(f"recipe {recipe} needs a {want}-D dataset, {manifest} is {data.dim}-D")
    log(f"recipe {recipe}: {len(data.train)} training trajectories from {manifest}")
    return data.train


def cmd_train(cfg, log, kind):
    trajs = _training_trajectories(cfg, log)
    models = Path(cfg["out"]) / "models"
    models.mkdir(parents=True, exist_ok=True)
    path = models / (cfg["name"] or f"{kind}-{cfg['recipe']}.json")
    summary = {}
    if kind == "esn":
        config = _build(esn.EsnConfig, cfg, seed=cfg["seed"])
        if cfg["init_model"]:
            # keep the saved reservoir, refit only the readout
            model = esn.load_model(cfg["init_model"])
            config = model.config
        else:
            model = esn.init_reservoir(config, trajs[0].flat().shape[1])
        model = esn.fit_readout(model, [t.flat()[:-1] for t in trajs], [t.flat()[1:] for t in trajs])
        esn.save_model(model, path)
        summary = {"train_mse": model.train_mse, "achieved_radius": model.achieved_radius}
    elif kind == "hnn":
        config = _build(hnn.HnnConfig, cfg, seed=cfg["seed"])
        pairs = ds.SupervisedPairs.concat(ds.to_hnn_pairs(t) for t in trajs)
        init = hnn.load_model(cfg["init_model"]) if cfg["init_model"] else None
        if init is not None:
            init.config = config
        model = hnn.train(pairs.inputs, pairs.targets, config, model=init, log=log)
        hnn.save_model(model, path)
        summary = {"initial_loss": model.history[0], "final_loss": model.history[-1]}
    else:
        config = _build(lstm.LstmConfig, cfg, seed=cfg["seed"])
        X, Y = lstm.make_sequences(trajs, config.target_mode)
        init = lstm.load_model(cfg["init_model"]) if cfg["init_model"] else None
        if init is not None:
            init.config = config
        model = lstm.train(X, Y, config, model=init, log=log)
        lstm.save_model(model, path)
        summary = {"initial_loss": model.history[0], "final_loss": model.history[-1]}
    log(f"saved {kind} model to {path}")
    return {"model": str(path), **summary}, {kind: dataclasses.asdict(config)}


def cmd_evaluate(cfg, log):
    config = _build(evaluation.EvalConfig, cfg, seed=cfg["seed"])
    manifest = Path(cfg["dataset"]) if cfg["dataset"] else Path(cfg["out"]) / "dataset" / "manifest.json"
    kind = cfg["kind"]
    model = cfg["model"] or None
    if model is None and kind in ("esn", "hnn", "lstm"):
        model = str(Path(cfg["out"]) / "models" / f"{kind}-general-2d.json")
    out = Path(cfg["out"]) / "reports" / kind
    log(f"evaluating {kind} on {manifest}")
    report = evaluation.evaluate_model(kind, model, manifest, config, out_dir=out, workers=cfg["workers"])
    agg = report.aggregate
    log(f"mean horizon {agg['mean_horizon']:.3f}, tiers {agg['tier_counts']}")
    return {"report": str(out / "report.json"), "tier_counts": agg["tier_counts"],
            "mean_horizon": agg["mean_horizon"]}, {"eval": config.to_dict()}


def _plot_trajectory(traj, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tribody"
    fig, ax = plt.subplots(figsize=(5, 5))
    for b in range(traj.positions.shape[1]):
        ax.plot(traj.positions[:, b, 0], traj.positions[:, b, 1], lw=1, label=f"body {b + 1}")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_simulate(cfg, log):
    state = _initial_state(cfg)
    config = _build(IntegratorConfig, cfg)
    if cfg["converged"]:
        traj = converged_integrate(state, state.time + cfg["t_end"], config, seed=cfg["seed"])
    else:
        traj = integrate(state, state.time + cfg["t_end"], config, seed=cfg["seed"])
    out = Path(cfg["out"]) / "runs" / "simulate"
    out.mkdir(parents=True, exist_ok=True)
    ds.write_trajectory(traj, out / "trajectory.csv")
    _plot_trajectory(traj, out / "trajectory.svg")
    log(f"wrote {len(traj)} samples to {out / 'trajectory.csv'}")
    return {"csv": str(out / "trajectory.csv"), "svg": str(out / "trajectory.svg")}, \
        {"integrator": config.to_dict()}


def cmd_lyapunov(cfg, log):
    state = _initial_state(cfg)
    config = dataclasses.replace(LYAPUNOV_CONFIG, tolerance=cfg["tolerance"])
    try:
        lam, t_lyap = estimate_lyapunov(state, config, delta0=cfg["delta0"], tau=cfg["tau"],
                                        horizon=cfg["horizon"], floor=cfg["floor"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = {"lambda_max": lam, "t_lyap": t_lyap if np.isfinite(t_lyap) else "inf"}
    print(json.dumps(result))
    return result, {"integrator": config.to_dict()}


# --------------------------------------------------------------- plumbing

def _record(command, cfg, argv, outputs, configs, started):
    runs = Path(cfg["out"]) / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(started))
    record = {
        "command": command,
        "argv": list(argv),
        "resolved": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "configs": configs,
        "seeds": {"base_seed": cfg["seed"]},
        "versions": {"tribody": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "kernel_backend": BACKEND},
        "started": stamp,
        "elapsed_s": round(time.time() - started, 3),
        "outputs": outputs,
    }
    name = f"{stamp}-{command.replace(' ', '-')}.json"
    (runs / name).write_text(json.dumps(record, indent=1, sort_keys=True, default=str) + "\n")


def _fail(exc, code):
    line = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print("error: " + json.dumps(line), file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command if args.command != "train" else f"train {args.kind}"
    started = time.time()
    try:
        cfg = resolve(command, args)
        log = _log_fn(args.quiet)
        if args.command == "generate":
            outputs, configs = cmd_generate(cfg, log)
        elif args.command == "train":
            outputs, configs = cmd_train(cfg, log, args.kind)
        elif args.command == "evaluate":
            outputs, configs = cmd_evaluate(cfg, log)
        elif args.command == "simulate":
            outputs, configs = cmd_simulate(cfg, log)
        else:
            outputs, configs = cmd_lyapunov(cfg, log)
        _record(command, cfg, argv, outputs, configs, started)
    except ConfigError as exc:
        return _fail(exc, 3)
    except (TribodyError, OSError, ValueError, RuntimeError) as exc:
        return _fail(exc, 1)
    return 0


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
