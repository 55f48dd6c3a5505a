"""Command-line entry point: ``epicontrol <command> <config> [--seed S] [--out DIR] [--threads T]``.

Each command writes its outputs into ``--out`` together with
``<command>.manifest.json`` (resolved config, seed, version and SHA-256
digests of inputs and outputs). Wall-clock times go to the separate
``<command>.manifest.log`` so the JSON stays byte-identical between reruns.
A manifest can be passed back as the config to repeat a run.
"""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, fileio
from . import config as cfgmod

log = logging.getLogger("epicontrol")

COMMANDS = ("simulate", "average", "dataset", "train", "validate", "quantities", "control", "mpc", "plot")


class CommandError(RuntimeError):
    pass


def _input_path(cfg, key, base_dir):
    value = cfg["paths"][key]
    if not value:
        return None
    path = value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))
    cfg["paths"][key] = path
    if not os.path.exists(path):
        raise CommandError(f"input file not found: paths.{key}={path}")
    return path


# -- commands ----------------------------------------------------------------
# each returns (inputs, outputs) as lists of absolute paths


def cmd_simulate(cfg, out, base_dir):
    from .ibm import run_batch

    sched_path = _input_path(cfg, "schedule", base_dir)
    schedule = fileio.read_schedule(sched_path) if sched_path else None
    runs = run_batch(cfgmod.degree_params(cfg), cfgmod.ibm_params(cfg), schedule,
                     int(cfg["simulation"]["replicas"]), cfg["seed"], n_jobs=cfg["threads"])
    path = os.path.join(out, "batch.csv")
    rows = ((rep, t, c[0], c[1], c[2], tr.n_nodes) for rep, tr in enumerate(runs)
            for t, c in zip(tr.grid, tr.counts))
    fileio.write_csv(path, ["replica", "t", "s", "i", "r", "n_nodes"], rows)
    return [sched_path] if sched_path else [], [path]


def _read_batch(path):
    from .averaging import TrajectoryBundle

    header, data = fileio.read_csv(path)
    if header != ["replica", "t", "s", "i", "r", "n_nodes"]:
        raise CommandError(f"{path}: not a batch file")
    reps = np.unique(data[:, 0]).astype(int)
    grid = data[data[:, 0] == reps[0], 1]
    s = np.array([data[data[:, 0] == r, 2] / data[data[:, 0] == r, 5] for r in reps])
    i = np.array([data[data[:, 0] == r, 3] / data[data[:, 0] == r, 5] for r in reps])
    return TrajectoryBundle(grid, s, i)


def cmd_average(cfg, out, base_dir):
    from .averaging import align_and_average

    src = _input_path(cfg, "batch", base_dir)
    avg = align_and_average(_read_batch(src))
    traj = os.path.join(out, "average.csv")
    meta = os.path.join(out, "average_meta.json")
    fileio.write_trajectory(traj, avg.grid, avg.s_mean, avg.i_mean)
    fileio.write_json(meta, {"retained": avg.retained, "shifts": avg.shifts,
                             "mean_onset": avg.mean_onset, "degenerate": avg.degenerate})
    return [src], [traj, meta]


def cmd_dataset(cfg, out, base_dir):
    from .dataset import build_dataset

    p, s = cfg["population"], cfg["simulation"]
    data, configs = build_dataset(cfgmod.parameter_ranges(cfg), int(cfg["dataset"]["n_configs"]),
                                  int(s["replicas"]), cfg["seed"], alpha=float(p["alpha_contacts"]),
                                  gamma=float(cfg["epidemic"]["gamma_per_day"]),
                                  horizon=float(s["horizon_days"]), sample_dt=float(s["sample_dt_days"]),
                                  n_max=int(p["n_max_nodes"]), n_jobs=cfg["threads"])
    path = os.path.join(out, "dataset.csv")
    cpath = os.path.join(out, "dataset_configs.csv")
    data.write_csv(path)
    fileio.write_csv(cpath, ["source", "n", "beta", "kappa", "i0"],
                     ((j, c.n, c.beta, c.kappa, c.i0) for j, c in enumerate(configs)))
    return [], [path, cpath]


def _net(cfg):
    from .incidence import IncidenceNet

    t = cfg["training"]
    return IncidenceNet(hidden_layer_sizes=tuple(int(h) for h in t["hidden_layers"]),
                        learning_rate_init=float(t["learning_rate"]), lr_decay=float(t["lr_decay_per_epoch"]),
                        batch_size=int(t["batch_size"]), epochs=int(t["epochs"]),
                        validation_fraction=float(t["validation_fraction"]), random_state=cfg["seed"])


def cmd_train(cfg, out, base_dir):
    from .dataset import Dataset

    src = _input_path(cfg, "dataset", base_dir)
    data = Dataset.read_csv(src)
    if len(data) == 0:
        raise CommandError("dataset is empty after guard filtering")
    model = _net(cfg).fit(data.X, data.y)
    path = os.path.join(out, "model.json")
    lpath = os.path.join(out, "loss_curve.csv")
    model.save(path)
    fileio.write_csv(lpath, ["epoch", "train_mse", "validation_mse"],
                     ((e, a, b) for e, (a, b) in enumerate(zip(model.loss_curve_, model.validation_loss_curve_))))
    return [src], [path, lpath]


def _load_model(cfg, base_dir):
    from .incidence import load_model

    src = _input_path(cfg, "model", base_dir)
    return src, load_model(src)


def cmd_validate(cfg, out, base_dir):
    from .validation import validate_model

    src, model = _load_model(cfg, base_dir)
    p, s = cfg["population"], cfg["simulation"]
    rows = validate_model(model, cfgmod.validation_configs(cfg), int(s["replicas"]), cfg["seed"],
                          alpha=float(p["alpha_contacts"]), gamma=float(cfg["epidemic"]["gamma_per_day"]),
                          horizon=float(s["horizon_days"]), sample_dt=float(s["sample_dt_days"]),
                          n_max=int(p["n_max_nodes"]), dt_int=float(cfg["reduced"]["dt_int_days"]),
                          n_jobs=cfg["threads"])
    path = os.path.join(out, "validation.csv")
    header = list(rows[0])
    fileio.write_csv(path, header, ([r[k] for k in header] for r in rows))
    return [src], [path]


def cmd_quantities(cfg, out, base_dir):
    from .reduced import critical_beta_grid, r_infinity_grid

    src, model = _load_model(cfg, base_dir)
    q, e = cfg["quantities"], cfg["epidemic"]
    gamma = float(e["gamma_per_day"])
    kappas = np.geomspace(float(q["kappa_min"]), float(q["kappa_max"]), int(q["kappa_points"]))
    betas = np.linspace(float(q["beta_min_per_day"]), float(q["beta_max_per_day"]), int(q["beta_points"]))
    n_values = [float(n) for n in q["n_ratios"]]
    bc = critical_beta_grid(model, n_values, kappas, betas, gamma)
    rinf = r_infinity_grid(model, float(q["r_inf_n_ratio"]), betas, kappas, float(e["s0_fraction"]),
                           float(e["i0_fraction"]), gamma, float(cfg["reduced"]["r_inf_horizon_days"]),
                           float(cfg["reduced"]["dt_int_days"]))
    bpath = os.path.join(out, "beta_c.csv")
    rpath = os.path.join(out, "r_inf.csv")
    fileio.write_csv(bpath, ["n", "kappa", "beta_c"],
                     ((n, k, bc[a, b]) for a, n in enumerate(n_values) for b, k in enumerate(kappas)))
    fileio.write_csv(rpath, ["beta", "kappa", "r_inf"],
                     ((be, k, rinf[a, b]) for a, be in enumerate(betas) for b, k in enumerate(kappas)))
    return [src], [bpath, rpath]


def cmd_control(cfg, out, base_dir):
    from . import ocp
    from .mpc import reduced_under_control
    from .ibm import sample_grid

    src, model = _load_model(cfg, base_dir)
    base = cfgmod.ocp_config(cfg)
    sc = cfgmod.scenario(cfg)
    s_c, i_c = ocp.initial_state(model, base, sc.s0, sc.i0)
    config = base.replace(s_c=s_c, i_c=i_c)
    sched_path = _input_path(cfg, "schedule", base_dir)
    init = fileio.read_schedule(sched_path) if sched_path else None
    result = ocp.solve(config, model, initial_schedule=init)
    spath = os.path.join(out, "schedule.csv")
    lpath = os.path.join(out, "ocp_log.csv")
    tpath = os.path.join(out, "controlled.csv")
    fileio.write_schedule(spath, result.schedule)
    fileio.write_iteration_log(lpath, result.costs, result.rhos)
    grid = sample_grid(config.t_horizon, config.dt)
    rm = reduced_under_control(model, sc, result.schedule, grid, config)
    fileio.write_trajectory(tpath, rm.grid, rm.s, rm.i)
    return [src] + ([sched_path] if sched_path else []), [spath, lpath, tpath]


def cmd_mpc(cfg, out, base_dir):
    from .dataset import Dataset
    from .mpc import run_mpc

    src = _input_path(cfg, "dataset", base_dir)
    base = Dataset.read_csv(src)
    tree = os.path.join(out, "mpc")
    fileio.ensure_dir(tree)
    result = run_mpc(cfgmod.scenario(cfg), cfgmod.stopping_criteria(cfg), cfg["seed"], base,
                     cfgmod.mpc_settings(cfg), out_dir=tree)
    summary = os.path.join(out, "mpc_summary.json")
    final = os.path.join(out, "mpc_schedule.csv")
    fileio.write_schedule(final, result.schedule)
    fileio.write_json(summary, {"accepted": result.accepted, "c_0": result.c_0,
                                "iterations": [s.metrics() for s in result.history],
                                "failure": result.failure})
    outputs = [summary, final]
    for root, _, files in sorted(os.walk(tree)):
        outputs += [os.path.join(root, f) for f in sorted(files)]
    return [src], outputs


def cmd_plot(cfg, out, base_dir):
    from .plotting import Series, emit_plot

    value = cfg["plot"]["input"]
    src = value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))
    cfg["plot"]["input"] = src
    if not os.path.exists(src):
        raise CommandError(f"input file not found: plot.input={src}")
    header, data = fileio.read_csv(src)
    kind = cfg["plot"]["kind"]
    columns = ["b", "k"] if kind == "control" else list(cfg["plot"]["columns"])
    missing = [c for c in ["t"] + columns if c not in header]
    if missing:
        raise CommandError(f"{src}: missing columns {missing}")
    t = data[:, header.index("t")]
    series = [Series(c, t, data[:, header.index(c)]) for c in columns]
    svg = emit_plot(series, kind=kind, title=os.path.basename(src),
                    left_label="b" if kind == "control" else "proportion",
                    right_label="k" if kind == "control" else "")
    path = os.path.join(out, "plot.svg")
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
    return [src], [path]


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _rel(path, out):
    return os.path.relpath(path, out).replace(os.sep, "/")


def build_parser():
    parser = argparse.ArgumentParser(prog="epicontrol", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", help="YAML config, or a run manifest (.json) to repeat a run")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory (default: current)")
    parser.add_argument("--threads", type=int, help="cap on worker processes")
    parser.add_argument("--log-level", default="WARNING")
    return parser


def _fail(kind, message, problems=None, code=1):
    payload = {"error": kind, "message": message}
    if problems:
        payload["problems"] = problems
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
        problems = cfgmod.validate(cfg)
        if problems:
            raise cfgmod.ConfigError(problems)
    except cfgmod.ConfigError as exc:
        return _fail("config", "invalid configuration", exc.problems, code=2)
    except (OSError, ValueError) as exc:
        return _fail("config", str(exc), code=2)

    base_dir = os.path.dirname(os.path.abspath(args.config))
    out = os.path.abspath(args.out)
    fileio.ensure_dir(out)
    started = time.time()
    try:
        inputs, outputs = HANDLERS[args.command](cfg, out, base_dir)
    except Exception as exc:  # surfaced as a machine-readable error
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, str(exc))
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": cfg["seed"],
        "version": __version__,
        "inputs": {p: fileio.file_digest(p) for p in inputs},
        "outputs": {_rel(p, out): fileio.file_digest(p) for p in outputs},
    }
    mpath = os.path.join(out, f"{args.command}.manifest.json")
    fileio.write_json(mpath, manifest)
    with open(os.path.join(out, f"{args.command}.manifest.log"), "w") as fh:
        fh.write(f"started {time.strftime('%Y-%m-%dT%H:%M:%S', time.gmtime(started))}Z\n")
        fh.write(f"finished {time.strftime('%Y-%m-%dT%H:%M:%S', time.gmtime())}Z\n")
        fh.write(f"elapsed_seconds {time.time() - started:.3f}\n")
    print(mpath)
    return 0


if __name__ == "__main__":
    sys.exit(main())
