"""Command-line entry point.

Subcommands: gen1d, gen3d, train, sweep, eval, experiment, report. Every
subcommand accepts ``--config FILE`` holding flat ``key = value`` lines whose
keys are flag names; flags given on the command line override the file.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 divergence
budget exceeded.
"""

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .cube_sim import STIFFNESS, SystemParams
from .datagen import (DataGenConfig, MalformedFile, SchemaMismatch, build_dataset,
                      generate_trajectory, load_dataset, save_dataset, stream)
from .evaluation import (AGGREGATE_COLUMNS, METRIC_COLUMNS, OracleModel, RolloutConfig,
                         aggregate_rows, error_decomposition, oracle_loss, penetration_stats,
                         read_rows, rollout_errors, write_rows)
from .experiments import ExperimentConfig, Study1DConfig, make_pool, run_1d_study, run_experiment
from .nn import Model, ModelConfig
from .sim_1d import Config1D, sample_1d_dataset
from .training import (SWEEP_SPACE, TrainHyper, TrainingDiverged, hyperparameter_sweep,
                       train_with_retry, write_sweep_csv)

log = logging.getLogger("stiffcontact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DivergenceBudgetExceeded(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


# ---------------------------------------------------------------- parser


def _add_hyper_flags(p, lr=1e-4, wd=0.0):
    p.add_argument("--architecture", choices=["gru", "mlp"], default="gru")
    p.add_argument("--hidden-size", type=int, default=128)
    p.add_argument("--history", type=int, default=16)
    p.add_argument("--target", choices=["v_next", "delta_v"], default="v_next")
    p.add_argument("--learning-rate", type=float, default=lr)
    p.add_argument("--weight-decay", type=float, default=wd)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")


def build_parser():
    parser = _Parser(prog="stiffcontact", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file of flag defaults")
    common.add_argument("--log-level", default="WARNING")

    p = sub.add_parser("gen1d", parents=[common], help="noisy 1-D velocity pairs as CSV")
    p.add_argument("--k", type=float, default=2500.0)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-var", type=float, default=0.01)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen3d", parents=[common], help="simulate noisy cube trajectories")
    p.add_argument("--stiffness", choices=sorted(STIFFNESS), default="hard")
    p.add_argument("--k", type=float, help="explicit stiffness, overrides --stiffness")
    p.add_argument("--contact-model", choices=["baumgarte", "penalty"], default="baumgarte")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=["train", "eval"], default="train")
    p.add_argument("--noiseless", type=_bool, default=False)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="fit one predictor")
    p.add_argument("--data", required=True, help="directory of trajectory files")
    p.add_argument("--n", type=int, help="use the first N trajectories")
    _add_hyper_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history-csv", help="per-epoch loss history")

    p = sub.add_parser("sweep", parents=[common], help="replicated hyperparameter grid")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int)
    _add_hyper_flags(p)
    p.add_argument("--targets", type=_names, default=tuple(SWEEP_SPACE["target"]))
    p.add_argument("--learning-rates", type=_floats, default=tuple(SWEEP_SPACE["learning_rate"]))
    p.add_argument("--hidden-sizes", type=_ints, default=tuple(SWEEP_SPACE["hidden_size"]))
    p.add_argument("--histories", type=_ints, default=tuple(SWEEP_SPACE["history"]))
    p.add_argument("--weight-decays", type=_floats, default=tuple(SWEEP_SPACE["weight_decay"]))
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-diverged", type=int, help="divergence budget (runs)")
    p.add_argument("--out", required=True, help="per-run CSV")
    p.add_argument("--summary", help="per-setting CSV")

    p = sub.add_parser("eval", parents=[common], help="metrics for a checkpoint or the oracle")
    p.add_argument("--model", help="checkpoint; omit with --oracle")
    p.add_argument("--oracle", type=_bool, default=False)
    p.add_argument("--data", required=True, help="training trajectories of the model")
    p.add_argument("--eval-data", required=True, help="held-out trajectories for rollouts")
    p.add_argument("--n", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--stiffness", help="label for output rows")
    p.add_argument("--seed", type=int, default=0, help="label for output rows")
    p.add_argument("--T-hat", dest="T_hat", type=int, default=50)
    p.add_argument("--start-index", type=int, default=16)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", parents=[common], help="full stiffness x size x seed matrix")
    p.add_argument("--system", choices=["3d", "1d"], default="3d")
    p.add_argument("--stiffness", type=_names, default=("hard", "medium", "soft"))
    p.add_argument("--sizes", type=_ints, default=(50, 100, 500, 5000))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--n-pool", type=int, default=10000)
    p.add_argument("--n-eval", type=int, default=1000)
    _add_hyper_flags(p, lr=None, wd=None)
    p.add_argument("--T-hat", dest="T_hat", type=int, default=50)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--save-data", type=_bool, default=True)
    p.add_argument("--save-models", type=_bool, default=False)
    p.add_argument("--max-diverged", type=int, help="divergence budget (training runs)")
    # 1-D study
    p.add_argument("--stiffnesses-1d", type=_floats, default=(100.0, 2500.0))
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--batch-size-1d", type=int, default=5)
    p.add_argument("--tune", type=_bool, default=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="aggregate CSVs into figure tables")
    p.add_argument("--in", dest="inp", required=True, help="experiment output directory")
    p.add_argument("--out", required=True)
    return parser


def _config_path(argv):
    for i, arg in enumerate(argv):
        if arg == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file")
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def parse_args(argv):
    """Parse ``argv``; values from ``--config`` become flag defaults."""
    parser = build_parser()
    path = _config_path(argv)
    if path is not None:
        command = next((a for a in argv if a in COMMANDS), None)
        if command is None:
            raise UsageError("missing subcommand")
        sub = parser._subparsers._group_actions[0].choices[command]
        actions = {a.dest: a for a in sub._actions}
        values = read_config(path)
        unknown = sorted(set(values) - set(actions) - {"config", "help"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in values.items():
            action = actions[key]
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config {key}: invalid choice {value!r}")
            action.default = value
            action.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------- helpers


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _model_config(args, history=None):
    h = 1 if args.architecture == "mlp" else (history or args.history)
    return ModelConfig(args.architecture, args.hidden_size, h, args.target)


def _train_hyper(args, seed):
    return TrainHyper(learning_rate=args.learning_rate, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, max_epochs=args.max_epochs,
                      patience=args.patience, seed=seed, dtype=args.dtype)


def _system_params(args):
    if args.k is not None:
        return SystemParams(k=args.k, contact_model=args.contact_model)
    return SystemParams.named(args.stiffness, contact_model=args.contact_model)


# ---------------------------------------------------------------- commands


def cmd_gen1d(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    cfg = Config1D(k=args.k, noise_var=args.noise_var)
    pairs = sample_1d_dataset(args.n, cfg, stream(args.seed, 100, int(round(args.k))))
    _write_csv(args.out, ["zdot_t", "zdot_t1"], pairs)
    return EXIT_OK


def cmd_gen3d(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    prm = _system_params(args)
    cfg = DataGenConfig(seed=args.seed)
    gen = partial(generate_trajectory, prm, cfg, split=args.split, noisy=not args.noiseless)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            trajs = list(ex.map(gen, range(args.n), chunksize=max(1, args.n // (4 * args.jobs))))
    else:
        trajs = [gen(i) for i in range(args.n)]
    save_dataset(args.out, trajs)
    print(f"wrote {len(trajs)} trajectories to {args.out}; "
          f"mean max penetration {penetration_stats(trajs):.2f} mm")
    return EXIT_OK


def _load(args):
    trajs = load_dataset(args.data, limit=args.n)
    if args.n is not None and len(trajs) < args.n:
        raise MalformedFile(f"{args.data}: only {len(trajs)} trajectories, {args.n} requested")
    return trajs


def cmd_train(args):
    trajs = _load(args)
    mcfg = _model_config(args)
    data = build_dataset(trajs, mcfg.history, seed=args.split_seed)
    try:
        res, used = train_with_retry(mcfg, data, _train_hyper(args, args.seed))
    except TrainingDiverged as exc:
        raise DivergenceBudgetExceeded(str(exc)) from exc
    res.model.meta.update(seed_used=used, split_seed=args.split_seed, n_trajectories=len(trajs),
                          k=trajs[0].params.k)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    res.model.save(args.out)
    if args.history_csv:
        _write_csv(args.history_csv, ["epoch", "train_loss", "val_loss"],
                   [(i + 1, t, v) for i, (t, v) in enumerate(zip(res.train_history, res.val_history))])
    print(f"epochs {res.epochs_run} (best {res.best_epoch}); train {res.train_loss:.6g} "
          f"val {res.val_loss:.6g} test {res.test_loss:.6g}")
    return EXIT_OK


def cmd_sweep(args):
    trajs = _load(args)
    space = {
        "target": list(args.targets),
        "learning_rate": list(args.learning_rates),
        "hidden_size": list(args.hidden_sizes),
        "history": list(args.histories) if args.architecture == "gru" else [1],
        "weight_decay": list(args.weight_decays),
    }
    if any(len(v) == 0 for v in space.values()):
        raise UsageError("every sweep axis needs at least one value")
    base = _model_config(args, history=space["history"][0])
    result = hyperparameter_sweep(space, base, _train_hyper(args, args.seed),
                                  lambda h: build_dataset(trajs, h, seed=args.split_seed),
                                  replicates=args.replicates)
    write_sweep_csv(args.out, result.rows)
    if args.summary:
        write_sweep_csv(args.summary, result.summary)
    failures = sum(r["status"] != "ok" for r in result.rows)
    print(f"best: {result.best} ({failures} diverged runs)")
    if args.max_diverged is not None and failures > args.max_diverged:
        raise DivergenceBudgetExceeded(f"{failures} diverged runs > budget {args.max_diverged}")
    return EXIT_OK


def cmd_eval(args):
    if not args.oracle and not args.model:
        raise UsageError("--model is required unless --oracle is set")
    trajs = _load(args)
    eval_trajs = load_dataset(args.eval_data)
    prm = trajs[0].params
    stiffness = args.stiffness or _stiffness_label(prm.k)
    rc = RolloutConfig(T_hat=args.T_hat, start_index=args.start_index, dt=prm.dt)
    if args.oracle:
        model = OracleModel(prm)
        split_seed = args.split_seed or 0
        arch = "oracle"
    else:
        model = Model.load(args.model)
        split_seed = args.split_seed if args.split_seed is not None else model.meta.get("split_seed", 0)
        arch = model.cfg.architecture
    data = build_dataset(trajs, model.history, seed=split_seed)
    dec = error_decomposition(model, prm, data, oracle_train=oracle_loss(prm, data, "train"))
    errs, diverged = rollout_errors(model, eval_trajs, rc)
    values = {
        "oracle_loss": dec.oracle_train_loss,
        "train_loss": dec.model_train_loss,
        "test_loss": dec.model_test_loss,
        "training_gap": dec.training_gap,
        "generalization_gap": dec.generalization_gap,
        "e_pos": float(errs[:, 0].mean()) if len(errs) else float("nan"),
        "e_rot": float(errs[:, 1].mean()) if len(errs) else float("nan"),
        "diverged": float(diverged),
    }
    base = {"stiffness": stiffness, "N": len(trajs), "architecture": arch, "seed": args.seed}
    write_rows(args.out, [{**base, "metric": k, "value": v} for k, v in values.items()], METRIC_COLUMNS)
    for k, v in values.items():
        print(f"{k} {v:.6g}")
    return EXIT_OK


def _stiffness_label(k):
    for name, value in STIFFNESS.items():
        if value == k:
            return name
    return f"k{k:g}"


def cmd_experiment(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.system == "1d":
        return _experiment_1d(args, out)
    unknown = [s for s in args.stiffness if s not in STIFFNESS]
    if unknown:
        raise UsageError(f"unknown stiffness settings: {', '.join(unknown)}")
    if max(args.sizes) > args.n_pool:
        raise UsageError("dataset sizes cannot exceed --n-pool")
    hyper = dict(ExperimentConfig().hyper)
    for name in args.stiffness:
        lr, wd = hyper[name]
        hyper[name] = (args.learning_rate if args.learning_rate is not None else lr,
                       args.weight_decay if args.weight_decay is not None else wd)
    ecfg = ExperimentConfig(
        stiffnesses=tuple(args.stiffness), sizes=tuple(args.sizes), seeds=args.seeds,
        n_pool=args.n_pool, n_eval=args.n_eval, architecture=args.architecture,
        hidden_size=args.hidden_size, history=args.history, target=args.target,
        batch_size=args.batch_size, max_epochs=args.max_epochs, patience=args.patience,
        dtype=args.dtype, hyper=hyper, data_seed=args.data_seed,
        rollout=RolloutConfig(T_hat=args.T_hat),
    )
    pools = {}
    for name in ecfg.stiffnesses:
        pools[name] = make_pool(name, ecfg)
        if args.save_data:
            save_dataset(out / "data" / name / "train", pools[name][1])
            save_dataset(out / "data" / name / "eval", pools[name][2])

    def progress(stiffness, n, seed, rows):
        summary = {r["metric"]: r["value"] for r in rows}
        log.info("%s N=%d seed=%d %s", stiffness, n, seed, summary)

    model_dir = None
    if args.save_models:
        model_dir = out / "models"
        model_dir.mkdir(exist_ok=True)
    rows = run_experiment(ecfg, pools, progress, jobs=args.jobs, model_dir=model_dir)
    write_rows(out / "metrics.csv", rows, METRIC_COLUMNS)
    failures = sum(r["metric"] == "diverged_training" for r in rows)
    print(f"wrote {len(rows)} metric rows to {out / 'metrics.csv'} ({failures} diverged trainings)")
    if args.max_diverged is not None and failures > args.max_diverged:
        raise DivergenceBudgetExceeded(f"{failures} diverged trainings > budget {args.max_diverged}")
    return EXIT_OK


def _experiment_1d(args, out):
    cfg = Study1DConfig(stiffnesses=tuple(args.stiffnesses_1d), replicates=args.replicates,
                        n_train=args.n_train, n_val=args.n_train, batch_size=args.batch_size_1d)
    results = run_1d_study(cfg, tune=args.tune)
    summary, curves = [], []
    for k, res in results.items():
        summary.append((k, res["learning_rate"], res["weight_decay"], res["train_loss"],
                        res["gt_mse"], res["variance"]))
        for z, t, m, s in zip(res["grid"], res["truth"], res["mean_prediction"], res["std_prediction"]):
            curves.append((k, z, t, m, s))
    _write_csv(out / "study1d.csv",
               ["k", "learning_rate", "weight_decay", "train_loss", "gt_mse", "variance"], summary)
    _write_csv(out / "study1d_curves.csv", ["k", "zdot_t", "truth", "mean", "std"], curves)
    for row in summary:
        print("k={:g} lr={:g} wd={:g} train {:.4g} gt_mse {:.4g} variance {:.4g}".format(*row))
    return EXIT_OK


FIG3_PANELS = {
    "fig3a_training_gap.csv": "training_gap",
    "fig3b_generalization_gap.csv": "generalization_gap",
    "fig3c_position_error.csv": "e_pos",
    "fig3d_rotation_error.csv": "e_rot",
}


def cmd_report(args):
    inp, out = Path(args.inp), Path(args.out)
    metrics, study = inp / "metrics.csv", inp / "study1d.csv"
    if not metrics.exists() and not study.exists():
        raise FileNotFoundError(f"{inp}: neither metrics.csv nor study1d.csv found")
    out.mkdir(parents=True, exist_ok=True)
    if metrics.exists():
        _report_3d(read_rows(metrics), out)
    if study.exists():
        _report_1d(inp, out)
    print(f"report written to {out}")
    return EXIT_OK


def _report_3d(rows, out):
    for row in rows:
        if set(METRIC_COLUMNS) - set(row):
            raise MalformedFile("metrics.csv is missing required columns")
    agg = aggregate_rows(rows)
    write_rows(out / "aggregate.csv", agg, AGGREGATE_COLUMNS)
    for name, metric in FIG3_PANELS.items():
        panel = [r for r in agg if r["metric"] == metric and r["architecture"] != "oracle"]
        write_rows(out / name, panel, AGGREGATE_COLUMNS)
    oracle = [r for r in agg if r["architecture"] == "oracle"]
    write_rows(out / "oracle.csv", oracle, AGGREGATE_COLUMNS)

    # one row per trained replicate, metrics as columns
    wide = {}
    names = []
    for r in rows:
        if r["architecture"] == "oracle":
            continue
        key = (r["stiffness"], int(r["N"]), r["architecture"], int(r["seed"]))
        wide.setdefault(key, {})[r["metric"]] = r["value"]
        if r["metric"] not in names:
            names.append(r["metric"])
    header = ["stiffness", "N", "architecture", "seed"] + names
    _write_csv(out / "replicates.csv", header,
               [list(k) + [v.get(m, "") for m in names] for k, v in sorted(wide.items())])


def _report_1d(inp, out):
    curves = read_rows(inp / "study1d_curves.csv")
    by_k = {}
    for r in curves:
        by_k.setdefault(float(r["k"]), []).append(r)
    for k, rs in sorted(by_k.items()):
        _write_csv(out / f"fig1b_k{k:g}.csv", ["zdot_t", "truth", "mean", "std"],
                   [(r["zdot_t"], r["truth"], r["mean"], r["std"]) for r in rs])
    summary = read_rows(inp / "study1d.csv")
    _write_csv(out / "fig1_summary.csv", list(summary[0]), [list(r.values()) for r in summary])


COMMANDS = {
    "gen1d": cmd_gen1d,
    "gen3d": cmd_gen3d,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"stiffcontact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=str(args.log_level).upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"stiffcontact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaMismatch, MalformedFile, FileNotFoundError) as exc:
        print(f"stiffcontact: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceBudgetExceeded as exc:
        print(f"stiffcontact: divergence budget exceeded: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
