"""Experiment runner: single runs, architecture/data sweeps and the self-check suite.

    pisal run --config cfg.json [--seed N] [--out DIR] [--emit-grid] [--KEY VALUE ...]
    pisal sweep --config cfg.json --layers 1,2 --neurons 70,90 [--nu 1000] [--nf 2000]
    pisal check

A config is one flat JSON object.  Besides ``problem``, ``method``, ``out``
and ``emit_grid`` it may hold any ``TrainConfig`` field; every key can also be
given on the command line as ``--key value`` and the flag wins.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path


from .checks import run_checks as _run_check_suite
from .errors import ConfigurationError, NumericError, PisalError, TrainingError
from .metrics import evaluate_model, field_error, grid_points, interface_grid, loss_error_correlation
from .physics import PROBLEMS, get_problem
from .sal import PROBLEM_DEFAULTS, TrainConfig, pinn_baseline_train, sal_train, save_bundle, write_log_csv

METHODS = ("pisal", "pinn-baseline")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
RUN_KEYS = ("problem", "method", "out", "emit_grid")
SWEEP_HEADER = (
    "cell,seed,layers,neurons,n_u,n_f,status,lambda1,lambda2,pe_lambda1,pe_lambda2,"
    "outer_iterations,mse_m,error"
).split(",")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "stefan"
    method: str = "pisal"
    out: str = "runs/default"
    emit_grid: bool = False
    train: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(RUN_KEYS) - set(TRAIN_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        run = {k: doc[k] for k in RUN_KEYS if k in doc}
        train = {k: doc[k] for k in TRAIN_KEYS if k in doc and doc[k] is not None}
        return cls(**run, train=train)

    def to_dict(self) -> dict:
        return {"problem": self.problem, "method": self.method, "out": self.out,
                "emit_grid": self.emit_grid, **self.train}

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {list(METHODS)}")
        self.train_config()
        out = Path(self.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
        if not os.access(out, os.W_OK):
            raise ConfigurationError(f"output directory {out} is not writable")
        return self

    def train_config(self) -> TrainConfig:
        doc = {**PROBLEM_DEFAULTS.get(self.problem, {}), **self.train}
        try:
            cfg = TrainConfig.from_json(doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        return cfg.validate()


# --------------------------------------------------------------------- artifacts


def _write_predictions(path, problem, model):
    Z = grid_points(problem)
    truth, regions = problem.exact(Z)
    pred = model.predict(problem, Z, regions)
    header = [*problem.input_names, *(f"pred_{n}" for n in problem.field_names),
              *(f"true_{n}" for n in problem.field_names), "region"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for z, p, u, r in zip(Z, pred, truth, regions):
            w.writerow([*(f"{v:.17g}" for v in (*z, *p, *u)), int(r)])


def _write_interface(path, problem, model):
    s = interface_grid(problem)
    est, true = model.interface(problem, s), problem.true_interface(s)
    coord = problem.input_names[problem.interface_input_axis]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([coord, "estimate", "truth"])
        for row in zip(s, est, true):
            w.writerow([f"{v:.17g}" for v in row])


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, quiet: bool = False) -> int:
    """Train, evaluate and write artifacts to ``config.out``; returns the exit status.

    Raises ``ConfigurationError`` for a bad config.  Training failures return 1
    after writing whatever log and checkpoint exist at that point.
    """
    config = config.validate()
    out = Path(config.out)
    problem = get_problem(config.problem)
    cfg = config.train_config()
    train = sal_train if config.method == "pisal" else pinn_baseline_train
    say = (lambda *a: None) if quiet else (lambda *a: print(*a, flush=True))

    trace = []

    def progress(rec, model):
        trace.append((rec.k, rec.mse_m, field_error(model, problem)))
        say(f"[{config.problem}/{config.method}] k={rec.k:3d}  loss={rec.mse_m:.3e}  "
            f"lambda=({rec.lambda1:.6g}, {rec.lambda2:.6g})")

    t0 = time.perf_counter()
    try:
        result = train(problem, cfg, callback=progress)
    except (TrainingError, NumericError) as exc:
        if exc.log:
            write_log_csv(out / "training_log.csv", exc.log)
        if exc.model is not None:
            save_bundle(out / "checkpoint.json", exc.model, cfg)
        _write_json(out / "timing.json", {"train_seconds": time.perf_counter() - t0, "status": "failed"})
        print(f"training failed: {exc}", file=sys.stderr)
        return 1
    seconds = time.perf_counter() - t0

    write_log_csv(out / "training_log.csv", result.log)
    with open(out / "error_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mse_m", "field_rmse"])
        for k, loss, err in trace:
            w.writerow([k, f"{loss:.17g}", f"{err:.17g}"])
    save_bundle(out / "checkpoint.json", result.model, cfg, result.rngs)
    report = evaluate_model(result.model, problem)
    doc = report.to_json()
    doc.update(method=config.method, outer_iterations=result.log[-1].k, mse_m=result.log[-1].mse_m,
               loss_error_rank_correlation=loss_error_correlation([t[1] for t in trace], [t[2] for t in trace]),
               config={"problem": config.problem, "method": config.method, **cfg.to_json()})
    _write_json(out / "metrics.json", doc)
    if config.emit_grid:
        _write_predictions(out / "predictions.csv", problem, result.model)
        if hasattr(result.model, "netI"):
            _write_interface(out / "interface.csv", problem, result.model)
    _write_json(out / "timing.json", {"train_seconds": seconds, "status": "ok"})
    say(f"PE lambda1 = {report.pe_lambda1:.4g}%  PE lambda2 = {report.pe_lambda2:.4g}%  -> {out}")
    return 0


# ------------------------------------------------------------------------ sweep


def sweep_cells(base: ExperimentConfig, layers, neurons, n_u=None, n_f=None, seeds=None):
    """The grid in row order: layers, then neurons, then N_u, then N_f, then seed."""
    n_u = n_u or [base.train.get("n_u")]
    n_f = n_f or [base.train.get("n_f")]
    seeds = seeds or [base.train.get("seed", 0)]
    if not (layers and neurons):
        raise ConfigurationError("sweep needs at least one layer count and one neuron count")
    cells = []
    for i, (L, N, nu, nf, seed) in enumerate(itertools.product(layers, neurons, n_u, n_f, seeds)):
        if int(L) < 1 or int(N) < 1:
            raise ConfigurationError("layer and neuron counts must be positive")
        train = dict(base.train, seed=int(seed), net1_hidden=[int(N)] * int(L),
                     net2_hidden=[int(N)] * int(L))
        if nu is not None:
            train["n_u"] = int(nu)
        if nf is not None:
            train["n_f"] = int(nf)
        name = f"cell{i:03d}_L{L}_N{N}" + (f"_nu{nu}" if nu else "") + (f"_nf{nf}" if nf else "") + f"_s{seed}"
        cfg = ExperimentConfig(base.problem, base.method, str(Path(base.out) / name), base.emit_grid, train)
        cells.append((i, cfg))
    return cells


def _run_cell(item):
    i, cfg = item
    t0 = time.perf_counter()
    row = {"cell": i, "seed": cfg.train["seed"], "layers": len(cfg.train["net1_hidden"]),
           "neurons": cfg.train["net1_hidden"][0], "n_u": cfg.train.get("n_u", ""),
           "n_f": cfg.train.get("n_f", ""), "error": ""}
    try:
        status = run_experiment(cfg, quiet=True)
        if status == 0:
            doc = json.loads((Path(cfg.out) / "metrics.json").read_text())
            tc = doc["config"]
            row.update(status="ok", n_u=tc.get("n_u", row["n_u"]), n_f=tc.get("n_f", row["n_f"]),
                       lambda1=doc["lambdas"]["lambda1"], lambda2=doc["lambdas"]["lambda2"],
                       pe_lambda1=doc["pe_lambda1"], pe_lambda2=doc["pe_lambda2"],
                       outer_iterations=doc["outer_iterations"], mse_m=doc["mse_m"])
        else:
            row.update(status="failed", error="training error")
    except PisalError as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row, time.perf_counter() - t0


def _cell_text(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def run_sweep(base: ExperimentConfig, layers, neurons, n_u=None, n_f=None, seeds=None,
              workers: int = 1, quiet: bool = False) -> list[dict]:
    """Run every cell and write ``sweep_results.csv`` (grid order) and ``sweep_timing.csv``.

    A failing cell is recorded with ``status=failed`` and the sweep continues.
    """
    if base.problem not in PROBLEMS or base.method not in METHODS:
        base.validate()
    cells = sweep_cells(base, layers, neurons, n_u, n_f, seeds)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_cell, cells))
    else:
        done = []
        for item in cells:
            done.append(_run_cell(item))
            if not quiet:
                row = done[-1][0]
                print(f"cell {row['cell']}: L={row['layers']} N={row['neurons']} {row['status']} "
                      f"PE=({_cell_text(row.get('pe_lambda1'))}, {_cell_text(row.get('pe_lambda2'))})",
                      flush=True)
    rows = [r for r, _ in done]
    with open(out / "sweep_results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([_cell_text(r.get(k)) for k in SWEEP_HEADER])
    with open(out / "sweep_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "runtime_seconds"])
        for r, secs in done:
            w.writerow([r["cell"], f"{secs:.3f}"])
    return rows


# ---------------------------------------------------------------------- parsing


def _value(text):
    """JSON when it parses, a comma list of ints for layer sizes, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        try:
            return [int(v) for v in text.split(",")]
        except ValueError:
            pass
    return text


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--problem")
    p.add_argument("--method")
    p.add_argument("--emit-grid", "--emit_grid", dest="emit_grid", action="store_true", default=None,
                   help="also write predictions.csv and interface.csv")
    for key in TRAIN_KEYS:
        p.add_argument(f"--{key}", dest=key, type=_value, default=None)


def build_parser():
    parser = _Parser(prog="pisal", description="Two-medium inverse problems: train, sweep, check.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="train one model and write artifacts")
    _add_config_flags(run)
    sweep = sub.add_parser("sweep", help="grid over depth, width and data sizes")
    _add_config_flags(sweep)
    sweep.add_argument("--layers", type=_int_list, required=True)
    sweep.add_argument("--neurons", type=_int_list, required=True)
    sweep.add_argument("--nu", type=_int_list, default=None, help="N_u values")
    sweep.add_argument("--nf", type=_int_list, default=None, help="N_f values")
    sweep.add_argument("--seeds", type=_int_list, default=None)
    sweep.add_argument("--workers", type=int, default=1)
    sub.add_parser("check", help="run the self-check suite")
    return parser


def load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
    for key in (*RUN_KEYS, *TRAIN_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    return ExperimentConfig.from_dict(doc)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "check":
            results = _run_check_suite()
            failed = [r for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} checks passed")
            return 1 if failed else 0
        config = load_config(args)
        if args.command == "run":
            return run_experiment(config)
        rows = run_sweep(config, args.layers, args.neurons, args.nu, args.nf, args.seeds, args.workers)
        return 0 if all(r["status"] == "ok" for r in rows) else 1
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
