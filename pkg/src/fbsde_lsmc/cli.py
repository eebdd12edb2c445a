"""Command line entry point: ``fbsde-lsmc solve`` and ``fbsde-lsmc plot-data``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, load_preset, preset_names
from .dynamics import riccati_oracle
from .exceptions import ConfigError, FBSDEError
from .policy import LearningAborted, learn, stats_csv
from .sampling import trajectories_csv

logger = logging.getLogger("fbsde_lsmc")


def write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(config: ExperimentConfig, validate_riccati=False, stream=None) -> int:
    """Execute the learning loop for ``config`` and write the artifacts; returns an exit status."""
    stream = stream or sys.stdout
    out = Path(config.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    model, cost, solver = config.build()
    write_atomic(
        out / "config_echo.ini",
        "# stats rows: noise-free rollouts of each iteration's nominal policy (row 0: zero control)\n" + config.to_ini(),
    )

    def on_iteration(j, policy, sample_batch, eval_batch):
        if config.output["dump_trajectories"]:
            write_atomic(out / f"trajectories_iter{j}.csv", trajectories_csv(eval_batch))

    status = 0
    try:
        policy, stats = learn(solver, model, cost, callback=on_iteration)
    except LearningAborted as exc:
        print(f"error: learn: {exc}", file=sys.stderr)
        policy, stats, status = None, exc.stats, 1
    write_atomic(out / "stats.csv", stats_csv(stats))
    if policy is None:
        return status

    if config.output["dump_value"]:
        write_atomic(out / "value.csv", policy.value.to_text())
    last = stats[-1]
    print(f"final iteration {last.iteration}: cost {last.cost_mean:.6g} +- {last.cost_std:.3g}, "
          f"v(t0, x0) ~ {last.value_estimate:.6g}", file=stream)

    if validate_riccati:
        if model.name != "lq":
            print("error: --validate-riccati needs the lq model", file=sys.stderr)
            return 2
        ric = riccati_oracle(model, solver.grid)
        exact = ric.value(0, solver.x0)
        est = last.value_estimate
        rel = abs(est - exact) / abs(exact)
        print(f"riccati check: solver {est:.8g}  oracle {exact:.8g}  relative error {rel:.3e}", file=stream)
    return status


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def plot_data(out_dir) -> list:
    """Write ``cost_band.csv`` and ``traj_mean_iter{j}.csv`` next to ``stats.csv``."""
    out = Path(out_dir)
    stats_path = out / "stats.csv"
    if not stats_path.is_file():
        raise ConfigError(f"{stats_path} not found; run `solve` with --out {out} first")
    header, stats = _read_csv(stats_path)
    iters = stats[:, 0].astype(int)
    missing = [j for j in iters if not (out / f"trajectories_iter{j}.csv").is_file()]
    if missing:
        raise ConfigError(f"trajectory dumps missing for iterations {missing}; "
                          "rerun `solve` with --dump-trajectories")
    written = []
    mean, std = stats[:, 1], stats[:, 2]
    band = "iter,mean,lower,upper\n" + "".join(
        f"{j},{m!r},{m - 3 * s!r},{m + 3 * s!r}\n" for j, m, s in zip(iters, mean.tolist(), std.tolist())
    )
    write_atomic(out / "cost_band.csv", band)
    written.append(out / "cost_band.csv")
    for j in iters:
        th, data = _read_csv(out / f"trajectories_iter{j}.csv")
        n = len(th) - 3
        steps = data[:, 1].astype(int)
        N1 = steps.max() + 1
        t = data[:N1, 2]
        states = data[:, 3:].reshape(-1, N1, n)
        means = states.mean(axis=0)
        lines = ["t," + ",".join(f"x{k}" for k in range(n))]
        lines += [",".join(repr(float(v)) for v in (ti, *row)) for ti, row in zip(t, means)]
        path = out / f"traj_mean_iter{j}.csv"
        write_atomic(path, "\n".join(lines) + "\n")
        written.append(path)
    return written


def build_parser():
    ap = argparse.ArgumentParser(prog="fbsde-lsmc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="learn a feedback policy for a configured problem")
    s.add_argument("config", nargs="?", help="INI config file")
    s.add_argument("--model", choices=preset_names(), help="use the shipped preset for this model")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory")
    s.add_argument("--dump-trajectories", action="store_true")
    s.add_argument("--dump-value", action="store_true")
    s.add_argument("--validate-riccati", action="store_true",
                   help="compare v(t0, x0) with the Riccati solution (lq model only)")

    p = sub.add_parser("plot-data", help="derive per-figure CSV files from a solve output directory")
    p.add_argument("out", help="output directory of a previous solve")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot-data":
            for path in plot_data(args.out):
                print(path)
            return 0
        if (args.config is None) == (args.model is None):
            raise ConfigError("give exactly one of a config file or --model")
        config = load_config(args.config) if args.config else load_preset(args.model)
        if args.seed is not None:
            config.solver["seed"] = args.seed
        if args.out:
            config.output["dir"] = args.out
        if args.dump_trajectories:
            config.output["dump_trajectories"] = True
        if args.dump_value:
            config.output["dump_value"] = True
        return run(config, validate_riccati=args.validate_riccati)
    except FBSDEError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
