"""Command-line entry point ``stochopt``."""
from __future__ import annotations

import argparse
import sys
import warnings

from . import bench
from .errors import StochoptError

COMMAND_TASK = {"svm-train": "svm", "svm-sparsify": "sparsify", "pca-train": "pca", "bench": None}

EPILOG = """\
CSV output: one file per seed (<name>_seed<s>.csv) and one aggregate file
(<name>_aggregate.csv, mean over seeds at each checkpoint plus n_seeds).
Lines starting with '#' echo the configuration.  Columns:
  svm-train     {svm}
  svm-sparsify  {sparsify}
  pca-train     {pca}
Checkpoints are the powers of two and the final iteration.

Config files are flat 'key = value' lines ('#' comments), using the
field names of ExperimentConfig (task, algorithm, data, n, d, k_param,
split, seeds, out, name, kernel, bandwidth, convention, nu, lam, R,
epochs, T, D, with_bias, eta0, base_algorithm, sparsify_eta, epsilon,
mode, k, K, eta_scale, fixed_eta, sweep).  Flags override the file.
""".format(**bench.CSV_COLUMNS)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochopt", description="Stochastic kernel SVM and "
                                "streaming PCA experiments.", epilog=EPILOG,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMAND_TASK:
        sp = sub.add_parser(name, epilog=EPILOG,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="flat key=value configuration file")
        sp.add_argument("--algorithm")
        sp.add_argument("--k", type=int, help="PCA target dimension")
        sp.add_argument("--K", type=int, help="capped MSG rank limit")
        sp.add_argument("--T", type=int, help="iterations")
        sp.add_argument("--nu", type=float, help="SBP slack fraction")
        sp.add_argument("--lambda", dest="lam", type=float, help="regularization")
        sp.add_argument("--eta-scale", dest="eta_scale", type=float, help="step size scale c")
        sp.add_argument("--seed", dest="seeds", help="seed, list a,b,c or range a:b")
        sp.add_argument("--data", help="LIBSVM path or synthetic:<family>")
        sp.add_argument("--out", help="output directory")
        if name == "bench":
            sp.add_argument("--sweep", help="<field>:v1,v2,...  validation-selected sweep")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    over = {k: v for k, v in vars(args).items() if k not in ("command", "config", "sweep")}
    task = COMMAND_TASK[args.command]
    if task is not None:
        over["task"] = task
    try:
        cfg = bench.load_config(args.config, **over)
        sweep = getattr(args, "sweep", None) or cfg.sweep
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if sweep:
                param, _, vals = sweep.partition(":")
                res = bench.sweep(cfg, param.strip().replace("-", "_"), vals.split(","))
                print(f"selected {param}={res['best']}  ({res['csv']})")
            else:
                res = bench.run_experiment(cfg)
                for seed, err in res["errors"].items():
                    print(f"seed {seed} failed: {err}", file=sys.stderr)
                print(res["aggregate_csv"])
    except (StochoptError, OSError) as e:
        print(f"stochopt: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
