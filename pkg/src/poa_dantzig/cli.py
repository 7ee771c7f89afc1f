"""Command-line interface: ``poa-dantzig {solve,experiment,digits}``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

Every command writes a ``manifest.json`` next to its outputs. Passing that
file back through ``--config`` replays the run; explicit flags still win
over values from the config file.
"""

import argparse
import csv
import datetime
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .dictionary import parse_dictionary_spec, read_matrix
from .errors import (CountError, DegenerateScores, DimensionError, FormatError, NoConvergence,
                     RankError, SingularNormalization)
from .sensing import RNG_NAME

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
OUTPUT_ENV = "POA_DANTZIG_OUTPUT"

logger = logging.getLogger("poa_dantzig")


class UsageError(Exception):
    pass


def _fmt(x):
    return f"{float(x):.16e}"


def _output_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, command, config, outputs):
    manifest = {
        "command": command,
        "config": config,
        "rng": RNG_NAME,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _merge_config(args, defaults):
    """Resolve flags > config file > defaults into one plain dict."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        file_cfg = file_cfg.get("config", file_cfg)
    merged = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_cfg.get(key, default)
        merged[key] = value
    return merged


# -- solve --------------------------------------------------------------------

def _read_vector(path):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    values = []
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                nums = [float(v) for v in row]
            except ValueError:
                raise UsageError(f"{path}: row {row_no} is not numeric") from None
            if len(nums) == 1:
                values.append(complex(nums[0], 0.0))
            elif len(nums) == 2:
                values.append(complex(nums[0], nums[1]))
            else:
                raise UsageError(f"{path}: row {row_no} must hold 're' or 're,im'")
    v = np.array(values, dtype=complex)
    return v.real.copy() if not np.any(v.imag) else v


def _read_sensing(path):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    if path.endswith(".bin"):
        try:
            m = read_matrix(path)
        except DimensionError as exc:
            raise UsageError(str(exc)) from None
    else:
        try:
            m = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None
    if np.iscomplexobj(m):
        raise UsageError(f"{path}: sensing matrix must be real")
    return m


def cmd_solve(args):
    from .solver import SolverConfig, assemble, default_delta, solve

    cfg = _merge_config(args, {
        "X": None, "y": None, "dictionary": None, "delta": None, "sigma": None,
        "alpha": 1.0, "epsilon": 1e-4, "eta": 20, "max_iter": 50_000, "mode": "auto",
        "trace": False,
    })
    for key in ("X", "y", "dictionary"):
        if cfg[key] is None:
            raise UsageError(f"--{key} is required")
    X = _read_sensing(cfg["X"])
    y = _read_vector(cfg["y"])
    try:
        B = parse_dictionary_spec(cfg["dictionary"], X.shape[1])
    except (ValueError, DimensionError) as exc:
        raise UsageError(f"bad --dictionary: {exc}") from None
    if cfg["delta"] is None:
        if cfg["sigma"] is None:
            raise UsageError("give --delta or --sigma")
        cfg["delta"] = default_delta(cfg["sigma"], B.q)
    try:
        solver_cfg = SolverConfig(alpha=cfg["alpha"], epsilon=cfg["epsilon"], eta=cfg["eta"],
                                  max_iter=cfg["max_iter"])
        problem, pre = assemble(X, B, y, cfg["delta"], mode=cfg["mode"])
    except DimensionError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out = _output_dir(args)
    outputs = []
    trace_fh = None
    if cfg["trace"]:
        trace_path = os.path.join(out, "trace.csv")
        trace_fh = open(trace_path, "w", newline="")
        outputs.append(trace_path)
    try:
        sol = solve(problem, pre, solver_cfg, trace=trace_fh)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    sol_path = os.path.join(out, "solution.csv")
    with open(sol_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# manifest", "manifest.json"])
        w.writerow(["# stop_reason", sol.stop_reason.value])
        w.writerow(["# iterations", sol.iterations])
        w.writerow(["# elapsed", _fmt(sol.elapsed)])
        w.writerow(["index", "c_raw_re", "c_raw_im", "c_hat_re", "c_hat_im", "in_support"])
        raw = np.asarray(sol.c_raw, dtype=complex)
        hat = np.asarray(sol.c_hat, dtype=complex)
        in_support = np.zeros(B.q, dtype=int)
        in_support[sol.support] = 1
        for i in range(B.q):
            w.writerow([i, _fmt(raw[i].real), _fmt(raw[i].imag), _fmt(hat[i].real),
                        _fmt(hat[i].imag), in_support[i]])
    outputs.append(sol_path)
    _write_manifest(out, "solve", cfg, outputs)
    print(f"{sol.stop_reason.value} after {sol.iterations} iterations; "
          f"|support| = {sol.support.size}; wrote {sol_path}")
    return EXIT_OK


# -- experiment ---------------------------------------------------------------

def cmd_experiment(args):
    from .experiments import (ExperimentConfig, run_experiment, write_plot_csv,
                              write_summary_csv, write_trials_csv)

    cfg = _merge_config(args, {
        "id": None, "m": 1, "sigma": 0.01, "trials": 50, "seed": 0, "epsilon": None,
        "eta": None, "delta": None, "alpha": None, "max_iter": 50_000, "jobs": 1,
    })
    if cfg["id"] is None:
        raise UsageError("--id is required")
    try:
        exp = ExperimentConfig(
            experiment_id=int(cfg["id"]), m=int(cfg["m"]), sigma=float(cfg["sigma"]),
            trials=int(cfg["trials"]), base_seed=int(cfg["seed"]), epsilon=cfg["epsilon"],
            eta=cfg["eta"], delta=cfg["delta"], alpha=cfg["alpha"], max_iter=int(cfg["max_iter"]))
        exp.solver_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    results, stats = run_experiment(exp, jobs=max(1, int(cfg["jobs"])))
    out = _output_dir(args)
    stem = f"exp{exp.experiment_id}_m{exp.m}_sigma{exp.sigma:g}"
    trials_path = os.path.join(out, f"{stem}_trials.csv")
    summary_path = os.path.join(out, f"{stem}_summary.csv")
    plot_path = os.path.join(out, f"exp{exp.experiment_id}_plot.csv")
    write_trials_csv(trials_path, exp, results)
    write_summary_csv(summary_path, exp, stats)
    write_plot_csv(plot_path, [(exp, stats)])
    _write_manifest(out, "experiment", cfg, [trials_path, summary_path, plot_path])
    print(f"experiment {exp.experiment_id} m={exp.m} sigma={exp.sigma}: "
          f"{stats.count} trials ({stats.flagged} hit max_iter)")
    for name in ("E_beta", "E_phi", "E_psi", "elapsed"):
        print(f"  {name:8s} mean {stats.mean[name]:.4e}  std {stats.std[name]:.4e}")
    return EXIT_OK


# -- digits -------------------------------------------------------------------

def cmd_digits(args):
    from .digits import (DigitSolverSettings, load_usps, run_digit_experiment,
                         synthetic_dataset, write_digit_trials_csv)

    cfg = _merge_config(args, {
        "data": None, "synthetic": False, "k": 30, "trials": 1000, "seed": 0,
        "dump_images": None, "dump_count": 5, "delta": None, "alpha": None,
    })
    k = int(cfg["k"])
    if not 1 <= k <= 256:
        raise UsageError(f"--k must lie in 1..256, got {k}")
    if cfg["data"] is None and not cfg["synthetic"]:
        raise UsageError("give --data PATH or --synthetic")
    if cfg["synthetic"]:
        dataset = synthetic_dataset(int(cfg["seed"]), k=min(k, 30))
    else:
        if not os.path.exists(cfg["data"]):
            raise UsageError(f"no such file: {cfg['data']}")
        try:
            dataset = load_usps(cfg["data"])
        except (FormatError, CountError) as exc:
            raise UsageError(f"{cfg['data']}: {exc}") from None

    settings = DigitSolverSettings(delta=cfg["delta"], alpha=cfg["alpha"])
    dump = cfg["dump_images"]
    summary = run_digit_experiment(
        dataset, int(cfg["trials"]), k=k, seed=int(cfg["seed"]), settings=settings,
        dump_dir=dump, dump_trials=range(int(cfg["dump_count"])) if dump else None)

    out = _output_dir(args)
    trials_path = os.path.join(out, "digits_trials.csv")
    summary_path = os.path.join(out, "digits_summary.csv")
    write_digit_trials_csv(trials_path, summary, header=[["# manifest", "manifest.json"]])
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# manifest", "manifest.json"])
        w.writerow(["trials", "k", "pair_accuracy", "match_or_exceed_rate",
                    "exact_beta_pair_accuracy"])
        w.writerow([summary.count, k, _fmt(summary.pair_accuracy),
                    _fmt(summary.match_or_exceed_rate), _fmt(summary.exact_pair_accuracy)])
    _write_manifest(out, "digits", cfg, [trials_path, summary_path])
    print(f"{summary.count} trials: pair accuracy {summary.pair_accuracy:.3f}, "
          f"match-or-exceed {summary.match_or_exceed_rate:.3f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="poa-dantzig",
        description="Dantzig selector recovery and separation of composite signals.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("--config", help="JSON config or manifest to read defaults from")

    p = sub.add_parser("solve", help="solve one Dantzig problem")
    common(p)
    p.add_argument("--X", dest="X", help="sensing matrix (.csv rows or .bin)")
    p.add_argument("--y", help="observations: CSV with 're' or 're,im' per row")
    p.add_argument("--dictionary", help="block list, e.g. 'identity,dft' or 'haar:5,dct'")
    p.add_argument("--delta", type=float)
    p.add_argument("--sigma", type=float, help="noise level for the default delta")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--eta", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--mode", choices=["auto", "operator", "dense"])
    p.add_argument("--trace", action="store_true", default=None,
                   help="write a per-iteration trace.csv")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run a synthetic separation experiment")
    common(p)
    p.add_argument("--id", type=int, choices=[1, 2, 3])
    p.add_argument("--m", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--eta", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("digits", help="classify and separate composite digits")
    common(p)
    p.add_argument("--data", help="digit CSV: label,v1,...,v256 per row")
    p.add_argument("--synthetic", action="store_true", default=None,
                   help="use random 30-dimensional class subspaces instead of --data")
    p.add_argument("--k", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--dump-images", dest="dump_images", metavar="DIR")
    p.add_argument("--dump-count", dest="dump_count", type=int,
                   help="number of leading trials to dump (default 5)")
    p.set_defaults(func=cmd_digits)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularNormalization, NoConvergence, DegenerateScores, RankError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
