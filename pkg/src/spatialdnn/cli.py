"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every file is
written under ``--out`` through a temporary file and a rename.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from spatialdnn import __version__

log = logging.getLogger("spatialdnn")

SUBCOMMANDS = ("simulate", "benchmark", "rates", "housing", "fit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# value parsers
# --------------------------------------------------------------------------


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _methods(text):
    from spatialdnn.methods import METHODS

    out = [m.strip() for m in str(text).split(",") if m.strip()]
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be a subset of {','.join(METHODS)}")
    return out


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialdnn",
                description="Deep ReLU network regression for spatially dependent data.")
    p.add_argument("--version", action="version", version=f"spatialdnn {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                           parser_class=_Parser)

    def common(sp, threads=False):
        sp.add_argument("--config", help="key = value file; flags given on the command line win")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory (default: current directory)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if threads:
            sp.add_argument("--threads", type=_positive_int, default=None,
                            help="worker processes (default: SPATIALDNN_THREADS or all cores)")

    def design_flags(sp, multi_n):
        sp.add_argument("--design", type=int, choices=(1, 2), default=1)
        sp.add_argument("--domain", choices=("fixed", "expanding"), default="fixed")
        if multi_n:
            sp.add_argument("--n", type=_int_list, default=[100], help="sample size(s), comma separated")
        else:
            sp.add_argument("--n", type=int, default=100)
        sp.add_argument("--D", type=float, default=None, help="domain size (expanding domain only)")
        sp.add_argument("--rho", type=float, default=0.5)
        sp.add_argument("--noise-sd", type=float, default=1.0)
        sp.add_argument("--beta-mode", choices=("per_replicate", "fixed"), default="per_replicate")

    sp = sub.add_parser("simulate", help="generate one simulated data set")
    design_flags(sp, multi_n=False)
    common(sp)

    sp = sub.add_parser("benchmark", help="replicate designs and compare methods")
    design_flags(sp, multi_n=True)
    sp.add_argument("--replicates", type=int, default=20)
    sp.add_argument("--methods", type=_methods, default=["dnn", "nw", "gam"])
    sp.add_argument("--epochs", type=_positive_int, default=None)
    sp.add_argument("--restarts", type=_positive_int, default=None)
    common(sp, threads=True)

    sp = sub.add_parser("rates", help="intrinsic smoothness and the rate schedule")
    sp.add_argument("--beta", type=_float_list, default=None,
                    help="per-layer smoothness; 'inf' allowed (default: additive example)")
    sp.add_argument("--r-tilde", type=_int_list, default=None, help="per-layer active variables")
    sp.add_argument("--d", type=_positive_int, default=5, help="dimension for the additive example")
    sp.add_argument("--beta-h", type=float, default=2.0)
    sp.add_argument("--beta-phi", type=float, default=1.0)
    sp.add_argument("--n-values", type=_int_list, default=[100, 1000, 10_000, 100_000, 1_000_000])
    common(sp)

    sp = sub.add_parser("housing", help="k-fold comparison on the California housing data")
    sp.add_argument("--data", required=False, help="CSV path with the nine housing fields")
    sp.add_argument("--methods", type=_methods, default=["dnn", "nw", "gam"])
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--epochs", type=_positive_int, default=None)
    common(sp, threads=True)

    sp = sub.add_parser("fit", help="train a network on a CSV and write the model JSON")
    sp.add_argument("--data", required=False, help="CSV with a header row")
    sp.add_argument("--response", default=None, help="response column (default: last)")
    sp.add_argument("--depth", type=_positive_int, default=2)
    sp.add_argument("--width", type=_positive_int, default=32)
    sp.add_argument("--epochs", type=_positive_int, default=300)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--l1", type=float, default=1e-4)
    sp.add_argument("--restarts", type=_positive_int, default=3)
    common(sp)
    return p


def _read_config(path):
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    if args.config:
        sp = _subparser(parser, args.command)
        dests = {a.dest for a in sp._actions}
        values = _read_config(args.config)
        unknown = sorted(set(values) - dests - {"config"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        # string defaults are converted by each option's type on reparse
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _threads(args):
    from spatialdnn.simbench import default_threads

    return args.threads if args.threads is not None else default_threads()


def _spec(args, n):
    from spatialdnn.simbench import DesignSpec

    if args.domain == "expanding" and args.D is None:
        raise UsageError("--D is required for the expanding domain")
    D = 1.0 if args.domain == "fixed" else args.D
    if args.domain == "fixed" and args.D not in (None, 1.0):
        raise UsageError("the fixed domain uses D = 1")
    return DesignSpec(args.design, args.domain, n, D, args.rho, args.seed,
                      noise_sd=args.noise_sd, beta_mode=args.beta_mode)


def _write_rows(path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def cmd_simulate(args):
    from spatialdnn.simbench import generate

    data = generate(_spec(args, args.n))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train.csv", data), ("test.csv", data.test)):
        dim = part.locations.dimension
        header = [f"s{k + 1}" for k in range(dim)] + [f"x{j + 1}" for j in range(part.X.shape[1])] \
            + ["f0", "y"]
        rows = ([repr(float(v)) for v in np.concatenate([s, x, [f, y]])]
                for s, x, f, y in zip(part.locations.coords, part.X, part.f0, part.y))
        _write_rows(out / name, header, rows)
    print(f"wrote {data.n} training and {data.test.n} test rows to {out}")
    return 0


def cmd_benchmark(args):
    from spatialdnn.methods import DnnOptions
    from spatialdnn.simbench import run_benchmark

    if args.replicates < 2:
        raise UsageError("--replicates must be at least 2")
    opts = DnnOptions()
    if args.epochs is not None:
        opts = replace(opts, epochs=args.epochs)
    if args.restarts is not None:
        opts = replace(opts, restarts=args.restarts)
    specs = [_spec(args, n) for n in args.n]
    table = run_benchmark(specs, args.methods, args.replicates, args.seed, args.out,
                          threads=_threads(args), dnn_options=opts)
    for r in table.rows:
        print(f"design{r['design']} {r['domain']} n={r['n']} rho={r['rho']:g} {r['method']:>4}: "
              f"MSEE {r['msee_mean']:.4f} ({r['msee_sd']:.4f})  "
              f"MSPE {r['mspe_mean']:.4f} ({r['mspe_sd']:.4f})  failed {r['failed']}")
    return 0


def cmd_rates(args):
    from spatialdnn import theory

    if args.beta is None:
        spec = theory.example1_spec(args.d, args.beta_h, args.beta_phi)
    else:
        if args.r_tilde is None or len(args.r_tilde) != len(args.beta):
            raise UsageError("--beta and --r-tilde need the same number of entries")
        r = list(args.r_tilde) + [1]
        spec = theory.CsSpec(len(args.beta) - 1, r, args.r_tilde, args.beta)
    s = theory.intrinsic(spec)
    if s.degenerate:
        raise UsageError("every layer is infinitely smooth; no finite rate")
    rows = theory.rate_sweep(args.n_values, s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "rates.csv", ("n", "L", "N", "term1", "term2", "term3", "total"),
                ([n, L, N] + [repr(float(v)) for v in rest] for n, L, N, *rest in rows))
    exponent = -2 * s.beta_star / (2 * s.beta_star + s.r_star)
    print(f"beta* = {s.beta_star:g}, r* = {s.r_star}, layer {s.argmin}; rate exponent {exponent:.4f}")
    return 0


def cmd_housing(args):
    from spatialdnn import housing
    from spatialdnn.methods import DnnOptions

    if not args.data:
        raise UsageError("--data is required")
    loaded = housing.load_csv(args.data)
    print(f"loaded {len(loaded.records)} records, dropped {loaded.dropped}")
    data = housing.preprocess(loaded.records)
    opts = DnnOptions() if args.epochs is None else DnnOptions(epochs=args.epochs)
    reports = [housing.kfold_mspe(data, m, args.folds, args.seed, _threads(args), opts)
               for m in args.methods]
    housing.write_outputs(reports, data.coords, data.y, args.out)
    for r in reports:
        print(f"{r.method:>4}: mean MSPE {r.mean:.6g} over {len(r.fold_mspe) - r.failed} folds, "
              f"failed {r.failed}")
    return 0


def cmd_fit(args):
    from spatialdnn import netcore
    from spatialdnn.methods import DnnOptions, HyperGrid, fit_dnn, MinMaxScaler

    if not args.data:
        raise UsageError("--data is required")
    with open(args.data, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise UsageError(f"{args.data} has no data rows")
    header = [h.strip() for h in rows[0]]
    resp = args.response or header[-1]
    if resp not in header:
        raise UsageError(f"response column {resp!r} not in header")
    j = header.index(resp)
    try:
        M = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise UsageError(f"non-numeric value in {args.data}: {exc}")
    y = M[:, j]
    X = np.delete(M, j, axis=1)
    scaler = MinMaxScaler().fit(X)
    opts = DnnOptions(grid=HyperGrid((args.depth,), (args.width,), (args.l1,), (args.lr,)),
                      epochs=args.epochs, restarts=args.restarts)
    predict, res, choice = fit_dnn(scaler.transform(X), y, opts, seed=args.seed)
    doc = json.loads(netcore.params_to_json(res.params))
    mu, sd = float(y.mean()), float(y.std()) or 1.0
    doc["preprocessing"] = {
        "covariates": [h for k, h in enumerate(header) if k != j],
        "response": resp,
        "x_min": scaler.lo.tolist(),
        "x_span": scaler.span.tolist(),
        "y_mean": mu,
        "y_sd": sd,
        "clamp": choice.config.clamp,
    }
    doc["training"] = {"final_mse": res.final_mse, "restart_losses": list(res.restart_losses),
                       "config": asdict(choice.config)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "model.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    print(f"training MSE {np.mean((predict(scaler.transform(X)) - y) ** 2):.6g}; wrote {path}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "benchmark": cmd_benchmark, "rates": cmd_rates,
            "housing": cmd_housing, "fit": cmd_fit}


def _failing_module(exc):
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        parts = Path(frame.filename).parts
        if "spatialdnn" in parts:
            return "spatialdnn." + Path(frame.filename).stem
    return "spatialdnn.cli"


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and --version
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error in {_failing_module(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
