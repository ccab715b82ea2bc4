"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
failure.  Item indices on the command line are 1-based.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, analysis, io, posterior
from .likelihood import EnumerationTooLarge
from .mcmc import ChainConfig
from .model import PreconditionError
from .sampler import generate_dataset
from .trainer import FitConfig, NumericalError, fit

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("hazard_ctmc")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _count(text):
    # accepts 1e6 style counts
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a count, got {text!r}") from exc
    if value < 1 or value != int(value):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _zero_based(items, n, what):
    out = [i - 1 for i in items]
    if any(not 0 <= i < n for i in out):
        raise UsageError(f"{what} indices must lie in 1..{n}, got {items}")
    return out


def _csv_path(path):
    return os.path.splitext(path)[0] + ".csv"


class _Run:
    """Collects outputs of one command and writes their manifests."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.start = time.perf_counter()
        self.inputs = []
        self.outputs = []

    def json(self, path, obj):
        io.write_json(path, obj)
        self.outputs.append(path)

    def csv(self, path, rows, columns):
        io.write_csv(path, rows, columns)
        self.outputs.append(path)

    def text(self, path, text):
        io.write_text(path, text)
        self.outputs.append(path)

    def finish(self):
        config = {
            k: v for k, v in vars(self.args).items()
            if k not in ("func", "threads", "quiet") and not callable(v)
        }
        wall = time.perf_counter() - self.start
        for path in self.outputs:
            io.write_manifest(path, self.command, config, getattr(self.args, "seed", None),
                              self.inputs, self.outputs, wall)
        return 0


# -- simulate / fit / family ---------------------------------------------------------

def cmd_simulate(args):
    run = _Run(args, "simulate")
    model = io.read_model(args.model)
    run.inputs.append(args.model)
    data = generate_dataset(model, args.samples, args.with_times, args.seed, args.threads)
    io.write_dataset(args.out, data, args.format)
    run.outputs.append(args.out)
    return run.finish()


def fit_config_from_args(args):
    return FitConfig(
        step_size=args.step,
        reg_weight=args.reg_weight,
        epochs=args.epochs,
        diag_pretrain_epochs=args.pretrain_epochs,
        init_offdiag_halfwidth=args.init_halfwidth,
        mcmc=ChainConfig(args.mcmc_samples, args.burn_in, args.proposal),
        seed=args.seed,
        mode=args.mode.replace("-", "_"),
        gradient=args.gradient,
        enum_cap=args.enum_cap,
        trace=args.trace,
        threads=args.threads,
    )


def cmd_fit(args):
    run = _Run(args, "fit")
    data = io.read_dataset(args.data)
    run.inputs.append(args.data)
    config = fit_config_from_args(args)
    if config.mode == "given_times" and data.times is None:
        raise io.DataError(f"{args.data} has no observation times; required by --mode given-times")
    report = fit(data, config)
    io.write_fit_report(args.out, report)
    run.outputs.append(args.out)
    model_out = args.model_out or os.path.splitext(args.out)[0] + ".model.json"
    io.write_model(model_out, report.theta_hat)
    run.outputs.append(model_out)
    return run.finish()


def cmd_family(args):
    run = _Run(args, "family")
    try:
        model = analysis.prop1_family(args.alpha, args.s)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from exc
    io.write_model(args.out, model)
    run.outputs.append(args.out)
    return run.finish()


# -- eval ------------------------------------------------------------------------------

def cmd_eval_kl(args):
    run = _Run(args, "eval kl")
    fitted = io.read_model(args.fit)
    truth = io.read_model(args.truth)
    run.inputs += [args.fit, args.truth]
    restrict = list(range(1, truth.n + 1)) if args.restrict is None else args.restrict
    restrict = _zero_based(restrict, fitted.n, "--restrict")
    report = analysis.kl_recovery(fitted, truth, restrict, args.draws, args.seed, args.threads)
    out = io.as_plain(report)
    out["restricted_items"] = [i + 1 for i in report.restricted_items]
    run.json(args.out, out)
    codes, counts = analysis.restricted_histogram(fitted, restrict, args.draws, args.seed,
                                                  args.threads)
    from .likelihood import marginal_sequence_prob

    rows = []
    for c, k in zip(codes, counts):
        seq = analysis.decode_sequence(c, truth.n + 1)
        rows.append({
            "sequence": " ".join(str(i + 1) for i in seq),
            "p_hat": k / counts.sum(),
            "p_true": marginal_sequence_prob(truth, seq),
        })
    run.csv(_csv_path(args.out), rows, ["sequence", "p_hat", "p_true"])
    return run.finish()


def cmd_eval_order(args):
    run = _Run(args, "eval order")
    model = io.read_model(args.model)
    run.inputs.append(args.model)
    if len(args.pair) != 2 or args.pair[0] == args.pair[1]:
        raise UsageError("--pair needs two distinct items, e.g. --pair 3,7")
    a, b = _zero_based(args.pair, model.n, "--pair")
    report = analysis.order_proportion(model, a, b, args.draws, args.seed, args.threads)
    out = io.as_plain(report)
    out["item_a"], out["item_b"] = args.pair
    run.json(args.out, out)
    run.csv(_csv_path(args.out), [out], ["item_a", "item_b", "prop_a_first", "stderr",
                                        "num_cooccurrences", "num_draws"])
    return run.finish()


def cmd_eval_stability(args):
    run = _Run(args, "eval stability")
    data = io.read_dataset(args.data)
    run.inputs.append(args.data)
    config = fit_config_from_args(args)
    seeds = args.seeds
    pairs = None
    if args.pairs is not None:
        flat = _zero_based(args.pairs, data.n, "--pairs")
        if len(flat) % 2:
            raise UsageError("--pairs needs an even number of indices")
        pairs = list(zip(flat[::2], flat[1::2]))
    report = analysis.stability_report(data, config, args.inits, args.seed, seeds, pairs,
                                       args.order_draws, args.threads)
    out = io.as_plain(report)
    out["pairs"] = [[a + 1, b + 1] for a, b in report["pairs"]]
    run.json(args.out, out)
    rows = [
        {"i": i + 1, "j": j + 1, "min": report["min"][i, j], "max": report["max"][i, j],
         "range": report["range"][i, j]}
        for i in range(data.n) for j in range(data.n)
    ]
    run.csv(_csv_path(args.out), rows, ["i", "j", "min", "max", "range"])
    return run.finish()


def cmd_eval_time_posterior(args):
    run = _Run(args, "eval time-posterior")
    model = io.read_model(args.model)
    data = io.read_dataset(args.data)
    run.inputs += [args.model, args.data]
    if data.n != model.n:
        raise io.DataError(f"dataset has n={data.n} but the model has n={model.n}")
    t_grid = posterior.default_time_grid(args.t_max, args.grid_points)
    indices = range(len(data)) if args.samples is None else _zero_based(
        args.samples, len(data), "--samples")
    summaries, rows = [], []
    for d in indices:
        t, dens = posterior.block_posterior_density(model, data.samples[d], t_grid, args.enum_cap)
        mean, var = posterior.grid_moments(t, dens)
        entry = {"sample": d + 1, "mean": mean, "variance": var}
        if data.times is not None:
            entry["t_obs"] = float(data.times[d])
        summaries.append(entry)
        rows += [{"sample": d + 1, "t": x, "density": y} for x, y in zip(t, dens)]
    run.json(args.out, {"summaries": summaries})
    run.csv(_csv_path(args.out), rows, ["sample", "t", "density"])
    return run.finish()


def cmd_eval_variance_sweep(args):
    run = _Run(args, "eval variance-sweep")
    if args.gamma is not None:
        blocks = posterior.paired_blocks(args.gamma, args.target_freq)
        rows = posterior.block_variance_sweep(blocks, args.m, args.replicates, args.seed)
    elif args.uniform is not None:
        if len(args.uniform) != 2:
            raise UsageError("--uniform needs two values, e.g. --uniform=-3,-1")
        blocks = posterior.uniform_iid_blocks(*args.uniform)
        rows = posterior.block_variance_sweep(blocks, args.m, args.replicates, args.seed)
    else:
        rows = posterior.iid_variance_sweep(args.theta_plus, args.m, args.replicates, args.seed)
    slope = posterior.sweep_slope(rows) if len(rows) > 1 else None
    run.json(args.out, {"rows": rows, "slope": slope})
    run.csv(_csv_path(args.out), rows, ["m", "mean_variance", "stderr", "mean_abs_error"])
    return run.finish()


def cmd_eval_bounds(args):
    run = _Run(args, "eval bounds")
    rows = []
    for tp in args.theta_plus:
        for ts in args.t_star:
            c = posterior.bound_constants(tp, ts)
            rows.append({"theta_plus": tp, "w_plus": c.w_plus, "t_star": ts, "C1": c.C1, "C2": c.C2})
    minimizers = [
        {"t_star": ts, "C1_argmin": posterior.bound_minimizer(ts, "C1"),
         "C2_argmin": posterior.bound_minimizer(ts, "C2")}
        for ts in args.t_star
    ]
    run.json(args.out, {"rows": rows, "minimizers": minimizers})
    run.csv(_csv_path(args.out), rows, ["theta_plus", "w_plus", "t_star", "C1", "C2"])
    return run.finish()


# -- repro -------------------------------------------------------------------------------

REPRO_SCALES = {
    # name: (repetitions, draws, epochs, KL fit epochs, gradient replicates, sweep replicates)
    "quick": (2, 10**5, 20, 20, 5, 200),
    "desk": (8, 10**6, 100, 1000, 20, 1000),
}


def cmd_repro(args):
    run = _Run(args, "repro")
    reps, draws, epochs, kl_epochs, grad_reps, sweep_reps = REPRO_SCALES[args.scale]
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    config = FitConfig(epochs=epochs, trace="none", threads=args.threads)
    summary = []

    log.info("KL recovery, two-item model")
    kl = analysis.kl_experiment("two", (0, 5, 25), reps, 500, replace(config, epochs=kl_epochs),
                                draws, args.seed, args.threads)
    run.json(os.path.join(out_dir, "kl_two_item.json"), kl)
    run.csv(os.path.join(out_dir, "kl_two_item.csv"), kl["rows"], ["m", "kl_mean", "kl_stderr"])
    for r in kl["rows"]:
        summary.append({"experiment": "kl_two_item", "x": f"m={r['m']}",
                        "value": r["kl_mean"], "stderr": r["kl_stderr"]})
    summary.append({"experiment": "kl_two_item", "x": "given-times baseline",
                    "value": kl["baseline"]["kl_mean"], "stderr": kl["baseline"]["kl_stderr"]})

    log.info("order proportions, five-item model")
    order = analysis.order_experiment((1, 2), (5, 10, 20), max(2, reps // 2), 500, config,
                                      min(draws, 10**5), args.seed, args.threads)
    run.json(os.path.join(out_dir, "order_five_item.json"), order)
    run.csv(os.path.join(out_dir, "order_five_item.csv"), order["rows"], ["n", "prop", "stderr"])
    for r in order["rows"]:
        summary.append({"experiment": "order_2_before_3", "x": f"n={r['n']}",
                        "value": r["prop"], "stderr": r["stderr"]})
    summary.append({"experiment": "order_2_before_3", "x": "truth",
                    "value": order["truth"], "stderr": 0.0})

    log.info("gradient error by proposal")
    grad = analysis.gradient_error_experiment((10, 20), (5, 10, 20, 50), grad_reps, 500,
                                              warm_epochs=epochs, seed=args.seed,
                                              threads=args.threads)
    run.json(os.path.join(out_dir, "gradient_error.json"), grad)
    run.csv(os.path.join(out_dir, "gradient_error.csv"), grad,
            ["n", "proposal", "M", "error_mean", "error_stderr"])
    for r in grad:
        summary.append({"experiment": f"grad_error_{r['proposal']}", "x": f"n={r['n']},M={r['M']}",
                        "value": r["error_mean"], "stderr": r["error_stderr"]})

    log.info("posterior variance sweeps")
    for tp in (-3.0, -2.0, -1.0):
        rows = posterior.iid_variance_sweep(tp, (5, 10, 20, 50, 100), sweep_reps, args.seed)
        name = f"variance_sweep_theta{tp:+g}"
        run.json(os.path.join(out_dir, name + ".json"),
                 {"rows": rows, "slope": posterior.sweep_slope(rows)})
        run.csv(os.path.join(out_dir, name + ".csv"), rows,
                ["m", "mean_variance", "stderr", "mean_abs_error"])
        summary.append({"experiment": "variance_slope", "x": f"theta_plus={tp:g}",
                        "value": posterior.sweep_slope(rows), "stderr": None})

    run.json(os.path.join(out_dir, "summary.json"), {"rows": summary})
    run.csv(os.path.join(out_dir, "summary.csv"), summary, ["experiment", "x", "value", "stderr"])
    return run.finish()


# -- parser ------------------------------------------------------------------------------

def _add_common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: HAZARD_CTMC_THREADS or all cores)")
    p.add_argument("--quiet", action="store_true", help="only log warnings")


def _add_fit_flags(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--pretrain-epochs", type=int, default=50)
    p.add_argument("--lambda", dest="reg_weight", type=float, default=0.01)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--mcmc-samples", type=int, default=50)
    p.add_argument("--burn-in", type=int, default=10)
    p.add_argument("--proposal", choices=("guided", "uniform"), default="guided")
    p.add_argument("--mode", choices=("marginal", "given-times", "diagonal-only"),
                   default="marginal")
    p.add_argument("--gradient", choices=("mcmc", "exact"), default="mcmc")
    p.add_argument("--enum-cap", type=int, default=10)
    p.add_argument("--init-halfwidth", type=float, default=0.2)
    p.add_argument("--trace", choices=("auto", "exact", "estimate", "none"), default="auto")


def build_parser():
    parser = argparse.ArgumentParser(prog="hazard-ctmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a dataset from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=_count, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-times", action="store_true")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="learn a model from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="fit report (JSON)")
    p.add_argument("--model-out", default=None, help="learned model (default: <out>.model.json)")
    _add_fit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("family", help="member of the two-item equivalence family")
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_family)

    p = sub.add_parser("repro", help="desk-scale synthetic reproductions")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", choices=tuple(REPRO_SCALES), default="desk")
    _add_common(p)
    p.set_defaults(func=cmd_repro)

    ev = sub.add_parser("eval", help="evaluate models").add_subparsers(dest="what", required=True)

    p = ev.add_parser("kl", help="KL from a fitted model to a reference model")
    p.add_argument("--fit", required=True, help="model file or fit report")
    p.add_argument("--truth", required=True)
    p.add_argument("--restrict", type=_int_list, default=None,
                   help="items of the fitted model matching the reference items, in order")
    p.add_argument("--draws", type=_count, default=10**6)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_kl)

    p = ev.add_parser("order", help="order proportion of two items")
    p.add_argument("--model", required=True)
    p.add_argument("--pair", type=_int_list, required=True)
    p.add_argument("--draws", type=_count, default=10**6)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_order)

    p = ev.add_parser("stability", help="parameter spread across initialisations")
    p.add_argument("--data", required=True)
    p.add_argument("--inits", type=int, default=20)
    p.add_argument("--seeds", type=_int_list, default=None)
    p.add_argument("--pairs", type=_int_list, default=None, help="flat list a1,b1,a2,b2,...")
    p.add_argument("--order-draws", type=_count, default=10**5)
    p.add_argument("--out", required=True)
    _add_fit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval_stability)

    p = ev.add_parser("time-posterior", help="posterior densities of observation times")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=_int_list, default=None)
    p.add_argument("--t-max", type=float, default=posterior.T_MAX)
    p.add_argument("--grid-points", type=int, default=posterior.GRID_POINTS)
    p.add_argument("--enum-cap", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_time_posterior)

    p = ev.add_parser("variance-sweep", help="mean posterior variance against m")
    p.add_argument("--theta-plus", type=float, default=-2.0)
    p.add_argument("--m", type=_int_list, default=[5, 10, 20, 50, 100])
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--gamma", type=float, default=None,
                   help="use calibrated two-item blocks with this interaction")
    p.add_argument("--target-freq", type=float, default=float(np.exp(-2) / (1 + np.exp(-2))))
    p.add_argument("--uniform", type=_float_list, default=None,
                   help="independent items with log-rates ~ U[low, high]")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_variance_sweep)

    p = ev.add_parser("bounds", help="variance bound constants C1 and C2")
    p.add_argument("--theta-plus", type=_float_list, default=[-3.0, -2.0, -1.0, 0.0])
    p.add_argument("--t-star", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    p.add_argument("--out", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_eval_bounds)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (io.DataError, EnumerationTooLarge, PreconditionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
