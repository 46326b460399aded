"""Command-line interface.

Exit codes: 0 ok, 1 usage or parse error, 2 domain error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import est, mle, sim
from .config import ConfigError, ScenarioConfig, dump_config, load_config
from .constants import NS
from .est import Method
from .obs import ObservationError, ObservationSet

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_SOLVER = 0, 1, 2, 3


class InputError(ValueError):
    pass


def parse_observations(text: str, source: str = "<input>", default_sigma_ns: float = 0.0):
    """Lines of ``delta_ns[,sigma_ns]``; ``#`` starts a comment.

    Returns ``(deltas_s, sigmas_s)``.
    """
    deltas, sigmas = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = [p.strip() for p in body.split(",")]
        if len(parts) > 2:
            raise InputError(f"{source}:{lineno}: expected 'delta_ns[,sigma_ns]', got {line.strip()!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise InputError(f"{source}:{lineno}: not a number in {line.strip()!r}") from None
        if not all(np.isfinite(vals)):
            raise InputError(f"{source}:{lineno}: values must be finite")
        sigma = vals[1] if len(vals) == 2 else default_sigma_ns
        if sigma < 0:
            raise InputError(f"{source}:{lineno}: sigma must be non-negative")
        deltas.append(vals[0] * NS)
        sigmas.append(sigma * NS)
    if not deltas:
        raise InputError(f"{source}: no observations found")
    return np.array(deltas), np.array(sigmas)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else format(float(v), ".10g")
    return str(v)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# -- subcommands ---------------------------------------------------------------------

ESTIMATORS = {
    ("mle", True): est.mle_sync,
    ("umvue", True): est.umvue_sync,
    ("mle", False): est.mle_async,
    ("umvue", False): est.umvue_async,
}


def cmd_estimate(args, cfg: ScenarioConfig) -> int:
    path = Path(args.input)
    try:
        text = sys.stdin.read() if args.input == "-" else path.read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        deltas, sigmas = parse_observations(text, args.input, args.sigma)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sync = cfg.sync if args.sync is None else args.sync
    try:
        obs = ObservationSet(deltas, sigmas, sync)
        if args.method == "noisy":
            solve = mle.solve_sync_mle if sync else mle.solve_async_mle
            e = solve(obs, settings=cfg.solver)
        else:
            e = ESTIMATORS[(args.method, sync)](obs)
    except ObservationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except mle.SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    diag = e.diagnostics
    fields = [
        ("method", e.method.value),
        ("K", obs.K),
        ("d_hat_m", format(e.d_hat, ".6f")),
    ]
    if e.epsilon_hat is not None:
        fields.append(("epsilon_hat_ns", format(e.epsilon_hat / NS, ".6f")))
    fields += [
        ("converged", str(diag.converged).lower()),
        ("iterations", diag.iterations),
        ("loglik", _fmt(diag.loglik)),
    ]
    print(" ".join(f"{k}={v}" for k, v in fields))
    return EXIT_OK


def _methods(arg, default):
    return [Method(m) for m in (arg or default)]


def _maybe_plot(args, csv_path, func, **kw):
    from . import plotting

    plotting.write_plot_script(csv_path, func.__name__, "".join(f", {k}={v!r}" for k, v in kw.items()))
    if args.plot:
        png = func(csv_path, **kw)
        print(f"wrote {png}")


def cmd_sweep(args, cfg: ScenarioConfig) -> int:
    from . import plotting

    trials = args.trials or cfg.sweep_trials
    methods = _methods(args.methods, sim.ALL_METHODS)
    common = dict(trials=trials, methods=methods, seed=cfg.seed, epsilon=cfg.epsilon, settings=cfg.solver, threads=cfg.threads)
    if args.axis == "k":
        res = sim.sweep_over_k(cfg.sweep_k, cfg.k_sweep_sigma_ratio, **common)
    else:
        res = sim.sweep_over_sigma(cfg.sweep_sigma_ratio, cfg.sigma_sweep_k, **common)
    out = cfg.resolved_output_dir() / f"sweep_{args.axis}.csv"
    rows = ((v, m, b, r, res.trials, res.seed) for v, m, b, r in res.rows())
    _write_csv(out, ["axis", "method", "rel_bias", "rel_rmse", "trials", "seed"], rows)
    print(f"wrote {out}")
    _report_flags(res)
    _maybe_plot(args, out, plotting.plot_sweep)
    return EXIT_OK


def _report_flags(res):
    for m, flags in res.unimodal_flags.items():
        n = int(np.sum(flags))
        if n:
            print(f"warning: {m}: {n} instance(s) with disagreeing multistart results", file=sys.stderr)


def cmd_room(args, cfg: ScenarioConfig) -> int:
    from . import plotting

    cfg = cfg.with_observers(args.observers)
    method = Method(args.method) if args.method else (Method.SYNC_UMVUE if cfg.sync else Method.ASYNC_UMVUE)
    h = sim.room_heatmap(cfg, method, "kcount" if args.mode == "kcount" else "error")
    out = cfg.resolved_output_dir() / "heatmap.csv"
    _write_csv(out, ["x", "y", "value", "status"], h.rows())
    print(f"wrote {out}")
    label = "number of common detected MPCs" if args.mode == "kcount" else "distance est. error [m]"
    _maybe_plot(args, out, plotting.plot_heatmap, label=label)
    return EXIT_OK


def cmd_circle(args, cfg: ScenarioConfig) -> int:
    from . import plotting

    base = [Method.SYNC_UMVUE, Method.ASYNC_UMVUE]
    results = [sim.circle_rmse(cfg, methods=_methods(args.methods, base), noise=False)]
    if cfg.noise:
        noisy = [Method.SYNC_NOISY_MLE, Method.ASYNC_NOISY_MLE]
        results.append(sim.circle_rmse(cfg, methods=_methods(args.noisy_methods, noisy), noise=True))
    rows = []
    for res in results:
        _report_flags(res)
        for i, d in enumerate(res.values):
            for m in res.methods:
                rows.append((float(d), m, res.rmse[m][i], res.rel_rmse[m][i]))
    out = cfg.resolved_output_dir() / "circle.csv"
    _write_csv(out, ["d", "method", "rmse", "rel_rmse"], rows)
    print(f"wrote {out}")
    _maybe_plot(args, out, plotting.plot_circle)
    return EXIT_OK


def cmd_selftest(args, cfg: ScenarioConfig) -> int:
    from .selftest import run_selftest

    failures = 0
    for name, ok, detail in run_selftest(seed=cfg.seed):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += not ok
    return EXIT_OK if failures == 0 else EXIT_DOMAIN


def cmd_config(args, cfg: ScenarioConfig) -> int:
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpcrange", description="Distance estimation from multipath delay differences.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config file (defaults built in)")
    common.add_argument("--out", help="output directory (overrides config and $MPCRANGE_OUTPUT_DIR)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--trials", type=int)
    common.add_argument("--multistart", type=int, help="solver starts per instance")
    common.add_argument("--max-iterations", type=int)
    common.add_argument("--noise", dest="noise", action="store_true", default=None, help="inject CRLB extraction errors")
    common.add_argument("--no-noise", dest="noise", action="store_false")
    common.add_argument("--epsilon-ns", type=float, help="clock offset added to asynchronous observations")
    common.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSV")
    sub = p.add_subparsers(dest="command", required=True)
    methods = [m.value for m in Method]

    e = sub.add_parser("estimate", parents=[common], help="estimate d from an observation file")
    e.add_argument("input", help="file with one 'delta_ns[,sigma_ns]' per line, '-' for stdin")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--sync", dest="sync", action="store_true", default=None)
    mode.add_argument("--async", dest="sync", action="store_false")
    e.add_argument("--sigma", type=float, default=0.0, help="default error std [ns] for lines without one")
    e.add_argument("--method", choices=["mle", "umvue", "noisy"], default="umvue")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sweep", parents=[common], help="statistical Monte Carlo sweep")
    s.add_argument("--axis", choices=["k", "sigma"], required=True)
    s.add_argument("--methods", nargs="+", choices=methods)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("room", parents=[common], help="ray-traced room heatmap")
    r.add_argument("--mode", choices=["error", "kcount"], default="error")
    r.add_argument("--observers", type=int, choices=[1, 3], default=3)
    r.add_argument("--method", choices=methods)
    r.set_defaults(func=cmd_room)

    c = sub.add_parser("circle", parents=[common], help="RMSE on circles around node A")
    c.add_argument("--methods", nargs="+", choices=methods)
    c.add_argument("--noisy-methods", nargs="+", choices=methods)
    c.set_defaults(func=cmd_circle)

    t = sub.add_parser("selftest", parents=[common], help="reduced analytic and oracle checks")
    t.set_defaults(func=cmd_selftest)

    d = sub.add_parser("config", parents=[common], help="print the effective configuration")
    d.set_defaults(func=cmd_config)
    return p


def _effective_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.out:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = max(1, args.threads)
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.noise is not None:
        changes["noise"] = args.noise
    if args.epsilon_ns is not None:
        changes["epsilon"] = args.epsilon_ns * NS
    solver = {}
    if args.multistart is not None:
        solver["multistart"] = args.multistart
    if args.max_iterations is not None:
        solver["max_iterations"] = args.max_iterations
    if solver:
        changes["solver"] = replace(cfg.solver, **solver)
    return replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _effective_config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
