"""Command line entry point: ``python -m overparam_net <command>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import construct, experiments, taylor

log = logging.getLogger("overparam_net")


def _load_config(args) -> experiments.ExperimentConfig:
    cfg = (experiments.ExperimentConfig.from_json(args.config) if args.config
           else experiments.ExperimentConfig())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write_json(obj, path: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    n = args.n or cfg.n_grid[-1]
    report, cell = experiments.fit_experiment(cfg, n, args.rep)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "risk", "drift"])
            for t, (r, dr) in enumerate(zip(report.trace.risks, report.trace.drifts)):
                w.writerow([t, repr(float(r)), repr(float(dr))])
    _write_json({
        "n": n, "seed": cell.seed, "mode": report.mode, "steps": report.steps,
        "step_size": report.step_size, "initial_risk": float(report.trace.risks[0]),
        "final_risk": float(report.trace.risks[-1]), "l2_error": cell.l2_error,
        "l2_stderr": cell.stderr, "wall_ms": cell.wall_ms,
        "schedule": report.schedule.as_dict(),
    }, args.summary)
    return 0


def cmd_rate_study(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.output

    def progress(cell):
        log.info("n=%d rep=%d l2=%s %s", cell.n, cell.rep, cell.l2_error, cell.failure or "")

    report = experiments.rate_study(cfg, timing=args.timing, progress=progress)
    Path(out).write_text(experiments.rate_csv(report))
    summary = report.summary()
    summary["config"] = cfg.to_dict()
    summary["csv"] = out
    _write_json(summary, args.summary)
    return 0 if report.failures == 0 else 1


def cmd_verify(args) -> int:
    verdicts = experiments.verify_suite(args.suite, seed=args.seed or 0)
    for v in verdicts:
        log.info("%s %s/%s", "PASS" if v.passed else "FAIL", v.suite, v.check)
    ok = all(v.passed for v in verdicts)
    _write_json({"passed": ok, "verdicts": [v.as_dict() for v in verdicts]}, args.out)
    return 0 if ok else 1


def cmd_covering_bound(args) -> int:
    val = experiments.covering_bound(args.alpha, args.beta, args.A, args.B, args.C, args.L,
                                     args.d, args.k, args.eps, args.p_norm, args.c81, args.c82,
                                     args.c83)
    _write_json({"log_bound": val}, None)
    return 0


def cmd_build_approx(args) -> int:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    get = lambda k, default: getattr(args, k) if getattr(args, k) is not None else cfg.get(k, default)
    d, p, K = int(get("d", 1)), float(get("p", 2.0)), int(get("K", 8))
    target = experiments.make_target(get("target", "sin"), d, p)
    net = construct.assemble_taylor_net(target, K, L=get("L", None), r=get("r", None),
                                        N=get("N", None))
    err = construct.sup_error(net, target)
    pbar_err = construct.sup_error(lambda X: taylor.eval_Pbar(net.pieces, X), target)
    w = net.weight_vector()
    if args.out:
        t = w.topology
        with open(args.out, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["index", "subnet", "layer", "row", "col", "value"])
            for idx, v in enumerate(w.values):
                if v != 0.0:
                    wr.writerow([idx, *t.coords(idx), repr(float(v))])
    _write_json({
        "target": target.name, "d": d, "p": p, "K": K, "L": net.L, "r": net.r, "N": net.N,
        "subnets": len(net.blueprints), "summands": net.summand_count,
        "sup_error": err, "sup_error_smoothed_taylor": pbar_err, "weights_csv": args.out,
    }, args.summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overparam_net", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, summary=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        if summary:
            p.add_argument("--summary", help="also write the JSON summary here")

    p = sub.add_parser("fit", help="fit the estimator once and report its L2 error")
    common(p)
    p.add_argument("--n", type=int, help="sample size (default: largest n in the grid)")
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out", help="CSV of the descent trace")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rate-study", help="Monte Carlo L2 error over an n grid")
    common(p)
    p.add_argument("--out", help="CSV path (default: config 'output')")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.set_defaults(func=cmd_rate_study)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", choices=["approx", "opt", "derivbound", "all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write verdicts as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("covering-bound", help="log of the covering-number bound")
    for name, typ, default in (("alpha", float, 1.0), ("beta", float, 1.0), ("A", float, 1.0),
                               ("B", float, 1.0), ("C", float, 1.0), ("L", int, 1),
                               ("d", int, 1), ("k", float, 1.0), ("eps", float, 0.5),
                               ("p-norm", float, 2.0), ("c81", float, 1.0),
                               ("c82", float, 1.0), ("c83", float, 1.0)):
        p.add_argument(f"--{name}", type=typ, default=default)
    p.set_defaults(func=cmd_covering_bound)

    p = sub.add_parser("build-approx", help="assemble a Taylor network and measure its sup error")
    common(p)
    p.add_argument("--target", help="abs, sin, zero, linear, product or expr:<sympy>")
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--out", help="CSV of the nonzero weights")
    p.set_defaults(func=cmd_build_approx)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, construct.ConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
