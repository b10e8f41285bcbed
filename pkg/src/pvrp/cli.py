"""pvrp command line: generate, convert, train, bench, plot.

Exit codes: 0 success, 1 usage/configuration error, 2 data error
(unparseable or invalid input files, infeasible inputs).
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import load_bench_config, parse_kv, render_routes_svg, run_benchmark
from .environment import parse_solution
from .errors import ConfigError, FeasibilityError, ParseError, ValidationError
from .instances import (GeneratorConfig, derive_pvrplib, generate_uniform,
                        generate_zone_constrained, load_instance, parse_cvrplib,
                        save_instance)
from .policy import PolicyConfig
from .training import TrainConfig, train

_TRAIN_KEYS = {
    "epochs": int, "steps_per_epoch": int, "batch_size": int,
    "rollouts_per_instance": int, "alpha_min": float, "alpha_max": float,
    "n_min": int, "n_max": int, "m_min": int, "m_max": int,
    "lr_initial": float, "lr_decay": float, "seed": int, "baseline_mode": str,
}
_POLICY_KEYS = {
    "d_h": int, "n_heads": int, "d_ff": int, "n_layers": int,
    "score_clip": float, "psr_mode": str, "residual_mode": str,
}


def parse_train_config(text: str):
    """key = value file covering both trainer and policy settings."""
    pairs = parse_kv(text)
    tkw, pkw = {}, {}
    for key, raw in pairs.items():
        if key in _TRAIN_KEYS:
            tkw[key] = _TRAIN_KEYS[key](raw)
        elif key in _POLICY_KEYS:
            pkw[key] = _POLICY_KEYS[key](raw)
        else:
            raise ConfigError(f"unknown train config key {key!r}")
    alpha = (tkw.pop("alpha_min", 0.0), tkw.pop("alpha_max", 0.2))
    n_range = (tkw.pop("n_min", 8), tkw.pop("n_max", 20))
    m_range = (tkw.pop("m_min", 2), tkw.pop("m_max", 3))
    tcfg = TrainConfig(alpha_range=alpha, n_range=n_range, m_range=m_range, **tkw)
    pcfg = PolicyConfig(**pkw)
    tcfg.validate()
    pcfg.validate()
    return tcfg, pcfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pvrp", description="profiled vehicle routing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write random instances", parents=[])
    g.add_argument("--n", type=int, required=True, help="clients per instance")
    g.add_argument("--m", type=int, required=True, help="vehicles per instance")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--zone-rate", type=float, default=None,
                   help="zone-constrained variant with this constraint rate")
    g.add_argument("--out-dir", required=True)

    c = sub.add_parser("convert", help="derive a profiled instance from a CVRPLib file")
    c.add_argument("--cvrplib-in", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)

    t = sub.add_parser("train", help="run the trainer")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", default=None)

    b = sub.add_parser("bench", help="run a benchmark config")
    b.add_argument("--config", required=True)
    b.add_argument("--report", default="report.tsv")
    b.add_argument("--csv", action="store_true",
                   help="also write the report as CSV")

    pl = sub.add_parser("plot", help="render a solution as SVG")
    pl.add_argument("--instance", required=True)
    pl.add_argument("--solution", required=True)
    pl.add_argument("--alpha", type=float, default=0.0)
    pl.add_argument("--out", required=True)
    return p


def _cmd_generate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        cfg = GeneratorConfig(n_clients=args.n, m_vehicles=args.m,
                              seed=args.seed + i)
        if args.zone_rate is None:
            inst = generate_uniform(cfg)
        else:
            inst = generate_zone_constrained(cfg, args.zone_rate)
        path = os.path.join(args.out_dir, inst.name + ".pvrp")
        save_instance(path, inst)
        print(f"wrote {path}")
    return 0


def _cmd_convert(args) -> int:
    with open(args.cvrplib_in) as f:
        base = parse_cvrplib(f.read())
    cfg = GeneratorConfig(n_clients=base.n_clients, m_vehicles=base.n_vehicles,
                          seed=args.seed)
    derived = derive_pvrplib(base, cfg)
    save_instance(args.out, derived)
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    with open(args.config) as f:
        tcfg, pcfg = parse_train_config(f.read())
    _, final = train(tcfg, pcfg, args.out_dir, resume_from=args.resume)
    print(f"wrote {final}")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_bench_config(args.config)
    report = run_benchmark(cfg, report_path=args.report)
    print(f"wrote {args.report}")
    if args.csv:
        csv_path = (args.report[:-4] if args.report.endswith(".tsv")
                    else args.report) + ".csv"
        with open(csv_path, "w") as f:
            f.write(report.to_csv())
        print(f"wrote {csv_path}")
    failures = [r for r in report.rows if r.cost is None]
    for r in failures:
        print(f"failed: {r.instance} {r.solver} alpha={r.alpha:g}: {r.error}",
              file=sys.stderr)
    return 0


def _cmd_plot(args) -> int:
    inst = load_instance(args.instance)
    with open(args.solution) as f:
        sol = parse_solution(f.read())
    svg = render_routes_svg(inst, sol, args.alpha)
    with open(args.out, "w") as f:
        f.write(svg)
    print(f"wrote {args.out}")
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "convert": _cmd_convert,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "plot": _cmd_plot,
}


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as e:         # argparse --help
        return 0 if e.code in (0, None) else int(e.code)
    except ConfigError as e:
        print(f"pvrp: {e}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError, FeasibilityError, OSError) as e:
        print(f"pvrp: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
