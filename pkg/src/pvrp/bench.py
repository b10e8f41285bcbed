"""Benchmark harness: run solvers over an instance set, emit gap tables.

Conventions. cost := -objective, so lower is better and the table reads like
a duration column; at large alpha the preference reward can push cost <= 0,
in which case the relative gap is undefined and reported as "n/a". The
reference solver defaults to the exact oracle when the instance is small
enough and to local search otherwise ("auto"). Sampling modes apply to policy
solvers only; classical solvers are deterministic and get mode "-".

Wall-clock timing can be disabled (timing = off) to make reports byte-for-byte
reproducible across runs.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import construct_greedy, exact_bruteforce, local_search_improve
from .environment import Solution, check_feasibility, evaluate_solution
from .errors import ConfigError, FeasibilityError
from .instances import GeneratorConfig, Instance, generate_uniform, load_instance
from .policy import load_policy, rollout

REPORT_COLUMNS = ("instance", "solver", "mode", "alpha", "cost",
                  "gap_percent", "time_s", "seed")
CLASSICAL_SOLVERS = ("greedy_baseline", "local_search", "exact")
_SVG_PALETTE = ("#1b6ca8", "#d1495b", "#2e933c", "#8d5a97",
                "#e08e29", "#13876a", "#6b4226", "#43658b")


def parse_kv(text: str) -> dict:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


@dataclass(frozen=True)
class BenchConfig:
    solvers: tuple
    alphas: tuple = (0.0,)
    modes: tuple = ("greedy",)
    instances_dir: str | None = None
    generate_n: int = 8
    generate_m: int = 2
    generate_count: int = 5
    seed: int = 0
    reference: str = "auto"
    ls_budget: int = 20000
    timing: bool = True

    def validate(self):
        if not self.solvers:
            raise ConfigError("bench needs a non-empty solver list")
        for s in self.solvers:
            if s not in CLASSICAL_SOLVERS and not s.startswith("policy@"):
                raise ConfigError(f"unknown solver {s!r}")
        for mode in self.modes:
            if mode != "greedy" and not _sample_k(mode):
                raise ConfigError(f"unknown mode {mode!r} (greedy or sample:<K>)")
        if self.reference != "auto" and self.reference not in self.solvers \
                and self.reference not in CLASSICAL_SOLVERS:
            raise ConfigError(f"unknown reference solver {self.reference!r}")
        if not self.alphas:
            raise ConfigError("bench needs at least one alpha")
        if self.generate_count < 1 or self.generate_n < 1 or self.generate_m < 1:
            raise ConfigError("generator settings must be positive")


def _sample_k(mode: str):
    if mode.startswith("sample:"):
        try:
            k = int(mode.split(":", 1)[1])
        except ValueError:
            return None
        return k if k >= 1 else None
    return None


def parse_bench_config(text: str) -> BenchConfig:
    pairs = parse_kv(text)
    known = {"solvers", "alphas", "modes", "instances_dir", "generate_n",
             "generate_m", "generate_count", "seed", "reference", "ls_budget",
             "timing"}
    for key in pairs:
        if key not in known:
            raise ConfigError(f"unknown bench config key {key!r}")
    if "solvers" not in pairs:
        raise ConfigError("bench config must list solvers")

    def split(key, default):
        if key not in pairs:
            return default
        toks = tuple(t.strip() for t in pairs[key].split(",") if t.strip())
        return toks

    try:
        cfg = BenchConfig(
            solvers=split("solvers", ()),
            alphas=tuple(float(a) for a in split("alphas", ("0.0",))),
            modes=split("modes", ("greedy",)),
            instances_dir=pairs.get("instances_dir"),
            generate_n=int(pairs.get("generate_n", 8)),
            generate_m=int(pairs.get("generate_m", 2)),
            generate_count=int(pairs.get("generate_count", 5)),
            seed=int(pairs.get("seed", 0)),
            reference=pairs.get("reference", "auto"),
            ls_budget=int(pairs.get("ls_budget", 20000)),
            timing=pairs.get("timing", "on").lower() not in ("off", "false", "0"),
        )
    except ValueError as e:
        raise ConfigError(f"bad bench config value: {e}") from None
    cfg.validate()
    return cfg


def load_bench_config(path) -> BenchConfig:
    with open(path) as f:
        return parse_bench_config(f.read())


def compute_gap(cost: float, ref_cost: float):
    """Relative percent gap, or None when the reference cost is <= 0."""
    if ref_cost <= 0:
        return None
    return 100.0 * (cost - ref_cost) / ref_cost


@dataclass
class BenchRow:
    instance: str
    solver: str
    mode: str
    alpha: float
    cost: float | None        # None marks a row-level failure
    gap_percent: float | None  # None renders as "n/a"
    time_s: float
    seed: int
    solution: Solution | None = field(repr=False, default=None)
    error: str | None = None


@dataclass
class BenchReport:
    rows: list

    def to_tsv(self) -> str:
        lines = ["\t".join(REPORT_COLUMNS)]
        for r in self.rows:
            lines.append("\t".join(_format_row(r)))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(_format_row(r)))
        return "\n".join(lines) + "\n"


def _format_row(r: BenchRow):
    cost = "failed" if r.cost is None else f"{r.cost:.9g}"
    gap = "n/a" if r.gap_percent is None else f"{r.gap_percent:.6g}"
    return (r.instance, r.solver, r.mode, f"{r.alpha:g}", cost, gap,
            f"{r.time_s:.3f}", str(r.seed))


def _load_instance_set(cfg: BenchConfig):
    if cfg.instances_dir is not None:
        names = sorted(n for n in os.listdir(cfg.instances_dir)
                       if n.endswith(".pvrp"))
        if not names:
            raise FeasibilityError(f"no .pvrp files in {cfg.instances_dir}")
        return [load_instance(os.path.join(cfg.instances_dir, n)) for n in names]
    return [generate_uniform(replace(
                GeneratorConfig(n_clients=cfg.generate_n, m_vehicles=cfg.generate_m),
                seed=cfg.seed + i))
            for i in range(cfg.generate_count)]


class _PolicyCache:
    def __init__(self):
        self._loaded = {}

    def get(self, path):
        if path not in self._loaded:
            if not os.path.exists(path):
                raise ConfigError(f"policy checkpoint not found: {path}")
            self._loaded[path] = load_policy(path)
        return self._loaded[path]


def _solve_row(solver, mode, inst, alpha, cfg, policies, rng):
    if solver == "greedy_baseline":
        return construct_greedy(inst, alpha)
    if solver == "local_search":
        start = construct_greedy(inst, alpha)
        return local_search_improve(inst, alpha, start, budget=cfg.ls_budget)
    if solver == "exact":
        sol, _ = exact_bruteforce(inst, alpha)
        return sol
    params, pcfg = policies.get(solver[len("policy@"):])
    if mode == "greedy":
        return rollout(inst, alpha, params, pcfg).solution
    k = _sample_k(mode)
    best = None
    best_obj = None
    for _ in range(k):
        res = rollout(inst, alpha, params, pcfg, mode="sample", rng=rng)
        if best_obj is None or res.objective > best_obj:
            best, best_obj = res.solution, res.objective
    return best


def _reference_solver(cfg: BenchConfig, inst: Instance) -> str:
    if cfg.reference != "auto":
        return cfg.reference
    if inst.n_clients <= 8 and inst.n_vehicles <= 2:
        return "exact"
    return "local_search"


def run_benchmark(cfg: BenchConfig, report_path=None) -> BenchReport:
    """Solve every (instance, alpha, solver, mode) cell and assemble the table.

    Solver failures (e.g. an unservable client for the greedy heuristic, or
    the exact solver's size guard) become rows marked "failed"; the run
    continues. Finalization independently re-evaluates every stored solution
    and re-checks feasibility before costs are accepted.
    """
    cfg.validate()
    instances = _load_instance_set(cfg)
    policies = _PolicyCache()
    for s in cfg.solvers:
        if s.startswith("policy@"):
            policies.get(s[len("policy@"):])

    rows = []
    ref_cost: dict = {}
    for ii, inst in enumerate(instances):
        ref_solver = _reference_solver(cfg, inst)
        for ai, alpha in enumerate(cfg.alphas):
            try:
                ref_sol = _solve_row(ref_solver, "greedy", inst, alpha, cfg,
                                     policies, np.random.default_rng(
                                         np.random.SeedSequence([cfg.seed, ii, ai])))
                ref_cost[(ii, ai)] = -evaluate_solution(inst, ref_sol, alpha)
            except (FeasibilityError, ValueError):
                ref_cost[(ii, ai)] = None
            for si, solver in enumerate(cfg.solvers):
                modes = cfg.modes if solver.startswith("policy@") else ("-",)
                for mi, mode in enumerate(modes):
                    rng = np.random.default_rng(
                        np.random.SeedSequence([cfg.seed, ii, ai, si, mi]))
                    t0 = time.perf_counter()
                    try:
                        sol = _solve_row(solver, mode, inst, alpha, cfg,
                                         policies, rng)
                        err = None
                    except (FeasibilityError, ValueError) as e:
                        sol, err = None, str(e)
                    dt = time.perf_counter() - t0 if cfg.timing else 0.0
                    rows.append(BenchRow(
                        instance=inst.name, solver=solver, mode=mode,
                        alpha=alpha, cost=None, gap_percent=None,
                        time_s=dt, seed=cfg.seed, solution=sol, error=err))
    # finalize: recompute every cost from the stored solution, then gaps
    idx = 0
    for ii, inst in enumerate(instances):
        for ai, alpha in enumerate(cfg.alphas):
            for solver in cfg.solvers:
                modes = cfg.modes if solver.startswith("policy@") else ("-",)
                for _ in modes:
                    row = rows[idx]
                    idx += 1
                    if row.solution is None:
                        continue
                    report = check_feasibility(inst, row.solution)
                    if not report.ok:
                        row.solution = None
                        row.error = str(report)
                        continue
                    row.cost = -evaluate_solution(inst, row.solution, alpha)
                    ref = ref_cost[(ii, ai)]
                    if ref is not None:
                        gap = compute_gap(row.cost, ref)
                        row.gap_percent = gap
    out = BenchReport(rows=rows)
    if report_path is not None:
        with open(report_path, "w") as f:
            f.write(out.to_tsv())
    return out


# -- plotting -----------------------------------------------------------------

def render_routes_svg(inst: Instance, sol: Solution, alpha: float) -> str:
    """Static route plot: depot square, demand-scaled client circles, one
    stroke color per vehicle. Refuses infeasible solutions."""
    report = check_feasibility(inst, sol)
    if not report.ok:
        raise FeasibilityError(f"refusing to plot infeasible solution: {report}")
    obj = evaluate_solution(inst, sol, alpha)
    size, pad = 640, 40
    span = size - 2 * pad

    def sx(x):
        return pad + float(x) * span

    def sy(y):
        return pad + (1.0 - float(y)) * span

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    node_xy = inst.node_coords()
    for k, vroutes in enumerate(sol.routes):
        color = _SVG_PALETTE[k % len(_SVG_PALETTE)]
        for seg in vroutes:
            pts = [0] + list(seg) + [0]
            coords = " ".join(f"{sx(node_xy[p, 0]):.2f},{sy(node_xy[p, 1]):.2f}"
                              for p in pts)
            parts.append(f'<polyline points="{coords}" fill="none" '
                         f'stroke="{color}" stroke-width="2" opacity="0.85"/>')
        parts.append(f'<text x="{size - pad + 4}" y="{pad + 16 * k}" '
                     f'fill="{color}" font-size="12">k={k + 1}</text>')
    dmax = float(inst.demands.max())
    for i in range(inst.n_clients):
        r = 3.0 + 5.0 * inst.demands[i] / dmax
        parts.append(f'<circle cx="{sx(inst.coords[i, 0]):.2f}" '
                     f'cy="{sy(inst.coords[i, 1]):.2f}" r="{r:.2f}" '
                     f'fill="#444444" opacity="0.9"/>')
    parts.append(f'<rect x="{sx(inst.depot[0]) - 6:.2f}" '
                 f'y="{sy(inst.depot[1]) - 6:.2f}" width="12" height="12" '
                 f'fill="black"/>')
    parts.append(f'<text x="{pad}" y="{size - 12}" font-size="14" fill="black">'
                 f'alpha={alpha:g} objective={obj:.6g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
