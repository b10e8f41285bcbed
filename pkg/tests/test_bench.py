"""Benchmark harness and command-line tests."""

import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pvrp.baselines import construct_greedy
from pvrp.bench import (BenchConfig, compute_gap, parse_bench_config, parse_kv,
                        render_routes_svg, run_benchmark)
from pvrp.cli import cli_dispatch, parse_train_config
from pvrp.environment import Solution, evaluate_solution, format_solution
from pvrp.errors import ConfigError, FeasibilityError
from pvrp.instances import (REQUIRE, GeneratorConfig, Instance,
                            generate_uniform, load_instance, save_instance)
from pvrp.policy import PolicyConfig, init_params, save_policy

SMALL_PCFG = PolicyConfig(d_h=16, n_heads=2, d_ff=32, n_layers=1)

CVRPLIB_TOY = """\
NAME : toy-k2
COMMENT : tiny fixture
TYPE : CVRP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 100
NODE_COORD_SECTION
1 0 0
2 40 0
3 0 30
DEMAND_SECTION
1 0
2 5
3 7
DEPOT_SECTION
1
-1
EOF
"""


def write_instance_dir(dirpath, count=2, n=5, m=2, seed0=20):
    os.makedirs(dirpath, exist_ok=True)
    by_name = {}
    for i in range(count):
        inst = generate_uniform(GeneratorConfig(
            n_clients=n, m_vehicles=m, seed=seed0 + i))
        save_instance(os.path.join(dirpath, inst.name + ".pvrp"), inst)
        by_name[inst.name] = inst
    return by_name


# -- config parsing -----------------------------------------------------------

def test_parse_kv_comments_blanks_and_errors():
    pairs = parse_kv("a = 1  # trailing\n\n# full comment\n b= x=y \n")
    assert pairs == {"a": "1", "b": "x=y"}
    with pytest.raises(ConfigError, match="line 2"):
        parse_kv("a = 1\nnot a pair\n")


def test_parse_bench_config_defaults_and_values():
    cfg = parse_bench_config(
        "solvers = greedy_baseline, exact\n"
        "alphas = 0.0, 0.1\n"
        "timing = off\n"
        "generate_n = 6\n")
    assert cfg.solvers == ("greedy_baseline", "exact")
    assert cfg.alphas == (0.0, 0.1)
    assert cfg.modes == ("greedy",)
    assert cfg.timing is False and cfg.generate_n == 6
    assert cfg.reference == "auto" and cfg.instances_dir is None


def test_parse_bench_config_rejections():
    with pytest.raises(ConfigError, match="unknown bench config key"):
        parse_bench_config("solvers = exact\nbogus = 1\n")
    with pytest.raises(ConfigError, match="solvers"):
        parse_bench_config("alphas = 0.1\n")
    with pytest.raises(ConfigError, match="unknown solver"):
        parse_bench_config("solvers = simulated_annealing\n")
    with pytest.raises(ConfigError, match="unknown mode"):
        parse_bench_config("solvers = exact\nmodes = beam:3\n")
    with pytest.raises(ConfigError, match="bad bench config value"):
        parse_bench_config("solvers = exact\ngenerate_n = many\n")
    with pytest.raises(ConfigError):
        BenchConfig(solvers=()).validate()


def test_compute_gap_values():
    assert compute_gap(11.0, 10.0) == pytest.approx(10.0, abs=1e-12)
    assert compute_gap(10.0, 10.0) == 0.0
    assert compute_gap(5.0, 0.0) is None
    assert compute_gap(5.0, -2.0) is None


# -- benchmark runs -----------------------------------------------------------

def test_run_benchmark_classical_table(tmp_path):
    by_name = write_instance_dir(tmp_path / "inst", count=2, n=5, m=2)
    cfg = BenchConfig(solvers=("greedy_baseline", "local_search", "exact"),
                      alphas=(0.0, 0.1), instances_dir=str(tmp_path / "inst"),
                      timing=False)
    report = run_benchmark(cfg, report_path=str(tmp_path / "r.tsv"))
    assert len(report.rows) == 2 * 2 * 3

    # every reported cost is the negated objective of the stored solution
    for row in report.rows:
        inst = by_name[row.instance]
        assert row.cost is not None, row.error
        want = -evaluate_solution(inst, row.solution, row.alpha)
        assert row.cost == pytest.approx(want, abs=1e-9)

    # n=5, m=2 -> auto reference is the exact oracle, so exact rows sit at gap 0
    # and nothing lands below it
    by_cell = {}
    for row in report.rows:
        by_cell[(row.instance, row.alpha, row.solver)] = row
    for name in by_name:
        for alpha in (0.0, 0.1):
            ex = by_cell[(name, alpha, "exact")]
            gr = by_cell[(name, alpha, "greedy_baseline")]
            ls = by_cell[(name, alpha, "local_search")]
            assert ex.gap_percent == pytest.approx(0.0, abs=1e-9)
            assert ex.cost <= gr.cost + 1e-9
            assert ex.cost <= ls.cost + 1e-9
            assert ls.cost <= gr.cost + 1e-9
            assert gr.mode == "-" and ls.mode == "-"

    with open(tmp_path / "r.tsv") as f:
        text = f.read()
    assert text == report.to_tsv()
    assert text.splitlines()[0] == ("instance\tsolver\tmode\talpha\tcost"
                                    "\tgap_percent\ttime_s\tseed")


def test_run_benchmark_deterministic_bytes(tmp_path):
    write_instance_dir(tmp_path / "inst", count=2, n=5, m=2)
    cfg = BenchConfig(solvers=("greedy_baseline", "local_search"),
                      alphas=(0.0, 0.15), instances_dir=str(tmp_path / "inst"),
                      timing=False)
    a = run_benchmark(cfg).to_tsv()
    b = run_benchmark(cfg).to_tsv()
    assert a == b
    assert "0.000" in a  # timing off zeroes the clock column


def test_run_benchmark_policy_solver_and_modes(tmp_path):
    by_name = write_instance_dir(tmp_path / "inst", count=1, n=5, m=2)
    ckpt = str(tmp_path / "policy.bin")
    save_policy(ckpt, init_params(SMALL_PCFG, seed=3), SMALL_PCFG)
    cfg = BenchConfig(solvers=(f"policy@{ckpt}", "greedy_baseline"),
                      alphas=(0.1,), modes=("greedy", "sample:3"),
                      instances_dir=str(tmp_path / "inst"), timing=False)
    report = run_benchmark(cfg)
    # one instance, one alpha: two policy rows plus one classical row
    assert len(report.rows) == 3
    modes = [(r.solver.startswith("policy@"), r.mode) for r in report.rows]
    assert (True, "greedy") in modes and (True, "sample:3") in modes
    assert (False, "-") in modes
    for row in report.rows:
        assert row.cost is not None, row.error
        inst = by_name[row.instance]
        want = -evaluate_solution(inst, row.solution, row.alpha)
        assert row.cost == pytest.approx(want, abs=1e-9)


def test_run_benchmark_missing_checkpoint(tmp_path):
    write_instance_dir(tmp_path / "inst", count=1)
    cfg = BenchConfig(solvers=("policy@" + str(tmp_path / "nope.bin"),),
                      instances_dir=str(tmp_path / "inst"))
    with pytest.raises(ConfigError, match="checkpoint not found"):
        run_benchmark(cfg)


def test_gap_is_na_when_reference_cost_nonpositive(tmp_path):
    # clients hugging the depot with maximal preference: at alpha=1 the
    # preference reward dwarfs travel time, the reference cost goes negative,
    # and relative gaps stop meaning anything
    inst = Instance(
        name="hug", depot=np.array([0.5, 0.5]),
        coords=np.array([[0.5, 0.51], [0.5, 0.49]]),
        demands=np.array([1, 1]), capacities=np.array([10]),
        speeds=np.array([1.0]), profiles=np.array([[1.0], [1.0]]))
    d = tmp_path / "inst"
    os.makedirs(d)
    save_instance(str(d / "hug.pvrp"), inst)
    cfg = BenchConfig(solvers=("exact", "greedy_baseline"), alphas=(1.0,),
                      instances_dir=str(d), timing=False)
    report = run_benchmark(cfg)
    for row in report.rows:
        assert row.cost is not None and row.cost < 0
        assert row.gap_percent is None
    assert "\tn/a\t" in report.to_tsv()


def test_failed_rows_are_marked_and_run_continues(tmp_path):
    # the required vehicle is too small for the client: greedy raises,
    # row turns "failed"
    bad = Instance(
        name="bad", depot=np.array([0.5, 0.5]),
        coords=np.array([[0.2, 0.2]]), demands=np.array([7]),
        capacities=np.array([5, 9]), speeds=np.array([1.0, 1.0]),
        profiles=np.array([[REQUIRE, 0.0]]))
    ok = generate_uniform(GeneratorConfig(n_clients=4, m_vehicles=2, seed=2))
    d = tmp_path / "inst"
    os.makedirs(d)
    save_instance(str(d / "bad.pvrp"), bad)
    save_instance(str(d / "ok.pvrp"), ok)
    cfg = BenchConfig(solvers=("greedy_baseline",), alphas=(0.0,),
                      instances_dir=str(d), timing=False)
    report = run_benchmark(cfg)
    assert len(report.rows) == 2
    failed = [r for r in report.rows if r.instance == "bad"][0]
    good = [r for r in report.rows if r.instance == ok.name][0]
    assert failed.cost is None and failed.error
    assert good.cost is not None
    line = [l for l in report.to_tsv().splitlines() if l.startswith("bad")][0]
    assert "\tfailed\t" in line and "\tn/a\t" in line


def test_csv_and_tsv_agree_cellwise(tmp_path):
    write_instance_dir(tmp_path / "inst", count=1, n=4, m=2)
    cfg = BenchConfig(solvers=("greedy_baseline",), alphas=(0.05,),
                      instances_dir=str(tmp_path / "inst"), timing=False)
    report = run_benchmark(cfg)
    tsv_cells = [l.split("\t") for l in report.to_tsv().splitlines()]
    csv_cells = [l.split(",") for l in report.to_csv().splitlines()]
    assert tsv_cells == csv_cells


# -- svg rendering ------------------------------------------------------------

def test_render_svg_structure_and_alpha_independence():
    inst = generate_uniform(GeneratorConfig(n_clients=4, m_vehicles=2, seed=11))
    sol = construct_greedy(inst, 0.1)
    svg = render_routes_svg(inst, sol, 0.1)
    root = ET.fromstring(svg)
    tags = [el.tag.split("}")[-1] for el in root.iter()]
    assert tags.count("circle") == 4
    assert tags.count("rect") == 2          # background + depot marker
    n_segs = sum(len(vr) for vr in sol.routes)
    assert tags.count("polyline") == n_segs
    assert "alpha=0.1" in svg

    # geometry depends only on the instance and solution, not on alpha
    def glyphs(s):
        r = ET.fromstring(s)
        return [(el.tag, el.attrib.get("cx"), el.attrib.get("cy"),
                 el.attrib.get("points"), el.attrib.get("x"), el.attrib.get("y"))
                for el in r.iter() if not el.tag.endswith("text")]

    other = render_routes_svg(inst, sol, 0.9)
    assert glyphs(svg) == glyphs(other)


def test_render_svg_refuses_infeasible():
    inst = generate_uniform(GeneratorConfig(n_clients=3, m_vehicles=2, seed=5))
    dup = Solution(routes=[[[1, 2, 1]], [[3]]])
    with pytest.raises(FeasibilityError, match="refusing to plot"):
        render_routes_svg(inst, dup, 0.0)


# -- command line -------------------------------------------------------------

def test_cli_generate_writes_deterministic_files(tmp_path, capsys):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    argv = ["generate", "--n", "4", "--m", "2", "--count", "2",
            "--seed", "9", "--out-dir"]
    assert cli_dispatch(argv + [d1]) == 0
    assert cli_dispatch(argv + [d2]) == 0
    names = sorted(os.listdir(d1))
    assert names == sorted(os.listdir(d2)) and len(names) == 2
    for name in names:
        with open(os.path.join(d1, name), "rb") as f:
            b1 = f.read()
        with open(os.path.join(d2, name), "rb") as f:
            b2 = f.read()
        assert b1 == b2
        inst = load_instance(os.path.join(d1, name))
        assert inst.n_clients == 4 and inst.n_vehicles == 2
    out = capsys.readouterr().out
    assert out.count("wrote ") == 4


def test_cli_generate_zone_variant(tmp_path):
    d = str(tmp_path / "z")
    rc = cli_dispatch(["generate", "--n", "6", "--m", "2", "--seed", "3",
                       "--zone-rate", "0.5", "--out-dir", d])
    assert rc == 0
    names = os.listdir(d)
    assert len(names) == 1 and names[0].startswith("zone-")


def test_cli_usage_errors_exit_1(capsys):
    assert cli_dispatch([]) == 1
    assert cli_dispatch(["frobnicate"]) == 1
    assert cli_dispatch(["generate", "--bogus", "1"]) == 1
    assert cli_dispatch(["generate", "--n", "4", "--m", "2"]) == 1  # no out dir
    assert "pvrp" in capsys.readouterr().err


def test_cli_data_errors_exit_2(tmp_path, capsys):
    rc = cli_dispatch(["convert", "--cvrplib-in", str(tmp_path / "missing.vrp"),
                       "--out", str(tmp_path / "o.pvrp")])
    assert rc == 2
    junk = tmp_path / "junk.pvrp"
    junk.write_text("not an instance\n")
    rc = cli_dispatch(["plot", "--instance", str(junk),
                       "--solution", str(junk), "--out", str(tmp_path / "o.svg")])
    assert rc == 2
    assert capsys.readouterr().err.count("pvrp:") == 2


def test_cli_bench_rejects_empty_solver_list(tmp_path, capsys):
    cfgf = tmp_path / "b.cfg"
    cfgf.write_text("solvers =\n")
    rc = cli_dispatch(["bench", "--config", str(cfgf),
                       "--report", str(tmp_path / "r.tsv")])
    assert rc == 1
    assert "solver" in capsys.readouterr().err


def test_cli_bench_end_to_end(tmp_path, capsys):
    d = str(tmp_path / "inst")
    assert cli_dispatch(["generate", "--n", "5", "--m", "2", "--count", "2",
                         "--seed", "4", "--out-dir", d]) == 0
    cfgf = tmp_path / "bench.cfg"
    cfgf.write_text(
        "solvers = greedy_baseline, local_search\n"
        f"instances_dir = {d}\n"
        "alphas = 0.0, 0.1\n"
        "timing = off\n")
    rep = str(tmp_path / "out.tsv")
    assert cli_dispatch(["bench", "--config", str(cfgf), "--report", rep,
                         "--csv"]) == 0
    with open(rep) as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + 2 * 2 * 2
    assert os.path.exists(str(tmp_path / "out.csv"))
    # byte determinism across repeated runs
    with open(rep, "rb") as f:
        first = f.read()
    assert cli_dispatch(["bench", "--config", str(cfgf), "--report", rep]) == 0
    with open(rep, "rb") as f:
        assert f.read() == first


def test_cli_plot_end_to_end(tmp_path):
    inst = generate_uniform(GeneratorConfig(n_clients=5, m_vehicles=2, seed=8))
    ipath = str(tmp_path / "i.pvrp")
    save_instance(ipath, inst)
    spath = tmp_path / "s.txt"
    spath.write_text(format_solution(construct_greedy(inst, 0.1)))
    out = str(tmp_path / "routes.svg")
    rc = cli_dispatch(["plot", "--instance", ipath, "--solution", str(spath),
                       "--alpha", "0.1", "--out", out])
    assert rc == 0
    with open(out) as f:
        ET.fromstring(f.read())


def test_cli_convert_end_to_end(tmp_path):
    src = tmp_path / "toy.vrp"
    src.write_text(CVRPLIB_TOY)
    out = str(tmp_path / "toy.pvrp")
    rc = cli_dispatch(["convert", "--cvrplib-in", str(src), "--seed", "2",
                       "--out", out])
    assert rc == 0
    inst = load_instance(out)
    assert inst.n_clients == 2 and inst.n_vehicles == 2
    assert list(inst.demands) == [5, 7]


def test_parse_train_config_mapping_and_rejection():
    tcfg, pcfg = parse_train_config(
        "epochs = 2\nsteps_per_epoch = 3\nalpha_min = 0.1\nalpha_max = 0.3\n"
        "n_min = 4\nn_max = 6\nd_h = 8\nn_heads = 2\nd_ff = 16\nn_layers = 1\n")
    assert tcfg.epochs == 2 and tcfg.alpha_range == (0.1, 0.3)
    assert tcfg.n_range == (4, 6)
    assert pcfg.d_h == 8 and pcfg.n_layers == 1
    with pytest.raises(ConfigError, match="unknown train config key"):
        parse_train_config("epochs = 2\nwarmup = 5\n")


def test_cli_train_then_bench_with_checkpoint(tmp_path, capsys):
    cfgf = tmp_path / "train.cfg"
    cfgf.write_text(
        "epochs = 1\nsteps_per_epoch = 2\nbatch_size = 2\n"
        "rollouts_per_instance = 2\nn_min = 3\nn_max = 4\nm_min = 2\nm_max = 2\n"
        "seed = 1\nd_h = 8\nn_heads = 2\nd_ff = 16\nn_layers = 1\n")
    out_dir = str(tmp_path / "run")
    assert cli_dispatch(["train", "--config", str(cfgf),
                         "--out-dir", out_dir]) == 0
    final = os.path.join(out_dir, "final.bin")
    assert os.path.exists(final)
    assert os.path.exists(os.path.join(out_dir, "log.tsv"))

    inst_dir = str(tmp_path / "inst")
    assert cli_dispatch(["generate", "--n", "4", "--m", "2", "--seed", "6",
                         "--out-dir", inst_dir]) == 0
    bcfg = tmp_path / "bench.cfg"
    bcfg.write_text(
        f"solvers = policy@{final}, greedy_baseline\n"
        f"instances_dir = {inst_dir}\n"
        "alphas = 0.1\nmodes = greedy, sample:2\ntiming = off\n")
    rep = str(tmp_path / "r.tsv")
    assert cli_dispatch(["bench", "--config", str(bcfg), "--report", rep]) == 0
    with open(rep) as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + 3
