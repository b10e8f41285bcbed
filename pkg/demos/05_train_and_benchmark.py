"""
Training and benchmarking end to end
====================================

Runs a deliberately tiny REINFORCE loop, then benchmarks the checkpoint
against the classical solvers and renders one routing to SVG.
"""

import os
import tempfile

from pvrp import (BenchConfig, GeneratorConfig, PolicyConfig, TrainConfig,
                  generate_uniform, load_policy, render_routes_svg, rollout,
                  run_benchmark, save_instance, train)

work = tempfile.mkdtemp(prefix="pvrp-demo-")

# seconds-scale settings; see the README for a real desk-scale run
tcfg = TrainConfig(batch_size=2, rollouts_per_instance=2,
                   n_range=(4, 5), m_range=(2, 2),
                   epochs=1, steps_per_epoch=3, seed=3)
pcfg = PolicyConfig(d_h=8, n_heads=2, d_ff=16, n_layers=1)
params, ckpt = train(tcfg, pcfg, os.path.join(work, "run"))
print("checkpoint:", ckpt)
with open(os.path.join(work, "run", "log.tsv")) as fh:
    print(fh.read().rstrip())

# benchmark it next to the classical solvers on fresh instances
inst_dir = os.path.join(work, "instances")
os.makedirs(inst_dir)
for seed in (21, 22):
    inst = generate_uniform(GeneratorConfig(n_clients=5, m_vehicles=2, seed=seed))
    save_instance(os.path.join(inst_dir, inst.name + ".pvrp"), inst)

bcfg = BenchConfig(solvers=("greedy_baseline", "local_search", f"policy@{ckpt}"),
                   alphas=(0.0, 0.2), modes=("greedy", "sample:4"),
                   instances_dir=inst_dir, seed=9)
report = run_benchmark(bcfg)
print(report.to_tsv())

# plot the policy's greedy routing for one instance
params2, pcfg2 = load_policy(ckpt)
inst = generate_uniform(GeneratorConfig(n_clients=5, m_vehicles=2, seed=21))
sol = rollout(inst, 0.2, params2, pcfg2).solution
svg_path = os.path.join(work, "routes.svg")
with open(svg_path, "w") as fh:
    fh.write(render_routes_svg(inst, sol, 0.2))
print("svg:", svg_path, os.path.getsize(svg_path), "bytes")
