"""Profiled vehicle routing toolkit.

Subpackages:
    instances    data model, generators, text codecs
    environment  multi-vehicle MDP, objective evaluation, feasibility checks
    numcore      dense f64 tensors with reverse-mode autodiff, Adam, checkpoints
    policy       attention encoder/decoder policy and rollout drivers
    training     REINFORCE trainer with shared symmetric-augmentation baseline
    baselines    greedy construction, local search, tiny exact oracle
    bench        benchmark runner, gap computation, SVG route plots
    cli          command-line front end (pvrp generate/convert/train/bench/plot)
"""

from .baselines import (construct_greedy, exact_bruteforce,
                        local_search_improve, profile_adjusted_cost)
from .bench import (BenchConfig, BenchReport, compute_gap, parse_bench_config,
                    render_routes_svg, run_benchmark)
from .environment import (EnvState, Solution, actions_to_solution,
                          check_feasibility, evaluate_solution, feasible_mask,
                          format_solution, is_terminal, max_episode_steps,
                          parse_solution, preference_matrix, preference_value,
                          reset, resolve_conflicts, rollout_uniform_random,
                          step)
from .errors import (ConfigError, FeasibilityError, ParseError, PvrpError,
                     ValidationError)
from .instances import (FORBID, REQUIRE, GeneratorConfig, Instance,
                        derive_pvrplib, generate_uniform,
                        generate_zone_constrained, load_instance,
                        parse_cvrplib, read_instance, save_instance,
                        write_instance)
from .policy import (PolicyConfig, init_params, load_policy, rollout,
                     save_policy)
from .training import (TrainConfig, collect_replays, reinforce_loss,
                       sample_training_instance, symmetric_augment, train)

__version__ = "0.1.0"
