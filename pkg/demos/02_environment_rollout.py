"""
Stepping the routing environment
================================

Walks the multi-vehicle simulator by hand for a couple of joint actions,
then runs a full random rollout and checks the reward/objective identity.
"""

import numpy as np

from pvrp import GeneratorConfig, generate_uniform
from pvrp import (reset, feasible_mask, step, is_terminal, evaluate_solution,
                  rollout_uniform_random, check_feasibility)

inst = generate_uniform(GeneratorConfig(n_clients=6, m_vehicles=2, seed=3))
alpha = 0.1

state = reset(inst)
print("start positions:", state.positions, "remaining:", state.remaining)

# each vehicle picks its nearest feasible client; 0 is the depot
action = []
for k in range(inst.n_vehicles):
    mask = feasible_mask(inst, state, k)
    options = np.flatnonzero(mask)
    action.append(int(options[1]) if len(options) > 1 else 0)
# a joint action may not assign a client twice, so nudge collisions apart
if action[0] == action[1]:
    mask = feasible_mask(inst, state, 1)
    mask[action[0]] = False
    action[1] = int(np.flatnonzero(mask)[0])

state, reward = step(inst, state, action, alpha)
print("after", action, "reward:", round(reward, 4), "visited:", state.visited)

# send everyone home; capacity resets at the depot (multi-trip)
state, reward = step(inst, state, [0, 0], alpha)
print("back at depot, remaining:", state.remaining)

# a full episode with uniformly random feasible actions
rng = np.random.default_rng(0)
sol, obj = rollout_uniform_random(inst, alpha, rng)
print("random solution:", sol.routes)
print("objective:", round(obj, 6))
print("feasible:", check_feasibility(inst, sol).ok)

# the episode's summed rewards equal the solution objective
print("evaluate_solution:", round(evaluate_solution(inst, sol, alpha), 6))
print("terminal state reached:", is_terminal(inst, state) or "not yet")
