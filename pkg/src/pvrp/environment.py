"""Multi-vehicle routing MDP plus the standalone objective/feasibility tools.

All M vehicles act in parallel each step: every vehicle proposes a target node
(0 = depot, i >= 1 = client i), a deterministic conflict resolver makes the
joint action collision-free, and the transition moves every vehicle at once.
Arriving at a client collects alpha * preference minus travel time; arriving
at the depot resets capacity (multi-trip). An episode ends when every client
is served and every vehicle is back at the depot. gamma = 1 throughout.

Preference conventions used everywhere in this package:
    depot            0
    finite entry     the stored value
    REQUIRE entry    1.0 (the default generator p_max)
    FORBID entry     0.0 (only reachable by an infeasible solution)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, ParseError
from .instances import Instance

REQUIRE_PREF_VALUE = 1.0


@dataclass
class EnvState:
    positions: np.ndarray   # (M,) node index per vehicle, 0 = depot
    remaining: np.ndarray   # (M,) capacity left in the current trip
    visited: np.ndarray     # (N,) bool per client
    step: int = 0
    accumulated_reward: float = 0.0

    def copy(self) -> "EnvState":
        return EnvState(self.positions.copy(), self.remaining.copy(),
                        self.visited.copy(), self.step, self.accumulated_reward)


@dataclass
class Solution:
    """Per-vehicle route segments; each segment is a depot-to-depot client list."""

    routes: list  # routes[k] = [[c, c, ...], [c, ...], ...]

    @property
    def n_vehicles(self) -> int:
        return len(self.routes)

    def served_clients(self) -> list:
        out = []
        for segs in self.routes:
            for seg in segs:
                out.extend(seg)
        return out

    def __eq__(self, other):
        if not isinstance(other, Solution):
            return NotImplemented
        return self.routes == other.routes


def preference_value(inst: Instance, node: int, k: int) -> float:
    """Preference collected when vehicle k arrives at node (0 = depot)."""
    if node == 0:
        return 0.0
    p = inst.profiles[node - 1, k]
    if np.isposinf(p):
        return REQUIRE_PREF_VALUE
    if np.isneginf(p):
        return 0.0
    return float(p)


def preference_matrix(inst: Instance) -> np.ndarray:
    """(N, M) finite preference values under the conventions above."""
    p = inst.profiles.copy()
    p[np.isposinf(p)] = REQUIRE_PREF_VALUE
    p[np.isneginf(p)] = 0.0
    return p


def reset(inst: Instance) -> EnvState:
    return EnvState(positions=np.zeros(inst.n_vehicles, dtype=np.int64),
                    remaining=inst.capacities.copy(),
                    visited=np.zeros(inst.n_clients, dtype=bool))


def feasible_mask(inst: Instance, state: EnvState, k: int) -> np.ndarray:
    """Boolean vector over nodes {0..N} of legal targets for vehicle k.

    Client i is feasible iff it is unvisited, fits the remaining capacity,
    is not FORBID for k, and is not REQUIREd by another vehicle. The depot
    is always feasible except when the vehicle already sits there while some
    client is still feasible for it; that exception forbids idling and
    guarantees episode progress.
    """
    if not 0 <= k < inst.n_vehicles:
        raise IndexError(f"vehicle index {k} out of range 0..{inst.n_vehicles - 1}")
    mask = np.zeros(inst.n_clients + 1, dtype=bool)
    col = inst.profiles[:, k]
    ok = (~state.visited) & (inst.demands <= state.remaining[k]) & ~np.isneginf(col)
    req = inst.required_vehicle()
    ok &= (req == -1) | (req == k)
    mask[1:] = ok
    mask[0] = not (state.positions[k] == 0 and ok.any())
    return mask


def resolve_conflicts(proposed, logprobs) -> list:
    """Make a joint proposal collision-free.

    If several vehicles propose the same client, the one with the largest
    log-probability keeps it (ties to the lowest vehicle index); every loser
    is sent to the depot. Depot proposals never conflict.
    """
    actions = list(proposed)
    by_client = {}
    for k, a in enumerate(actions):
        if a != 0:
            by_client.setdefault(a, []).append(k)
    for a, ks in by_client.items():
        if len(ks) < 2:
            continue
        winner = max(ks, key=lambda k: (logprobs[k], -k))
        for k in ks:
            if k != winner:
                actions[k] = 0
    return actions


def step(inst: Instance, state: EnvState, action, alpha: float):
    """Advance every vehicle by one joint action; returns (new state, reward).

    The action must already be conflict-free. Client moves are validated
    against the mask rules and raise on violation (a policy bug, not data).
    Depot moves are always executable, including the stay-at-depot no-op of
    conflict losers, and contribute 0 when the vehicle is already there.
    """
    n, m = inst.n_clients, inst.n_vehicles
    if len(action) != m:
        raise ValueError(f"joint action needs {m} entries")
    targets = [a for a in action if a != 0]
    if len(targets) != len(set(targets)):
        raise RuntimeError(f"joint action assigns one client twice: {list(action)}")
    req = inst.required_vehicle()
    dist = inst.dist_matrix()
    new = state.copy()
    reward = 0.0
    for k, a in enumerate(action):
        a = int(a)
        if not 0 <= a <= n:
            raise ValueError(f"action {a} out of range 0..{n}")
        pos = int(state.positions[k])
        if a == 0:
            if pos != 0:
                reward += -dist[pos, 0] / float(inst.speeds[k])
            new.positions[k] = 0
            new.remaining[k] = int(inst.capacities[k])
            continue
        i = a - 1
        if state.visited[i]:
            raise RuntimeError(f"vehicle {k} moved to already-served client {a}")
        if inst.demands[i] > state.remaining[k]:
            raise RuntimeError(f"vehicle {k} lacks capacity for client {a}")
        if np.isneginf(inst.profiles[i, k]):
            raise RuntimeError(f"vehicle {k} is forbidden for client {a}")
        if req[i] != -1 and req[i] != k:
            raise RuntimeError(f"client {a} requires vehicle {int(req[i])}, got {k}")
        reward += alpha * preference_value(inst, a, k) - dist[pos, a] / float(inst.speeds[k])
        new.positions[k] = a
        new.remaining[k] -= int(inst.demands[i])
        new.visited[i] = True
    new.step = state.step + 1
    new.accumulated_reward = state.accumulated_reward + reward
    return new, reward


def is_terminal(inst: Instance, state: EnvState) -> bool:
    return bool(state.visited.all() and (state.positions == 0).all())


def max_episode_steps(inst: Instance) -> int:
    # each step either serves a client or moves someone depot-ward, and the
    # idle-at-depot rule forbids repeated no-ops, so 2*(N + M*N) is generous
    return 2 * (inst.n_clients + inst.n_vehicles * inst.n_clients)


def rollout_uniform_random(inst: Instance, alpha: float, rng):
    """Reference rollout: every vehicle samples uniformly over its mask.

    Returns (Solution, objective). Used as the untrained-policy yardstick
    and by fuzz tests; obeys exactly the same mask/conflict/step pipeline
    as any learned policy.
    """
    state = reset(inst)
    segments = [[] for _ in range(inst.n_vehicles)]
    open_seg = [[] for _ in range(inst.n_vehicles)]
    cap = max_episode_steps(inst)
    while not is_terminal(inst, state):
        if state.step >= cap:
            raise RuntimeError("episode exceeded the step bound; mask bug")
        proposed, logprobs = [], []
        for k in range(inst.n_vehicles):
            mask = feasible_mask(inst, state, k)
            choices = np.flatnonzero(mask)
            a = int(choices[rng.integers(choices.size)])
            proposed.append(a)
            logprobs.append(-np.log(choices.size))
        action = resolve_conflicts(proposed, logprobs)
        state, _ = step(inst, state, action, alpha)
        for k, a in enumerate(action):
            if a == 0:
                if open_seg[k]:
                    segments[k].append(open_seg[k])
                    open_seg[k] = []
            else:
                open_seg[k].append(a)
    sol = Solution(routes=segments)
    return sol, evaluate_solution(inst, sol, alpha)


def actions_to_solution(n_vehicles: int, actions) -> Solution:
    """Fold a sequence of executed joint actions into route segments."""
    segments = [[] for _ in range(n_vehicles)]
    open_seg = [[] for _ in range(n_vehicles)]
    for joint in actions:
        for k, a in enumerate(joint):
            if a == 0:
                if open_seg[k]:
                    segments[k].append(open_seg[k])
                    open_seg[k] = []
            else:
                open_seg[k].append(int(a))
    for k in range(n_vehicles):
        if open_seg[k]:
            segments[k].append(open_seg[k])
    return Solution(routes=segments)


def evaluate_solution(inst: Instance, sol: Solution, alpha: float) -> float:
    """Total objective: sum over arcs of alpha * pref(arrival) - travel time.

    Every segment implicitly starts and ends at the depot; the depot arrival
    carries no preference. Raises FeasibilityError when the solution does not
    serve every client exactly once (other violations are the checker's job).
    """
    if sol.n_vehicles != inst.n_vehicles:
        raise ValueError(f"solution has {sol.n_vehicles} vehicles, instance {inst.n_vehicles}")
    served = sol.served_clients()
    counts = np.zeros(inst.n_clients + 1, dtype=np.int64)
    for c in served:
        if not 1 <= c <= inst.n_clients:
            raise ValueError(f"client index {c} out of range 1..{inst.n_clients}")
        counts[c] += 1
    dup = [int(c) for c in range(1, inst.n_clients + 1) if counts[c] > 1]
    missing = [int(c) for c in range(1, inst.n_clients + 1) if counts[c] == 0]
    if dup or missing:
        raise FeasibilityError(
            f"clients served twice: {dup}; clients never served: {missing}")
    dist = inst.dist_matrix()
    total = 0.0
    for k, segs in enumerate(sol.routes):
        v = float(inst.speeds[k])
        for seg in segs:
            prev = 0
            for c in seg:
                total += alpha * preference_value(inst, c, k) - dist[prev, c] / v
                prev = c
            total += -dist[prev, 0] / v
    return total


@dataclass
class Violation:
    kind: str      # unserved | duplicate | capacity | forbid | require | structure
    message: str


@dataclass
class FeasibilityReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "feasible"
        return "\n".join(f"[{v.kind}] {v.message}" for v in self.violations)


def check_feasibility(inst: Instance, sol: Solution) -> FeasibilityReport:
    """Collect every constraint violation of a complete solution.

    Checks exactly-once service, per-segment capacity (capacity resets at the
    depot, so multi-trip routes are legal), FORBID assignments, REQUIRE
    assignments given to the wrong vehicle, and structural problems (empty
    segments, bad indices, wrong vehicle count). Violations are data, not
    exceptions; an empty report means feasible.
    """
    report = FeasibilityReport()
    add = report.violations.append
    if sol.n_vehicles != inst.n_vehicles:
        add(Violation("structure", f"solution has {sol.n_vehicles} vehicles, "
                                   f"instance has {inst.n_vehicles}"))
        return report
    counts = np.zeros(inst.n_clients + 1, dtype=np.int64)
    req = inst.required_vehicle()
    for k, segs in enumerate(sol.routes):
        for seg in segs:
            if not seg:
                add(Violation("structure", f"vehicle {k} has an empty segment"))
                continue
            load = 0
            for c in seg:
                if not 1 <= c <= inst.n_clients:
                    add(Violation("structure", f"client index {c} out of range"))
                    continue
                counts[c] += 1
                load += int(inst.demands[c - 1])
                if np.isneginf(inst.profiles[c - 1, k]):
                    add(Violation("forbid", f"vehicle {k} serves forbidden client {c}"))
                if req[c - 1] != -1 and req[c - 1] != k:
                    add(Violation("require", f"client {c} requires vehicle "
                                             f"{int(req[c - 1])} but got {k}"))
            if load > int(inst.capacities[k]):
                add(Violation("capacity", f"vehicle {k} segment load {load} exceeds "
                                          f"capacity {int(inst.capacities[k])}"))
    for c in range(1, inst.n_clients + 1):
        if counts[c] == 0:
            add(Violation("unserved", f"client {c} never served"))
        elif counts[c] > 1:
            add(Violation("duplicate", f"client {c} served {int(counts[c])} times"))
    return report


# -- solution text format ----------------------------------------------------

def format_solution(sol: Solution) -> str:
    """One line per vehicle: 'k=1: 3 5 | 2' (1-based vehicles, '|' between trips)."""
    lines = []
    for k, segs in enumerate(sol.routes):
        body = " | ".join(" ".join(str(c) for c in seg) for seg in segs)
        lines.append(f"k={k + 1}: {body}".rstrip())
    return "\n".join(lines) + "\n"


def parse_solution(text: str) -> Solution:
    """Inverse of format_solution; whitespace-tolerant."""
    routes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        head, sep, body = line.partition(":")
        if not sep or not head.strip().startswith("k="):
            raise ParseError("expected 'k=<vehicle>: ...'", lineno)
        try:
            k = int(head.strip()[2:])
        except ValueError:
            raise ParseError(f"bad vehicle tag {head.strip()!r}", lineno) from None
        if k < 1 or k in routes:
            raise ParseError(f"bad or repeated vehicle index {k}", lineno)
        segs = []
        for part in body.split("|"):
            toks = part.split()
            if toks:
                try:
                    segs.append([int(t) for t in toks])
                except ValueError:
                    raise ParseError(f"bad client token in {part!r}", lineno) from None
        routes[k] = segs
    if not routes or sorted(routes) != list(range(1, len(routes) + 1)):
        raise ParseError("vehicle lines must cover k=1..M exactly once")
    return Solution(routes=[routes[k] for k in range(1, len(routes) + 1)])
