"""Classical reference solvers.

All three solvers share the same notion of feasibility as the environment:
exactly-once service, per-trip capacity, Forbid pairs never assigned, Require
pairs only to their vehicle. construct_greedy and local_search_improve are
heuristics; exact_bruteforce is an exhaustive oracle for tiny instances.
"""

from __future__ import annotations

import itertools

import numpy as np

from .environment import (Solution, check_feasibility, evaluate_solution,
                          preference_matrix)
from .errors import FeasibilityError
from .instances import Instance, is_forbid

BIG = 1e9


def profile_adjusted_cost(inst: Instance, alpha: float) -> np.ndarray:
    """Per-vehicle arc costs: stack of (N+1, N+1) matrices.

    cost[k, i, j] = dist(i, j)/v_k - alpha * pref(j, k) for the head node j
    (depot preference 0). Arcs into a client that vehicle k may not serve
    (Forbid, or Required by another vehicle) are BIG; the structural checks
    still enforce feasibility, BIG only steers the heuristics. Diagonal is 0
    except where the BIG rule overrides it.
    """
    n, m = inst.n_clients, inst.n_vehicles
    dist = inst.dist_matrix()
    pref = preference_matrix(inst)                       # (N, M)
    blocked = _blocked_matrix(inst)                      # (N, M) bool
    cost = np.empty((m, n + 1, n + 1))
    for k in range(m):
        head = np.concatenate([[0.0], pref[:, k]])
        cost[k] = dist / inst.speeds[k] - alpha * head[None, :]
        np.fill_diagonal(cost[k], 0.0)
        cost[k][:, 1:][:, blocked[:, k]] = BIG
    return cost


def _blocked_matrix(inst: Instance) -> np.ndarray:
    """(N, M) bool: client i may never be served by vehicle k."""
    forbid = np.isneginf(inst.profiles)
    req = inst.required_vehicle()
    blocked = forbid.copy()
    for i in np.flatnonzero(req >= 0):
        blocked[i, :] = True
        blocked[i, req[i]] = False
    return blocked


def construct_greedy(inst: Instance, alpha: float) -> Solution:
    """Round-robin constructive heuristic.

    Vehicles take turns; the cycle starts at the vehicle holding the most
    Require pins, since clusters tend to belong with their pinned vehicle.
    On its turn a vehicle repeatedly serves the feasible unserved client with
    the lowest adjusted cost from its current node, returning to the depot
    for a capacity reset whenever nothing fits, until no remaining client is
    feasible for it; then the next vehicle goes. Raises FeasibilityError if
    a full cycle serves nothing while clients remain.
    """
    n, m = inst.n_clients, inst.n_vehicles
    cost = profile_adjusted_cost(inst, alpha)
    blocked = _blocked_matrix(inst)
    demands = inst.demands
    unserved = set(range(1, n + 1))
    routes: list = [[] for _ in range(m)]
    start = int(np.argmax(np.isposinf(inst.profiles).sum(axis=0)))
    progress = True
    while unserved and progress:
        progress = False
        for k in ((start + t) % m for t in range(m)):
            rem = int(inst.capacities[k])
            pos, seg = 0, []

            def fits(limit):
                return [j for j in unserved
                        if not blocked[j - 1, k] and demands[j - 1] <= limit]

            while True:
                cand = fits(rem)
                if not cand and seg:
                    routes[k].append(seg)
                    seg, pos, rem = [], 0, int(inst.capacities[k])
                    cand = fits(rem)
                if not cand:
                    break
                j = min(cand, key=lambda c: (cost[k, pos, c], c))
                seg.append(j)
                unserved.discard(j)
                rem -= int(demands[j - 1])
                pos = j
                progress = True
            if seg:
                routes[k].append(seg)
    if unserved:
        raise FeasibilityError(f"no vehicle can serve clients {sorted(unserved)}")
    return Solution(routes=routes)


def local_search_improve(inst: Instance, alpha: float, sol: Solution,
                         budget: int = 20000) -> Solution:
    """First-improvement local search over 2-opt, relocate and swap moves.

    budget caps the number of candidate-move evaluations. The returned
    solution is feasible and its objective is >= the input's.
    """
    report = check_feasibility(inst, sol)
    if not report.ok:
        raise FeasibilityError(f"local search needs a feasible start: {report}")
    routes = [[list(seg) for seg in vr] for vr in sol.routes]
    best_obj = evaluate_solution(inst, sol, alpha)
    blocked = _blocked_matrix(inst)
    demands = inst.demands
    caps = inst.capacities
    evals = 0

    def try_candidate(cand_routes):
        nonlocal evals
        evals += 1
        cand = Solution(routes=[[seg for seg in vr if seg] for vr in cand_routes])
        return cand, evaluate_solution(inst, cand, alpha)

    improved = True
    while improved and evals < budget:
        improved = False
        # intra-segment 2-opt: reversal keeps loads and assignments legal
        for k, vr in enumerate(routes):
            for si, seg in enumerate(vr):
                for i in range(len(seg) - 1):
                    for j in range(i + 1, len(seg)):
                        if evals >= budget:
                            break
                        new_seg = seg[:i] + seg[i:j + 1][::-1] + seg[j + 1:]
                        cand_routes = [list(r) for r in routes]
                        cand_routes[k] = vr[:si] + [new_seg] + vr[si + 1:]
                        cand, obj = try_candidate(cand_routes)
                        if obj > best_obj + 1e-12:
                            routes = [[list(s) for s in r] for r in cand.routes]
                            best_obj = obj
                            improved = True
                            break
                    if improved:
                        break
                if improved:
                    break
            if improved:
                break
        if improved or evals >= budget:
            continue
        # relocate one client anywhere legal (including a fresh trip)
        flat = [(k, si, i) for k, vr in enumerate(routes)
                for si, seg in enumerate(vr) for i in range(len(seg))]
        for (k, si, i) in flat:
            c = routes[k][si][i]
            for k2 in range(len(routes)):
                if blocked[c - 1, k2]:
                    continue
                targets = [(s2, p) for s2, seg2 in enumerate(routes[k2])
                           for p in range(len(seg2) + 1)]
                targets.append((len(routes[k2]), 0))   # new trip
                for (s2, p) in targets:
                    if evals >= budget:
                        break
                    if k2 == k and s2 == si and p in (i, i + 1):
                        continue
                    cand_routes = [[list(s) for s in r] for r in routes]
                    cand_routes[k][si].pop(i)
                    if s2 == len(cand_routes[k2]):
                        cand_routes[k2].append([])
                    seg2 = cand_routes[k2][s2]
                    load2 = sum(demands[x - 1] for x in seg2) + demands[c - 1]
                    if load2 > caps[k2]:
                        continue
                    seg2.insert(min(p, len(seg2)), c)
                    cand, obj = try_candidate(cand_routes)
                    if obj > best_obj + 1e-12:
                        routes = [[list(s) for s in r] for r in cand.routes]
                        best_obj = obj
                        improved = True
                        break
                if improved or evals >= budget:
                    break
            if improved or evals >= budget:
                break
        if improved or evals >= budget:
            continue
        # swap two clients across positions
        for a in range(len(flat)):
            for b in range(a + 1, len(flat)):
                if evals >= budget:
                    break
                (k1, s1, i1), (k2, s2, i2) = flat[a], flat[b]
                c1, c2 = routes[k1][s1][i1], routes[k2][s2][i2]
                if blocked[c1 - 1, k2] or blocked[c2 - 1, k1]:
                    continue
                cand_routes = [[list(s) for s in r] for r in routes]
                cand_routes[k1][s1][i1], cand_routes[k2][s2][i2] = c2, c1
                ok = True
                for (kk, ss) in {(k1, s1), (k2, s2)}:
                    if sum(demands[x - 1] for x in cand_routes[kk][ss]) > caps[kk]:
                        ok = False
                if not ok:
                    continue
                cand, obj = try_candidate(cand_routes)
                if obj > best_obj + 1e-12:
                    routes = [[list(s) for s in r] for r in cand.routes]
                    best_obj = obj
                    improved = True
                    break
            if improved or evals >= budget:
                break
    return Solution(routes=[[seg for seg in vr if seg] for vr in routes])


# -- exact oracle -------------------------------------------------------------

def _best_order_value(order, dist_v, pref_gain, demands, cap):
    """Optimal depot-return placement for a fixed visit order: split DP.

    best[i] = value of serving order[i:], starting fresh at the depot.
    Returns (value, trip list). Demand prefix pruning keeps it O(n^2).
    """
    n = len(order)
    best = [None] * (n + 1)
    best_cut = [0] * (n + 1)
    best[n] = 0.0
    for i in range(n - 1, -1, -1):
        load = 0
        val_best = None
        cut_best = i + 1
        travel = dist_v[0, order[i]]
        gain = 0.0
        for j in range(i, n):
            load += demands[order[j] - 1]
            if load > cap:
                break
            if j > i:
                travel += dist_v[order[j - 1], order[j]]
            gain += pref_gain[order[j] - 1]
            tail = best[j + 1]
            if tail is None:
                continue
            val = gain - travel - dist_v[order[j], 0] + tail
            if val_best is None or val > val_best:
                val_best = val
                cut_best = j + 1
        best[i] = val_best
        best_cut[i] = cut_best
    if best[0] is None:
        return None, None
    trips = []
    i = 0
    while i < n:
        j = best_cut[i]
        trips.append(list(order[i:j]))
        i = j
    return best[0], trips


def _best_route_for_set(inst, k, clients, alpha):
    """Best multi-trip route value for vehicle k over an exact client set."""
    if not clients:
        return 0.0, []
    dist_v = inst.dist_matrix() / inst.speeds[k]
    pref_gain = alpha * preference_matrix(inst)[:, k]
    best_val, best_trips = None, None
    for order in itertools.permutations(clients):
        val, trips = _best_order_value(order, dist_v, pref_gain,
                                       inst.demands, int(inst.capacities[k]))
        if val is not None and (best_val is None or val > best_val):
            best_val, best_trips = val, trips
    return best_val, best_trips


def exact_bruteforce(inst: Instance, alpha: float, max_clients: int = 8,
                     max_vehicles: int = 2):
    """Exhaustive optimum for tiny instances: (Solution, objective).

    Enumerates client-to-vehicle assignments in lexicographic order, visit
    orders per vehicle, and optimal depot-return splits; the first strict
    maximizer wins, making ties lexicographic and the result deterministic.
    """
    n, m = inst.n_clients, inst.n_vehicles
    if n > max_clients or m > max_vehicles:
        raise ValueError(
            f"exact solver guard: N={n} M={m} exceeds ({max_clients}, {max_vehicles})")
    blocked = _blocked_matrix(inst)
    allowed = [np.flatnonzero(~blocked[i]) for i in range(n)]
    if any(len(a) == 0 for a in allowed):
        raise FeasibilityError("a client has no vehicle allowed to serve it")

    route_cache: dict = {}

    def route_for(k, subset):
        key = (k, subset)
        if key not in route_cache:
            route_cache[key] = _best_route_for_set(inst, k, subset, alpha)
        return route_cache[key]

    best_val, best_routes = None, None
    for assign in itertools.product(*allowed):
        sets = tuple(tuple(j + 1 for j in range(n) if assign[j] == k)
                     for k in range(m))
        val = 0.0
        trips_per_vehicle = []
        feasible = True
        for k in range(m):
            v, trips = route_for(k, sets[k])
            if v is None:
                feasible = False
                break
            val += v
            trips_per_vehicle.append(trips if trips else [])
        if feasible and (best_val is None or val > best_val):
            best_val = val
            best_routes = trips_per_vehicle
    if best_val is None:
        raise FeasibilityError("no feasible assignment exists")
    sol = Solution(routes=[[list(t) for t in trips] for trips in best_routes])
    report = check_feasibility(inst, sol)
    assert report.ok, str(report)
    return sol, evaluate_solution(inst, sol, alpha)
