"""Attention policy: instance embeddings, profiled encoder, parallel decoder.

Encoder layout. Three embedding streams run through every encoder layer:
clients (N x d), vehicles (M x d) and client-vehicle profile pairs (N*M x d,
client-major). Each layer applies client-client and vehicle-vehicle
self-attention, two profile-valued cross-attentions (vehicles attending over
clients with that vehicle's profile column as values, and clients attending
over vehicles with that client's profile row as values), then fuses
per (client i, vehicle k):

    fused[i,k] = W_fuse . concat(h_v[k], h_c[i], veh_attn[k], cli_attn[i]) + h_p[i,k]

followed by Norm/FFN sublayers per stream. The encoder output is one
(M+N) x d matrix per vehicle: the M vehicle rows followed by the N fused
rows of that vehicle's column.

Decoder. Per step, each vehicle builds a query from its mean-pooled encoder
matrix, its current node's row (the vehicle's own row while at the depot) and
four normalized state scalars; the M queries exchange information through one
self-attention + FFN block; pointer scores against the projected action rows
are scaled by 1/sqrt(d_h), shifted by the distance/preference shaping term
(psr_reshape) and squashed by score_clip * tanh, so every pre-mask logit lies
in [-score_clip, score_clip]. Masked actions are written to -1e30, which is
probability exactly 0 after the f64 softmax.

The rollout's total log-probability sums the log-probabilities of the
executed joint action: conflict winners score their proposal, losers score
the depot they were re-routed to. A loser whose depot is masked contributes
the -1e30 fill (log of an exact zero); that term is constant up to the
row's log-normalizer, so gradients stay finite, but the scalar value is
dominated by it. Finite-difference checks should therefore replay
conflict-free trajectories. RolloutResult records proposals and executed
actions separately; replay needs only the executed actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .environment import (EnvState, Solution, actions_to_solution,
                          evaluate_solution, feasible_mask, is_terminal,
                          max_episode_steps, resolve_conflicts, reset, step)
from .errors import ConfigError
from .instances import Instance

PSR_MODES = ("literal", "penalize_low_pref", "off")
RESIDUAL_MODES = ("both", "ffn_only")
MASK_FILL = -1e30
PSR_EPS = 1e-6


@dataclass(frozen=True)
class PolicyConfig:
    d_h: int = 128
    n_heads: int = 8
    d_ff: int = 512
    n_layers: int = 3
    score_clip: float = 10.0
    psr_mode: str = "literal"
    residual_mode: str = "both"

    def validate(self):
        if self.d_h < 1 or self.n_heads < 1 or self.d_ff < 1 or self.n_layers < 1:
            raise ConfigError("policy dimensions must be positive")
        if self.d_h % self.n_heads != 0:
            raise ConfigError(f"d_h {self.d_h} not divisible by n_heads {self.n_heads}")
        if self.score_clip <= 0:
            raise ConfigError("score_clip must be positive")
        if self.psr_mode not in PSR_MODES:
            raise ConfigError(f"psr_mode must be one of {PSR_MODES}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ConfigError(f"residual_mode must be one of {RESIDUAL_MODES}")


def init_params(cfg: PolicyConfig, seed: int) -> dict:
    """Fresh parameter dict: weights ~ U(-1/sqrt(fan_in), +), biases 0, gains 1."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, dff = cfg.d_h, cfg.d_ff
    params: dict = {}

    def weight(name, out_dim, in_dim):
        bound = 1.0 / math.sqrt(in_dim)
        params[name] = nc.parameter(rng.uniform(-bound, bound, (out_dim, in_dim)), name)

    def bias(name, dim):
        params[name] = nc.parameter(np.zeros(dim), name)

    def affine(prefix, out_dim, in_dim):
        weight(prefix + ".W", out_dim, in_dim)
        bias(prefix + ".b", out_dim)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.{w}", d, d)

    def norm(prefix):
        params[prefix + ".g"] = nc.parameter(np.ones(d), prefix + ".g")
        bias(prefix + ".b", d)

    def ffn(prefix):
        affine(prefix + ".ff1", dff, d)
        affine(prefix + ".ff2", d, dff)

    affine("embed.client", d, 3)
    affine("embed.vehicle", d, 4)
    affine("embed.profile", d, 1)
    affine("embed.require", d, 1)
    affine("embed.forbid", d, 1)
    affine("embed.alpha", d, 1)
    for l in range(cfg.n_layers):
        pre = f"enc{l}"
        for block in ("cc", "vv", "vc", "cv"):
            attn(f"{pre}.{block}")
        affine(f"{pre}.fuse", d, 4 * d)
        for stream in ("c", "v", "p"):
            norm(f"{pre}.{stream}.norm1")
            ffn(f"{pre}.{stream}")
            norm(f"{pre}.{stream}.norm2")
    weight("dec.state.W", d, 4)
    weight("dec.query.W", d, 3 * d)
    attn("dec.comm")
    norm("dec.comm.norm1")
    ffn("dec.comm")
    norm("dec.comm.norm2")
    weight("dec.ptr.W", d, d)
    weight("dec.u.W", d, d)
    return params


@dataclass
class Embeddings:
    clients: nc.Tensor    # (N, d)
    vehicles: nc.Tensor   # (M, d)
    profiles: nc.Tensor   # (N*M, d), row i*M + k is pair (client i, vehicle k)
    weight: nc.Tensor     # (d,) embedding of the objective weight alpha
    n: int
    m: int


def embed(inst: Instance, alpha: float, params: dict) -> Embeddings:
    """Pointwise input embeddings with the alpha vector added to every stream.

    Client features (x, y, d/Q_max); vehicle features (Q/Q_max, v, depot);
    finite profile entries go through one shared affine scalar map while the
    two sentinels get dedicated projections of an all-ones input.
    """
    n, m = inst.n_clients, inst.n_vehicles
    qmax = float(inst.capacities.max())
    xc = np.column_stack([inst.coords, inst.demands / qmax])
    h_c = nc.linear(nc.constant(xc), params["embed.client.W"], params["embed.client.b"])
    xv = np.column_stack([inst.capacities / qmax, inst.speeds,
                          np.full(m, inst.depot[0]), np.full(m, inst.depot[1])])
    h_v = nc.linear(nc.constant(xv), params["embed.vehicle.W"], params["embed.vehicle.b"])

    flat = inst.profiles.reshape(-1)
    finite = np.isfinite(flat)
    vals = np.where(finite, flat, 0.0)[:, None]
    h_fin = nc.linear(nc.constant(vals), params["embed.profile.W"], params["embed.profile.b"])
    ones = nc.constant([[1.0]])
    h_req = nc.linear(ones, params["embed.require.W"], params["embed.require.b"])
    h_forb = nc.linear(ones, params["embed.forbid.W"], params["embed.forbid.b"])
    h_p = nc.add(nc.mul(h_fin, nc.constant(finite[:, None].astype(float))),
                 nc.add(nc.matmul(nc.constant(np.isposinf(flat)[:, None].astype(float)), h_req),
                        nc.matmul(nc.constant(np.isneginf(flat)[:, None].astype(float)), h_forb)))

    d = params["embed.client.W"].shape[0]
    h_alpha = nc.reshape(nc.linear(nc.constant([[float(alpha)]]),
                                   params["embed.alpha.W"], params["embed.alpha.b"]), (d,))
    return Embeddings(clients=nc.add(h_c, h_alpha), vehicles=nc.add(h_v, h_alpha),
                      profiles=nc.add(h_p, h_alpha), weight=h_alpha, n=n, m=m)


@dataclass
class Encoded:
    per_vehicle: list   # per_vehicle[k] is an (M+N, d) Tensor
    n: int
    m: int


def _ffn(x, params, prefix):
    h = nc.relu(nc.linear(x, params[prefix + ".ff1.W"], params[prefix + ".ff1.b"]))
    return nc.linear(h, params[prefix + ".ff2.W"], params[prefix + ".ff2.b"])


def _attn_then_ffn(attn_out, x, params, prefix, residual_mode):
    # ffn_only skips the residual on the attention sublayer
    y = nc.add(attn_out, x) if residual_mode == "both" else attn_out
    y = nc.layernorm(y, params[prefix + ".norm1.g"], params[prefix + ".norm1.b"])
    y2 = nc.add(_ffn(y, params, prefix), y)
    return nc.layernorm(y2, params[prefix + ".norm2.g"], params[prefix + ".norm2.b"])


def encode(emb: Embeddings, params: dict, cfg: PolicyConfig) -> Encoded:
    cfg.validate()
    n, m, heads = emb.n, emb.m, cfg.n_heads
    h_c, h_v, h_p = emb.clients, emb.vehicles, emb.profiles

    def att(prefix, q, k, v):
        return nc.mha_forward(q, k, v, heads,
                              params[prefix + ".wq"], params[prefix + ".wk"],
                              params[prefix + ".wv"], params[prefix + ".wo"])

    for l in range(cfg.n_layers):
        pre = f"enc{l}"
        cc = att(f"{pre}.cc", h_c, h_c, h_c)
        vv = att(f"{pre}.vv", h_v, h_v, h_v)
        veh_rows = []
        for k in range(m):
            col = nc.take_rows(h_p, np.arange(n) * m + k)
            veh_rows.append(att(f"{pre}.vc", nc.take_rows(h_v, [k]), h_c, col))
        veh_attn = nc.concat(veh_rows, axis=0)              # (M, d)
        cli_rows = []
        for i in range(n):
            row = nc.take_rows(h_p, i * m + np.arange(m))
            cli_rows.append(att(f"{pre}.cv", nc.take_rows(h_c, [i]), h_v, row))
        cli_attn = nc.concat(cli_rows, axis=0)              # (N, d)

        fused_in = nc.concat([nc.tile_rows(h_v, n), nc.repeat_rows(h_c, m),
                              nc.tile_rows(veh_attn, n), nc.repeat_rows(cli_attn, m)],
                             axis=1)                         # (N*M, 4d)
        fused = nc.add(nc.linear(fused_in, params[f"{pre}.fuse.W"],
                                 params[f"{pre}.fuse.b"]), h_p)

        h_c = _attn_then_ffn(cc, h_c, params, f"{pre}.c", cfg.residual_mode)
        h_v = _attn_then_ffn(vv, h_v, params, f"{pre}.v", cfg.residual_mode)
        # the + h_p inside `fused` already is the attention-sublayer residual
        y = nc.layernorm(fused, params[f"{pre}.p.norm1.g"], params[f"{pre}.p.norm1.b"])
        y2 = nc.add(_ffn(y, params, f"{pre}.p"), y)
        h_p = nc.layernorm(y2, params[f"{pre}.p.norm2.g"], params[f"{pre}.p.norm2.b"])

    per_vehicle = [nc.concat([h_v, nc.take_rows(h_p, np.arange(n) * m + k)], axis=0)
                   for k in range(m)]
    return Encoded(per_vehicle=per_vehicle, n=n, m=m)


@dataclass
class DecodeCache:
    pooled: list      # pooled[k]: (d,) mean of vehicle k's encoder rows
    action_proj: list  # action_proj[k]: (N+1, d), pointer projection of action rows


def build_decode_cache(enc: Encoded, params: dict) -> DecodeCache:
    """Precompute the per-episode static pieces of the decoder."""
    pooled, action_proj = [], []
    for k in range(enc.m):
        h_k = enc.per_vehicle[k]
        pooled.append(nc.mean_rows(h_k))
        rows = [k] + list(range(enc.m, enc.m + enc.n))   # depot row, then clients
        action_proj.append(nc.linear(nc.take_rows(h_k, rows), params["dec.ptr.W"]))
    return DecodeCache(pooled=pooled, action_proj=action_proj)


def psr_reshape(dist_to_j: float, profile_entry: float, cfg: PolicyConfig) -> float:
    """Distance/preference shaping subtracted inside the pointer tanh.

    The finite profile value is clamped to [0,1]; REQUIRE clamps to 1, FORBID
    to 0 (it is masked anyway). literal adds the preference to the distance
    (shaping against preferred targets); penalize_low_pref flips the
    preference term; off disables shaping. Depot targets use preference 0 by
    convention.
    """
    if cfg.psr_mode == "off":
        return 0.0
    p_t = min(1.0, max(0.0, profile_entry))
    if cfg.psr_mode == "literal":
        return math.log(max(PSR_EPS, dist_to_j + p_t))
    return math.log(max(PSR_EPS, dist_to_j + 1.0 - p_t))


def _shaping_row(inst: Instance, k: int, pos: int, cfg: PolicyConfig) -> np.ndarray:
    """Vectorized psr_reshape over all N+1 targets of vehicle k from node pos."""
    n = inst.n_clients
    if cfg.psr_mode == "off":
        return np.zeros(n + 1)
    d_row = inst.dist_matrix()[pos]
    p_t = np.empty(n + 1)
    p_t[0] = 0.0
    p_t[1:] = np.clip(inst.profiles[:, k], 0.0, 1.0)
    if cfg.psr_mode == "penalize_low_pref":
        p_t = 1.0 - p_t
    return np.log(np.maximum(PSR_EPS, d_row + p_t))


@dataclass
class DecodeResult:
    log_probs: nc.Tensor        # (M, N+1) masked log-probabilities
    masks: np.ndarray           # (M, N+1) bool feasibility masks
    premask_logits: np.ndarray  # (M, N+1) logits before masking


def decoder_step(enc: Encoded, state: EnvState, inst: Instance, params: dict,
                 cfg: PolicyConfig, cache: DecodeCache | None = None) -> DecodeResult:
    if is_terminal(inst, state):
        raise ValueError("decoder_step called on a terminal state")
    if cache is None:
        cache = build_decode_cache(enc, params)
    n, m, d = enc.n, enc.m, cfg.d_h
    dist = inst.dist_matrix()
    unvisited = float((~state.visited).sum()) / n
    t_norm = state.step / (n + m)

    qs = []
    for k in range(m):
        pos = int(state.positions[k])
        cur_row = k if pos == 0 else m + pos - 1
        h_cur = nc.take_row(enc.per_vehicle[k], cur_row)
        feats = np.array([state.remaining[k] / float(inst.capacities[k]),
                          dist[pos, 0], unvisited, t_norm])
        s_proj = nc.linear(nc.constant(feats), params["dec.state.W"])
        q = nc.linear(nc.concat([cache.pooled[k], h_cur, s_proj]), params["dec.query.W"])
        qs.append(nc.reshape(q, (1, d)))
    q_mat = nc.concat(qs, axis=0)

    # communication block: the M queries see each other once
    a = nc.mha_forward(q_mat, q_mat, q_mat, cfg.n_heads,
                       params["dec.comm.wq"], params["dec.comm.wk"],
                       params["dec.comm.wv"], params["dec.comm.wo"])
    x = nc.layernorm(nc.add(a, q_mat), params["dec.comm.norm1.g"], params["dec.comm.norm1.b"])
    x = nc.layernorm(nc.add(_ffn(x, params, "dec.comm"), x),
                     params["dec.comm.norm2.g"], params["dec.comm.norm2.b"])
    u = nc.linear(x, params["dec.u.W"])

    inv_sqrt_d = 1.0 / math.sqrt(d)
    masks = np.zeros((m, n + 1), dtype=bool)
    premask = np.zeros((m, n + 1))
    rows = []
    for k in range(m):
        mask = feasible_mask(inst, state, k)
        masks[k] = mask
        scores = nc.matmul(cache.action_proj[k], nc.take_row(u, k))
        shaping = _shaping_row(inst, k, int(state.positions[k]), cfg)
        z = nc.scale(nc.tanh(nc.sub(nc.scale(scores, inv_sqrt_d),
                                    nc.constant(shaping))), cfg.score_clip)
        premask[k] = z.data
        rows.append(nc.reshape(nc.masked_fill(z, ~mask, MASK_FILL), (1, n + 1)))
    log_probs = nc.log_softmax(nc.concat(rows, axis=0), axis=-1)
    return DecodeResult(log_probs=log_probs, masks=masks, premask_logits=premask)


@dataclass
class RolloutResult:
    solution: Solution
    objective: float
    total_logprob: nc.Tensor     # 0-d tensor; .item() for the value
    reward_sum: float
    proposals: list              # per step, pre-conflict per-vehicle targets
    actions: list                # per step, executed joint action
    step_log_probs: list = field(repr=False, default_factory=list)  # (M,) arrays

    def replay_data(self):
        return [list(a) for a in self.actions]

    def had_conflict(self) -> bool:
        return any(p != a for p, a in zip(self.proposals, self.actions))


def rollout(inst: Instance, alpha: float, params: dict, cfg: PolicyConfig,
            mode: str = "greedy", rng=None, replay=None) -> RolloutResult:
    """Run one full episode under the policy.

    mode "greedy" takes per-vehicle argmax; "sample" draws from the masked
    distributions (requires rng). Passing replay=<list of executed joint
    actions> (see RolloutResult.replay_data) re-executes that trajectory,
    recomputing its log-probability under the current parameters; used for
    gradient checks. total_logprob always scores the executed actions.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None and replay is None:
        raise ValueError("sample mode needs an rng")
    emb = embed(inst, alpha, params)
    enc = encode(emb, params, cfg)
    cache = build_decode_cache(enc, params)
    state = reset(inst)
    m, n = inst.n_vehicles, inst.n_clients
    cap = max_episode_steps(inst)
    terms, proposals_hist, actions_hist, step_lp = [], [], [], []
    while not is_terminal(inst, state):
        if state.step >= cap:
            raise RuntimeError("episode exceeded its step bound; mask bug")
        dec = decoder_step(enc, state, inst, params, cfg, cache)
        lpd = dec.log_probs.data
        t = state.step
        if replay is not None:
            if t >= len(replay):
                raise RuntimeError("replay ended before the episode terminated")
            action = list(replay[t])
            proposed = action
        else:
            proposed = []
            for k in range(m):
                if mode == "greedy":
                    proposed.append(int(np.argmax(lpd[k])))
                else:
                    probs = np.exp(lpd[k])
                    proposed.append(int(rng.choice(n + 1, p=probs / probs.sum())))
            action = resolve_conflicts(proposed, [lpd[k, proposed[k]] for k in range(m)])
        for k in range(m):
            terms.append(nc.take_at(dec.log_probs, k, action[k]))
        step_lp.append(lpd[np.arange(m), action].copy())
        state, _ = step(inst, state, action, alpha)
        proposals_hist.append(list(proposed))
        actions_hist.append(list(action))
    total_logprob = nc.sum_all(nc.stack_scalars(terms))
    sol = actions_to_solution(m, actions_hist)
    objective = evaluate_solution(inst, sol, alpha)
    return RolloutResult(solution=sol, objective=objective,
                         total_logprob=total_logprob,
                         reward_sum=state.accumulated_reward,
                         proposals=proposals_hist, actions=actions_hist,
                         step_log_probs=step_lp)


# -- persistence --------------------------------------------------------------

def save_policy(path, params: dict, cfg: PolicyConfig):
    """Self-contained checkpoint: config scalars plus every parameter tensor."""
    named = {
        "cfg.d_h": np.array(float(cfg.d_h)),
        "cfg.n_heads": np.array(float(cfg.n_heads)),
        "cfg.d_ff": np.array(float(cfg.d_ff)),
        "cfg.n_layers": np.array(float(cfg.n_layers)),
        "cfg.score_clip": np.array(cfg.score_clip),
        "cfg.psr_mode": np.array(float(PSR_MODES.index(cfg.psr_mode))),
        "cfg.residual_mode": np.array(float(RESIDUAL_MODES.index(cfg.residual_mode))),
    }
    for name, p in params.items():
        named[f"param.{name}"] = p.data
    nc.save_checkpoint(path, named)


def load_policy(path):
    """Returns (params, cfg) from a checkpoint written by save_policy (or the
    trainer, whose extra optimizer entries are ignored)."""
    blob = nc.load_checkpoint(path)
    try:
        cfg = PolicyConfig(
            d_h=int(blob["cfg.d_h"]), n_heads=int(blob["cfg.n_heads"]),
            d_ff=int(blob["cfg.d_ff"]), n_layers=int(blob["cfg.n_layers"]),
            score_clip=float(blob["cfg.score_clip"]),
            psr_mode=PSR_MODES[int(blob["cfg.psr_mode"])],
            residual_mode=RESIDUAL_MODES[int(blob["cfg.residual_mode"])])
    except KeyError as e:
        raise ValueError(f"{path}: checkpoint lacks policy config entry {e}") from None
    params = {name[len("param."):]: nc.parameter(arr, name[len("param."):])
              for name, arr in blob.items() if name.startswith("param.")}
    if not params:
        raise ValueError(f"{path}: checkpoint holds no policy parameters")
    return params, cfg
