"""REINFORCE training with a shared symmetric-augmentation baseline.

Each batch instance is rolled out L times, once on each of the first L
dihedral symmetries of the unit square (cycling past 8). The per-instance
baseline is the mean of those L objectives, so the advantage sums to zero
within an instance and constant reward shifts cancel. The loss is

    -(1/(B*L)) * sum_ij (R_ij - b_i) * logprob_ij

with the advantage treated as a constant. Per-step RNGs derive from
SeedSequence([seed, epoch, step]), which makes any step reproducible in
isolation and checkpoint resumption bit-exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError
from .instances import GeneratorConfig, Instance, generate_uniform
from .policy import (PSR_MODES, RESIDUAL_MODES, PolicyConfig, init_params,
                     rollout)

LOG_HEADER = "step\tlr\tmean_reward\tadv_std"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    rollouts_per_instance: int = 8
    alpha_range: tuple = (0.0, 0.2)
    n_range: tuple = (8, 20)
    m_range: tuple = (2, 3)
    epochs: int = 4
    steps_per_epoch: int = 50
    lr_initial: float = 1e-4
    lr_decay: float = 0.1
    lr_milestones: tuple = (0.8, 0.95)
    seed: int = 0
    baseline_mode: str = "augment"   # or "multisample" (no coordinate transforms)

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.rollouts_per_instance < 2:
            raise ConfigError("rollouts_per_instance must be >= 2 (baseline needs variance)")
        if not (0.0 <= self.alpha_range[0] <= self.alpha_range[1] <= 1.0):
            raise ConfigError(f"bad alpha_range {self.alpha_range}")
        for name, (lo, hi) in (("n_range", self.n_range), ("m_range", self.m_range)):
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad {name} ({lo}, {hi})")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be positive")
        if self.lr_initial <= 0 or not (0 < self.lr_decay <= 1):
            raise ConfigError("bad learning-rate schedule")
        if self.baseline_mode not in ("augment", "multisample"):
            raise ConfigError(f"unknown baseline_mode {self.baseline_mode!r}")


# the dihedral group of the unit square: identity, three rotations about the
# center, then the four reflections
_DIHEDRAL = (
    lambda x, y: (x, y),
    lambda x, y: (1.0 - y, x),
    lambda x, y: (1.0 - x, 1.0 - y),
    lambda x, y: (y, 1.0 - x),
    lambda x, y: (1.0 - x, y),
    lambda x, y: (x, 1.0 - y),
    lambda x, y: (y, x),
    lambda x, y: (1.0 - y, 1.0 - x),
)


def symmetric_augment(inst: Instance, index: int) -> Instance:
    """Apply one of the 8 unit-square symmetries to every coordinate.

    Demands, capacities, speeds and profiles are untouched, so distances and
    objectives of any fixed solution are preserved. Index 0 is the identity.
    """
    if not 0 <= index < len(_DIHEDRAL):
        raise IndexError(f"augmentation index {index} out of range 0..7")
    f = _DIHEDRAL[index]
    dx, dy = f(inst.depot[0], inst.depot[1])
    cx, cy = f(inst.coords[:, 0], inst.coords[:, 1])
    return inst.replace(depot=np.array([dx, dy]), coords=np.column_stack([cx, cy]))


def sample_training_instance(cfg: TrainConfig, rng):
    """Draw (instance, alpha) from the training distribution."""
    n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
    m = int(rng.integers(cfg.m_range[0], cfg.m_range[1] + 1))
    alpha = float(rng.uniform(cfg.alpha_range[0], cfg.alpha_range[1]))
    seed = int(rng.integers(0, 2**63 - 1))
    inst = generate_uniform(GeneratorConfig(n_clients=n, m_vehicles=m, seed=seed))
    return inst, alpha


def reinforce_loss(batch, params: dict, policy_cfg: PolicyConfig,
                   cfg: TrainConfig, rng=None, replays=None):
    """Loss tensor plus stats for one batch of (Instance, alpha) pairs.

    replays, when given, must be replays[i][j] = executed-action list for
    rollout j of instance i (see collect_replays); rollouts are then replayed
    instead of sampled, making the loss a deterministic function of params.
    """
    cfg.validate()
    bsz, L = len(batch), cfg.rollouts_per_instance
    if bsz < 1:
        raise ConfigError("empty batch")
    if rng is None and replays is None:
        raise ConfigError("reinforce_loss needs an rng unless replaying")
    rewards = np.zeros((bsz, L))
    logprobs = []
    for i, (inst, alpha) in enumerate(batch):
        row = []
        for j in range(L):
            aug = symmetric_augment(inst, j % 8) if cfg.baseline_mode == "augment" else inst
            if replays is not None:
                res = rollout(aug, alpha, params, policy_cfg, replay=replays[i][j])
            else:
                res = rollout(aug, alpha, params, policy_cfg, mode="sample", rng=rng)
            rewards[i, j] = res.objective
            row.append(res.total_logprob)
        logprobs.append(row)
    advantages = rewards - rewards.mean(axis=1, keepdims=True)
    terms = []
    for i in range(bsz):
        for j in range(L):
            terms.append(nc.scale(logprobs[i][j], -advantages[i, j] / (bsz * L)))
    loss = nc.sum_all(nc.stack_scalars(terms))
    stats = {
        "mean_reward": float(rewards.mean()),
        "adv_std": float(advantages.std()),
        "rewards": rewards,
        "advantages": advantages,
    }
    return loss, stats


def collect_replays(batch, params, policy_cfg, cfg: TrainConfig, rng,
                    conflict_free: bool = False, max_tries: int = 200):
    """Sample one frozen trajectory set shaped like reinforce_loss expects.

    conflict_free retries each rollout until no conflict reroute occurred,
    which keeps the replayed loss free of -1e30 absorption (needed by
    finite-difference gradient checks).
    """
    replays = []
    for inst, alpha in batch:
        row = []
        for j in range(cfg.rollouts_per_instance):
            aug = symmetric_augment(inst, j % 8) if cfg.baseline_mode == "augment" else inst
            for _ in range(max_tries):
                res = rollout(aug, alpha, params, policy_cfg, mode="sample", rng=rng)
                if not (conflict_free and res.had_conflict()):
                    break
            else:
                raise RuntimeError("could not sample a conflict-free rollout")
            row.append(res.replay_data())
        replays.append(row)
    return replays


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch index under the milestone schedule."""
    frac = epoch / cfg.epochs
    drops = sum(1 for ms in cfg.lr_milestones if frac >= ms)
    return cfg.lr_initial * cfg.lr_decay ** drops


def _train_checkpoint_blob(params, policy_cfg, adam, epoch_done, global_step, seed):
    named = {
        "cfg.d_h": np.array(float(policy_cfg.d_h)),
        "cfg.n_heads": np.array(float(policy_cfg.n_heads)),
        "cfg.d_ff": np.array(float(policy_cfg.d_ff)),
        "cfg.n_layers": np.array(float(policy_cfg.n_layers)),
        "cfg.score_clip": np.array(policy_cfg.score_clip),
        "cfg.psr_mode": np.array(float(PSR_MODES.index(policy_cfg.psr_mode))),
        "cfg.residual_mode": np.array(float(RESIDUAL_MODES.index(policy_cfg.residual_mode))),
        "meta.epoch": np.array(float(epoch_done)),
        "meta.global_step": np.array(float(global_step)),
        "meta.adam_t": np.array(float(adam.t)),
        "meta.seed": np.array(float(seed)),
    }
    for name, p in params.items():
        named[f"param.{name}"] = p.data
    for name, arr in adam.m.items():
        named[f"adam_m.{name}"] = arr
    for name, arr in adam.v.items():
        named[f"adam_v.{name}"] = arr
    return named


def _step_rng(seed: int, epoch: int, step: int):
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, step]))


def train(cfg: TrainConfig, policy_cfg: PolicyConfig, out_dir,
          resume_from=None):
    """Run the REINFORCE loop; returns (params, final_checkpoint_path).

    Writes out_dir/log.tsv (one line per step: step, lr, mean reward,
    advantage std) and a checkpoint per epoch plus final.bin. resume_from
    restarts after the checkpoint's last completed epoch and appends to the
    log; the continued run is bit-identical to an uninterrupted one.
    """
    cfg.validate()
    policy_cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "log.tsv")

    if resume_from is not None:
        blob = nc.load_checkpoint(resume_from)
        saved_cfg = PolicyConfig(
            d_h=int(blob["cfg.d_h"]), n_heads=int(blob["cfg.n_heads"]),
            d_ff=int(blob["cfg.d_ff"]), n_layers=int(blob["cfg.n_layers"]),
            score_clip=float(blob["cfg.score_clip"]),
            psr_mode=PSR_MODES[int(blob["cfg.psr_mode"])],
            residual_mode=RESIDUAL_MODES[int(blob["cfg.residual_mode"])])
        if saved_cfg != policy_cfg:
            raise ConfigError("checkpoint policy config does not match")
        if int(blob["meta.seed"]) != cfg.seed:
            raise ConfigError("checkpoint was trained with a different seed")
        params = {k[len("param."):]: nc.parameter(v, k[len("param."):])
                  for k, v in blob.items() if k.startswith("param.")}
        adam = nc.AdamState.init(params)
        adam.t = int(blob["meta.adam_t"])
        for name in params:
            adam.m[name] = blob[f"adam_m.{name}"].copy()
            adam.v[name] = blob[f"adam_v.{name}"].copy()
        start_epoch = int(blob["meta.epoch"])
        global_step = int(blob["meta.global_step"])
        log = open(log_path, "a")
    else:
        params = init_params(policy_cfg, cfg.seed)
        adam = nc.AdamState.init(params)
        start_epoch = 0
        global_step = 0
        log = open(log_path, "w")
        log.write(LOG_HEADER + "\n")

    final_path = os.path.join(out_dir, "final.bin")
    try:
        for epoch in range(start_epoch, cfg.epochs):
            lr = lr_at(cfg, epoch)
            for s in range(cfg.steps_per_epoch):
                rng = _step_rng(cfg.seed, epoch, s)
                batch = [sample_training_instance(cfg, rng)
                         for _ in range(cfg.batch_size)]
                with nc.Graph() as g:
                    loss, stats = reinforce_loss(batch, params, policy_cfg, cfg, rng)
                    if not np.isfinite(loss.data):
                        raise RuntimeError(
                            f"non-finite loss at step {global_step}: "
                            f"mean_reward={stats['mean_reward']} "
                            f"adv_std={stats['adv_std']}")
                    nc.backward(g, loss)
                nc.adam_step(params, adam, lr)
                nc.zero_grads(params)
                global_step += 1
                log.write(f"{global_step}\t{lr:.12g}\t{stats['mean_reward']:.12g}"
                          f"\t{stats['adv_std']:.12g}\n")
                log.flush()
            blob = _train_checkpoint_blob(params, policy_cfg, adam,
                                          epoch + 1, global_step, cfg.seed)
            nc.save_checkpoint(os.path.join(out_dir, f"epoch{epoch + 1:03d}.bin"), blob)
            nc.save_checkpoint(final_path, blob)
    finally:
        log.close()
    return params, final_path
