"""Clipped-surrogate PPO training loop.

Single-threaded and deterministic per seed: collection, GAE, minibatch
shuffling, updates, periodic deterministic evaluation, and checkpointing
all derive from one seed, and a run resumed from any checkpoint replays
the uninterrupted run step for step.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .env import EnvConfig, EnvSnapshot, PitchEnv, TraceRow
from .optim import make_optimizer
from .physics import DivergenceError, MotorParams, PitchParams, PlantState
from .policy import GaussianPolicy, LossSpec, TrainBatch

CHECKPOINT_FORMAT_VERSION = 1

LOG_HEADER = ("step", "eval_deviation_deg", "eval_power_w", "eval_reward",
              "mean_abs_daction", "sign_flip_rate", "policy_loss",
              "value_loss", "entropy", "approx_kl", "clip_frac")


@dataclass(frozen=True)
class PpoConfig:
    total_steps: int = 500_000
    eval_every: int = 10_000
    rollout_len: int = 2000
    minibatch_size: int = 250
    epochs_per_update: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    optimizer: str = "adam"
    lr: float | None = 1e-3          # None -> optimizer default
    hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = -2.0
    # stop an update's epochs once the mean KL of an epoch exceeds this
    target_kl: float | None = 0.03

    def __post_init__(self) -> None:
        if not (self.total_steps >= self.eval_every >= self.rollout_len
                >= self.minibatch_size >= 1):
            raise ValueError(
                "need total_steps >= eval_every >= rollout_len >= minibatch_size >= 1")
        if self.total_steps % self.eval_every != 0:
            raise ValueError("total_steps must be a multiple of eval_every")
        if self.eval_every % self.rollout_len != 0:
            raise ValueError("eval_every must be a multiple of rollout_len")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.clip_eps, self.value_coef, self.entropy_coef)


class RolloutBuffer:
    """Fixed-length on-policy trajectory storage, may span episode resets."""

    def __init__(self, length: int, obs_dim: int):
        self.n = length
        self.obs = np.zeros((length, obs_dim))
        self.action = np.zeros(length)
        self.pre_squash = np.zeros(length)
        self.log_prob = np.zeros(length)
        self.reward = np.zeros(length)
        self.value = np.zeros(length)
        self.done = np.zeros(length, dtype=bool)
        self.advantage = np.zeros(length)
        self.ret = np.zeros(length)


def collect_rollout(env: PitchEnv, policy: GaussianPolicy,
                    rng: np.random.Generator, length: int) -> RolloutBuffer:
    """Sample exactly `length` transitions, resetting the env on episode end."""
    buf = RolloutBuffer(length, env.obs_dim)
    if env.needs_reset:
        env.reset()
    obs = env.current_obs().as_array()
    for i in range(length):
        a, z, lp, v = policy.act(obs, rng)
        res = env.step(a)
        buf.obs[i] = obs
        buf.action[i] = a
        buf.pre_squash[i] = z
        buf.log_prob[i] = lp
        buf.reward[i] = res.reward
        buf.value[i] = v
        buf.done[i] = res.done
        obs = env.reset().as_array() if res.done else res.obs.as_array()
    return buf


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float,
                bootstrap_value: float) -> RolloutBuffer:
    """Fill advantages and returns; episode boundaries cut the recursion."""
    adv = 0.0
    for t in range(buf.n - 1, -1, -1):
        nonterminal = 0.0 if buf.done[t] else 1.0
        next_value = bootstrap_value if t == buf.n - 1 else buf.value[t + 1]
        delta = buf.reward[t] + gamma * next_value * nonterminal - buf.value[t]
        adv = delta + gamma * lam * nonterminal * adv
        buf.advantage[t] = adv
    buf.ret[:] = buf.advantage + buf.value
    return buf


def ppo_update(policy: GaussianPolicy, buf: RolloutBuffer, cfg: PpoConfig,
               optimizer, shuffle_rng: np.random.Generator) -> dict[str, float]:
    """Run epochs x minibatches of clipped-surrogate updates on one buffer."""
    adv = buf.advantage
    if buf.n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    spec = cfg.loss_spec()
    stats_sum: dict[str, float] = {}
    n_batches = 0
    for _ in range(cfg.epochs_per_update):
        perm = shuffle_rng.permutation(buf.n)
        epoch_kl = 0.0
        epoch_batches = 0
        for start in range(0, buf.n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            batch = TrainBatch(
                obs=buf.obs[idx],
                pre_squash=buf.pre_squash[idx],
                old_log_prob=buf.log_prob[idx],
                advantage=adv[idx],
                value_target=buf.ret[idx],
            )
            _, grads, stats = policy.backward(batch, spec)
            policy.params = optimizer.step(policy.params, grads)
            policy.clamp_log_std()
            for k, v in stats.items():
                stats_sum[k] = stats_sum.get(k, 0.0) + v
            epoch_kl += stats["approx_kl"]
            epoch_batches += 1
            n_batches += 1
        if (cfg.target_kl is not None
                and epoch_kl / epoch_batches > cfg.target_kl):
            break
    out = {k: v / n_batches for k, v in stats_sum.items()}
    out["adv_mean"] = float(adv.mean())
    out["adv_std"] = float(adv.std())
    return out


def oscillation_metrics(actions: np.ndarray) -> tuple[float, float]:
    """(mean |action change| per step, sign-flip rate) of an action trace."""
    a = np.asarray(actions, dtype=float)
    if a.size < 2:
        return 0.0, 0.0
    mean_abs_change = float(np.mean(np.abs(np.diff(a))))
    flip_rate = float(np.mean(a[:-1] * a[1:] < 0.0))
    return mean_abs_change, flip_rate


@dataclass(frozen=True)
class EvalResult:
    deviation_deg: float
    power_w: float
    reward_mean: float
    mean_abs_daction: float
    sign_flip_rate: float
    trace: tuple[TraceRow, ...] = ()


def evaluate(policy: GaussianPolicy, env: PitchEnv,
             keep_trace: bool = False) -> EvalResult:
    """One deterministic episode (mean action) on the env's fixed schedule."""
    obs = env.reset().as_array()
    devs = np.zeros(env.cfg.episode_steps)
    pows = np.zeros(env.cfg.episode_steps)
    rews = np.zeros(env.cfg.episode_steps)
    acts = np.zeros(env.cfg.episode_steps)
    rows = []
    for k in range(env.cfg.episode_steps):
        mean, _ = policy.forward(obs)
        a = float(mean)
        res = env.step(a)
        devs[k] = res.raw_deviation_deg
        pows[k] = res.raw_power_w
        rews[k] = res.reward
        acts[k] = a
        if keep_trace:
            rows.append(TraceRow(
                t=env.time, phi_deg=math.degrees(env.plant_state.phi),
                r_deg=math.degrees(env.reference()), u_V=a * env.cfg.u_max,
                power_W=res.raw_power_w, reward=res.reward))
        obs = res.obs.as_array()
        if res.done:
            break
    mean_daction, flip_rate = oscillation_metrics(acts)
    return EvalResult(
        deviation_deg=float(devs.mean()),
        power_w=float(pows.mean()),
        reward_mean=float(rews.mean()),
        mean_abs_daction=mean_daction,
        sign_flip_rate=flip_rate,
        trace=tuple(rows),
    )


@dataclass(frozen=True)
class Checkpoint:
    """Metrics and location of one stored training snapshot."""

    step: int
    deviation_deg: float
    power_w: float
    reward_mean: float
    mean_abs_daction: float
    sign_flip_rate: float
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_frac: float = 0.0
    path: str | None = None

    def log_row(self) -> list:
        return [self.step, self.deviation_deg, self.power_w, self.reward_mean,
                self.mean_abs_daction, self.sign_flip_rate, self.policy_loss,
                self.value_loss, self.entropy, self.approx_kl, self.clip_frac]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_train_log(history: list[Checkpoint], path: Path | str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_HEADER)
        for ck in history:
            w.writerow([repr(x) if isinstance(x, float) else x
                        for x in ck.log_row()])
    return path


def save_checkpoint(path: Path | str, policy: GaussianPolicy, optimizer,
                    action_rng, shuffle_rng, env: PitchEnv, steps_done: int,
                    history: list[Checkpoint], env_cfg: EnvConfig,
                    ppo_cfg: PpoConfig, motor: MotorParams,
                    pitch: PitchParams) -> Path:
    """Full training snapshot; loading it resumes training bit-exactly."""
    path = Path(path)
    snap = env.snapshot()
    opt_state = optimizer.state_dict()
    arrays = {}
    opt_meta = {}
    for k, v in opt_state.items():
        if isinstance(v, dict):
            for name, arr in v.items():
                arrays[f"opt_{k}__{name}"] = arr
            opt_meta[k] = sorted(v.keys())
        else:
            opt_meta[k] = v
    for k, v in policy.params.items():
        arrays[f"param__{k}"] = v
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "obs_dim": policy.obs_dim,
        "hidden": list(policy.hidden),
        "steps_done": steps_done,
        "optimizer": opt_meta,
        "action_rng": _jsonable(action_rng.bit_generator.state),
        "shuffle_rng": _jsonable(shuffle_rng.bit_generator.state),
        "env_snapshot": {
            "plant": [snap.plant.phi, snap.plant.phi_dot,
                      snap.plant.omega1, snap.plant.omega2],
            "step_index": snap.step_index,
            "t": snap.t,
            "schedule": _jsonable(snap.schedule),
            "rng_state": _jsonable(snap.rng_state),
            "needs_reset": snap.needs_reset,
        },
        "history": [_jsonable(asdict(ck)) for ck in history],
        "env_cfg": _jsonable(asdict(env_cfg)),
        "ppo_cfg": _jsonable(asdict(ppo_cfg)),
        "motor": asdict(motor),
        "pitch": asdict(pitch),
    }
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)
    return path if path.suffix == ".npz" else Path(str(path) + ".npz")


def load_checkpoint(path: Path | str) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {meta['format_version']}")
        params = {}
        opt_arrays: dict[str, dict] = {}
        for key in data.files:
            if key.startswith("param__"):
                params[key[len("param__"):]] = data[key]
            elif key.startswith("opt_"):
                group, name = key[len("opt_"):].split("__", 1)
                opt_arrays.setdefault(group, {})[name] = data[key]
    return {"meta": meta, "params": params, "opt_arrays": opt_arrays}


def _restore_optimizer(meta_opt: dict, opt_arrays: dict):
    state = dict(meta_opt)
    for group, arrs in opt_arrays.items():
        state[group] = arrs
    opt = make_optimizer(state["name"], lr=state["lr"])
    # groups listed in the meta but absent from arrays were empty
    for key, val in meta_opt.items():
        if isinstance(val, list) and key not in opt_arrays:
            state[key] = {}
    opt.load_state_dict(state)
    return opt


def train(env_cfg: EnvConfig, ppo_cfg: PpoConfig, seed: int,
          motor: MotorParams | None = None, pitch: PitchParams | None = None,
          out_dir: Path | str | None = None,
          resume_from: Path | str | None = None) -> list[Checkpoint]:
    """Train one agent; returns one Checkpoint per eval_every boundary.

    All randomness (policy init, action sampling, minibatch shuffling,
    training targets) derives from `seed`; env_cfg.seed only governs
    standalone environment use.
    """
    motor = motor if motor is not None else MotorParams()
    pitch = pitch if pitch is not None else PitchParams()
    train_cfg = replace(env_cfg, train_targets=True)
    eval_cfg = replace(env_cfg, train_targets=False)
    env = PitchEnv(train_cfg, motor, pitch)
    eval_env = PitchEnv(eval_cfg, motor, pitch)

    if resume_from is None:
        streams = np.random.SeedSequence(seed).spawn(4)
        policy = GaussianPolicy(env.obs_dim, ppo_cfg.hidden,
                                rng=np.random.default_rng(streams[0]),
                                log_std_init=ppo_cfg.log_std_init)
        action_rng = np.random.default_rng(streams[1])
        shuffle_rng = np.random.default_rng(streams[2])
        env.reset(seed=int(streams[3].generate_state(1)[0]))
        optimizer = make_optimizer(ppo_cfg.optimizer, lr=ppo_cfg.lr)
        steps_done = 0
        history: list[Checkpoint] = []
    else:
        ck = load_checkpoint(resume_from)
        meta = ck["meta"]
        if meta["obs_dim"] != env.obs_dim or tuple(meta["hidden"]) != tuple(ppo_cfg.hidden):
            raise ValueError("checkpoint architecture does not match ppo_cfg")
        if meta["optimizer"]["name"] != ppo_cfg.optimizer:
            raise ValueError("checkpoint optimizer does not match ppo_cfg")
        policy = GaussianPolicy(env.obs_dim, ppo_cfg.hidden,
                                rng=np.random.default_rng(0))
        policy.load_state_arrays(ck["params"])
        optimizer = _restore_optimizer(meta["optimizer"], ck["opt_arrays"])
        action_rng = np.random.default_rng()
        action_rng.bit_generator.state = meta["action_rng"]
        shuffle_rng = np.random.default_rng()
        shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        es = meta["env_snapshot"]
        env.restore(EnvSnapshot(
            plant=PlantState(*es["plant"]),
            step_index=es["step_index"],
            t=es["t"],
            schedule=tuple(tuple(x) for x in es["schedule"]),
            rng_state=es["rng_state"],
            needs_reset=es["needs_reset"],
        ))
        steps_done = meta["steps_done"]
        history = [Checkpoint(**row) for row in meta["history"]]

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    update_stats: dict[str, float] = {}
    while steps_done < ppo_cfg.total_steps:
        try:
            buf = collect_rollout(env, policy, action_rng, ppo_cfg.rollout_len)
        except DivergenceError as e:
            raise DivergenceError(
                f"environment diverged within steps "
                f"{steps_done}..{steps_done + ppo_cfg.rollout_len}: {e}") from e
        _, bootstrap = policy.forward(env.current_obs().as_array())
        compute_gae(buf, ppo_cfg.gamma, ppo_cfg.gae_lambda, float(bootstrap))
        try:
            update_stats = ppo_update(policy, buf, ppo_cfg, optimizer, shuffle_rng)
        except DivergenceError as e:
            raise DivergenceError(
                f"update diverged at step {steps_done + ppo_cfg.rollout_len}: {e}"
            ) from e
        steps_done += ppo_cfg.rollout_len

        if steps_done % ppo_cfg.eval_every == 0:
            res = evaluate(policy, eval_env)
            ck_path = None
            if out_path is not None:
                ck_path = str(out_path / f"ckpt_{steps_done:08d}.npz")
            record = Checkpoint(
                step=steps_done,
                deviation_deg=res.deviation_deg,
                power_w=res.power_w,
                reward_mean=res.reward_mean,
                mean_abs_daction=res.mean_abs_daction,
                sign_flip_rate=res.sign_flip_rate,
                policy_loss=update_stats.get("policy_loss", 0.0),
                value_loss=update_stats.get("value_loss", 0.0),
                entropy=update_stats.get("entropy", 0.0),
                approx_kl=update_stats.get("approx_kl", 0.0),
                clip_frac=update_stats.get("clip_frac", 0.0),
                path=ck_path,
            )
            history.append(record)
            if out_path is not None:
                save_checkpoint(ck_path, policy, optimizer, action_rng,
                                shuffle_rng, env, steps_done, history,
                                env_cfg, ppo_cfg, motor, pitch)
                write_train_log(history, out_path / "train_log.csv")
    return history


def load_policy(path: Path | str) -> GaussianPolicy:
    """Rebuild just the policy network from a checkpoint file."""
    ck = load_checkpoint(path)
    meta = ck["meta"]
    policy = GaussianPolicy(meta["obs_dim"], tuple(meta["hidden"]),
                            rng=np.random.default_rng(0))
    policy.load_state_arrays(ck["params"])
    return policy
