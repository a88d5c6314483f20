"""Goal-conditioned dueling double-DQN machinery in plain float64 numpy.

The networks are small two-hidden-layer MLPs with separate state-value and
advantage heads, combined with mean-centered advantages. Gradients are written
out by hand; this keeps every number exactly reproducible and lets the test
suite verify analytic gradients against central finite differences with tight
tolerances, which torch-style autograd would only complicate at this scale.

Besides the network this module owns the temporal-difference targets
(decoupled argmax and evaluation across the online and target nets), the
imitation cross-entropy on Q-values-as-logits, the adaptive coefficient that
balances the two losses, Adam with global-norm clipping, soft target updates,
replay and demonstration buffers, frame stacking, and checkpoint round-trips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_ACTIONS = 7

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT_VERSION = 1

PARAM_KEYS_TEMPLATE = ("w0", "b0", "w1", "b1", "wv", "bv", "wa", "ba")


class TrainingDivergenceError(RuntimeError):
    """Non-finite loss or gradient; training cannot continue."""


@dataclass(frozen=True)
class TrainerConfig:
    """Learning hyperparameters shared by teachers and the student."""

    bc_ratio: float = 0.900          # target ratio of imitation to RL loss
    frame_stack: int = 8
    grad_clip: float = 0.67          # global gradient norm ceiling
    learning_rate: float = 5.13e-5
    tau: float = 0.098               # soft target-update rate, applied per step
    discount: float = 0.99
    student_goal_reward: float = 3.0       # paid when the active goal fires
    teacher_penalty_success: float = 2.0   # teacher loses this if the student keeps up
    teacher_reward_fail: float = 6.0       # teacher gains this per unmatched event
    teacher_no_event_penalty: float = 8.0  # flat penalty for an eventless episode
    bc_coeff_init: float = 0.1
    bc_coeff_lr: float = 0.01
    bc_coeff_max: float = 10.0
    batch_size: int = 64
    updates_per_rollout: int = 4
    replay_capacity: int = 100_000
    bc_capacity: int = 50_000
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 50_000
    hidden_sizes: tuple[int, ...] = (256, 256)

    def validate(self) -> None:
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        for name in (
            "student_goal_reward",
            "teacher_penalty_success",
            "teacher_reward_fail",
            "teacher_no_event_penalty",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.teacher_no_event_penalty <= self.teacher_penalty_success:
            raise ValueError("no-event penalty must exceed the per-event success penalty")
        if self.teacher_no_event_penalty <= self.teacher_reward_fail:
            raise ValueError("no-event penalty must exceed the per-event fail reward")
        if self.frame_stack < 1 or self.batch_size < 1 or self.updates_per_rollout < 0:
            raise ValueError("frame_stack, batch_size must be >= 1, updates_per_rollout >= 0")
        if len(self.hidden_sizes) != 2 or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be two positive layer widths")
        if self.grad_clip <= 0 or self.learning_rate <= 0:
            raise ValueError("grad_clip and learning_rate must be positive")
        if not 0.0 <= self.epsilon_final <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_final <= epsilon_start <= 1")
        if self.bc_coeff_init < 0 or self.bc_coeff_max <= 0 or self.bc_coeff_lr < 0:
            raise ValueError("bc coefficient parameters must be non-negative")


@dataclass
class QNet:
    """Two ReLU hidden layers, then a value head and an advantage head."""

    params: dict[str, np.ndarray]
    input_dim: int
    hidden_sizes: tuple[int, ...]
    n_actions: int = N_ACTIONS

    def forward(self, x: np.ndarray) -> np.ndarray:
        q, _ = self.forward_cached(x)
        return q

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        z0 = x @ p["w0"] + p["b0"]
        h0 = np.maximum(z0, 0.0)
        z1 = h0 @ p["w1"] + p["b1"]
        h1 = np.maximum(z1, 0.0)
        value = h1 @ p["wv"] + p["bv"]
        adv = h1 @ p["wa"] + p["ba"]
        q = dueling_combine(value, adv)
        cache = {"x": x, "z0": z0, "h0": h0, "z1": z1, "h1": h1}
        return q, cache

    def backward(self, cache: dict, dq: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss with upstream dL/dq given per sample."""
        p = self.params
        dadv = dq - dq.sum(axis=1, keepdims=True) / self.n_actions
        dvalue = dq.sum(axis=1, keepdims=True)
        h1, h0, x = cache["h1"], cache["h0"], cache["x"]
        grads = {
            "wa": h1.T @ dadv,
            "ba": dadv.sum(axis=0),
            "wv": h1.T @ dvalue,
            "bv": dvalue.sum(axis=0),
        }
        dh1 = dadv @ p["wa"].T + dvalue @ p["wv"].T
        dh1 = dh1 * (cache["z1"] > 0.0)
        grads["w1"] = h0.T @ dh1
        grads["b1"] = dh1.sum(axis=0)
        dh0 = dh1 @ p["w1"].T
        dh0 = dh0 * (cache["z0"] > 0.0)
        grads["w0"] = x.T @ dh0
        grads["b0"] = dh0.sum(axis=0)
        return grads

    def clone(self) -> "QNet":
        return QNet(
            params={k: v.copy() for k, v in self.params.items()},
            input_dim=self.input_dim,
            hidden_sizes=self.hidden_sizes,
            n_actions=self.n_actions,
        )

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def dueling_combine(value: np.ndarray, adv: np.ndarray) -> np.ndarray:
    """Q(s, a) = V(s) + A(s, a) - mean_a A(s, a).

    Centering pins mean_a Q(s, a) to V(s), which removes the additive
    ambiguity between the two heads.
    """
    return value + adv - adv.mean(axis=1, keepdims=True)


def init_qnet(
    input_dim: int,
    hidden_sizes: tuple[int, ...],
    seed: int,
    n_actions: int = N_ACTIONS,
) -> QNet:
    rng = np.random.default_rng(seed)
    h0, h1 = hidden_sizes
    params = {
        "w0": rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, h0)),
        "b0": np.zeros(h0),
        "w1": rng.normal(0.0, np.sqrt(2.0 / h0), size=(h0, h1)),
        "b1": np.zeros(h1),
        "wv": rng.normal(0.0, np.sqrt(1.0 / h1), size=(h1, 1)),
        "bv": np.zeros(1),
        "wa": rng.normal(0.0, np.sqrt(1.0 / h1), size=(h1, n_actions)),
        "ba": np.zeros(n_actions),
    }
    return QNet(params=params, input_dim=input_dim, hidden_sizes=tuple(hidden_sizes), n_actions=n_actions)


@dataclass
class TransitionBatch:
    inputs: np.ndarray        # (B, obs+goal) float64
    actions: np.ndarray       # (B,) int64
    rewards: np.ndarray       # (B,) float64
    next_inputs: np.ndarray   # (B, obs+goal) float64
    dones: np.ndarray         # (B,) float64, 1.0 terminates the bootstrap

    def __len__(self) -> int:
        return len(self.actions)


def td_target_from_q(
    rewards: np.ndarray,
    dones: np.ndarray,
    q_next_online: np.ndarray,
    q_next_target: np.ndarray,
    discount: float,
) -> np.ndarray:
    """Double-DQN targets: the online net picks the argmax action, the target
    net evaluates it. Terminal transitions drop the bootstrap term."""
    best = np.argmax(q_next_online, axis=1)
    boot = q_next_target[np.arange(len(best)), best]
    return rewards + discount * boot * (1.0 - dones)


def td_target(batch: TransitionBatch, online: QNet, target: QNet, discount: float) -> np.ndarray:
    return td_target_from_q(
        batch.rewards,
        batch.dones,
        online.forward(batch.next_inputs),
        target.forward(batch.next_inputs),
        discount,
    )


def d3qn_loss(
    batch: TransitionBatch, online: QNet, target: QNet, discount: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared TD error on the taken actions; targets are held fixed, so
    gradient flows only through the online net's Q(s, a)."""
    y = td_target(batch, online, target, discount)
    q, cache = online.forward_cached(batch.inputs)
    rows = np.arange(len(batch))
    taken = q[rows, batch.actions]
    diff = taken - y
    loss = float(np.mean(diff**2))
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = 2.0 * diff / len(batch)
    return loss, online.backward(cache, dq)


def bc_loss(
    inputs: np.ndarray, actions: np.ndarray, net: QNet
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy of demonstrated actions under a softmax over Q-values
    treated as logits. Uniform Q gives exactly ln(n_actions)."""
    q, cache = net.forward_cached(inputs)
    shifted = q - q.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + q.max(axis=1)
    rows = np.arange(len(actions))
    loss = float(np.mean(log_z - q[rows, actions]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    dq = probs.copy()
    dq[rows, actions] -= 1.0
    dq /= len(actions)
    return loss, net.backward(cache, dq)


def combine_grads(
    rl_grads: dict[str, np.ndarray],
    bc_grads: dict[str, np.ndarray] | None,
    bc_coeff: float,
) -> dict[str, np.ndarray]:
    if bc_grads is None:
        return rl_grads
    return {k: rl_grads[k] + bc_coeff * bc_grads[k] for k in rl_grads}


def update_bc_coeff(
    coeff: float, rl_loss: float, bc_loss_value: float, ratio: float, lr: float, max_coeff: float
) -> float:
    """Move the imitation weight toward the point where the BC loss sits at
    ratio times the RL loss, clamped to [0, max_coeff]."""
    raw = coeff + (ratio * rl_loss - bc_loss_value) * lr
    return float(min(max(raw, 0.0), max_coeff))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_net(cls, net: QNet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in net.params.items()},
            v={k: np.zeros_like(p) for k, p in net.params.items()},
        )


def grad_step(net: QNet, grads: dict[str, np.ndarray], adam: AdamState, cfg: TrainerConfig) -> None:
    """Clip the global norm, then apply one Adam update in place."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingDivergenceError(f"non-finite gradient norm {norm}")
    if norm > cfg.grad_clip:
        scale = cfg.grad_clip / norm
        grads = {k: g * scale for k, g in grads.items()}
    adam.t += 1
    bias1 = 1.0 - ADAM_BETA1**adam.t
    bias2 = 1.0 - ADAM_BETA2**adam.t
    for k, g in grads.items():
        adam.m[k] = ADAM_BETA1 * adam.m[k] + (1.0 - ADAM_BETA1) * g
        adam.v[k] = ADAM_BETA2 * adam.v[k] + (1.0 - ADAM_BETA2) * g * g
        m_hat = adam.m[k] / bias1
        v_hat = adam.v[k] / bias2
        net.params[k] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def soft_update(online: QNet, target: QNet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    for k in target.params:
        target.params[k] *= 1.0 - tau
        target.params[k] += tau * online.params[k]


def act(net: QNet, input_vec: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the net's action values; ties go to the lowest
    action index. One rng draw happens on every call so action streams stay
    aligned regardless of which branch fires."""
    if rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    q = net.forward(input_vec[None, :])[0]
    return int(np.argmax(q))


def epsilon_at(cfg: TrainerConfig, env_steps: int) -> float:
    """Linear decay from epsilon_start to epsilon_final over decay_steps."""
    if cfg.epsilon_decay_steps <= 0 or env_steps >= cfg.epsilon_decay_steps:
        return cfg.epsilon_final
    frac = env_steps / cfg.epsilon_decay_steps
    return cfg.epsilon_start + frac * (cfg.epsilon_final - cfg.epsilon_start)


class FrameStack:
    """Fixed-depth stack of observations, zero-padded before the episode has
    produced enough frames, flattened oldest first."""

    def __init__(self, depth: int, frame_shape: tuple[int, ...]) -> None:
        self.depth = depth
        self.frame_shape = frame_shape
        self.frame_size = int(np.prod(frame_shape))
        self._buf = np.zeros((depth, self.frame_size), dtype=np.int8)
        self._count = 0

    def reset(self) -> None:
        self._buf[:] = 0
        self._count = 0

    def push(self, frame: np.ndarray) -> None:
        if frame.shape != self.frame_shape:
            raise ValueError(f"frame shape {frame.shape} != {self.frame_shape}")
        self._buf[:-1] = self._buf[1:]
        self._buf[-1] = frame.reshape(-1)
        self._count = min(self._count + 1, self.depth)

    def flat(self) -> np.ndarray:
        """int8 copy of the stacked window, oldest frame first."""
        return self._buf.reshape(-1).copy()

    @property
    def n_filled(self) -> int:
        return self._count

    @property
    def flat_size(self) -> int:
        return self.depth * self.frame_size


class ReplayBuffer:
    """Uniform-replay ring with first-in-first-out eviction.

    Observations are stored as int8 stacks to keep memory flat; goals (empty
    for teachers) ride as float64. Batches are drawn without replacement.
    """

    def __init__(self, capacity: int, obs_dim: int, goal_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.goal_dim = goal_dim
        self.obs = np.zeros((capacity, obs_dim), dtype=np.int8)
        self.goals = np.zeros((capacity, goal_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.int8)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.count = 0

    @property
    def size(self) -> int:
        return min(self.count, self.capacity)

    def push(
        self,
        obs: np.ndarray,
        goal: np.ndarray,
        action: int,
        reward: float,
        next_obs: np.ndarray,
        done: bool,
    ) -> None:
        i = self.count % self.capacity
        self.obs[i] = obs
        if self.goal_dim:
            self.goals[i] = goal
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = 1.0 if done else 0.0
        self.count += 1

    def sample(self, rng: np.random.Generator, batch_size: int) -> TransitionBatch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch {batch_size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        obs = self.obs[idx].astype(np.float64)
        nxt = self.next_obs[idx].astype(np.float64)
        if self.goal_dim:
            goals = self.goals[idx]
            obs = np.concatenate([obs, goals], axis=1)
            nxt = np.concatenate([nxt, goals], axis=1)
        return TransitionBatch(
            inputs=obs,
            actions=self.actions[idx].copy(),
            rewards=self.rewards[idx].copy(),
            next_inputs=nxt,
            dones=self.dones[idx].copy(),
        )


class BCBuffer:
    """Ring of (observation stack, goal embedding, demonstrated action)."""

    def __init__(self, capacity: int, obs_dim: int, goal_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.int8)
        self.goals = np.zeros((capacity, goal_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.count = 0

    @property
    def size(self) -> int:
        return min(self.count, self.capacity)

    def push(self, obs: np.ndarray, goal: np.ndarray, action: int) -> None:
        i = self.count % self.capacity
        self.obs[i] = obs
        self.goals[i] = goal
        self.actions[i] = action
        self.count += 1

    def sample(self, rng: np.random.Generator, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
        n = min(batch_size, self.size)
        if n == 0:
            raise ValueError("demonstration buffer is empty")
        idx = rng.choice(self.size, size=n, replace=False)
        inputs = np.concatenate([self.obs[idx].astype(np.float64), self.goals[idx]], axis=1)
        return inputs, self.actions[idx].copy()


@dataclass
class Agent:
    """One learner: online and target nets, optimizer state, step counters."""

    net: QNet
    target: QNet
    adam: AdamState
    cfg: TrainerConfig
    env_steps: int = 0
    grad_steps: int = 0

    @classmethod
    def fresh(cls, input_dim: int, cfg: TrainerConfig, seed: int) -> "Agent":
        net = init_qnet(input_dim, cfg.hidden_sizes, seed)
        return cls(net=net, target=net.clone(), adam=AdamState.for_net(net), cfg=cfg)

    @property
    def epsilon(self) -> float:
        return epsilon_at(self.cfg, self.env_steps)

    def act(self, input_vec: np.ndarray, rng: np.random.Generator) -> int:
        a = act(self.net, input_vec, self.epsilon, rng)
        self.env_steps += 1
        return a

    def greedy(self, input_vec: np.ndarray) -> int:
        return int(np.argmax(self.net.forward(input_vec[None, :])[0]))

    def q_values(self, input_vec: np.ndarray) -> np.ndarray:
        return self.net.forward(input_vec[None, :])[0]


def save_checkpoint(
    path: str | Path,
    agent: Agent,
    *,
    extra_scalars: dict[str, float] | None = None,
    config_echo: dict | None = None,
) -> None:
    """One npz per agent: parameters, target parameters, Adam moments, counters
    and a JSON metadata blob. Arrays survive bit-for-bit."""
    arrays: dict[str, np.ndarray] = {}
    for k, v in agent.net.params.items():
        arrays[f"net_{k}"] = v
    for k, v in agent.target.params.items():
        arrays[f"target_{k}"] = v
    for k, v in agent.adam.m.items():
        arrays[f"adam_m_{k}"] = v
    for k, v in agent.adam.v.items():
        arrays[f"adam_v_{k}"] = v
    meta = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "input_dim": agent.net.input_dim,
        "hidden_sizes": list(agent.net.hidden_sizes),
        "n_actions": agent.net.n_actions,
        "adam_t": agent.adam.t,
        "env_steps": agent.env_steps,
        "grad_steps": agent.grad_steps,
        "extra": extra_scalars or {},
        "config_echo": config_echo or {},
    }
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path, cfg: TrainerConfig) -> tuple[Agent, dict]:
    """Rebuild an agent from disk. Returns (agent, metadata)."""
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise IOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
    except (KeyError, json.JSONDecodeError) as exc:
        raise IOError(f"checkpoint {path} has no readable metadata") from exc
    if meta.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise IOError(f"unsupported checkpoint version {meta.get('version')!r}")
    hidden = tuple(meta["hidden_sizes"])
    dims = dict(input_dim=meta["input_dim"], hidden_sizes=hidden, n_actions=meta["n_actions"])
    net = QNet(params={k: data[f"net_{k}"].copy() for k in PARAM_KEYS_TEMPLATE}, **dims)
    target = QNet(params={k: data[f"target_{k}"].copy() for k in PARAM_KEYS_TEMPLATE}, **dims)
    adam = AdamState(
        m={k: data[f"adam_m_{k}"].copy() for k in PARAM_KEYS_TEMPLATE},
        v={k: data[f"adam_v_{k}"].copy() for k in PARAM_KEYS_TEMPLATE},
        t=meta["adam_t"],
    )
    agent = Agent(
        net=net,
        target=target,
        adam=adam,
        cfg=cfg,
        env_steps=meta["env_steps"],
        grad_steps=meta["grad_steps"],
    )
    return agent, meta


def flatten_params(net: QNet) -> np.ndarray:
    return np.concatenate([net.params[k].reshape(-1) for k in PARAM_KEYS_TEMPLATE])


def set_flat_params(net: QNet, flat: np.ndarray) -> None:
    offset = 0
    for k in PARAM_KEYS_TEMPLATE:
        p = net.params[k]
        net.params[k] = flat[offset : offset + p.size].reshape(p.shape).copy()
        offset += p.size


def flatten_grads(net: QNet, grads: dict[str, np.ndarray]) -> np.ndarray:
    del net
    return np.concatenate([grads[k].reshape(-1) for k in PARAM_KEYS_TEMPLATE])
