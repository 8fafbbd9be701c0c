"""
Actor-critic learner for the sell-quantity policy.

The networks are small numpy MLPs with hand-written backpropagation. The
state is (t / T, stock / Q); the actor outputs the fraction of the current
stock to sell, and the critic scores (state, action / Q).
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import allocate_x, periodic_revenue, rank
from .exceptions import MarketSpecError, PolicyFileError, TrainingDivergedError
from .model import sample_profile
from .simulation import run_episode

logger = logging.getLogger(__name__)

FILE_VERSION = 1
DIVERGENCE_LIMIT = 1e6
STATE_WIDTH = 2
OUTPUTS = ("linear", "sigmoid")


@dataclass(eq=False)
class Mlp:
    """Dense network with tanh hidden layers."""

    weights: list
    biases: list
    output: str = "linear"

    def __post_init__(self):
        if self.output not in OUTPUTS:
            raise MarketSpecError(f"Unknown output activation {self.output!r}")

    @classmethod
    def build(cls, sizes, rng, output="linear"):
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, output)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def parameter_count(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def copy(self):
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output)

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "output": self.output,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        sizes = data["sizes"]
        weights = [
            np.asarray(w, dtype=float).reshape(fan_in, fan_out)
            for w, fan_in, fan_out in zip(data["weights"], sizes[:-1], sizes[1:])
        ]
        biases = [np.asarray(b, dtype=float) for b in data["biases"]]
        return cls(weights, biases, data.get("output", "linear"))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(net, inputs):
    activations = [np.atleast_2d(np.asarray(inputs, dtype=float))]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ w + b
        if k < last:
            activations.append(np.tanh(z))
        elif net.output == "sigmoid":
            activations.append(_sigmoid(z))
        else:
            activations.append(z)
    return activations


def mlp_forward(net, inputs):
    """Batched forward pass; a 1-d input gives a 1-d output."""
    out = _forward(net, inputs)[-1]
    return out[0] if np.ndim(inputs) == 1 else out


@dataclass(frozen=True, eq=False)
class MlpGradient:
    weights: list
    biases: list
    inputs: np.ndarray


def mlp_grad(net, inputs, upstream):
    """Gradients of sum(upstream * mlp_forward(net, inputs)).

    Returns parameter gradients summed over the batch and the gradient with
    respect to the inputs.
    """
    activations = _forward(net, inputs)
    delta = np.atleast_2d(np.asarray(upstream, dtype=float)).reshape(activations[-1].shape)
    if net.output == "sigmoid":
        out = activations[-1]
        delta = delta * out * (1.0 - out)

    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    for k in range(len(net.weights) - 1, -1, -1):
        grad_w[k] = activations[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
        if k > 0:
            delta = delta * (1.0 - activations[k] ** 2)

    inputs_grad = delta[0] if np.ndim(inputs) == 1 else delta
    return MlpGradient(grad_w, grad_b, inputs_grad)


class Adam:
    def __init__(self, net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.m = [np.zeros_like(p) for p in net.weights + net.biases]
        self.v = [np.zeros_like(p) for p in net.weights + net.biases]

    def step(self, net, grad):
        """Descend along `grad` in place."""
        self.steps += 1
        params = net.weights + net.biases
        grads = grad.weights + grad.biases
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def soft_update(target, source, tau):
    for t, s in zip(target.weights + target.biases, source.weights + source.biases):
        t *= 1.0 - tau
        t += tau * s


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity, state_width=STATE_WIDTH):
        if capacity < 1:
            raise MarketSpecError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_width))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_width))
        self.dones = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state, done):
        k = self._cursor
        self.states[k] = state
        self.actions[k] = action
        self.rewards[k] = reward
        self.next_states[k] = next_state
        self.dones[k] = float(done)
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.choice(self._size, size=min(batch, self._size), replace=False)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


@dataclass(frozen=True)
class DdpgConfig:
    episodes: int = 10_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    soft_tau: float = 1e-4
    minibatch: int = 64
    random_fraction: float = 0.1
    hidden: tuple = (64, 64, 64)
    noise_start: float = 0.1
    noise_end: float = 0.01
    replay_capacity: int = 100_000

    def __post_init__(self):
        if self.episodes < 1:
            raise MarketSpecError(f"Need at least one episode, got {self.episodes}")
        if min(self.actor_lr, self.critic_lr, self.soft_tau) <= 0:
            raise MarketSpecError("Learning rates and soft update rate must be positive")
        if not 0 <= self.random_fraction <= 1:
            raise MarketSpecError(f"random_fraction must lie in [0, 1], got {self.random_fraction}")
        if self.minibatch < 1:
            raise MarketSpecError(f"Minibatch must be positive, got {self.minibatch}")

    @property
    def random_episodes(self):
        return int(round(self.random_fraction * self.episodes))

    def noise_scale(self, episode, stock_cap):
        """Exploration noise for a trained episode, linear from start to end."""
        trained = self.episodes - self.random_episodes
        if trained <= 1:
            return self.noise_end * stock_cap
        progress = (episode - self.random_episodes - 1) / (trained - 1)
        share = self.noise_start + (self.noise_end - self.noise_start) * min(max(progress, 0.0), 1.0)
        return share * stock_cap


def encode_state(period, stock, spec):
    return np.array([period / spec.horizon, stock / spec.stock])


@dataclass(eq=False)
class DdpgAgent:
    name = "ddpg"

    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    horizon: int
    stock_cap: float
    metadata: dict = field(default_factory=dict)

    @classmethod
    def build(cls, spec, cfg, rng):
        actor = Mlp.build([STATE_WIDTH, *cfg.hidden, 1], rng, output="sigmoid")
        critic = Mlp.build([STATE_WIDTH + 1, *cfg.hidden, 1], rng, output="linear")
        return cls(actor, critic, actor.copy(), critic.copy(), spec.horizon, float(spec.stock))

    def act(self, period, stock):
        """Deterministic sell quantity for the state; always within [0, stock]."""
        state = np.array([period / self.horizon, stock / self.stock_cap])
        return float(mlp_forward(self.actor, state)[0]) * stock

    def sell(self, ranked, stock, period, spec):
        return self.act(period, stock)

    def to_dict(self):
        return {
            "version": FILE_VERSION,
            "kind": "ddpg",
            "T": self.horizon,
            "Q": self.stock_cap,
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FILE_VERSION or data.get("kind") != "ddpg":
            raise PolicyFileError(
                f"Unsupported DDPG file (version={data.get('version')}, kind={data.get('kind')})"
            )
        try:
            actor = Mlp.from_dict(data["actor"])
            critic = Mlp.from_dict(data["critic"])
            horizon = int(data["T"])
            stock_cap = float(data["Q"])
        except (KeyError, ValueError, TypeError) as exc:
            raise PolicyFileError(f"Malformed DDPG file: {exc}") from exc
        return cls(actor, critic, actor.copy(), critic.copy(), horizon, stock_cap, data.get("metadata") or {})

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise PolicyFileError(f"Could not read {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass(eq=False)
class DdpgTrainer:
    """One minibatch update of critic, actor and targets."""

    agent: DdpgAgent
    cfg: DdpgConfig
    discount: float

    def __post_init__(self):
        self.actor_opt = Adam(self.agent.actor, self.cfg.actor_lr)
        self.critic_opt = Adam(self.agent.critic, self.cfg.critic_lr)

    def update(self, buffer, rng):
        agent = self.agent
        states, actions, rewards, next_states, dones = buffer.sample(self.cfg.minibatch, rng)
        batch = states.shape[0]

        # Actions are stored as a share of the stock cap.
        next_share = mlp_forward(agent.target_actor, next_states)[:, 0] * next_states[:, 1]
        next_q = mlp_forward(agent.target_critic, np.column_stack([next_states, next_share]))[:, 0]
        targets = rewards + self.discount * (1.0 - dones) * next_q

        critic_inputs = np.column_stack([states, actions])
        predicted = mlp_forward(agent.critic, critic_inputs)[:, 0]
        errors = predicted - targets
        loss = float(np.mean(errors**2))
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingDivergedError(f"Critic loss {loss:.3g} exceeds {DIVERGENCE_LIMIT:.0e}")
        self.critic_opt.step(agent.critic, mlp_grad(agent.critic, critic_inputs, (2.0 / batch) * errors[:, None]))

        fractions = mlp_forward(agent.actor, states)[:, 0]
        policy_inputs = np.column_stack([states, fractions * states[:, 1]])
        ascent = mlp_grad(agent.critic, policy_inputs, np.full((batch, 1), -1.0 / batch))
        fraction_grad = ascent.inputs[:, STATE_WIDTH] * states[:, 1]
        self.actor_opt.step(agent.actor, mlp_grad(agent.actor, states, fraction_grad[:, None]))

        soft_update(agent.target_critic, agent.critic, self.cfg.soft_tau)
        soft_update(agent.target_actor, agent.actor, self.cfg.soft_tau)
        return loss


@dataclass(frozen=True, eq=False)
class DdpgResult:
    agent: DdpgAgent
    losses: np.ndarray
    transitions: int
    seconds: float


def train_ddpg(spec, cfg, rng):
    """Train actor and critic on simulated episodes.

    The first `random_fraction` of episodes sell a uniform random share of
    the stock and only fill the buffer. Every later step acts with the actor
    plus decaying Gaussian noise and runs one minibatch update.
    """
    started = time.perf_counter()
    agent = DdpgAgent.build(spec, cfg, rng)
    trainer = DdpgTrainer(agent, cfg, spec.discount)
    buffer = ReplayBuffer(cfg.replay_capacity)
    losses = []
    report_every = max(1, cfg.episodes // 10)

    for episode in range(1, cfg.episodes + 1):
        exploring = episode <= cfg.random_episodes
        noise = 0.0 if exploring else cfg.noise_scale(episode, spec.stock)
        stock = float(spec.stock)
        for period in range(1, spec.horizon + 1):
            state = encode_state(period, stock, spec)
            if exploring:
                action = float(rng.uniform(0.0, stock))
            else:
                action = float(np.clip(agent.act(period, stock) + rng.normal(0.0, noise), 0.0, stock))

            ranked = rank(sample_profile(spec, rng), spec)
            reward = periodic_revenue(ranked, action)
            next_stock = max(stock - allocate_x(ranked, action).sold, 0.0)
            done = period == spec.horizon
            buffer.add(state, action / spec.stock, reward, encode_state(period + 1, next_stock, spec), done)
            stock = next_stock

            if not exploring and len(buffer) >= cfg.minibatch:
                losses.append(trainer.update(buffer, rng))

        if episode % report_every == 0:
            recent = np.mean(losses[-100:]) if losses else float("nan")
            logger.info(f"train_ddpg: episode {episode}/{cfg.episodes}, critic loss {recent:.4g}")

    seconds = time.perf_counter() - started
    agent.metadata.update({"episodes": cfg.episodes, "seconds": seconds})
    return DdpgResult(agent=agent, losses=np.asarray(losses), transitions=len(buffer), seconds=seconds)


@dataclass(frozen=True)
class PolicyEvaluation:
    mean: float
    stderr: float
    rewards: tuple

    @classmethod
    def from_rewards(cls, rewards):
        rewards = np.asarray(rewards, dtype=float)
        stderr = float(rewards.std(ddof=1) / np.sqrt(rewards.size)) if rewards.size > 1 else 0.0
        return cls(mean=float(rewards.mean()), stderr=stderr, rewards=tuple(rewards.tolist()))


def evaluate_policy(policy, spec, episodes, rng, profiles=None):
    """Mean discounted reward of a policy acting without exploration noise.

    `profiles[e][t - 1]` may fix the horizon of episode e.
    """
    rewards = [
        run_episode(policy, spec, rng, profiles[e] if profiles is not None else None).total
        for e in range(episodes)
    ]
    return PolicyEvaluation.from_rewards(rewards)
