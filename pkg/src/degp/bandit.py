"""Contextual bandits with posterior-sampling agents.

The reward model is one network with an output head per arm.  The
function-space agent draws one function from q at the context and plays its
argmax; ensemble baselines pick a member uniformly and play its argmax.
Only the played arm's head gets a likelihood term when retraining.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .nets import EnsembleWeights, MlpSpec, ensemble_forward, init_ensemble
from .posterior import function_batch, sample_functions
from .priorkern import PriorSpec
from .trainer import TrainConfig, stream, train

# ---------------------------------------------------------------------------
# environments


class WheelBandit:
    """Wheel problem: contexts uniform in the unit disk, five arms.

    Arm 0 pays ``mean_safe``; arms 1-4 pay ``mean_other`` except that, when
    the context lies outside radius ``delta``, the arm of the matching
    quadrant pays ``mean_high``.  Per-round noise is drawn for all arms at
    once so every agent faces identical contexts and noise.
    """

    arms = 5
    context_dim = 2

    def __init__(self, seed: int, delta: float = 0.5, mean_safe: float = 1.2, mean_other: float = 1.0,
                 mean_high: float = 50.0, noise_std: float = 0.01):
        self.seed, self.delta = seed, delta
        self.means = (mean_safe, mean_other, mean_high)
        self.noise_std = noise_std
        self.round = 0

    def _draw(self, t: int):
        rng = stream(self.seed, t, "env")
        r = np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        return np.array([r * np.cos(a), r * np.sin(a)]), rng.standard_normal(self.arms)

    def context(self) -> np.ndarray:
        return self._draw(self.round)[0]

    def expected_rewards(self, x: np.ndarray) -> np.ndarray:
        safe, other, high = self.means
        mu = np.full(self.arms, other)
        mu[0] = safe
        if np.hypot(*x) > self.delta:
            quadrant = (1 if x[0] > 0 else 2) if x[1] > 0 else (3 if x[0] <= 0 else 4)
            mu[quadrant] = high
        return mu

    def reward(self, x: np.ndarray, arm: int) -> float:
        noise = self._draw(self.round)[1]
        self.round += 1
        return float(self.expected_rewards(x)[arm] + self.noise_std * noise[arm])

    def best_arm(self, x: np.ndarray) -> int:
        return int(np.argmax(self.expected_rewards(x)))


MUSHROOM_EAT_EDIBLE = 5.0
MUSHROOM_EAT_POISON = (5.0, -35.0)


class MushroomBandit:
    """Two arms: 0 = pass (reward 0), 1 = eat.

    Eating an edible mushroom pays +5; eating a poisonous one pays +5 or
    -35 with equal probability.
    """

    arms = 2

    def __init__(self, features: np.ndarray, poisonous: np.ndarray, seed: int):
        self.features = np.asarray(features, dtype=np.float64)
        self.poisonous = np.asarray(poisonous, dtype=bool)
        self.seed = seed
        self.round = 0

    @property
    def context_dim(self) -> int:
        return self.features.shape[1]

    def _draw(self, t: int):
        rng = stream(self.seed, t, "env")
        return int(rng.integers(len(self.features))), rng.uniform() < 0.5

    def context(self) -> np.ndarray:
        return self.features[self._draw(self.round)[0]]

    def expected_rewards(self, x: np.ndarray) -> np.ndarray:
        i = self._draw(self.round)[0]
        eat = MUSHROOM_EAT_EDIBLE if not self.poisonous[i] else float(np.mean(MUSHROOM_EAT_POISON))
        return np.array([0.0, eat])

    def reward(self, x: np.ndarray, arm: int) -> float:
        i, coin = self._draw(self.round)
        self.round += 1
        if arm == 0:
            return 0.0
        if not self.poisonous[i]:
            return MUSHROOM_EAT_EDIBLE
        return MUSHROOM_EAT_POISON[0] if coin else MUSHROOM_EAT_POISON[1]

    def best_arm(self, x: np.ndarray) -> int:
        return int(np.argmax(self.expected_rewards(x)))


def load_mushroom_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Label column first (``e`` edible / ``p`` poisonous), categorical features after.

    Every feature column is one-hot encoded over its sorted distinct values.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mushroom data not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0][0].strip().lower() not in ("e", "p"):
        rows = rows[1:]
    labels = np.array([r[0].strip().lower() == "p" for r in rows])
    cols = list(zip(*[r[1:] for r in rows]))
    blocks = []
    for col in cols:
        values = sorted(set(col))
        blocks.append(np.array([[v == u for u in values] for v in col], dtype=np.float64))
    return np.concatenate(blocks, axis=1), labels


# ---------------------------------------------------------------------------
# agents


class UniformAgent:
    name = "uniform"

    def __init__(self, arms: int):
        self.arms = arms

    def act(self, context, rng) -> int:
        return int(rng.integers(self.arms))

    def observe(self, context, arm, reward) -> None:
        pass


class OracleAgent:
    """Plays the best arm in expectation; an upper-bound harness for tests."""
    name = "oracle"

    def __init__(self, env):
        self.env = env

    def act(self, context, rng) -> int:
        return self.env.best_arm(context)

    def observe(self, context, arm, reward) -> None:
        pass


@dataclass
class AgentState:
    contexts: list = field(default_factory=list)
    arms: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    since_retrain: int = 0
    retrains: int = 0


class EnsembleAgent:
    """Neural reward model retrained every ``cadence`` rounds (warm start).

    ``method`` is ``degp`` (sample a function from q) or one of ``de``,
    ``rde``, ``rms`` (sample a member).  Before the first retrain the agent
    plays uniformly.
    """

    def __init__(self, method: str, arms: int, context_dim: int, hidden=(256, 256), members: int = 10,
                 cfg: TrainConfig | None = None, prior: PriorSpec | None = None, cadence: int = 50,
                 seed: int = 0, weight_decay: float = 0.1, lambda_fraction: float = 0.05,
                 reward_scale: float = 1.0):
        if method not in ("degp", "de", "rde", "rms"):
            raise ValueError(f"unknown bandit method {method!r}")
        self.name = method
        self.method = method
        self.arms = arms
        self.cadence = cadence
        self.seed = seed
        self.weight_decay = weight_decay
        self.lambda_fraction = lambda_fraction
        self.reward_scale = reward_scale
        self.ens: EnsembleWeights = init_ensemble(MlpSpec(context_dim, tuple(hidden), arms), members, seed)
        self.cfg = cfg or TrainConfig()
        self.prior = prior or PriorSpec(context_dim, (64,), seed=seed)
        self.state = AgentState()
        self.anchors = None
        if method == "rms":
            from .baselines import AnchorSet
            self.anchors = AnchorSet.draw(self.ens, seed)

    @property
    def trained(self) -> bool:
        return self.state.retrains > 0

    def act(self, context, rng) -> int:
        if self.arms == 1:
            return 0
        if not self.trained:
            return int(rng.integers(self.arms))
        raw = ensemble_forward(self.ens, np.asarray(context, dtype=np.float64)[None, :]).data  # (M, 1, A)
        if self.method == "degp":
            fb = function_batch(raw, self.lambda_fraction)
            f = sample_functions(fb, 1, rng).data[0]
        else:
            f = raw[int(rng.integers(raw.shape[0])), 0]
        return int(np.argmax(f))

    def dataset(self) -> Dataset:
        """Buffer as a masked regression set with centered, rescaled rewards.

        The affine reward transform leaves every argmax unchanged.
        """
        s = self.state
        n = len(s.arms)
        r = np.asarray(s.rewards)
        r = (r - r.mean()) / self.reward_scale
        y = np.zeros((n, self.arms))
        mask = np.zeros((n, self.arms))
        y[np.arange(n), s.arms] = r
        mask[np.arange(n), s.arms] = 1.0
        return Dataset(np.array(s.contexts), y, mask)

    def observe(self, context, arm, reward) -> None:
        s = self.state
        s.contexts.append(np.asarray(context, dtype=np.float64))
        s.arms.append(int(arm))
        s.rewards.append(float(reward))
        s.since_retrain += 1
        if s.since_retrain >= self.cadence:
            self.retrain()

    def retrain(self) -> None:
        from .baselines import train_de, train_rde, train_rms

        s = self.state
        cfg = replace(self.cfg, seed=int(self.seed) * 100003 + s.retrains)
        data = self.dataset()
        if self.method == "degp":
            self.ens, _ = train(self.ens, data, self.prior, cfg)
        elif self.method == "de":
            self.ens, _ = train_de(self.ens, data, cfg)
        elif self.method == "rde":
            self.ens, _ = train_rde(self.ens, data, cfg, self.weight_decay)
        else:
            self.ens, _ = train_rms(self.ens, data, cfg, self.weight_decay, self.anchors)
        s.since_retrain = 0
        s.retrains += 1


def step_and_learn(agent, env, rng) -> float:
    """One round: observe a context, act, collect the reward, learn."""
    x = env.context()
    arm = agent.act(x, rng)
    r = env.reward(x, arm)
    agent.observe(x, arm, r)
    return r


def run_agent(make_env, make_agent, rounds: int, seed: int) -> np.ndarray:
    """Cumulative reward trace of one (environment, agent) pair."""
    env = make_env(seed)
    agent = make_agent(env, seed)
    rewards = np.empty(rounds)
    for t in range(rounds):
        rewards[t] = step_and_learn(agent, env, stream(seed, t, "act"))
    return np.cumsum(rewards)


def run_experiment(make_env, agents: dict, rounds: int, seeds) -> dict:
    """Per-seed and seed-mean cumulative-reward traces for every agent.

    ``agents`` maps a method name to ``make_agent(env, seed)``.
    """
    out = {}
    for name, make_agent in agents.items():
        traces = np.stack([run_agent(make_env, make_agent, rounds, s) for s in seeds])
        out[name] = {"per_seed": traces, "mean": traces.mean(axis=0)}
    return out
