"""Synthetic logistic click environments and the two canned scenarios.

``transfer``: ads are split into domains A and B; only domain A is shown until
``switch_step``, after which only domain B is shown.

``drift``: every ad is eligible throughout; at ``switch_step`` the response
weights are redrawn so the users' preferences change abruptly.

Click probability for user ``i`` and ad ``k`` is ``sigmoid(logit)`` where,
depending on ``ScenarioConfig.features``::

    concat       logit = w . concat(x_i, y_k)
    interaction  logit = x_i^T W y_k
    both         logit = w . concat(x_i, y_k) + x_i^T W y_k

``w``, ``W``, ``x`` and ``y`` are drawn from the standard normal distribution.
With ``concat`` the ranking of ads is the same for every user; the
interaction term makes preferences user specific.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import expit

from .core import Observation
from .policies import Policy, PolicyConfig, make_policy

SCENARIOS = ("transfer", "drift")
FEATURES = ("concat", "interaction", "both")


@dataclass
class ScenarioConfig:
    scenario: str = "transfer"
    total_steps: int = 1000
    switch_step: int = 500
    num_ads: int = 10
    ads_per_domain: int = 5
    num_users: int = 100
    d_u: int = 5
    d_a: int = 5
    discount_interval: int = 10
    replications: int = 10
    window: int = 100
    drift: bool = True
    features: str = "concat"
    env_seed: int | None = None
    base_seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.scenario not in SCENARIOS:
            out.append(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.features not in FEATURES:
            out.append(f"features must be one of {FEATURES}, got {self.features!r}")
        if not 0 < self.switch_step < self.total_steps:
            out.append("switch_step must satisfy 0 < switch_step < total_steps")
        if self.d_u < 0 or self.d_a < 0 or self.d_u + self.d_a == 0:
            out.append("context dimensions must be nonnegative and not both zero")
        if self.features != "concat" and (self.d_u < 1 or self.d_a < 1):
            out.append("interaction features need d_u >= 1 and d_a >= 1")
        if self.num_users < 1 or self.num_ads < 1:
            out.append("num_users and num_ads must be >= 1")
        if self.scenario == "transfer" and not 1 <= self.ads_per_domain <= self.num_ads // 2:
            out.append("transfer scenario needs 1 <= ads_per_domain <= num_ads // 2")
        if self.replications < 1:
            out.append("replications must be >= 1")
        if self.discount_interval < 1:
            out.append("discount_interval must be >= 1")
        if self.window < 1:
            out.append("window must be >= 1")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class LogisticEnv:
    weights: np.ndarray
    users: dict
    ads: dict
    sources: dict
    seed: int | None = None
    interaction: np.ndarray | None = None
    use_linear: bool = True
    _user_mat: np.ndarray = field(init=False, repr=False)
    _ad_mat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._user_ids = {u: p for p, u in enumerate(self.users)}
        self._ad_ids = {a: p for p, a in enumerate(self.ads)}
        self._user_mat = (np.vstack(list(self.users.values())) if self.users
                          else np.zeros((0, 0)))
        self._ad_mat = np.vstack(list(self.ads.values())) if self.ads else np.zeros((0, 0))

    @property
    def d_u(self) -> int:
        return self._user_mat.shape[1]

    @property
    def d_a(self) -> int:
        return self._ad_mat.shape[1]

    def _logits(self, user_id, ad_ids) -> np.ndarray:
        try:
            x = self._user_mat[self._user_ids[user_id]]
            y = self._ad_mat[[self._ad_ids[a] for a in ad_ids]]
        except KeyError as exc:
            raise KeyError(f"unknown id {exc.args[0]!r}") from None
        out = np.zeros(y.shape[0])
        if self.use_linear:
            out += x @ self.weights[: self.d_u] + y @ self.weights[self.d_u:]
        if self.interaction is not None:
            out += y @ (self.interaction.T @ x)
        return out

    def probs(self, user_id, ad_ids) -> np.ndarray:
        """True click probabilities of ``user_id`` for each ad in ``ad_ids``."""
        return expit(self._logits(user_id, ad_ids))

    def prob(self, user_id, ad_id) -> float:
        return float(self.probs(user_id, [ad_id])[0])

    def redraw_weights(self, rng: np.random.Generator) -> None:
        """Replace ``w`` (and ``W`` when present) with fresh N(0, 1) draws."""
        self.weights = rng.standard_normal(self.weights.shape[0])
        if self.interaction is not None:
            self.interaction = rng.standard_normal(self.interaction.shape)


def make_logistic_env(config: ScenarioConfig, seed: int) -> LogisticEnv:
    """Draw weights, user contexts and ad contexts from N(0, 1)."""
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(config.d_u + config.d_a)
    users = {f"u{i}": v for i, v in enumerate(rng.standard_normal((config.num_users, config.d_u)))}
    ads = {f"a{k}": v for k, v in enumerate(rng.standard_normal((config.num_ads, config.d_a)))}
    ad_ids = list(ads)
    if config.scenario == "transfer":
        n = config.ads_per_domain
        sources = {"A": ad_ids[:n], "B": ad_ids[n:2 * n]}
    else:
        sources = {"A": ad_ids}
    interaction = None
    if config.features in ("interaction", "both"):
        interaction = rng.standard_normal((config.d_u, config.d_a))
    return LogisticEnv(weights, users, ads, sources, seed, interaction=interaction,
                       use_linear=config.features != "interaction")


def scenario_preset(name: str, **overrides) -> ScenarioConfig:
    """Canned settings for the two scenarios.

    ``transfer``: 10 ads in two domains of 5, switch at step 500 of 1000,
    100 users and a pure interaction response.

    ``drift``: 50 ads, 20 users, 4000 steps with the redraw at the midpoint
    and a response with both linear and interaction terms.
    """
    if name == "transfer":
        base = dict(scenario="transfer", total_steps=1000, switch_step=500, num_ads=10,
                    ads_per_domain=5, num_users=100, features="interaction")
    elif name == "drift":
        base = dict(scenario="drift", total_steps=4000, switch_step=2000, num_ads=50,
                    num_users=20, features="both")
    else:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {name!r}")
    base.update(overrides)
    return ScenarioConfig(**base)


def preset_policy_config(scenario: str) -> PolicyConfig:
    """DCTS hyper-parameters used with each canned scenario."""
    if scenario == "drift":
        return PolicyConfig(lam=1.0, g=0.0, gamma=0.95)
    return PolicyConfig(lam=1.0, g=1.0, gamma=1.0)


def respond(env: LogisticEnv, user_id, ad_id, rng: np.random.Generator) -> int:
    """Bernoulli click with the environment's true probability."""
    return int(rng.random() < env.prob(user_id, ad_id))


@dataclass
class Trace:
    """Per-step record of one replication."""

    chosen: list
    reward: np.ndarray
    expected: np.ndarray
    best: np.ndarray

    @property
    def regret(self) -> np.ndarray:
        return self.best - self.expected

    @property
    def cumulative_reward(self) -> np.ndarray:
        return np.cumsum(self.reward)


class OraclePolicy(Policy):
    """Always plays the ad with the highest true click probability."""

    name = "oracle"

    def __init__(self, env: LogisticEnv):
        self.env = env

    def select(self, user_id, candidates, rng, source_id=None):
        return candidates[int(np.argmax(self.env.probs(user_id, candidates)))]

    def update(self, obs):
        pass


def replication_seeds(base_seed: int, replication: int) -> dict:
    """Independent named streams for one replication (seed = base_seed + r)."""
    ss = np.random.SeedSequence(base_seed + replication)
    env_ss, arrival_ss, reward_ss, policy_ss, drift_ss = ss.spawn(5)
    return {"env": env_ss, "arrival": arrival_ss, "reward": reward_ss,
            "policy": policy_ss, "drift": drift_ss}


def scenario_env(config: ScenarioConfig, replication: int) -> LogisticEnv:
    if config.env_seed is not None:
        return make_logistic_env(config, config.env_seed)
    seeds = replication_seeds(config.base_seed, replication)
    return make_logistic_env(config, int(seeds["env"].generate_state(1)[0]))


def _candidates(env: LogisticEnv, config: ScenarioConfig, step: int):
    if config.scenario == "transfer":
        src = "A" if step < config.switch_step else "B"
    else:
        src = "A"
    return src, env.sources[src]


def run_replication(policy_factory: Callable[[LogisticEnv], Policy], config: ScenarioConfig,
                    replication: int) -> Trace:
    """Run one seeded replication of ``config.scenario`` and return its trace."""
    config.validate()
    env = scenario_env(config, replication)
    seeds = replication_seeds(config.base_seed, replication)
    arrival_rng = np.random.default_rng(seeds["arrival"])
    reward_rng = np.random.default_rng(seeds["reward"])
    policy_rng = np.random.default_rng(seeds["policy"])
    drift_rng = np.random.default_rng(seeds["drift"])
    policy = policy_factory(env)
    user_ids = list(env.users)
    n = config.total_steps
    users = arrival_rng.integers(len(user_ids), size=n)
    unif = reward_rng.random(n)
    chosen = []
    reward = np.zeros(n)
    expected = np.zeros(n)
    best = np.zeros(n)
    for t in range(n):
        if config.scenario == "drift" and config.drift and t == config.switch_step:
            env.redraw_weights(drift_rng)
        source, candidates = _candidates(env, config, t)
        user = user_ids[users[t]]
        policy.tick(t)
        ad = policy.select(user, candidates, policy_rng, source_id=source)
        p = env.probs(user, candidates)
        p_ad = p[candidates.index(ad)]
        r = int(unif[t] < p_ad)
        policy.update(Observation(source, user, ad, r, t))
        chosen.append(ad)
        reward[t] = r
        expected[t] = p_ad
        best[t] = p.max()
    return Trace(chosen, reward, expected, best)


def run_scenario(policy_factory, config: ScenarioConfig, replications=None) -> list[Trace]:
    reps = range(config.replications) if replications is None else replications
    return [run_replication(policy_factory, config, r) for r in reps]


def run_transfer_scenario(policy_factory, config: ScenarioConfig) -> list[Trace]:
    if config.scenario != "transfer":
        raise ValueError("config.scenario must be 'transfer'")
    return run_scenario(policy_factory, config)


def run_drift_scenario(policy_factory, config: ScenarioConfig) -> list[Trace]:
    if config.scenario != "drift":
        raise ValueError("config.scenario must be 'drift'")
    return run_scenario(policy_factory, config)


def env_policy_factory(name: str, policy_config: PolicyConfig | None = None,
                       scenario: ScenarioConfig | None = None):
    """Factory building policy ``name`` with the environment's contexts.

    The scenario's ``discount_interval`` overrides the policy's.
    """
    pc = policy_config or PolicyConfig()
    if scenario is not None:
        pc = dataclasses.replace(pc, discount_interval=scenario.discount_interval)

    def factory(env: LogisticEnv) -> Policy:
        if name == "oracle":
            return OraclePolicy(env)
        ad_sources = {a: s for s, ads in env.sources.items() for a in ads}
        return make_policy(name, pc, user_contexts=env.users, ad_contexts=env.ads,
                           ad_sources=ad_sources)

    return factory


# -- metrics -----------------------------------------------------------------

def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` values up to and including each step."""
    x = np.asarray(x, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.shape[0] + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Sample mean and Student-t confidence interval ``(mean, lo, hi)``."""
    v = np.asarray(values, dtype=np.float64)
    m = float(v.mean())
    if v.shape[0] < 2:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, v.shape[0] - 1) * v.std(ddof=1)
                 / np.sqrt(v.shape[0]))
    return m, m - half, m + half


def window_mean(trace_values: np.ndarray, start: int, stop: int) -> float:
    return float(np.mean(trace_values[start:stop]))


def recovery_step(values: np.ndarray, switch_step: int, window: int,
                  fraction: float = 0.95) -> int | None:
    """First step after ``switch_step`` whose trailing mean re-attains
    ``fraction`` of the pre-switch plateau.

    The plateau is the mean over the ``window`` steps before the switch. Only
    steps at least ``window`` after the switch are considered, so that the
    trailing mean is computed from post-switch data alone. Returns ``None`` if
    the level is never re-attained.
    """
    values = np.asarray(values, dtype=np.float64)
    plateau = values[max(0, switch_step - window):switch_step].mean()
    tm = trailing_mean(values, window)
    for t in range(switch_step + window - 1, values.shape[0]):
        if tm[t] >= fraction * plateau:
            return t
    return None
