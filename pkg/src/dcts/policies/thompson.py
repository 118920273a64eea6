"""Beta-Bernoulli Thompson Sampling with per-ad counts shared by all users."""

import numpy as np

from .base import Policy, PolicyConfig, argmax_random_tie, check_candidates


class ThompsonSampling(Policy):
    """Non-contextual TS: ad ``k`` is scored by a draw from Beta(s_k + 1, f_k + 1).

    No personalisation and no discounting.
    """

    name = "ts"

    def __init__(self, config: PolicyConfig | None = None, **_):
        self.config = config or PolicyConfig()
        self.successes: dict = {}
        self.failures: dict = {}

    def params(self, candidates):
        s = np.array([self.successes.get(a, 0.0) for a in candidates])
        f = np.array([self.failures.get(a, 0.0) for a in candidates])
        return s + 1.0, f + 1.0

    def select(self, user_id, candidates, rng, source_id=None):
        check_candidates(candidates)
        alpha, beta = self.params(candidates)
        theta = rng.beta(alpha, beta)
        return candidates[argmax_random_tie(theta, rng)]

    def update(self, obs):
        table = self.successes if obs.reward else self.failures
        table[obs.ad_id] = table.get(obs.ad_id, 0.0) + 1.0


def ts_select(policy: ThompsonSampling, user_id, candidates, rng):
    return policy.select(user_id, candidates, rng)


def ts_update(policy: ThompsonSampling, obs) -> ThompsonSampling:
    policy.update(obs)
    return policy
