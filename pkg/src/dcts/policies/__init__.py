"""Bandit policies sharing one select/update interface."""

from .base import (BetaParams, Policy, PolicyConfig, RandomPolicy, argmax_random_tie,
                   random_select)
from .dcts import (DCTSPolicy, dcts_posterior_params, dcts_prior_params, dcts_select,
                   dcts_update)
from .linucb import (HybridLinUCB, LinearArmState, TransferableLinUCB, hlinucb_select,
                     hlinucb_update, tlinucb_init_prior)
from .thompson import ThompsonSampling, ts_select, ts_update

POLICIES = {
    "dcts": DCTSPolicy,
    "ts": ThompsonSampling,
    "hlinucb": HybridLinUCB,
    "tlinucb": TransferableLinUCB,
    "random": RandomPolicy,
}


def make_policy(name: str, config: PolicyConfig | None = None, **context):
    """Instantiate a policy by registry name.

    ``context`` is forwarded to the constructor (``user_contexts``,
    ``ad_contexts``, ``ad_sources``, ...); policies ignore what they do not use.
    """
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(config, **context)


__all__ = [
    "BetaParams", "DCTSPolicy", "HybridLinUCB", "LinearArmState", "POLICIES", "Policy",
    "PolicyConfig", "RandomPolicy", "ThompsonSampling", "TransferableLinUCB",
    "argmax_random_tie", "dcts_posterior_params", "dcts_prior_params", "dcts_select",
    "dcts_update", "hlinucb_select", "hlinucb_update", "make_policy", "random_select",
    "tlinucb_init_prior", "ts_select", "ts_update",
]
