"""Shared policy plumbing: configuration, Beta parameters, tie-breaking."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from ..core import GLOBAL_MEAN_MODES, Observation


@dataclass
class PolicyConfig:
    """Hyper-parameters shared by every policy; each policy reads what it needs.

    Attributes
    ----------
    lam : float
        Weight of the similarity-transferred prior. It is divided by the
        user's own discounted count plus one, so it fades with evidence.
    g : float
        Weight of the per-ad mean reward across users.
    gamma : float
        Discount ratio applied at the end of every epoch.
    discount_interval : float
        Epoch length in the unit of ``Observation.time`` (steps in
        simulation, seconds in replay).
    neighbor_k : int
        Number of nearest users and nearest ads summed in the prior.
    alpha_ucb : float
        Exploration width of the LinUCB baselines.
    """

    lam: float = 1.0
    g: float = 1.0
    gamma: float = 1.0
    discount_interval: float = 10.0
    neighbor_k: int = 50
    alpha_ucb: float = 1.0
    seed: int = 0
    global_mean_mode: str = "seen"
    same_source_users: bool = False
    index_method: str = "auto"
    lsh_bits: int = 16
    lsh_tables: int = 8

    def problems(self) -> list[str]:
        """Every violated constraint, as human-readable diagnostics."""
        out = []

        def finite(name):
            v = getattr(self, name)
            ok = isinstance(v, (int, float)) and math.isfinite(v)
            if not ok:
                out.append(f"{name} must be a finite number, got {v!r}")
            return ok

        if finite("lam") and self.lam < 0:
            out.append(f"lambda must be >= 0, got {self.lam}")
        if finite("g") and self.g < 0:
            out.append(f"g must be >= 0, got {self.g}")
        if finite("gamma") and not 0.0 <= self.gamma <= 1.0:
            out.append(f"gamma out of [0,1]: {self.gamma}")
        if finite("discount_interval") and self.discount_interval <= 0:
            out.append(f"discount_interval must be > 0, got {self.discount_interval}")
        if not isinstance(self.neighbor_k, int) or self.neighbor_k < 1:
            out.append(f"neighbor_k must be a positive integer, got {self.neighbor_k!r}")
        if finite("alpha_ucb") and self.alpha_ucb <= 0:
            out.append(f"alpha_ucb must be > 0, got {self.alpha_ucb}")
        if self.global_mean_mode not in GLOBAL_MEAN_MODES:
            out.append(f"global_mean_mode must be one of {GLOBAL_MEAN_MODES}, "
                       f"got {self.global_mean_mode!r}")
        if self.index_method not in ("auto", "exact", "lsh"):
            out.append(f"index_method must be auto, exact or lsh, got {self.index_method!r}")
        return out

    def validate(self) -> "PolicyConfig":
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class BetaParams(NamedTuple):
    alpha: float
    beta: float


def argmax_random_tie(values: np.ndarray, rng: np.random.Generator) -> int:
    """Index of the maximum; ties are broken uniformly with ``rng``.

    The generator is only consumed when a tie actually occurs, so two
    policies that produce identical scores consume identical streams.
    """
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def check_candidates(candidates: Sequence[Hashable]) -> None:
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")


class Policy:
    """Interface every bandit policy implements.

    The driver calls :meth:`tick` with the current time before each
    decision, then :meth:`select`, then :meth:`update` with the outcome.
    """

    name = "policy"

    def tick(self, time: float) -> None:
        """Advance the policy clock. Policies without epochs ignore it."""

    def select(self, user_id, candidates: Sequence[Hashable], rng: np.random.Generator,
               source_id=None) -> Hashable:
        raise NotImplementedError

    def update(self, obs: Observation) -> None:
        raise NotImplementedError


def random_select(candidates: Sequence[Hashable], rng: np.random.Generator) -> Hashable:
    """Uniformly random candidate."""
    check_candidates(candidates)
    return candidates[int(rng.integers(len(candidates)))]


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, config: PolicyConfig | None = None, **_):
        self.config = config or PolicyConfig()

    def select(self, user_id, candidates, rng, source_id=None):
        return random_select(candidates, rng)

    def update(self, obs):
        pass
