"""LinUCB baselines over concatenated (user, ad) features.

Each arm keeps its own ridge statistics ``A = I + sum z z^T`` and
``b = sum r z`` with ``z = concat(user_context, ad_context)``. The
transferable variant seeds a new arm's statistics from arms of other sources,
weighted by ad-ad similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from ..core import as_context
from ..similarity import clamped_similarity
from .base import Policy, PolicyConfig, argmax_random_tie, check_candidates


@dataclass
class LinearArmState:
    """Ridge-regression sufficient statistics of one arm."""

    A: np.ndarray
    b: np.ndarray
    A_inv: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "LinearArmState":
        return cls(np.eye(d), np.zeros(d), np.eye(d))

    @classmethod
    def from_stats(cls, A: np.ndarray, b: np.ndarray) -> "LinearArmState":
        A = np.array(A, dtype=np.float64)
        return cls(A, np.array(b, dtype=np.float64), np.linalg.inv(A))

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b

    def ucb(self, z: np.ndarray, alpha: float) -> float:
        Az = self.A_inv @ z
        return float(z @ (self.A_inv @ self.b) + alpha * np.sqrt(max(z @ Az, 0.0)))

    def width(self, z: np.ndarray) -> float:
        return float(np.sqrt(max(z @ self.A_inv @ z, 0.0)))

    def update(self, z: np.ndarray, reward: float) -> None:
        self.A += np.outer(z, z)
        self.b += reward * z
        # Sherman-Morrison keeps A_inv in step with A
        Az = self.A_inv @ z
        self.A_inv -= np.outer(Az, Az) / (1.0 + z @ Az)


def tlinucb_init_prior(source_arm_states: Mapping[Hashable, LinearArmState],
                       source_ad_contexts: Mapping[Hashable, Sequence[float]],
                       target_ad_contexts: Mapping[Hashable, Sequence[float]],
                       d: int, similarity=clamped_similarity) -> dict:
    """Initial statistics for target arms transferred from trained source arms.

    Each target arm gets ``A = I + sum_s w_s (A_s - I)`` and
    ``b = sum_s w_s b_s`` where ``w_s`` is the (clamped) similarity between
    the target ad's context and source arm ``s``'s context. With no source
    arms, or zero similarity to all of them, the result is the identity
    initialisation of plain LinUCB.
    """
    eye = np.eye(d)
    out = {}
    for target, y_t in target_ad_contexts.items():
        A = eye.copy()
        b = np.zeros(d)
        for src, state in source_arm_states.items():
            if src not in source_ad_contexts:
                continue
            w = similarity(y_t, source_ad_contexts[src])
            if w > 0.0:
                A += w * (state.A - eye)
                b += w * state.b
        out[target] = LinearArmState.from_stats(A, b)
    return out


class HybridLinUCB(Policy):
    """Per-arm LinUCB on ``z = concat(user_context, ad_context)``.

    Users or ads without a known context are represented by zero vectors.
    """

    name = "hlinucb"

    def __init__(self, config: PolicyConfig | None = None,
                 user_contexts: Mapping[Hashable, Sequence[float]] | None = None,
                 ad_contexts: Mapping[Hashable, Sequence[float]] | None = None,
                 user_dim: int | None = None, ad_dim: int | None = None, **_):
        self.config = (config or PolicyConfig()).validate()
        self.user_contexts = {u: as_context(v) for u, v in (user_contexts or {}).items()}
        self.ad_contexts = {a: as_context(v) for a, v in (ad_contexts or {}).items()}
        self.user_dim = user_dim if user_dim is not None else _common_dim(self.user_contexts)
        self.ad_dim = ad_dim if ad_dim is not None else _common_dim(self.ad_contexts)
        self.d = self.user_dim + self.ad_dim
        if self.d == 0:
            raise ValueError("LinUCB needs at least one context dimension")
        self.arms: dict[Hashable, LinearArmState] = {}

    def features(self, user_id, ad_id) -> np.ndarray:
        x = self.user_contexts.get(user_id)
        y = self.ad_contexts.get(ad_id)
        x = np.zeros(self.user_dim) if x is None else x
        y = np.zeros(self.ad_dim) if y is None else y
        if x.shape[0] != self.user_dim or y.shape[0] != self.ad_dim:
            raise ValueError(
                f"dimension mismatch: got ({x.shape[0]}, {y.shape[0]}), "
                f"expected ({self.user_dim}, {self.ad_dim})")
        return np.concatenate([x, y])

    def arm(self, ad_id, source_id=None) -> LinearArmState:
        state = self.arms.get(ad_id)
        if state is None:
            state = self._new_arm(ad_id, source_id)
            self.arms[ad_id] = state
        return state

    def _new_arm(self, ad_id, source_id):
        return LinearArmState.identity(self.d)

    def scores(self, user_id, candidates, source_id=None) -> np.ndarray:
        alpha = self.config.alpha_ucb
        return np.array([self.arm(a, source_id).ucb(self.features(user_id, a), alpha)
                         for a in candidates])

    def select(self, user_id, candidates, rng, source_id=None):
        check_candidates(candidates)
        return candidates[argmax_random_tie(self.scores(user_id, candidates, source_id), rng)]

    def update(self, obs):
        z = self.features(obs.user_id, obs.ad_id)
        self.arm(obs.ad_id, obs.source_id).update(z, float(obs.reward))


class TransferableLinUCB(HybridLinUCB):
    """hLinUCB whose fresh arms inherit similarity-weighted statistics.

    When an arm is first needed, its statistics are initialised by
    :func:`tlinucb_init_prior` from every trained arm belonging to a
    different source (or any trained arm when sources are unknown).
    """

    name = "tlinucb"

    def __init__(self, *args, ad_sources: Mapping[Hashable, Hashable] | None = None, **kw):
        super().__init__(*args, **kw)
        self.ad_sources = dict(ad_sources or {})

    def _new_arm(self, ad_id, source_id):
        src = self.ad_sources.get(ad_id, source_id)
        if ad_id not in self.ad_contexts:
            return LinearArmState.identity(self.d)
        donors = {a: s for a, s in self.arms.items()
                  if src is None or self.ad_sources.get(a) is None
                  or self.ad_sources.get(a) != src}
        return tlinucb_init_prior(donors, self.ad_contexts,
                                  {ad_id: self.ad_contexts[ad_id]}, self.d)[ad_id]

    def update(self, obs):
        self.ad_sources.setdefault(obs.ad_id, obs.source_id)
        super().update(obs)


def _common_dim(contexts: Mapping) -> int:
    dims = {v.shape[0] for v in contexts.values()}
    if len(dims) > 1:
        raise ValueError(f"contexts have mixed dimensions {sorted(dims)}")
    return dims.pop() if dims else 0


def hlinucb_select(policy: HybridLinUCB, user_id, candidates, rng):
    return policy.select(user_id, candidates, rng)


def hlinucb_update(policy: HybridLinUCB, obs) -> HybridLinUCB:
    policy.update(obs)
    return policy
