"""Thompson Sampling with priors transferred from similar users and similar ads.

For user ``i`` and candidate ad ``k`` the prior pseudo-counts are::

    alpha0 = sum_{l in nbrs(k)} S_ad(k, l) s_il + sum_{j in nbrs(i)} S_user(i, j) s_jk
    beta0  = same with failures f

where ``s`` and ``f`` are the discounted counts kept by
:class:`~dcts.core.RewardLedger`, neighbours exclude ``k`` and ``i``
themselves and similarities are clamped cosines. The posterior is::

    alpha = lam / (s_ik + 1) * alpha0 + g * mean_s_k + s_ik + 1
    beta  = lam / (f_ik + 1) * beta0  + g * mean_f_k + f_ik + 1

and the ad with the largest Beta draw is played.
"""

from __future__ import annotations

import math
from typing import Hashable, Mapping, Sequence

import numpy as np

from .. import _kernels
from ..core import RewardLedger, as_context
from ..similarity import ExactIndex, ad_context_from_clicks, build_index
from .base import BetaParams, Policy, PolicyConfig, argmax_random_tie, check_candidates

_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0, dtype=np.float64)

AD_CONTEXT_MODES = ("given", "clicks")


def dcts_prior_params(ledger: RewardLedger, user_index, ad_index, user_id, ad_id,
                      neighbor_k: int) -> tuple[float, float]:
    """Prior pseudo-counts for one (user, ad) pair, computed term by term.

    Ids absent from an index contribute nothing, which makes a cold user or
    ad fall back to (0, 0).
    """
    alpha0 = 0.0
    beta0 = 0.0
    if ad_index is not None and ad_id in ad_index:
        for other, w in ad_index.neighbors_of(ad_id, neighbor_k):
            alpha0 += w * ledger.success(user_id, other)
            beta0 += w * ledger.failure(user_id, other)
    if user_index is not None and user_id in user_index:
        for other, w in user_index.neighbors_of(user_id, neighbor_k):
            alpha0 += w * ledger.success(other, ad_id)
            beta0 += w * ledger.failure(other, ad_id)
    return alpha0, beta0


def dcts_posterior_params(alpha0: float, beta0: float, ledger: RewardLedger, user_id,
                          ad_id, config: PolicyConfig) -> BetaParams:
    s_ik = ledger.success(user_id, ad_id)
    f_ik = ledger.failure(user_id, ad_id)
    alpha = (config.lam / (s_ik + 1.0) * alpha0 + config.g * ledger.global_mean_success(ad_id)
             + s_ik + 1.0)
    beta = (config.lam / (f_ik + 1.0) * beta0 + config.g * ledger.global_mean_failure(ad_id)
            + f_ik + 1.0)
    return BetaParams(alpha, beta)


class DCTSPolicy(Policy):
    """Dynamic collaborative-filtering Thompson Sampling.

    Parameters
    ----------
    config : PolicyConfig
        Uses ``lam``, ``g``, ``gamma``, ``discount_interval``, ``neighbor_k``,
        ``global_mean_mode``, ``same_source_users`` and the index settings.
    user_contexts : mapping of user id to feature vector, optional
        Users without a context receive no user-user transfer.
    ad_contexts : mapping of ad id to feature vector, optional
        Required when ``ad_context_mode="given"``.
    ad_context_mode : {"given", "clicks"}
        ``"clicks"`` derives each ad's context as the per-dimension median of
        the contexts of the users who clicked it, refreshed at every epoch
        boundary for ads that gained clickers.
    """

    name = "dcts"

    def __init__(self, config: PolicyConfig | None = None,
                 user_contexts: Mapping[Hashable, Sequence[float]] | None = None,
                 ad_contexts: Mapping[Hashable, Sequence[float]] | None = None,
                 ad_context_mode: str = "given", **_):
        self.config = (config or PolicyConfig()).validate()
        if ad_context_mode not in AD_CONTEXT_MODES:
            raise ValueError(f"ad_context_mode must be one of {AD_CONTEXT_MODES}")
        self.ad_context_mode = ad_context_mode
        self.ledger = RewardLedger(self.config.gamma, self.config.global_mean_mode)
        self.user_contexts = {u: as_context(v) for u, v in (user_contexts or {}).items()}
        for uid in self.user_contexts:
            self.ledger.add_user(uid)
        self.user_index = build_index(
            self.user_contexts, method=self.config.index_method,
            num_bits=self.config.lsh_bits, num_tables=self.config.lsh_tables,
            seed=self.config.seed,
        ) if self.user_contexts else None
        self.ad_contexts: dict = {}
        if ad_context_mode == "given":
            self.ad_contexts = {a: as_context(v) for a, v in (ad_contexts or {}).items()}
        for aid in self.ad_contexts:
            self.ledger.add_ad(aid)
        self._user_nbrs: dict = {}
        self._cand_cache: dict = {}
        self._dirty_ads: set = set()
        self._epoch: int | None = None
        self._rebuild_ad_index()

    # -- neighbourhoods ------------------------------------------------------

    def _rebuild_ad_index(self):
        live = {a: v for a, v in self.ad_contexts.items() if np.any(v)}
        self.ad_index = ExactIndex(live) if live else None
        self._cand_cache.clear()

    def refresh_ad_contexts(self):
        """Recompute clicker-median contexts for ads that gained clickers."""
        if self.ad_context_mode != "clicks" or not self._dirty_ads:
            return
        for aid in self._dirty_ads:
            ctx = [self.user_contexts[u] for u in self.ledger.clickers(aid)
                   if u in self.user_contexts]
            if ctx:
                self.ad_contexts[aid] = ad_context_from_clicks(ctx)
        self._dirty_ads.clear()
        self._rebuild_ad_index()

    def _user_neighbors(self, user_id, source_id=None):
        if self.user_index is None or user_id not in self.user_index:
            return _EMPTY_I, _EMPTY_F
        cached = self._user_nbrs.get(user_id)
        if cached is None:
            pairs = [(u, w) for u, w in
                     self.user_index.neighbors_of(user_id, self.config.neighbor_k) if w > 0.0]
            ids = [u for u, _ in pairs]
            rows = np.array([self.ledger.users.get(u) for u in ids], dtype=np.int64)
            weights = np.array([w for _, w in pairs], dtype=np.float64)
            cached = (ids, rows, weights)
            self._user_nbrs[user_id] = cached
        ids, rows, weights = cached
        if self.config.same_source_users and source_id is not None:
            members = self.ledger.source_users(source_id)
            keep = np.array([u in members for u in ids], dtype=bool)
            return rows[keep], weights[keep]
        return rows, weights

    def _candidate_block(self, candidates):
        key = tuple(candidates)
        block = self._cand_cache.get(key)
        if block is not None:
            return block
        cols = np.array([self.ledger.add_ad(a) for a in candidates], dtype=np.int64)
        k = self.config.neighbor_k
        nbr_lists = []
        for aid in candidates:
            if self.ad_index is not None and aid in self.ad_index:
                nbr_lists.append([(self.ledger.add_ad(l), w)
                                  for l, w in self.ad_index.neighbors_of(aid, k) if w > 0.0])
            else:
                nbr_lists.append([])
        width = max((len(x) for x in nbr_lists), default=0)
        idx = np.full((len(candidates), width), -1, dtype=np.int64)
        wts = np.zeros((len(candidates), width))
        for q, lst in enumerate(nbr_lists):
            for r, (col, w) in enumerate(lst):
                idx[q, r] = col
                wts[q, r] = w
        block = (cols, idx, wts)
        self._cand_cache[key] = block
        return block

    # -- policy interface ----------------------------------------------------

    def tick(self, time: float) -> None:
        epoch = math.floor(time / self.config.discount_interval)
        if self._epoch is None:
            self._epoch = epoch
            return
        if epoch > self._epoch:
            self.ledger.end_epoch(epoch - self._epoch)
            self._epoch = epoch
            self.refresh_ad_contexts()

    def beta_params(self, user_id, candidates, source_id=None):
        """Posterior Beta parameters for every candidate, as two arrays."""
        check_candidates(candidates)
        cols, ad_idx, ad_w = self._candidate_block(candidates)
        ledger = self.ledger
        succ, fail = ledger.success_matrix, ledger.failure_matrix
        row = ledger.users.get(user_id)
        nbr_rows, nbr_w = self._user_neighbors(user_id, source_id)
        alpha0, beta0 = _kernels.prior_params(succ, fail, row, nbr_rows, nbr_w, cols,
                                              ad_idx, ad_w)
        if row >= 0:
            own_s = succ[row, cols]
            own_f = fail[row, cols]
        else:
            own_s = np.zeros(cols.shape[0])
            own_f = np.zeros(cols.shape[0])
        glob_s, glob_f = ledger.global_means(cols)
        return _kernels.posterior_params(alpha0, beta0, own_s, own_f, glob_s, glob_f,
                                         float(self.config.lam), float(self.config.g))

    def select(self, user_id, candidates, rng, source_id=None):
        alpha, beta = self.beta_params(user_id, candidates, source_id)
        theta = rng.beta(alpha, beta)
        return candidates[argmax_random_tie(theta, rng)]

    def update(self, obs) -> None:
        self.tick(obs.time)
        ledger = self.ledger
        if (obs.reward and self.ad_context_mode == "clicks"
                and obs.user_id in self.user_contexts
                and not ledger.has_clicked(obs.user_id, obs.ad_id)):
            self._dirty_ads.add(obs.ad_id)
        ledger.record(obs)


def dcts_select(policy: DCTSPolicy, user_id, candidates, rng, source_id=None):
    return policy.select(user_id, candidates, rng, source_id=source_id)


def dcts_update(policy: DCTSPolicy, obs) -> DCTSPolicy:
    policy.update(obs)
    return policy
