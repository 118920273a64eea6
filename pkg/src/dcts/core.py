"""Domain types and the discounted reward ledger.

The ledger keeps, for every (user, ad) pair, an exponentially discounted count
of clicks (successes) and of impressions without a click (failures)::

    s_ik(t) = sum_{tau <= t} gamma ** (t - tau) * [click by i on k at tau]

Discounting happens in batch epochs: :meth:`RewardLedger.apply_discount`
multiplies every accumulator by ``gamma`` and the caller decides when an
epoch ends (every N simulation steps, every hour of log time, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

GLOBAL_MEAN_MODES = ("seen", "clicked", "all", "total")


def as_context(values, dim: int | None = None) -> np.ndarray:
    """Validate a context vector and return it as a 1-D float64 array.

    Raises
    ------
    ValueError
        If the values are not one-dimensional, contain NaN or infinity, or do
        not match ``dim`` when given.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"context must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"context has dim {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("context contains non-finite values")
    return arr


@dataclass(frozen=True, slots=True)
class Observation:
    """One displayed ad and whether it was clicked.

    ``time`` is a step index in simulation and epoch seconds in replay.
    """

    source_id: Hashable
    user_id: Hashable
    ad_id: Hashable
    reward: int
    time: float = 0

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward!r}")
        if self.time < 0:
            raise ValueError(f"time must be nonnegative, got {self.time!r}")


class _Registry:
    """Maps hashable ids to dense row/column numbers."""

    __slots__ = ("index", "ids")

    def __init__(self):
        self.index: dict = {}
        self.ids: list = []

    def get(self, key) -> int:
        return self.index.get(key, -1)

    def add(self, key) -> int:
        pos = self.index.get(key)
        if pos is None:
            pos = len(self.ids)
            self.index[key] = pos
            self.ids.append(key)
        return pos

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return key in self.index


class RewardLedger:
    """Discounted success/failure accumulators per (user, ad) and per ad.

    Parameters
    ----------
    gamma : float
        Discount ratio in [0, 1] used by :meth:`end_epoch`.
    global_mean_mode : {"seen", "clicked", "all"}
        Denominator of the per-ad global mean: users who were shown the ad,
        users who ever clicked it, or every user known to the ledger.

    Notes
    -----
    Ids are registered on first sight and mapped to rows and columns of
    dense arrays that grow geometrically. Pairs never observed read as 0.
    Per-ad column sums are maintained incrementally so the global means cost
    O(1) per ad.
    """

    def __init__(self, gamma: float = 1.0, global_mean_mode: str = "seen",
                 initial_users: int = 64, initial_ads: int = 16):
        check_gamma(gamma)
        if global_mean_mode not in GLOBAL_MEAN_MODES:
            raise ValueError(
                f"global_mean_mode must be one of {GLOBAL_MEAN_MODES}, "
                f"got {global_mean_mode!r}")
        self.gamma = float(gamma)
        self.global_mean_mode = global_mean_mode
        self.users = _Registry()
        self.ads = _Registry()
        nu, na = max(1, initial_users), max(1, initial_ads)
        self._success = np.zeros((nu, na))
        self._failure = np.zeros((nu, na))
        self._seen = np.zeros((nu, na), dtype=bool)
        self._clicked = np.zeros((nu, na), dtype=bool)
        self._col_success = np.zeros(na)
        self._col_failure = np.zeros(na)
        self._n_seen = np.zeros(na, dtype=np.int64)
        self._n_clicked = np.zeros(na, dtype=np.int64)
        self._source_users: dict = {}
        self.epochs = 0

    # -- storage -----------------------------------------------------------

    def _grow(self, rows: int, cols: int):
        cur_r, cur_c = self._success.shape
        if rows <= cur_r and cols <= cur_c:
            return
        new_r = max(rows, cur_r * 2) if rows > cur_r else cur_r
        new_c = max(cols, cur_c * 2) if cols > cur_c else cur_c
        for name in ("_success", "_failure", "_seen", "_clicked"):
            old = getattr(self, name)
            new = np.zeros((new_r, new_c), dtype=old.dtype)
            new[:cur_r, :cur_c] = old
            setattr(self, name, new)
        if new_c > cur_c:
            for name in ("_col_success", "_col_failure", "_n_seen", "_n_clicked"):
                old = getattr(self, name)
                new = np.zeros(new_c, dtype=old.dtype)
                new[:cur_c] = old
                setattr(self, name, new)

    def add_user(self, user_id) -> int:
        row = self.users.add(user_id)
        self._grow(row + 1, self._success.shape[1])
        return row

    def add_ad(self, ad_id) -> int:
        col = self.ads.add(ad_id)
        self._grow(self._success.shape[0], col + 1)
        return col

    @property
    def success_matrix(self) -> np.ndarray:
        """Live view of the (users x ads) discounted success array."""
        return self._success

    @property
    def failure_matrix(self) -> np.ndarray:
        return self._failure

    # -- updates -----------------------------------------------------------

    def record(self, obs: Observation) -> "RewardLedger":
        row = self.add_user(obs.user_id)
        col = self.add_ad(obs.ad_id)
        self._source_users.setdefault(obs.source_id, set()).add(obs.user_id)
        if not self._seen[row, col]:
            self._seen[row, col] = True
            self._n_seen[col] += 1
        if obs.reward:
            self._success[row, col] += 1.0
            self._col_success[col] += 1.0
            if not self._clicked[row, col]:
                self._clicked[row, col] = True
                self._n_clicked[col] += 1
        else:
            self._failure[row, col] += 1.0
            self._col_failure[col] += 1.0
        return self

    def apply_discount(self, gamma: float) -> "RewardLedger":
        """Multiply every accumulator by ``gamma``. Seen/clicked sets are kept."""
        check_gamma(gamma)
        if gamma != 1.0:
            self._success *= gamma
            self._failure *= gamma
            self._col_success *= gamma
            self._col_failure *= gamma
        return self

    def end_epoch(self, n: int = 1) -> "RewardLedger":
        """Close ``n`` discount epochs using the ledger's own ``gamma``."""
        for _ in range(n):
            self.apply_discount(self.gamma)
            self.epochs += 1
        return self

    # -- reads -------------------------------------------------------------

    def success(self, user_id, ad_id) -> float:
        r, c = self.users.get(user_id), self.ads.get(ad_id)
        return float(self._success[r, c]) if r >= 0 and c >= 0 else 0.0

    def failure(self, user_id, ad_id) -> float:
        r, c = self.users.get(user_id), self.ads.get(ad_id)
        return float(self._failure[r, c]) if r >= 0 and c >= 0 else 0.0

    def has_clicked(self, user_id, ad_id) -> bool:
        r, c = self.users.get(user_id), self.ads.get(ad_id)
        return bool(self._clicked[r, c]) if r >= 0 and c >= 0 else False

    def users_seen(self, ad_id) -> set:
        c = self.ads.get(ad_id)
        if c < 0:
            return set()
        rows = np.flatnonzero(self._seen[: len(self.users), c])
        return {self.users.ids[r] for r in rows}

    def clickers(self, ad_id) -> list:
        """Ids of users who clicked ``ad_id`` at least once, in arrival order."""
        c = self.ads.get(ad_id)
        if c < 0:
            return []
        rows = np.flatnonzero(self._clicked[: len(self.users), c])
        return [self.users.ids[r] for r in rows]

    def source_users(self, source_id) -> set:
        return self._source_users.get(source_id, set())

    def _denominators(self, cols: np.ndarray) -> np.ndarray:
        if self.global_mean_mode == "seen":
            return self._n_seen[cols]
        if self.global_mean_mode == "clicked":
            return self._n_clicked[cols]
        if self.global_mean_mode == "all":
            return np.full(cols.shape, len(self.users), dtype=np.int64)
        return np.ones(cols.shape, dtype=np.int64)

    def global_means(self, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-ad mean success and failure for ledger columns ``cols``.

        Negative column numbers (ads never observed) read as 0.
        """
        cols = np.asarray(cols, dtype=np.int64)
        gs = np.zeros(cols.shape)
        gf = np.zeros(cols.shape)
        known = cols >= 0
        if known.any():
            kc = cols[known]
            den = self._denominators(kc)
            ok = den > 0
            s = np.zeros(kc.shape)
            f = np.zeros(kc.shape)
            s[ok] = self._col_success[kc[ok]] / den[ok]
            f[ok] = self._col_failure[kc[ok]] / den[ok]
            gs[known] = s
            gf[known] = f
        return gs, gf

    def global_mean_success(self, ad_id) -> float:
        return float(self.global_means(np.array([self.ads.get(ad_id)]))[0][0])

    def global_mean_failure(self, ad_id) -> float:
        return float(self.global_means(np.array([self.ads.get(ad_id)]))[1][0])

    def copy(self) -> "RewardLedger":
        new = RewardLedger.__new__(RewardLedger)
        new.__dict__.update(self.__dict__)
        for name in ("_success", "_failure", "_seen", "_clicked", "_col_success",
                     "_col_failure", "_n_seen", "_n_clicked"):
            setattr(new, name, getattr(self, name).copy())
        new.users = _Registry()
        for uid in self.users.ids:
            new.users.add(uid)
        new.ads = _Registry()
        for aid in self.ads.ids:
            new.ads.add(aid)
        new._source_users = {k: set(v) for k, v in self._source_users.items()}
        return new


def check_gamma(gamma: float) -> None:
    if not (isinstance(gamma, (int, float, np.floating)) and 0.0 <= gamma <= 1.0
            and not math.isnan(gamma)):
        raise ValueError(f"gamma out of [0,1]: {gamma!r}")


def record_observation(ledger: RewardLedger, obs: Observation) -> RewardLedger:
    """Add one observation to ``ledger`` (in place) and return it."""
    return ledger.record(obs)


def record_observations(ledger: RewardLedger,
                        observations: Iterable[Observation]) -> RewardLedger:
    for obs in observations:
        ledger.record(obs)
    return ledger


def apply_discount(ledger: RewardLedger, gamma: float) -> RewardLedger:
    """Multiply every accumulator of ``ledger`` by ``gamma`` (in place)."""
    return ledger.apply_discount(gamma)


def global_mean_success(ledger: RewardLedger, ad_id) -> float:
    return ledger.global_mean_success(ad_id)


def global_mean_failure(ledger: RewardLedger, ad_id) -> float:
    return ledger.global_mean_failure(ad_id)
