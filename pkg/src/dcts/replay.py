"""Offline evaluation on logged carousel impressions.

Every ad shown together in one carousel is treated as a candidate of a single
decision. Because the user's response to every displayed ad is known (the
clicked one is a success, the others are not), any choice among them can be
scored.

Log format
----------
One event per line, five tab-separated fields::

    timestamp   source_id   user_id   kind   ad_ids

``timestamp`` is integer epoch seconds, ``kind`` is ``imp`` or ``click`` and
``ad_ids`` is a comma-joined list (exactly one id for clicks). Blank lines and
lines starting with ``#`` are skipped.

Context files hold one record per line: the id followed by its feature values,
all tab-separated. Every record must have the same number of values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Observation
from .similarity import ad_context_from_clicks

CLICK_WINDOW = 900
DEDUP_WINDOW = 300
HOUR = 3600

_KIND_ORDER = {"imp": 0, "click": 1}


class LogFormatError(ValueError):
    """A log or context file could not be parsed."""


@dataclass(frozen=True)
class RawEvent:
    timestamp: int
    source_id: str
    user_id: str
    kind: str
    ad_ids: tuple
    line: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_ORDER:
            raise ValueError(f"event kind must be 'imp' or 'click', got {self.kind!r}")
        if self.kind == "imp" and len(self.ad_ids) < 1:
            raise ValueError("impression without ads")
        if self.kind == "click" and len(self.ad_ids) != 1:
            raise ValueError(f"click must name exactly one ad, got {len(self.ad_ids)}")


@dataclass
class CarouselImpression:
    timestamp: int
    source_id: str
    user_id: str
    displayed: tuple
    clicked: str | None = None

    def __post_init__(self):
        if not self.displayed:
            raise ValueError("carousel impression without ads")
        if self.clicked is not None and self.clicked not in self.displayed:
            raise ValueError(f"clicked ad {self.clicked!r} was not displayed")


@dataclass
class AttributionReport:
    """What :func:`attribute_clicks` kept and dropped."""

    impressions: int = 0
    duplicate_impressions: int = 0
    attributed_clicks: int = 0
    orphan_clicks: int = 0
    extra_clicks: int = 0


def _sort_key(ev: RawEvent):
    return ev.timestamp, _KIND_ORDER[ev.kind], ev.line


def sort_events(events: Iterable[RawEvent]) -> list[RawEvent]:
    """Chronological order; impressions before clicks at equal timestamps,
    then file order."""
    return sorted(events, key=_sort_key)


def _parse_line(text: str, lineno: int) -> RawEvent:
    fields = text.split("\t")
    if len(fields) != 5:
        raise LogFormatError(f"line {lineno}: expected 5 tab-separated fields, got {len(fields)}")
    ts, source, user, kind, ads = (f.strip() for f in fields)
    try:
        timestamp = int(ts)
    except ValueError:
        raise LogFormatError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
    if timestamp < 0:
        raise LogFormatError(f"line {lineno}: negative timestamp")
    if not source or not user:
        raise LogFormatError(f"line {lineno}: empty source or user id")
    ad_ids = tuple(a.strip() for a in ads.split(",")) if ads else ()
    if any(not a for a in ad_ids):
        raise LogFormatError(f"line {lineno}: empty ad id")
    try:
        return RawEvent(timestamp, source, user, kind, ad_ids, lineno)
    except ValueError as exc:
        raise LogFormatError(f"line {lineno}: {exc}") from None


def parse_log(lines: Iterable[str]) -> list[RawEvent]:
    """Parse and sort log lines. See the module docstring for the format.

    Raises
    ------
    LogFormatError
        On a malformed row, a click on an ad that was never displayed to the
        same user before it, or when there are no events at all.
    """
    events = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.rstrip("\r\n")
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        events.append(_parse_line(text, lineno))
    if not events:
        raise LogFormatError("log contains no events")
    events = sort_events(events)
    shown: dict = {}
    for ev in events:
        if ev.kind == "imp":
            shown.setdefault(ev.user_id, set()).update(ev.ad_ids)
        elif ev.ad_ids[0] not in shown.get(ev.user_id, ()):
            raise LogFormatError(
                f"line {ev.line}: clicked ad {ev.ad_ids[0]!r} was never displayed to "
                f"user {ev.user_id!r}")
    return events


def load_log(path) -> list[RawEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_log(fh)


def load_contexts(path) -> dict:
    """Read ``id<TAB>v1<TAB>v2 ...`` records into a dict of float arrays."""
    out = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.rstrip("\r\n")
            if not text.strip() or text.lstrip().startswith("#"):
                continue
            fields = text.split("\t")
            key = fields[0].strip()
            if not key or len(fields) < 2:
                raise LogFormatError(f"{path}:{lineno}: expected an id and feature values")
            if dim is None:
                dim = len(fields) - 1
            elif len(fields) - 1 != dim:
                raise LogFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(fields) - 1}")
            try:
                vec = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise LogFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(vec)):
                raise LogFormatError(f"{path}:{lineno}: non-finite feature value")
            if key in out:
                raise LogFormatError(f"{path}:{lineno}: duplicate id {key!r}")
            out[key] = vec
    return out


def attribute_clicks(events: Sequence[RawEvent],
                     report: AttributionReport | None = None) -> list[CarouselImpression]:
    """Turn sorted raw events into carousel impressions with clicks attached.

    An impression is dropped when the same user already has a retained
    impression from the same source at most ``DEDUP_WINDOW`` seconds earlier.
    A click attaches to the user's most recent retained impression that
    displayed the clicked ad, provided it is at most ``CLICK_WINDOW`` seconds
    old and has no click yet. Other clicks are counted in ``report`` and
    ignored.
    """
    report = report if report is not None else AttributionReport()
    out: list[CarouselImpression] = []
    last_kept: dict = {}
    by_user: dict = {}
    for ev in events:
        if ev.kind == "imp":
            key = (ev.user_id, ev.source_id)
            prev = last_kept.get(key)
            if prev is not None and ev.timestamp - prev <= DEDUP_WINDOW:
                report.duplicate_impressions += 1
                continue
            last_kept[key] = ev.timestamp
            imp = CarouselImpression(ev.timestamp, ev.source_id, ev.user_id, ev.ad_ids)
            out.append(imp)
            by_user.setdefault(ev.user_id, []).append(imp)
            report.impressions += 1
            continue
        ad = ev.ad_ids[0]
        target = None
        for imp in reversed(by_user.get(ev.user_id, ())):
            if ev.timestamp - imp.timestamp > CLICK_WINDOW:
                break
            if ad in imp.displayed:
                target = imp
                break
        if target is None:
            report.orphan_clicks += 1
        elif target.clicked is not None:
            report.extra_clicks += 1
        else:
            target.clicked = ad
            report.attributed_clicks += 1
    return out


@dataclass
class ReplayResult:
    """Per-decision trace of one replay run."""

    timestamp: np.ndarray
    reward: np.ndarray
    chosen: list = field(default_factory=list)

    @property
    def cumulative_clicks(self) -> np.ndarray:
        return np.cumsum(self.reward)

    @property
    def ctr(self) -> np.ndarray:
        return self.cumulative_clicks / np.arange(1, self.reward.shape[0] + 1)

    @property
    def final_ctr(self) -> float:
        return float(self.reward.mean())

    def summary(self) -> dict:
        return {"impressions": int(self.reward.shape[0]),
                "clicks": int(self.reward.sum()),
                "ctr": self.final_ctr}


def pretrain(policy, impressions: Iterable[CarouselImpression]) -> None:
    """Feed every displayed ad of every impression to ``policy`` as observed."""
    for imp in impressions:
        policy.tick(imp.timestamp)
        for ad in imp.displayed:
            policy.update(Observation(imp.source_id, imp.user_id, ad,
                                      int(ad == imp.clicked), imp.timestamp))


def evaluate(policy, impressions: Sequence[CarouselImpression],
             pretrain_impressions: Sequence[CarouselImpression] = (),
             rng: np.random.Generator | None = None) -> ReplayResult:
    """Replay ``impressions`` through ``policy`` after absorbing the pretraining log.

    At each impression the policy picks one displayed ad and is rewarded iff
    it is the clicked one; only the picked ad is reported back. The policy's
    own ``tick`` receives log timestamps in seconds, so a policy whose
    ``discount_interval`` is 3600 closes one discount epoch per clock hour.
    """
    if not impressions:
        raise ValueError("no target impressions to evaluate")
    rng = rng if rng is not None else np.random.default_rng(0)
    pretrain(policy, pretrain_impressions)
    n = len(impressions)
    reward = np.zeros(n)
    stamps = np.zeros(n, dtype=np.int64)
    chosen = []
    for t, imp in enumerate(impressions):
        policy.tick(imp.timestamp)
        ad = policy.select(imp.user_id, list(imp.displayed), rng, source_id=imp.source_id)
        r = int(ad == imp.clicked)
        policy.update(Observation(imp.source_id, imp.user_id, ad, r, imp.timestamp))
        reward[t] = r
        stamps[t] = imp.timestamp
        chosen.append(ad)
    return ReplayResult(stamps, reward, chosen)


def relative_ctr(ctr: float, random_ctr: float) -> float:
    """``ctr`` divided by the random policy's CTR on the same log."""
    if random_ctr <= 0:
        return math.nan
    return ctr / random_ctr


def ad_contexts_from_log(impressions: Iterable[CarouselImpression], user_contexts: dict,
                         dim: int | None = None) -> dict:
    """Median context of each ad's clickers over the whole log.

    Ads that were displayed but never clicked by a user with a known context
    get the zero vector.
    """
    if dim is None:
        dim = next((v.shape[0] for v in user_contexts.values()), 0)
    clickers: dict = {}
    for imp in impressions:
        for ad in imp.displayed:
            clickers.setdefault(ad, [])
        if imp.clicked is not None and imp.user_id in user_contexts:
            clickers[imp.clicked].append(user_contexts[imp.user_id])
    return {ad: ad_context_from_clicks(ctx, dim=dim) for ad, ctx in clickers.items()}


def split_by_source(impressions: Iterable[CarouselImpression], pretrain_sources) -> tuple:
    """Partition impressions into (pretrain, target) by source id."""
    pre, target = [], []
    sources = set(pretrain_sources)
    for imp in impressions:
        (pre if imp.source_id in sources else target).append(imp)
    return pre, target


def read_impressions(path, report: AttributionReport | None = None):
    return attribute_clicks(load_log(Path(path)), report)
