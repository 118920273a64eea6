from pathlib import Path

import numpy as np
import pytest

from dcts.core import Observation
from dcts.policies import DCTSPolicy, Policy, PolicyConfig, RandomPolicy, ThompsonSampling
from dcts.replay import (AttributionReport, CarouselImpression, LogFormatError, RawEvent,
                         ad_contexts_from_log, attribute_clicks, evaluate, load_contexts,
                         load_log, parse_log, relative_ctr, split_by_source)

GOLDEN = Path(__file__).parent / "data" / "golden_log.tsv"


class FirstShown(Policy):
    """Always picks the first displayed ad."""

    def select(self, user_id, candidates, rng, source_id=None):
        return candidates[0]

    def update(self, obs):
        pass


class LastShown(FirstShown):
    def select(self, user_id, candidates, rng, source_id=None):
        return candidates[-1]


class Clairvoyant(FirstShown):
    def __init__(self, answers):
        self.answers = iter(answers)

    def select(self, user_id, candidates, rng, source_id=None):
        return next(self.answers)


def line(ts, user, kind, ads, source="s"):
    return f"{ts}\t{source}\t{user}\t{kind}\t{ads}"


def impressions(*rows):
    return attribute_clicks(parse_log(list(rows)))


class TestLoadLog:
    def test_sorted_three_rows(self):
        ev = parse_log([line(30, "u", "imp", "a"), line(10, "u", "imp", "a,b"),
                        line(20, "u", "click", "a")])
        assert [e.timestamp for e in ev] == [10, 20, 30]
        assert ev[0].ad_ids == ("a", "b")

    def test_golden_file(self):
        ev = load_log(GOLDEN)
        assert len(ev) == 21
        ts = [e.timestamp for e in ev]
        assert ts == sorted(ts)

    def test_tie_rule(self):
        ev = parse_log([line(5, "u", "click", "a"), line(5, "u", "imp", "a"),
                        line(5, "v", "imp", "b")])
        assert [(e.kind, e.user_id) for e in ev] == [("imp", "u"), ("imp", "v"),
                                                     ("click", "u")]

    @pytest.mark.parametrize("bad,match", [
        ("10\ts\tu\timp", "line 2: expected 5"),
        ("10\ts\tu\timp\ta\textra", "line 2: expected 5"),
        ("ten\ts\tu\timp\ta", "line 2: timestamp"),
        ("10\ts\tu\tview\ta", "line 2: event kind"),
        ("10\ts\tu\tclick\ta,b", "line 2: click must name exactly one"),
        ("10\ts\tu\timp\t", "line 2: impression without ads"),
        ("10\ts\tu\timp\ta,,b", "line 2: empty ad id"),
    ])
    def test_malformed(self, bad, match):
        with pytest.raises(LogFormatError, match=match):
            parse_log([line(1, "u", "imp", "a"), bad])

    def test_click_on_undisplayed_ad(self):
        with pytest.raises(LogFormatError, match="line 2: clicked ad 'z' was never displayed"):
            parse_log([line(1, "u", "imp", "a,b"), line(2, "u", "click", "z")])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.tsv"
        p.write_text("# nothing\n\n")
        with pytest.raises(LogFormatError, match="no events"):
            load_log(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_log(tmp_path / "absent.tsv")


class TestContexts:
    def test_roundtrip(self, tmp_path):
        p = tmp_path / "ctx.tsv"
        p.write_text("u1\t0.5\t-1\nu2\t2\t3.25\n")
        ctx = load_contexts(p)
        np.testing.assert_array_equal(ctx["u2"], [2.0, 3.25])

    @pytest.mark.parametrize("text", ["u1\t1\t2\nu2\t1\n", "u1\t1\t2\nu2\t1\t2\t3\n",
                                      "u1\tx\n", "u1\n", "u1\tnan\n", "u1\t1\nu1\t2\n"])
    def test_rejects(self, tmp_path, text):
        p = tmp_path / "ctx.tsv"
        p.write_text(text)
        with pytest.raises(LogFormatError):
            load_contexts(p)


class TestAttribution:
    def test_click_within_window(self):
        imps = impressions(line(0, "u", "imp", "a,b"), line(600, "u", "click", "a"))
        assert imps[0].clicked == "a"

    def test_click_too_late(self):
        report = AttributionReport()
        imps = attribute_clicks(parse_log([line(0, "u", "imp", "a,b"),
                                           line(1200, "u", "click", "a")]), report)
        assert imps[0].clicked is None
        assert report.orphan_clicks == 1

    @pytest.mark.parametrize("delay,attributed", [(899, True), (900, True), (901, False)])
    def test_click_boundary(self, delay, attributed):
        imps = impressions(line(0, "u", "imp", "a"), line(delay, "u", "click", "a"))
        assert (imps[0].clicked == "a") is attributed

    def test_dedup_within_five_minutes(self):
        imps = impressions(line(0, "u", "imp", "a"), line(180, "u", "imp", "b"))
        assert [i.timestamp for i in imps] == [0]

    @pytest.mark.parametrize("gap,kept", [(299, 1), (300, 1), (301, 2)])
    def test_dedup_boundary(self, gap, kept):
        assert len(impressions(line(0, "u", "imp", "a"), line(gap, "u", "imp", "a"))) == kept

    def test_dedup_against_retained_only(self):
        # 0 kept, 200 dropped, 400 is 400 s after the retained one: kept
        imps = impressions(line(0, "u", "imp", "a"), line(200, "u", "imp", "a"),
                           line(400, "u", "imp", "a"))
        assert [i.timestamp for i in imps] == [0, 400]

    def test_dedup_is_per_source(self):
        imps = impressions(line(0, "u", "imp", "a", "s1"), line(10, "u", "imp", "b", "s2"))
        assert len(imps) == 2

    def test_other_users_unaffected(self):
        imps = impressions(line(0, "u", "imp", "a"), line(10, "v", "imp", "a"),
                           line(20, "v", "click", "a"))
        assert imps[0].clicked is None and imps[1].clicked == "a"

    def test_most_recent_impression_with_ad(self):
        imps = impressions(line(0, "u", "imp", "a", "s1"), line(400, "u", "imp", "b", "s1"),
                           line(500, "u", "click", "a"))
        assert imps[0].clicked == "a" and imps[1].clicked is None

    def test_one_click_per_impression(self):
        report = AttributionReport()
        imps = attribute_clicks(parse_log([line(0, "u", "imp", "a,b"),
                                           line(10, "u", "click", "a"),
                                           line(20, "u", "click", "b")]), report)
        assert imps[0].clicked == "a"
        assert report.extra_clicks == 1

    def test_golden_report(self):
        report = AttributionReport()
        imps = attribute_clicks(load_log(GOLDEN), report)
        assert report == AttributionReport(impressions=10, duplicate_impressions=2,
                                           attributed_clicks=7, orphan_clicks=1,
                                           extra_clicks=1)
        assert [i.clicked for i in imps] == ["a", "b", None, "c", "d", None, "b", "a",
                                             None, "a"]

    def test_impression_invariants(self):
        with pytest.raises(ValueError):
            CarouselImpression(0, "s", "u", ("a",), clicked="b")
        with pytest.raises(ValueError):
            CarouselImpression(0, "s", "u", ())
        with pytest.raises(ValueError):
            RawEvent(0, "s", "u", "click", ("a", "b"))


class TestEvaluate:
    def golden(self):
        return attribute_clicks(load_log(GOLDEN))

    @pytest.mark.parametrize("policy_cls,ctr", [(FirstShown, 0.6), (LastShown, 0.2)])
    def test_golden_ctr(self, policy_cls, ctr):
        # hits by hand: first-shown wins on impressions 1, 2, 5, 7, 8, 10;
        # last-shown on 4 and 10
        res = evaluate(policy_cls(), self.golden())
        assert res.final_ctr == ctr
        assert res.summary() == {"impressions": 10, "clicks": round(ctr * 10), "ctr": ctr}

    def test_perfect_policy(self):
        imps = self.golden()
        answers = [i.clicked or i.displayed[0] for i in imps]
        clicked = [i for i in imps if i.clicked]
        res = evaluate(Clairvoyant([i.clicked for i in clicked]), clicked)
        assert res.final_ctr == 1.0
        assert len(answers) == 10

    def test_random_ctr(self):
        rng = np.random.default_rng(0)
        imps = []
        for t in range(10_000):
            shown = tuple(f"a{k}" for k in rng.permutation(5))
            imps.append(CarouselImpression(t * 400, "s", f"u{t % 50}", shown,
                                           shown[rng.integers(5)]))
        res = evaluate(RandomPolicy(), imps, rng=np.random.default_rng(1))
        assert abs(res.final_ctr - 0.2) < 0.02
        assert (np.diff(res.cumulative_clicks) >= 0).all()
        assert ((res.ctr >= 0) & (res.ctr <= 1)).all()

    def test_empty_target(self):
        with pytest.raises(ValueError):
            evaluate(FirstShown(), [])

    def test_pretraining_observes_every_displayed_ad(self):
        pre = [CarouselImpression(0, "src", "u", ("a", "b", "c"), "b")]
        target = [CarouselImpression(10, "tgt", "u", ("x",), None)]
        ts = ThompsonSampling()
        evaluate(ts, target, pre)
        assert ts.successes == {"b": 1.0}
        assert ts.failures == {"a": 1.0, "c": 1.0, "x": 1.0}

    def test_only_chosen_ad_is_reported(self):
        ts = ThompsonSampling()
        evaluate(ts, [CarouselImpression(0, "s", "u", ("a", "b"), "b")])
        assert sum(ts.successes.values()) + sum(ts.failures.values()) == 1

    def test_hourly_epochs(self):
        pol = DCTSPolicy(PolicyConfig(gamma=0.5, discount_interval=3600),
                         user_contexts={"u": [1.0]}, ad_context_mode="clicks")
        imps = [CarouselImpression(t, "s", "u", ("a",), "a") for t in (0, 1800, 3599)]
        imps.append(CarouselImpression(3600, "s", "u", ("a",), None))
        imps.append(CarouselImpression(3 * 3600 + 5, "s", "u", ("a",), None))
        evaluate(pol, imps)
        assert pol.ledger.epochs == 3
        # three clicks, halved at 3600, then twice more at 7200 and 10800
        assert pol.ledger.success("u", "a") == pytest.approx(3 / 8)
        assert pol.ledger.failure("u", "a") == pytest.approx(1 / 4 + 1)

    def test_deterministic(self):
        imps = self.golden()
        a = evaluate(ThompsonSampling(), imps, rng=np.random.default_rng(4))
        b = evaluate(ThompsonSampling(), imps, rng=np.random.default_rng(4))
        assert a.chosen == b.chosen

    def test_relative_ctr(self):
        assert relative_ctr(0.3, 0.2) == pytest.approx(1.5)
        assert np.isnan(relative_ctr(0.3, 0.0))


class TestHelpers:
    def test_split_by_source(self):
        imps = [CarouselImpression(0, "A", "u", ("a",)), CarouselImpression(1, "B", "u", ("b",))]
        pre, tgt = split_by_source(imps, ["A"])
        assert [i.source_id for i in pre] == ["A"] and [i.source_id for i in tgt] == ["B"]

    def test_ad_contexts_from_log(self):
        imps = [CarouselImpression(0, "s", "u1", ("a", "b"), "a"),
                CarouselImpression(1, "s", "u2", ("a",), "a")]
        ctx = ad_contexts_from_log(imps, {"u1": np.array([0.0, 2.0]),
                                          "u2": np.array([4.0, 0.0])})
        np.testing.assert_array_equal(ctx["a"], [2.0, 1.0])
        np.testing.assert_array_equal(ctx["b"], [0.0, 0.0])

    def test_observation_time_is_log_time(self):
        seen = []

        class Spy(FirstShown):
            def update(self, obs: Observation):
                seen.append(obs.time)

        evaluate(Spy(), [CarouselImpression(123, "s", "u", ("a",))])
        assert seen == [123]
