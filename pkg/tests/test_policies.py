import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcts.core import Observation, RewardLedger
from dcts.policies import (BetaParams, DCTSPolicy, HybridLinUCB, LinearArmState,
                           PolicyConfig, RandomPolicy, ThompsonSampling, TransferableLinUCB,
                           argmax_random_tie, dcts_posterior_params, dcts_prior_params,
                           dcts_select, dcts_update, hlinucb_select, hlinucb_update,
                           make_policy, random_select, tlinucb_init_prior, ts_select,
                           ts_update)
from dcts.similarity import ExactIndex


def obs(user, ad, reward, time=0, source="s"):
    return Observation(source, user, ad, reward, time)


def brute_force_params(ledger, users, ads, user, ad, lam, g):
    """Prior and posterior parameters evaluated term by term over every pair."""
    def clamp_cos(x, y):
        nx, ny = math.sqrt(sum(v * v for v in x)), math.sqrt(sum(v * v for v in y))
        if nx == 0 or ny == 0:
            return 0.0
        return max(0.0, sum(a * b for a, b in zip(x, y)) / (nx * ny))

    a0 = b0 = 0.0
    for other in ads:
        if other != ad:
            w = clamp_cos(ads[ad], ads[other])
            a0 += w * ledger.success(user, other)
            b0 += w * ledger.failure(user, other)
    for other in users:
        if other != user:
            w = clamp_cos(users[user], users[other])
            a0 += w * ledger.success(other, ad)
            b0 += w * ledger.failure(other, ad)
    seen = [u for u in users if u in ledger.users_seen(ad)]
    gs = sum(ledger.success(u, ad) for u in seen) / len(seen) if seen else 0.0
    gf = sum(ledger.failure(u, ad) for u in seen) / len(seen) if seen else 0.0
    s, f = ledger.success(user, ad), ledger.failure(user, ad)
    alpha = lam / (s + 1) * a0 + g * gs + s + 1
    beta = lam / (f + 1) * b0 + g * gf + f + 1
    return a0, b0, alpha, beta


def random_world(seed, n_users=15, n_ads=8, d=3, n_obs=300, gamma=0.9):
    rng = np.random.default_rng(seed)
    users = {f"u{i}": rng.standard_normal(d) for i in range(n_users)}
    ads = {f"a{k}": rng.standard_normal(d) for k in range(n_ads)}
    led = RewardLedger(gamma)
    uid, aid = list(users), list(ads)
    for t in range(n_obs):
        if t and t % 25 == 0:
            led.end_epoch()
        led.record(obs(uid[rng.integers(n_users)], aid[rng.integers(n_ads)],
                       int(rng.random() < 0.4), t))
    return users, ads, led


class TestDctsPriorParams:
    def test_no_history(self):
        users = {"i": [1.0, 0.0], "j": [1.0, 0.1]}
        ads = {"k": [1.0, 0.0], "l": [0.0, 1.0]}
        got = dcts_prior_params(RewardLedger(), ExactIndex(users), ExactIndex(ads),
                                "i", "k", 10)
        assert got == (0.0, 0.0)

    def test_identity_weight_transfer(self):
        led = RewardLedger()
        for r in (1, 1, 1, 0):
            led.record(obs("j", "k", r))
        users = ExactIndex({"i": [1.0, 2.0], "j": [2.0, 4.0]})
        got = dcts_prior_params(led, users, None, "i", "k", 10)
        assert got == pytest.approx((3.0, 1.0))

    def test_mixed_weights(self):
        led = RewardLedger()
        led.record(obs("i", "l", 1))
        led.record(obs("i", "l", 1))
        for _ in range(4):
            led.record(obs("j", "k", 1))
        users = ExactIndex({"i": [1.0, 0.0], "j": [0.25, math.sqrt(1 - 0.0625)]})
        ads = ExactIndex({"k": [1.0, 0.0], "l": [0.5, math.sqrt(0.75)]})
        a0, b0 = dcts_prior_params(led, users, ads, "i", "k", 10)
        assert a0 == pytest.approx(0.5 * 2 + 0.25 * 4, rel=1e-12)
        assert b0 == 0.0

    def test_cold_ids(self):
        led = RewardLedger()
        led.record(obs("j", "k", 1))
        users = ExactIndex({"j": [1.0]})
        assert dcts_prior_params(led, users, None, "stranger", "k", 5) == (0.0, 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force(self, seed):
        users, ads, led = random_world(seed)
        ui, ai = ExactIndex(users), ExactIndex(ads)
        for u in list(users)[:5]:
            for a in ads:
                a0, b0 = dcts_prior_params(led, ui, ai, u, a, 100)
                want = brute_force_params(led, users, ads, u, a, 1.0, 1.0)
                assert a0 == pytest.approx(want[0], rel=1e-9)
                assert b0 == pytest.approx(want[1], rel=1e-9)

    def test_monotone_in_neighbor_success(self):
        users = {"i": [1.0, 0.2], "j": [0.8, 0.5]}
        led = RewardLedger()
        prev = 0.0
        for _ in range(5):
            led.record(obs("j", "k", 1))
            a0, _ = dcts_prior_params(led, ExactIndex(users), None, "i", "k", 5)
            assert a0 >= prev
            prev = a0


class TestDctsPosteriorParams:
    def counts(self, s, f):
        led = RewardLedger()
        for _ in range(s):
            led.record(obs("i", "k", 1))
        for _ in range(f):
            led.record(obs("i", "k", 0))
        return led

    def test_reduces_to_counts(self):
        led = self.counts(2, 1)
        got = dcts_posterior_params(5.0, 7.0, led, "i", "k", PolicyConfig(lam=0, g=0))
        assert got == BetaParams(3.0, 2.0)

    def test_prior_weight_halves(self):
        led = self.counts(1, 0)
        got = dcts_posterior_params(4.0, 0.0, led, "i", "k", PolicyConfig(lam=1, g=0))
        assert got.alpha == pytest.approx(4.0)

    def test_global_term(self):
        led = self.counts(1, 0)
        led.record(obs("other", "k", 0))
        # users who saw k: i (s=1) and other (s=0), mean 0.5
        got = dcts_posterior_params(4.0, 0.0, led, "i", "k", PolicyConfig(lam=1, g=1))
        assert got.alpha == pytest.approx(4.5)

    def test_lambda_decay(self):
        led = RewardLedger()
        terms = []
        for _ in range(200):
            led.record(obs("i", "k", 1))
            p = dcts_posterior_params(10.0, 0.0, led, "i", "k", PolicyConfig(lam=1, g=0))
            terms.append(p.alpha - led.success("i", "k") - 1)
        assert terms[-1] < 0.05 and all(a >= b for a, b in zip(terms, terms[1:]))

    @given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 20), st.floats(0, 5),
           st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1)), max_size=20),
           st.sampled_from([0.0, 0.3, 1.0]))
    @settings(max_examples=150, deadline=None)
    def test_floor_at_one(self, a0, b0, lam, g, recs, gamma):
        led = RewardLedger()
        for u, r in recs:
            led.record(obs(f"u{u}", "k", r))
            led.apply_discount(gamma)
        p = dcts_posterior_params(a0, b0, led, "u0", "k", PolicyConfig(lam=lam, g=g))
        assert p.alpha >= 1.0 and p.beta >= 1.0


class TestDCTSPolicy:
    def world(self, seed=0, **cfg):
        users, ads, _ = random_world(seed, n_obs=0)
        pol = DCTSPolicy(PolicyConfig(**cfg), user_contexts=users, ad_contexts=ads)
        return users, ads, pol

    @pytest.mark.parametrize("seed", range(4))
    def test_vectorised_params_match_brute_force(self, seed):
        users, ads, _ = random_world(seed, n_obs=0)
        pol = DCTSPolicy(PolicyConfig(lam=2.0, g=0.7, gamma=0.8, neighbor_k=100,
                                      discount_interval=30),
                         user_contexts=users, ad_contexts=ads)
        rng = np.random.default_rng(seed)
        uid, aid = list(users), list(ads)
        for t in range(400):
            pol.update(obs(uid[rng.integers(len(uid))], aid[rng.integers(len(aid))],
                           int(rng.random() < 0.3), t))
        for u in uid[:6]:
            alpha, beta = pol.beta_params(u, aid)
            for q, a in enumerate(aid):
                want = brute_force_params(pol.ledger, users, ads, u, a, 2.0, 0.7)
                assert alpha[q] == pytest.approx(want[2], rel=1e-9)
                assert beta[q] == pytest.approx(want[3], rel=1e-9)

    def test_single_candidate(self):
        _, _, pol = self.world()
        assert dcts_select(pol, "u0", ["a3"], np.random.default_rng(0)) == "a3"

    def test_empty_candidates(self):
        _, _, pol = self.world()
        with pytest.raises(ValueError, match="empty"):
            pol.select("u0", [], np.random.default_rng(0))

    def test_strong_preference(self):
        _, _, pol = self.world(lam=0, g=0)
        for _ in range(999):
            pol.update(obs("u0", "a0", 1))
            pol.update(obs("u0", "a1", 0))
        alpha, beta = pol.beta_params("u0", ["a0", "a1"])
        np.testing.assert_array_equal(alpha, [1000, 1])
        np.testing.assert_array_equal(beta, [1, 1000])
        rng = np.random.default_rng(5)
        wins = sum(pol.select("u0", ["a0", "a1"], rng) == "a0" for _ in range(100))
        assert wins >= 99

    def test_deterministic(self):
        picks = []
        for _ in range(2):
            _, ads, pol = self.world()
            rng = np.random.default_rng(9)
            for t in range(200):
                a = pol.select(f"u{t % 7}", list(ads), rng)
                pol.update(obs(f"u{t % 7}", a, t % 3 == 0, t))
            picks.append(pol.select("u1", list(ads), rng))
        assert picks[0] == picks[1]

    def test_epoch_halves(self):
        _, _, pol = self.world(gamma=0.5, discount_interval=10)
        pol.update(obs("u0", "a0", 1, 0))
        pol.update(obs("u1", "a0", 0, 5))
        pol.tick(10)
        assert pol.ledger.success("u0", "a0") == 0.5
        assert pol.ledger.failure("u1", "a0") == 0.5
        pol.tick(35)
        assert pol.ledger.success("u0", "a0") == 0.125

    def test_update_matches_closed_form(self):
        _, _, pol = self.world(gamma=0.9, discount_interval=10)
        rewards = np.random.default_rng(2).integers(0, 2, 100)
        for t, r in enumerate(rewards):
            dcts_update(pol, obs("u0", "a0", int(r), t))
        epoch = np.arange(100) // 10
        want = sum(0.9 ** (epoch[-1] - e) * r for e, r in zip(epoch, rewards))
        assert pol.ledger.success("u0", "a0") == pytest.approx(want, rel=1e-12)

    def test_per_user_ts_when_no_transfer(self):
        _, _, pol = self.world(lam=0, g=0)
        pol.update(obs("u0", "a0", 1))
        pol.update(obs("u1", "a0", 0))
        alpha, beta = pol.beta_params("u0", ["a0", "a1"])
        np.testing.assert_array_equal(alpha, [2, 1])
        np.testing.assert_array_equal(beta, [1, 1])

    def test_same_source_users(self):
        users = {"i": [1.0, 0.0], "j": [1.0, 0.0]}
        ads = {"k": [1.0]}
        cfg = PolicyConfig(lam=1, g=0, same_source_users=True)
        pol = DCTSPolicy(cfg, user_contexts=users, ad_contexts=ads)
        pol.update(obs("j", "k", 1, source="B"))
        assert pol.beta_params("i", ["k"], source_id="A")[0][0] == 1.0
        assert pol.beta_params("i", ["k"], source_id="B")[0][0] == 2.0
        loose = DCTSPolicy(PolicyConfig(lam=1, g=0), user_contexts=users, ad_contexts=ads)
        loose.update(obs("j", "k", 1, source="B"))
        assert loose.beta_params("i", ["k"], source_id="A")[0][0] == 2.0

    def test_click_derived_ad_contexts(self):
        users = {"i": [1.0, 0.0], "j": [0.0, 1.0], "h": [3.0, 0.0]}
        pol = DCTSPolicy(PolicyConfig(lam=1, g=0, discount_interval=10),
                         user_contexts=users, ad_context_mode="clicks")
        pol.update(obs("i", "k", 1, 0))
        pol.update(obs("h", "k", 1, 1))
        pol.update(obs("h", "l", 1, 2))
        assert pol.ad_index is None
        pol.tick(10)
        np.testing.assert_array_equal(pol.ad_contexts["k"], [2.0, 0.0])
        np.testing.assert_array_equal(pol.ad_contexts["l"], [3.0, 0.0])
        assert pol.ad_index.neighbors_of("k", 1)[0] == ("l", pytest.approx(1.0))

    def test_unknown_context_mode(self):
        with pytest.raises(ValueError):
            DCTSPolicy(ad_context_mode="learned")

    def test_lsh_user_index(self):
        users, ads, _ = random_world(0, n_users=40, n_obs=0)
        pol = DCTSPolicy(PolicyConfig(index_method="lsh", neighbor_k=5),
                         user_contexts=users, ad_contexts=ads)
        pol.update(obs("u1", "a1", 1))
        alpha, beta = pol.beta_params("u0", list(ads))
        assert (alpha >= 1).all() and (beta >= 1).all()


class TestThompsonSampling:
    def test_fresh_is_uniform(self):
        pol = ThompsonSampling()
        alpha, beta = pol.params(["a", "b"])
        np.testing.assert_array_equal(alpha, [1, 1])
        np.testing.assert_array_equal(beta, [1, 1])
        rng = np.random.default_rng(0)
        freq = np.mean([ts_select(pol, "u", ["a", "b"], rng) == "a" for _ in range(4000)])
        assert abs(freq - 0.5) < 0.03

    def test_strong_arm(self):
        pol = ThompsonSampling()
        for _ in range(10):
            ts_update(pol, obs("u", "a", 1))
            ts_update(pol, obs("u", "b", 0))
        rng = np.random.default_rng(1)
        assert sum(pol.select("x", ["a", "b"], rng) == "a" for _ in range(100)) >= 99

    def test_empty(self):
        with pytest.raises(ValueError):
            ThompsonSampling().select("u", [], np.random.default_rng(0))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_reduction_from_dcts(self, seed):
        rng = np.random.default_rng(100 + seed)
        arms = [f"a{k}" for k in range(6)]
        table = (rng.random((3000, 6)) < rng.random(6)).astype(int)
        dcts = DCTSPolicy(PolicyConfig(lam=0, g=0, gamma=1), user_contexts={"u": [1.0]},
                          ad_contexts={a: [1.0, float(k)] for k, a in enumerate(arms)})
        ts = ThompsonSampling()
        r1, r2 = np.random.default_rng(seed), np.random.default_rng(seed)
        for t in range(3000):
            for pol, r in ((dcts, r1), (ts, r2)):
                pol.tick(t)
            a = dcts.select("u", arms, r1)
            b = ts.select("u", arms, r2)
            assert a == b
            reward = int(table[t, arms.index(a)])
            dcts.update(obs("u", a, reward, t))
            ts.update(obs("u", b, reward, t))


class TestArgmaxTie:
    def test_no_rng_use_without_tie(self):
        rng = np.random.default_rng(0)
        state = rng.bit_generator.state
        assert argmax_random_tie(np.array([0.1, 0.9, 0.3]), rng) == 1
        assert rng.bit_generator.state == state

    def test_ties_uniform(self):
        rng = np.random.default_rng(0)
        counts = np.bincount([argmax_random_tie(np.array([1.0, 0.0, 1.0, 1.0]), rng)
                              for _ in range(6000)], minlength=4)
        assert counts[1] == 0
        assert all(abs(c / 6000 - 1 / 3) < 0.03 for c in counts[[0, 2, 3]])


class TestRandom:
    def test_single(self):
        assert random_select(["x"], np.random.default_rng(0)) == "x"

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(42)
        cands = list("abcde")
        picks = [random_select(cands, rng) for _ in range(100_000)]
        for c in cands:
            assert abs(picks.count(c) / 100_000 - 0.2) < 0.01

    def test_reproducible(self):
        a = [RandomPolicy().select("u", list("abc"), r) for r in
             [np.random.default_rng(3)] for _ in range(20)]
        b = [RandomPolicy().select("u", list("abc"), r) for r in
             [np.random.default_rng(3)] for _ in range(20)]
        assert a == b

    def test_empty(self):
        with pytest.raises(ValueError):
            random_select([], np.random.default_rng(0))


class TestLinUCB:
    def test_identity_width(self):
        z = np.array([0.5, -1.0, 2.0])
        st_ = LinearArmState.identity(3)
        assert st_.width(z) == pytest.approx(np.sqrt(z @ z))
        assert st_.ucb(z, 2.0) == pytest.approx(2.0 * np.sqrt(z @ z))

    def test_tie_break_uniform_without_history(self):
        pol = HybridLinUCB(user_contexts={"u": [1.0, 0.0]},
                           ad_contexts={a: [0.5] for a in "abcd"})
        rng = np.random.default_rng(0)
        picks = [hlinucb_select(pol, "u", list("abcd"), rng) for _ in range(4000)]
        for a in "abcd":
            assert abs(picks.count(a) / 4000 - 0.25) < 0.03

    def test_dimension_mismatch(self):
        pol = HybridLinUCB(user_contexts={"u": [1.0, 0.0]}, ad_contexts={"a": [1.0]},
                           user_dim=2, ad_dim=2)
        with pytest.raises(ValueError, match="dimension mismatch"):
            pol.features("u", "a")

    def test_sherman_morrison_tracks_inverse(self):
        rng = np.random.default_rng(0)
        arm = LinearArmState.identity(4)
        for _ in range(200):
            arm.update(rng.standard_normal(4), float(rng.random()))
        np.testing.assert_allclose(arm.A_inv, np.linalg.inv(arm.A), atol=1e-10)

    def test_ridge_oracle(self):
        rng = np.random.default_rng(1)
        d_u, d_a = 3, 2
        users = {f"u{i}": rng.standard_normal(d_u) for i in range(10)}
        ads = {f"a{k}": rng.standard_normal(d_a) for k in range(4)}
        thetas = {a: rng.standard_normal(d_u + d_a) for a in ads}
        pol = HybridLinUCB(PolicyConfig(alpha_ucb=1e-9), user_contexts=users,
                           ad_contexts=ads)
        data = {a: ([], []) for a in ads}
        uid = list(users)
        for t in range(500):
            u = uid[rng.integers(10)]
            a = list(ads)[rng.integers(4)]
            z = np.concatenate([users[u], ads[a]])
            r = float(z @ thetas[a])
            data[a][0].append(z)
            data[a][1].append(r)
            pol.arm(a).update(z, r)
        for u in uid:
            want = []
            for a in ads:
                Z, y = np.array(data[a][0]), np.array(data[a][1])
                theta = np.linalg.solve(np.eye(d_u + d_a) + Z.T @ Z, Z.T @ y)
                want.append(np.concatenate([users[u], ads[a]]) @ theta)
            got = pol.select(u, list(ads), np.random.default_rng(0))
            assert got == list(ads)[int(np.argmax(want))]

    @given(st.lists(st.lists(st.floats(-10, 10), min_size=3, max_size=3), max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_stays_positive_definite(self, zs):
        arm = LinearArmState.identity(3)
        for z in zs:
            arm.update(np.array(z), 1.0)
        np.testing.assert_allclose(arm.A, arm.A.T)
        assert np.linalg.eigvalsh(arm.A).min() > 0

    def test_update_rule(self):
        pol = HybridLinUCB(user_contexts={"u": [1.0]}, ad_contexts={"a": [2.0]})
        hlinucb_update(pol, obs("u", "a", 1))
        np.testing.assert_allclose(pol.arms["a"].A, np.eye(2) + np.outer([1, 2], [1, 2]))
        np.testing.assert_allclose(pol.arms["a"].b, [1, 2])


class TestTransferPrior:
    def trained(self, seed=0, d=3):
        rng = np.random.default_rng(seed)
        st_ = LinearArmState.identity(d)
        for _ in range(20):
            st_.update(rng.standard_normal(d), float(rng.random()))
        return st_

    def test_zero_similarity_is_identity(self):
        src = self.trained()
        out = tlinucb_init_prior({"s": src}, {"s": [1.0, 0.0]}, {"t": [0.0, 1.0]}, 3)
        np.testing.assert_array_equal(out["t"].A, np.eye(3))
        np.testing.assert_array_equal(out["t"].b, np.zeros(3))

    def test_no_sources(self):
        out = tlinucb_init_prior({}, {}, {"t": [1.0]}, 2)
        np.testing.assert_array_equal(out["t"].A, np.eye(2))

    def test_similarity_one_copies(self):
        src = self.trained()
        out = tlinucb_init_prior({"s": src}, {"s": [1.0, 2.0]}, {"t": [2.0, 4.0]}, 3)
        np.testing.assert_allclose(out["t"].A, src.A, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out["t"].b, src.b, rtol=0, atol=1e-12)

    def test_half_similarity(self):
        src = self.trained()
        out = tlinucb_init_prior({"s": src}, {"s": [1.0, 0.0]},
                                 {"t": [0.5, math.sqrt(0.75)]}, 3)
        np.testing.assert_allclose(out["t"].A, np.eye(3) + 0.5 * (src.A - np.eye(3)))
        np.testing.assert_allclose(out["t"].b, 0.5 * src.b)

    def test_policy_transfers_from_other_source(self):
        ads = {"x": [1.0, 0.0], "y": [2.0, 0.0]}
        pol = TransferableLinUCB(user_contexts={"u": [1.0]}, ad_contexts=ads,
                                 ad_sources={"x": "A", "y": "B"})
        for _ in range(5):
            pol.update(obs("u", "x", 1, source="A"))
        new = pol.arm("y", "B")
        np.testing.assert_allclose(new.A, pol.arms["x"].A)
        np.testing.assert_allclose(new.b, pol.arms["x"].b)
        plain = HybridLinUCB(user_contexts={"u": [1.0]}, ad_contexts=ads)
        np.testing.assert_array_equal(plain.arm("y").A, np.eye(3))


def test_make_policy_registry():
    assert isinstance(make_policy("ts"), ThompsonSampling)
    with pytest.raises(ValueError, match="unknown policy"):
        make_policy("ucb1")


@pytest.mark.parametrize("field,value", [("lam", -1), ("g", -0.1), ("gamma", 1.5),
                                         ("neighbor_k", 0), ("alpha_ucb", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        PolicyConfig(**{field: value}).validate()
