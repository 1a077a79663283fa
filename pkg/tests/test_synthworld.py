import itertools
import math

import numpy as np
import pytest

from abductive.evaluation import mean_ap
from abductive.models import FrequencyPrior
from abductive.relation import build_abduction_dataset, target_matrix
from abductive.synthworld import (
    ConfigError,
    TractabilityError,
    WorldSpec,
    generate_episode,
    generate_episodes,
    generate_world,
    observed_pairs,
    oracle_joint,
    oracle_map,
    oracle_posterior,
)


def test_world_is_deterministic():
    a, b = generate_world(3), generate_world(3)
    assert a.to_json() == b.to_json()
    assert generate_world(4).to_json() != a.to_json()


def test_default_world_rules_unique_and_nonempty():
    w = generate_world(0)
    assert w.n_actions == 8 and w.n_objects == 10
    assert len(set(w.causal_rules)) == 8
    assert all(len(r) >= 1 for r in w.causal_rules)


def test_noiseless_flag():
    assert generate_world(0, noise_drop=0.0, noise_spurious=0.0).noiseless
    assert not generate_world(0).noiseless


@pytest.mark.parametrize("override", [
    dict(n_actions=13, n_objects=3, n_predicates=4),
    dict(noise_drop=1.0),
    dict(p_action=1.5),
    dict(t_min=1),
    dict(colour="red"),
])
def test_infeasible_overrides(override):
    with pytest.raises(ConfigError):
        generate_world(0, **override)


def test_world_json_round_trip():
    w = generate_world(2)
    back = WorldSpec.from_json(w.to_json())
    assert back.to_json() == w.to_json()
    assert back.causal_rules == w.causal_rules


def test_episode_determinism_and_monotone_state():
    w = generate_world(1)
    e1, e2 = generate_episode(w, 9, 5), generate_episode(w, 9, 5)
    assert [s.record.to_json() for s in e1.steps] == [s.record.to_json() for s in e2.steps]
    for a, b in zip(e1.steps, e1.steps[1:]):
        assert a.cumulative <= b.cumulative
    assert e1.steps[0].actions
    with pytest.raises(ConfigError):
        generate_episode(w, 0, 1)


def test_noiseless_relations_equal_causal_closure():
    w = generate_world(5, noise_drop=0.0, noise_spurious=0.0)
    for ep in generate_episodes(w, 20, seed=3):
        assert w.t_min <= len(ep.steps) <= w.t_max
        for s in ep.steps:
            assert s.relations == w.induced(s.cumulative)
            assert observed_pairs(s.record) == s.relations


def test_oracle_identifies_single_action():
    w = generate_world(0, n_actions=2, noise_drop=0.0, noise_spurious=0.0)
    for a in (0, 1):
        marg = oracle_posterior(w, w.induced([a]))
        np.testing.assert_array_equal(marg, np.eye(2)[a])


def test_oracle_empty_observation_in_noiseless_world():
    w = generate_world(0, noise_drop=0.0, noise_spurious=0.0)
    np.testing.assert_array_equal(oracle_posterior(w, set()), np.zeros(w.n_actions))


def test_oracle_tractability_limit():
    w = generate_world(0, n_actions=17)
    with pytest.raises(TractabilityError):
        oracle_posterior(w, {(0, 0)})


def test_oracle_joint_normalized():
    w = generate_world(0)
    S, post = oracle_joint(w, {(0, 1), (2, 3)}, 2)
    assert S.shape == (256, 8)
    assert abs(post.sum() - 1.0) < 1e-9


# -- independent enumerator -----------------------------------------------------------


def _stirling2(n, k):
    # number of ways to partition n labelled draws into k nonempty blocks
    return sum((-1) ** j * math.comb(k, j) * (k - j) ** n for j in range(k + 1)) // math.factorial(k)


def _spurious_prob(n_seen, M, lam, n_max=80):
    """P(the spurious draws land on exactly a given set of n_seen pairs), by
    summing over the Poisson draw count."""
    if M == 0:
        return 1.0 if n_seen == 0 else 0.0
    total = 0.0
    for N in range(n_seen, n_max):
        pois = math.exp(-lam) * lam**N / math.factorial(N)
        cover = math.factorial(n_seen) * _stirling2(N, n_seen) / M**N if N else float(n_seen == 0)
        total += pois * cover
    return total


def _cumulative_prior(S, K, p, t):
    """P(actions executed by snapshot t == S), snapshot 0 nonempty, summed over
    the snapshot-0 action set."""
    if t is None:
        return p ** len(S) * (1 - p) ** (K - len(S))
    z0 = 1 - (1 - p) ** K
    later = 1 - (1 - p) ** t  # executed at some snapshot 1..t
    total = 0.0
    for r in range(1, len(S) + 1):
        for a0 in itertools.combinations(sorted(S), r):
            p0 = p ** r * (1 - p) ** (K - r) / z0
            rest = len(S) - r
            total += p0 * later**rest * (1 - later) ** (K - len(S))
    return total


def direct_posterior(world, observed, t=None):
    K, p = world.n_actions, world.p_action
    d, lam = world.noise_drop, world.noise_spurious
    pairs = [(c, q) for c in range(world.n_objects) for q in range(world.n_predicates)]
    weights = {}
    for bits in itertools.product((0, 1), repeat=K):
        S = {a for a in range(K) if bits[a]}
        induced = set()
        for a in S:
            induced |= set(world.causal_rules[a])
        if any(pr not in induced for pr in observed) and lam == 0:
            weights[bits] = 0.0
            continue
        like = 1.0
        for pr in induced:
            like *= (1 - d) if pr in observed else d
        M = len(pairs) - len(induced)
        like *= _spurious_prob(len([pr for pr in observed if pr not in induced]), M, lam)
        if observed:
            p_empty = d ** len(induced) * (math.exp(-lam) if M else 1.0)
            like /= 1 - p_empty
        weights[bits] = _cumulative_prior(S, K, p, t) * like
    z = sum(weights.values())
    return np.array([sum(w for b, w in weights.items() if b[a]) / z for a in range(K)])


@pytest.mark.parametrize("seed", range(4))
def test_oracle_matches_direct_summation(seed):
    w = generate_world(seed, n_actions=3, n_objects=3, n_predicates=2, noise_drop=0.2,
                       noise_spurious=0.7)
    for ep in generate_episodes(w, 6, seed=seed + 10):
        for step in ep.steps:
            obs = observed_pairs(step.record)
            t = step.record.snapshot_index
            np.testing.assert_allclose(oracle_posterior(w, obs, t), direct_posterior(w, obs, t),
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(oracle_posterior(w, obs), direct_posterior(w, obs),
                                       rtol=0, atol=1e-12)


def test_oracle_map_noiseless_is_perfect():
    w = generate_world(0, noise_drop=0.0, noise_spurious=0.0)
    assert oracle_map(w, generate_episodes(w, 40, seed=1)) == 100.0


def test_oracle_map_heavy_drop_is_imperfect_and_beats_prior():
    w = generate_world(0, noise_drop=0.5)
    test_eps = generate_episodes(w, 60, seed=2)
    om = oracle_map(w, test_eps)
    assert om < 100.0
    train = build_abduction_dataset([e.records for e in generate_episodes(w, 200, seed=3)])
    test = build_abduction_dataset([e.records for e in test_eps])
    prior = FrequencyPrior(w.n_actions).fit(train)
    pm = mean_ap(np.array([prior.score(ex) for ex in test]), target_matrix(test, w.n_actions))
    assert om >= pm
