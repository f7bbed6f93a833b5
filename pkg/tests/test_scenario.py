import itertools

import numpy as np
import pytest

from pareto_xurllc.scenario import (ConfigError, ScenarioConfig, check_pairing, load_config,
                                    make_scenario, pair_users, pairing_cost, parse_config_text)


def test_defaults_validate():
    cfg = ScenarioConfig().validate()
    assert cfg.K == 128
    assert cfg.noise_power == pytest.approx(1e-14)


@pytest.mark.parametrize("kw,word", [
    ({"U": 5}, "U <= B"),
    ({"ceiling_h": 1.0}, "ceiling_h > user_h"),
    ({"P_max": 0.0}, "P_max > 0"),
    ({"eps_max": 1.0}, "eps_max"),
    ({"ris_pos": (5.0, 5.0, 7.0)}, "inside room"),
    ({"cbs_pos": [(0, 0, 2.5)]}, "len(cbs_pos)"),
])
def test_validate_names_violated_invariant(kw, word):
    with pytest.raises(ConfigError, match=word.replace("(", r"\(").replace(")", r"\)")):
        ScenarioConfig(**kw).validate()


def test_make_scenario_reproducible_and_in_room():
    cfg = ScenarioConfig()
    a, b = make_scenario(cfg, 3), make_scenario(cfg, 3)
    assert np.array_equal(a.true_positions, b.true_positions)
    for u in a.users:
        assert cfg.in_room(u.true_pos)
        assert u.true_pos[2] == cfg.user_h
        assert u.accepted(cfg.eta_bar)


def _brute_pairing(cbs, est):
    d = np.linalg.norm(np.asarray(cbs)[:, None] - np.asarray(est)[None], axis=-1)
    return min(sum(d[p[u], u] for u in range(len(est))) for p in itertools.permutations(range(len(cbs)), len(est)))


def test_pairing_matches_permutation_oracle():
    rng = np.random.default_rng(0)
    cfg = ScenarioConfig()
    for _ in range(50):
        U = int(rng.integers(1, 5))
        est = np.c_[rng.uniform(0, 10, (U, 2)), np.full(U, 1.7)]
        s = pair_users(cfg.cbs_pos, est)
        check_pairing(s)
        assert pairing_cost(cfg.cbs_pos, est, s) == pytest.approx(_brute_pairing(cfg.cbs_pos, est), abs=1e-12)


def test_pairing_corner_users_take_nearest_cbs():
    cfg = ScenarioConfig()
    est = np.array([[0.1, 0.1, 1.7], [9.9, 9.9, 1.7]])
    s = pair_users(cfg.cbs_pos, est)
    assert s[0, 0] == 1 and s[2, 1] == 1


def test_pairing_hungarian_branch_agrees_with_bruteforce():
    rng = np.random.default_rng(1)
    cbs = rng.uniform(0, 10, (8, 3))
    est = rng.uniform(0, 10, (7, 3))
    s = pair_users(cbs, est)
    check_pairing(s)
    assert pairing_cost(cbs, est, s) == pytest.approx(_brute_pairing(cbs, est), rel=1e-12)


def test_pairing_errors():
    with pytest.raises(ValueError, match="U <= B"):
        pair_users([(0, 0, 0)], [(1, 1, 1), (2, 2, 2)])
    with pytest.raises(ValueError):
        pair_users([], [])


def test_config_text_roundtrip(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("# small room\nroom_x = 8.0\nU = 3  # users\nlbs_pos = (0, 4, 2)\ncbs_pos = [(0,0,2.5),(8,0,2.5),(8,10,2.5),(0,10,2.5)]\n")
    cfg = load_config(p)
    assert cfg.room_x == 8.0 and cfg.U == 3 and cfg.lbs_pos == (0.0, 4.0, 2.0)
    assert load_config("default") == ScenarioConfig()


def test_config_text_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError, match="integer"):
        parse_config_text("U = 2.5")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("U 2")
