import numpy as np
import pytest

from oracles import central_diff, min_norm_grid, rel_err
from pareto_xurllc import morl
from pareto_xurllc.scenario import ScenarioConfig

CFG = ScenarioConfig()


# ---------------------------------------------------------------- min-norm
def test_min_norm_examples():
    nu, c = morl.min_norm_combine([1.0, 0.0], [0.0, 1.0])
    assert nu == pytest.approx(0.5) and np.allclose(c, [0.5, 0.5])
    nu, c = morl.min_norm_combine([1.0, 1.0], [1.0, 1.0])
    assert nu == 0.5 and np.allclose(c, [1.0, 1.0])
    nu, _ = morl.min_norm_combine([1.0, 0.0], [3.0, 0.0])
    assert nu == 1.0
    nu, _ = morl.min_norm_combine([1.0, 0.0], [-1.0, 0.0])
    assert nu == pytest.approx(0.5)


def test_min_norm_against_grid_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(1, 64))
        g1, g2 = rng.normal(size=d), rng.normal(size=d) * rng.uniform(0.1, 10)
        _, c = morl.min_norm_combine(g1, g2)
        best, _ = min_norm_grid(g1, g2, 1e-5)
        assert np.linalg.norm(c) <= best + 1e-9


def test_min_norm_weight_is_scale_invariant_jointly():
    rng = np.random.default_rng(1)
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    nu1, _ = morl.min_norm_combine(g1, g2)
    nu2, _ = morl.min_norm_combine(7.5 * g1, 7.5 * g2)
    assert nu1 == pytest.approx(nu2, abs=1e-12)


def test_prescaled_min_norm_ignores_individual_magnitudes():
    rng = np.random.default_rng(2)
    g1, g2 = rng.normal(size=5), rng.normal(size=5)
    a, _ = morl.min_norm_combine(g1, g2, prescale=True)
    b, _ = morl.min_norm_combine(1e6 * g1, 1e-3 * g2, prescale=True)
    assert a == pytest.approx(b, abs=1e-12)


# ---------------------------------------------------------------- losses
def _setup(rng, obs_dim=3, act_dim=2, n=6):
    hyper = morl.SacHyper(hidden=(5, 4))
    ag = morl.Agent(obs_dim, act_dim, hyper, rng)
    w = np.stack([morl.sample_preference(rng) for _ in range(n)])
    batch = {"s": rng.normal(size=(n, obs_dim)), "a": rng.uniform(-0.9, 0.9, (n, act_dim)),
             "r": rng.normal(size=(n, 2)), "s2": rng.normal(size=(n, obs_dim)), "w": w,
             "done": (rng.random(n) < 0.3).astype(float)}
    noise = rng.standard_normal((n, act_dim))
    return ag, batch, noise


def _fd_check(net, loss_fn, grads):
    theta = net.flatten()

    def f(v, i):
        old = net.flatten()
        net.unflatten(v)
        out = loss_fn()[i]
        net.unflatten(old)
        return out

    for i in range(2):
        fd = central_diff(lambda v: f(v, i), theta)
        assert rel_err(grads[i], fd) < 1e-4, i


def test_value_loss_gradient_fd():
    rng = np.random.default_rng(3)
    for _ in range(5):
        ag, b, z = _setup(rng)
        out = morl.value_loss(ag.v, ag.q, ag.pi, b, z)
        _fd_check(ag.v, lambda: morl.value_loss(ag.v, ag.q, ag.pi, b, z).losses, out.grads)


def test_q_loss_gradient_fd():
    rng = np.random.default_rng(4)
    for _ in range(5):
        ag, b, _ = _setup(rng)
        out = morl.q_loss(ag.q, ag.v_t, b, 0.9)
        _fd_check(ag.q, lambda: morl.q_loss(ag.q, ag.v_t, b, 0.9).losses, out.grads)


def test_policy_loss_gradient_fd_and_combined():
    rng = np.random.default_rng(5)
    for _ in range(5):
        ag, b, z = _setup(rng)
        nu = rng.uniform(size=len(z))
        out = morl.policy_loss(ag.pi, ag.q, b, z, weights=nu)
        assert not out.extra["clamped"]
        _fd_check(ag.pi, lambda: morl.policy_loss(ag.pi, ag.q, b, z).losses, out.grads)

        def mixed():
            a, logp, _ = morl.policy_sample(ag.pi, b["s"], b["w"], z)
            Q = ag.q.forward(np.concatenate([b["s"], a, b["w"]], axis=1), cache=False)
            return np.mean(logp - nu * Q[:, 0] - (1 - nu) * Q[:, 1])

        theta = ag.pi.flatten()

        def f(v):
            ag.pi.unflatten(v)
            return mixed()

        fd = central_diff(f, theta)
        ag.pi.unflatten(theta)
        assert rel_err(out.extra["combined"], fd) < 1e-4


def test_log_prob_matches_change_of_variables():
    rng = np.random.default_rng(6)
    ag, b, z = _setup(rng, act_dim=1, n=1)
    a, logp, c = morl.policy_sample(ag.pi, b["s"], b["w"], z)
    mu, sig = c["mu"][0, 0], c["sig"][0, 0]
    u = np.arctanh(a[0, 0])
    ref = -0.5 * ((u - mu) / sig) ** 2 - np.log(sig * np.sqrt(2 * np.pi)) - np.log(1 - a[0, 0] ** 2 + morl.SQUASH_EPS)
    assert logp[0] == pytest.approx(ref, rel=1e-9)


# ---------------------------------------------------------------- environment
@pytest.fixture(scope="module")
def env():
    return morl.make_env(CFG, 7)


def test_zero_action_gives_zero_reward(env):
    env.reset(state=env.eval_state())
    _, r, _, _ = env.step(np.zeros(env.act_dim))
    assert np.array_equal(r, np.zeros(2))


def test_power_increase_costs_and_speeds_up(env):
    env.reset(state=morl.MoState(np.zeros(CFG.B), 0.5 * CFG.P_max))
    a = np.zeros(env.act_dim)
    a[-1] = 1.0
    _, r, _, info = env.step(a)
    assert r[0] < 0 and r[1] > 0
    assert info["state"].P == pytest.approx(0.5 * CFG.P_max + env.dP)
    # one full power step is exactly one cost unit
    assert r[0] == pytest.approx(-1.0)


def test_reward_recomputed_from_objectives(env):
    rng = np.random.default_rng(8)
    s0 = env.initial_state(rng)
    a = rng.uniform(-1, 1, env.act_dim)
    s1 = env.transition(s0, a)
    c0, j0 = env.objectives(s0)
    c1, j1 = env.objectives(s1)
    expect = np.array([c0 - c1, j0 - j1]) / env.units
    np.testing.assert_allclose(env.reward(s0, s1), expect, rtol=1e-12)


def test_power_clipped_and_phases_wrapped(env):
    s = env.transition(morl.MoState(np.full(CFG.B, 6.2), CFG.P_max), np.ones(env.act_dim))
    assert s.P == CFG.P_max and np.all((0 <= s.theta) & (s.theta < 2 * np.pi))
    s = env.transition(morl.MoState(np.zeros(CFG.B), env.P_min), -np.ones(env.act_dim))
    assert s.P == env.P_min


def test_episode_length(env):
    env.reset(np.random.default_rng(0))
    done, n = False, 0
    while not done:
        _, _, done, _ = env.step(np.zeros(env.act_dim))
        n += 1
    assert n == env.horizon


def test_bad_dep_rejected():
    with pytest.raises(ValueError, match="DEP constraint"):
        morl.make_env(CFG, 7, eps=1.5)


# ---------------------------------------------------------------- misc
def test_preferences_on_simplex_with_uniform_mean():
    rng = np.random.default_rng(9)
    W = np.stack([morl.sample_preference(rng) for _ in range(20000)])
    assert np.all(W >= 0) and np.allclose(W.sum(1), 1.0)
    assert abs(W[:, 0].mean() - 0.5) < 0.01
    with pytest.raises(ValueError, match="simplex"):
        morl.check_preference([0.7, 0.7])


def test_replay_buffer_wraps_at_capacity():
    buf = morl.ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add([i], [0], [0, 0], [i + 1], [1, 0], False)
    assert len(buf) == 3
    assert sorted(buf.s[:, 0]) == [2.0, 3.0, 4.0]
    b = buf.sample(10, np.random.default_rng(0), pool=[1])
    assert np.all(b["s"] == buf.s[1])


def test_moving_average():
    np.testing.assert_allclose(morl.moving_average([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])


@pytest.mark.parametrize("seed", range(3))
def test_bandit_reaches_preferred_optimum(seed):
    env = morl.BanditEnv()
    res = morl.train_mosac(env, morl.SacHyper(hidden=(32, 32), warmup=64), episodes=1500, seed=seed,
                           fixed_w=(1.0, 0.0))
    a = res.agent.act(np.zeros(1), np.array([1.0, 0.0]), deterministic=True)
    assert env.rewards(a)[0] >= 0.95
    ma = [r["moving_avg"] for r in res.curve]
    assert ma[-1] > ma[20]


def test_training_is_reproducible(env):
    h = morl.SacHyper(hidden=(8, 8), warmup=20)
    a = morl.train_mosac(env, h, episodes=4, seed=1)
    b = morl.train_mosac(env, h, episodes=4, seed=1)
    assert a.curve == b.curve
    assert np.array_equal(a.agent.pi.flatten(), b.agent.pi.flatten())


def test_front_points_cover_grid(env):
    ag = morl.Agent(env.obs_dim, env.act_dim, morl.SacHyper(hidden=(8, 8)), np.random.default_rng(0))
    pts = morl.front_points(ag, env, n_w=5)
    assert len(pts) == 5 * env.horizon
    assert {p.record["w1"] for p in pts} == {0.0, 0.25, 0.5, 0.75, 1.0}


def test_nonfinite_gradient_names_network():
    ag = morl.Agent(2, 1, morl.SacHyper(hidden=(4,)), np.random.default_rng(0))
    g = {k: np.zeros(n.n_params) for k, n in ag.nets().items()}
    g["q"][0] = np.inf
    with pytest.raises(FloatingPointError, match="non-finite gradient in q"):
        ag.apply(g)
