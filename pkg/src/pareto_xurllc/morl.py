"""Preference-conditioned multi-objective soft actor-critic.

Two objectives throughout: index 0 is service cost, index 1 is latency. Rewards
are improvements (negative deltas), so larger returns are better for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import nn
from .scenario import Scenario, ScenarioConfig

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6


class DivergenceError(FloatingPointError):
    pass


# ---------------------------------------------------------------- preferences
def sample_preference(rng) -> np.ndarray:
    u = rng.uniform()
    return np.array([u, 1.0 - u])


def check_preference(w, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, float)
    if w.shape != (2,) or np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        raise ValueError(f"preference must lie on the 2-simplex, got {w}")
    return w


# ---------------------------------------------------------------- min-norm
def _unit_max(g):
    m = np.max(np.abs(g)) if g.size else 0.0
    return g / m if m > 0 else g


def min_norm_combine(g1, g2, prescale: bool = False):
    """Minimum-norm point on the segment between two gradients.

    Returns (nu, nu * g1 + (1 - nu) * g2). With prescale each gradient is first
    divided by its largest absolute entry.
    """
    g1 = np.asarray(g1, float).ravel()
    g2 = np.asarray(g2, float).ravel()
    if prescale:
        g1, g2 = _unit_max(g1), _unit_max(g2)
    d = g1 - g2
    dd = float(d @ d)
    if dd == 0.0:
        nu = 0.5
    else:
        nu = min(1.0, max(0.0, float((g2 - g1) @ g2) / dd))
    return nu, nu * g1 + (1.0 - nu) * g2


# ---------------------------------------------------------------- environments
@dataclass
class MoState:
    theta: np.ndarray  # per sub-surface phase offset in [0, 2pi)
    P: float

    def normalised(self, P_max: float) -> np.ndarray:
        return np.concatenate([self.theta / np.pi - 1.0, [2.0 * self.P / P_max - 1.0]])


class MetaverseEnv:
    """Controller MDP over RIS sub-surface offsets and CBS transmit power.

    The channel is frozen for the episode. The operating point of a state is
    (cost if P were held for the T-slot horizon, worst-user latency). Rewards are
    per-step improvements in units of one full power step: each objective's
    range over [P_min, P_max] times dP / (P_max - P_min).
    """

    n_obj = 2

    def __init__(self, cfg: ScenarioConfig, scenario: Scenario, eps: float | None = None,
                 p_min_frac: float = 0.01, dtheta: float = np.pi / 4, dp_frac: float = 0.1,
                 horizon: int | None = None):
        self.cfg = cfg
        self.scenario = scenario
        self.eps = cfg.eps_max if eps is None else float(eps)
        if not 0.0 < self.eps < 1.0:
            raise ValueError("DEP constraint 0 < eps < 1 violated")
        self.pairing = scenario.pairing()
        self.link = ch.LinkModel(cfg, scenario.true_positions, scenario.est_positions, self.pairing)
        self.P_min = p_min_frac * cfg.P_max
        self.dtheta = dtheta
        self.dP = dp_frac * cfg.P_max
        self.horizon = cfg.T if horizon is None else horizon
        self.obs_dim = cfg.B + 1
        self.act_dim = cfg.B + 1
        zero = np.zeros(cfg.B)
        c_hi, _ = self.objectives(MoState(zero, cfg.P_max))
        c_lo, _ = self.objectives(MoState(zero, self.P_min))
        self.cost_span = c_hi - c_lo
        self.lat_span = self.objectives(MoState(zero, self.P_min))[1] - self.objectives(MoState(zero, cfg.P_max))[1]
        if not (self.cost_span > 0 and self.lat_span > 0 and np.isfinite(self.lat_span)):
            raise ValueError("degenerate objective ranges for this task")
        step_frac = self.dP / (cfg.P_max - self.P_min)
        self.units = np.array([self.cost_span, self.lat_span]) * step_frac
        self.state: MoState | None = None
        self.t = 0

    # objective evaluation -------------------------------------------------
    def latencies(self, state: MoState) -> np.ndarray:
        rho = self.link.snr(state.theta, state.P)
        D = ch.fbl_rate(rho, self.cfg.m_block, self.eps)
        return ch.transmission_latency(self.cfg.S_bits, D, self.cfg.bandwidth_thz)

    def objectives(self, state: MoState):
        cfg = self.cfg
        cost = -cfg.C_meta + cfg.f_P * state.P * cfg.T + cfg.f_eps * self.eps
        return float(cost), float(np.max(self.latencies(state)))

    # dynamics ---------------------------------------------------------------
    def initial_state(self, rng) -> MoState:
        return MoState(rng.uniform(0.0, 2 * np.pi, self.cfg.B), float(rng.uniform(self.P_min, self.cfg.P_max)))

    def eval_state(self) -> MoState:
        r = np.random.default_rng([self.scenario.seed, 99])
        return MoState(r.uniform(0.0, 2 * np.pi, self.cfg.B), 0.5 * self.cfg.P_max)

    def reset(self, rng=None, state: MoState | None = None) -> np.ndarray:
        if state is None:
            state = self.initial_state(rng if rng is not None else np.random.default_rng(0))
        self.state = MoState(np.mod(np.asarray(state.theta, float), 2 * np.pi), float(state.P))
        self.t = 0
        return self.obs()

    def obs(self) -> np.ndarray:
        return self.state.normalised(self.cfg.P_max)

    def transition(self, state: MoState, action) -> MoState:
        a = np.clip(np.asarray(action, float), -1.0, 1.0)
        theta = np.mod(state.theta + self.dtheta * a[:-1], 2 * np.pi)
        P = float(np.clip(state.P + self.dP * a[-1], self.P_min, self.cfg.P_max))
        return MoState(theta, P)

    def reward(self, s0: MoState, s1: MoState) -> np.ndarray:
        c0, j0 = self.objectives(s0)
        c1, j1 = self.objectives(s1)
        return -np.array([c1 - c0, j1 - j0]) / self.units

    def step(self, action):
        s0 = self.state
        s1 = self.transition(s0, action)
        r = self.reward(s0, s1)
        self.state = s1
        self.t += 1
        return self.obs(), r, self.t >= self.horizon, {"state": s1}


class BanditEnv:
    """One-step env with a known optimum: r = [1 - (a - c0)^2, 1 - (a - c1)^2]."""

    n_obj = 2
    obs_dim = 1
    act_dim = 1
    horizon = 1

    def __init__(self, c0: float = 0.3, c1: float = -0.4):
        self.c = np.array([c0, c1])

    def reset(self, rng=None, state=None):
        return np.zeros(1)

    def rewards(self, a) -> np.ndarray:
        a = float(np.clip(np.asarray(a, float).ravel()[0], -1.0, 1.0))
        return 1.0 - (a - self.c) ** 2

    def step(self, action):
        return np.zeros(1), self.rewards(action), True, {}


# ---------------------------------------------------------------- replay
class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int, n_obj: int = 2):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros((capacity, n_obj))
        self.s2 = np.zeros((capacity, obs_dim))
        self.w = np.zeros((capacity, 2))
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, w, done):
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s2[i], self.w[i], self.done[i] = s, a, r, s2, w, float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def batch(self, idx) -> dict:
        idx = np.asarray(idx)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx],
                "w": self.w[idx], "done": self.done[idx]}

    def sample(self, n: int, rng, pool=None) -> dict:
        pool = np.arange(self.size) if pool is None else np.asarray(pool)
        return self.batch(pool[rng.integers(0, len(pool), size=n)])


# ---------------------------------------------------------------- losses
@dataclass
class LossOut:
    losses: np.ndarray  # (2,) per-objective loss
    grads: list  # two flat parameter gradients, one per objective
    extra: dict = field(default_factory=dict)


def _xv(b):
    return np.concatenate([b["s"], b["w"]], axis=1)


def policy_sample(pi: nn.Mlp, s, w, noise, ls_min: float = -5.0, ls_max: float = 1.0):
    """Reparameterised tanh-Gaussian sample; returns (action, log-prob, cache)."""
    out = pi.forward(np.concatenate([s, w], axis=1))
    da = noise.shape[1]
    mu, ls_raw = out[:, :da], out[:, da:]
    ls = np.clip(ls_raw, ls_min, ls_max)
    inside = ((ls_raw >= ls_min) & (ls_raw <= ls_max)).astype(float)
    sig = np.exp(ls)
    u = mu + sig * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise ** 2 - ls - 0.5 * LOG_2PI - np.log(1.0 - a * a + SQUASH_EPS), axis=1)
    cache = {"mu": mu, "ls": ls, "sig": sig, "a": a, "inside": inside, "noise": noise,
             "clamped": bool(inside.min() < 1.0) if inside.size else False}
    return a, logp, cache


def _logp_upstream(c):
    """d logp / d(mu, ls_raw) per sample, shape (n, 2 da)."""
    a = c["a"]
    k = 2.0 * a * (1.0 - a * a) / (1.0 - a * a + SQUASH_EPS)
    d_mu = k
    d_ls = (-1.0 + k * c["sig"] * c["noise"]) * c["inside"]
    return np.concatenate([d_mu, d_ls], axis=1)


def _action_upstream(c, dQ_da):
    """Chain dQ/da back to (mu, ls_raw)."""
    da_du = 1.0 - c["a"] ** 2
    g = dQ_da * da_du
    return np.concatenate([g, g * c["sig"] * c["noise"] * c["inside"]], axis=1)


def _q_input(b, a):
    return np.concatenate([b["s"], a, b["w"]], axis=1)


def value_loss(v_net: nn.Mlp, q_net: nn.Mlp, pi: nn.Mlp, batch: dict, noise) -> LossOut:
    """0.5 (V_i(s, w) - [Q_i(s, a~, w) - log pi(a~)])^2 averaged over the batch."""
    a, logp, _ = policy_sample(pi, batch["s"], batch["w"], noise)
    target = q_net.forward(_q_input(batch, a), cache=False) - logp[:, None]
    V = v_net.forward(_xv(batch))
    res = V - target
    n = len(res)
    losses = 0.5 * np.mean(res ** 2, axis=0)
    grads = []
    for i in range(2):
        up = np.zeros_like(res)
        up[:, i] = res[:, i] / n
        grads.append(v_net.backward(up).flatten())
    return LossOut(losses, grads)


def q_loss(q_net: nn.Mlp, v_target: nn.Mlp, batch: dict, gamma: float) -> LossOut:
    """0.5 (Q_i(s, a, w) - r_i - gamma (1 - done) V^_i(s', w))^2 averaged over the batch."""
    v2 = v_target.forward(np.concatenate([batch["s2"], batch["w"]], axis=1), cache=False)
    y = batch["r"] + gamma * (1.0 - batch["done"])[:, None] * v2
    Q = q_net.forward(_q_input(batch, batch["a"]))
    res = Q - y
    n = len(res)
    losses = 0.5 * np.mean(res ** 2, axis=0)
    grads = []
    for i in range(2):
        up = np.zeros_like(res)
        up[:, i] = res[:, i] / n
        grads.append(q_net.backward(up).flatten())
    return LossOut(losses, grads)


def policy_loss(pi: nn.Mlp, q_net: nn.Mlp, batch: dict, noise, weights=None) -> LossOut:
    """Per objective i: mean(log pi(a~) - Q_i(s, a~, w)) with reparameterised a~.

    With per-sample weights nu (shape (n,), or a callable mapping the two
    per-objective gradients to them), extra['combined'] holds the gradient of
    mean(log pi - nu Q_0 - (1 - nu) Q_1).
    """
    a, logp, c = policy_sample(pi, batch["s"], batch["w"], noise)
    Q = q_net.forward(_q_input(batch, a))
    n = len(a)
    da = a.shape[1]
    ds = batch["s"].shape[1]
    dQ_da = []
    for i in range(2):
        up = np.zeros_like(Q)
        up[:, i] = 1.0
        dQ_da.append(q_net.backward(up).dx[:, ds:ds + da])
    losses = np.array([np.mean(logp - Q[:, 0]), np.mean(logp - Q[:, 1])])
    lp_up = _logp_upstream(c)
    grads = []
    for i in range(2):
        up = (lp_up - _action_upstream(c, dQ_da[i])) / n
        grads.append(pi.backward(up).flatten())
    extra = {"clamped": c["clamped"], "logp": logp}
    if weights is not None:
        if callable(weights):
            weights = weights(grads)
        nu = np.broadcast_to(np.asarray(weights, float), (n,))[:, None]
        extra["nu"] = nu[:, 0]
        dmix = nu * dQ_da[0] + (1.0 - nu) * dQ_da[1]
        extra["combined"] = pi.backward((lp_up - _action_upstream(c, dmix)) / n).flatten()
    return LossOut(losses, grads, extra)


# ---------------------------------------------------------------- agent
@dataclass
class SacHyper:
    hidden: tuple = (64, 64)
    lr_v: float = 3e-4
    lr_pi: float = 3e-4
    lr_q: float = 3e-4
    gamma: float = 0.9
    tau: float = 0.005
    batch: int = 32
    buffer: int = 10_000
    warmup: int = 200
    temperature: float = 0.2
    prescale: bool = True
    band: float = 0.1
    updates_per_step: int = 1
    window: int = 10


class Agent:
    def __init__(self, obs_dim: int, act_dim: int, hyper: SacHyper, rng):
        self.obs_dim, self.act_dim, self.hyper = obs_dim, act_dim, hyper
        h = list(hyper.hidden)
        self.v = nn.Mlp.create([obs_dim + 2] + h + [2], rng=rng)
        self.q = nn.Mlp.create([obs_dim + act_dim + 2] + h + [2], rng=rng)
        self.pi = nn.Mlp.create([obs_dim + 2] + h + [2 * act_dim], rng=rng)
        self.v_t = self.v.copy()
        self.reset_optim()

    def reset_optim(self):
        h = self.hyper
        self.opt = {"v": nn.Adam(h.lr_v), "q": nn.Adam(h.lr_q), "pi": nn.Adam(h.lr_pi)}

    def nets(self) -> dict:
        return {"v": self.v, "q": self.q, "pi": self.pi}

    def snapshot(self) -> dict:
        return {k: n.flatten() for k, n in self.nets().items()} | {"v_t": self.v_t.flatten()}

    def load(self, snap: dict):
        for k, n in self.nets().items():
            n.unflatten(snap[k])
        self.v_t.unflatten(snap.get("v_t", snap["v"]))

    def act(self, obs, w, rng=None, deterministic: bool = False) -> np.ndarray:
        x = np.concatenate([np.asarray(obs, float), np.asarray(w, float)])
        out = self.pi.forward(x, cache=False)
        mu = out[:self.act_dim]
        if deterministic:
            return np.tanh(mu)
        ls = np.clip(out[self.act_dim:], -5.0, 1.0)
        return np.tanh(mu + np.exp(ls) * rng.standard_normal(self.act_dim))

    def scaled(self, batch: dict) -> dict:
        return batch | {"r": batch["r"] / self.hyper.temperature}

    def grads(self, batch: dict, rng) -> dict:
        """Combined per-network gradients for one batch (rewards already temperature-scaled)."""
        h = self.hyper
        n = len(batch["s"])
        noise = rng.standard_normal((n, self.act_dim))
        out = {}
        vl = value_loss(self.v, self.q, self.pi, batch, noise)
        out["v"] = min_norm_combine(*vl.grads, prescale=h.prescale)[1]
        ql = q_loss(self.q, self.v_t, batch, h.gamma)
        out["q"] = min_norm_combine(*ql.grads, prescale=h.prescale)[1]
        w1 = batch["w"][:, 0]

        def banded(gs):
            nu_mn, _ = min_norm_combine(*gs, prescale=h.prescale)
            return np.clip(nu_mn, w1 - h.band, w1 + h.band)

        pl = policy_loss(self.pi, self.q, batch, noise, weights=banded)
        out["pi"] = pl.extra["combined"]
        out["info"] = {"v_loss": vl.losses, "q_loss": ql.losses, "pi_loss": pl.losses}
        return out

    def apply(self, g: dict, mode: str = "adam", lrs: dict | None = None):
        h = self.hyper
        lrs = lrs or {"v": h.lr_v, "q": h.lr_q, "pi": h.lr_pi}
        for k, net in self.nets().items():
            if mode == "adam":
                self.opt[k].lr = lrs[k]
                self.opt[k].step(net, g[k], name=k)
            else:
                nn.sgd_step(net, g[k], lrs[k], name=k)

    def update_target(self, tau: float | None = None):
        tau = self.hyper.tau if tau is None else tau
        self.v_t.unflatten(tau * self.v.flatten() + (1.0 - tau) * self.v_t.flatten())

    def update(self, batch: dict, rng) -> dict:
        g = self.grads(self.scaled(batch), rng)
        self.apply(g)
        self.update_target()
        return g["info"]


# ---------------------------------------------------------------- training
def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for i in range(len(x)):
        out[i] = x[max(0, i - window + 1):i + 1].mean()
    return out


@dataclass
class TrainResult:
    agent: Agent
    curve: list  # rows: episode, w1, return_cost, return_latency, scalarised_return, moving_avg
    buffer: ReplayBuffer


def run_episode(agent: Agent, env, w, rng, buffer: ReplayBuffer | None = None,
                learn: bool = True, state=None, deterministic: bool = False):
    obs = env.reset(rng, state)
    ret = np.zeros(2)
    done = False
    h = agent.hyper
    while not done:
        a = agent.act(obs, w, rng, deterministic)
        obs2, r, done, _ = env.step(a)
        ret += r
        if buffer is not None:
            buffer.add(obs, a, r, obs2, w, done)
            if learn and len(buffer) >= max(h.warmup, h.batch):
                for _ in range(h.updates_per_step):
                    info = agent.update(buffer.sample(h.batch, rng), rng)
                    if not all(np.all(np.isfinite(v)) for v in info.values()):
                        raise DivergenceError(f"non-finite training losses: {info}")
        obs = obs2
    return ret


def train_mosac(env, hyper: SacHyper | None = None, episodes: int = 100, seed: int = 0,
                init: dict | None = None, fixed_w=None, agent: Agent | None = None) -> TrainResult:
    """MO-SAC with preferences resampled per episode (or frozen at fixed_w)."""
    hyper = hyper or SacHyper()
    rng = np.random.default_rng([seed, 11])
    if agent is None:
        agent = Agent(env.obs_dim, env.act_dim, hyper, np.random.default_rng([seed, 12]))
        if init is not None:
            agent.load(init)
    buf = ReplayBuffer(hyper.buffer, env.obs_dim, env.act_dim)
    rows, scal = [], []
    for ep in range(episodes):
        w = check_preference(fixed_w) if fixed_w is not None else sample_preference(rng)
        ret = run_episode(agent, env, w, rng, buf)
        if not np.all(np.isfinite(ret)):
            raise DivergenceError(f"episode {ep}: non-finite return {ret}")
        scal.append(float(w @ ret))
        rows.append({"episode": ep, "w1": float(w[0]), "return_cost": float(ret[0]),
                     "return_latency": float(ret[1]), "scalarised_return": scal[-1]})
    ma = moving_average(scal, hyper.window)
    for r, m in zip(rows, ma):
        r["moving_avg"] = float(m)
    return TrainResult(agent, rows, buf)


def evaluate(agent: Agent, env, w, state=None):
    """Deterministic rollout; returns the list of visited MoStates (initial included)."""
    rng = np.random.default_rng(0)
    obs = env.reset(rng, state if state is not None else getattr(env, "eval_state", lambda: None)())
    states = [env.state]
    done = False
    while not done:
        obs, _, done, info = env.step(agent.act(obs, w, deterministic=True))
        states.append(info.get("state", env.state) if info else env.state)
    return states


def localised_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    """User placement for one task with position estimates drawn at the PEB level.

    Each user's estimate is the true position plus isotropic Gaussian error whose
    total variance equals PEB^2 at that position (height taken as known).
    """
    from . import crlb
    from .scenario import make_scenario

    sc = make_scenario(cfg, seed)
    rng = np.random.default_rng([seed, 5])
    pilots = crlb.loc_pilots(cfg)
    nv = ch.noise_var_for_snr(cfg, cfg.snr_db)
    Jp = crlb.position_fim_batch(cfg, sc.true_positions, 0.0, pilots, cfg.P0_loc, nv)
    bounds, _ = crlb.peb(Jp)
    est = sc.true_positions.copy()
    for u in range(len(est)):
        est[u, :2] += rng.normal(0.0, bounds[u] / np.sqrt(2.0), size=2)
        est[u, :2] = np.clip(est[u, :2], 0.0, [cfg.room_x, cfg.room_y])
    return sc.with_estimates(est)


def make_env(cfg: ScenarioConfig, seed: int, eps: float | None = None, **kw) -> MetaverseEnv:
    return MetaverseEnv(cfg, localised_scenario(cfg, seed), eps=eps, **kw)


def front_points(agent: Agent, env: MetaverseEnv, n_w: int = 21, fixed_w=None) -> list:
    """Operating points visited by deterministic rollouts over a preference grid.

    Every post-action state of every rollout is a candidate; callers filter for
    non-dominance. With fixed_w the agent is always fed that preference.
    """
    from .pareto import ParetoPoint

    pts = []
    for w1 in np.linspace(0.0, 1.0, n_w):
        w = np.array([w1, 1.0 - w1]) if fixed_w is None else np.asarray(fixed_w, float)
        states = evaluate(agent, env, w)
        for t, s in enumerate(states[1:], 1):
            c, j = env.objectives(s)
            pts.append(ParetoPoint(c, j, {"w1": float(w1), "t": t, "P": s.P,
                                          "theta": s.theta.copy(), "eps": env.eps}))
    return pts
