"""First-order MAML over user-placement tasks, plus fast adaptation and baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import morl
from .morl import Agent, ReplayBuffer, SacHyper
from .scenario import ScenarioConfig

NETS = ("v", "q", "pi")


@dataclass
class MetaHyper:
    n_tasks: int = 10
    meta_iters: int = 100
    inner_iters: int = 5
    inner_lr: float = 3e-4
    outer_lr: float = 3e-3
    episodes_per_iter: int = 1
    batch: int = 32
    tau_meta: float = 0.05
    query_every: int = 5  # every 5th transition goes to the query set (80/20 split)

    @classmethod
    def paper_scale(cls, **kw) -> "MetaHyper":
        return cls(**({"meta_iters": 1000, "inner_iters": 20} | kw))


@dataclass
class MetaPolicy:
    params: dict  # flat vectors for v, q, pi and the target v_t
    obs_dim: int
    act_dim: int
    hidden: tuple

    def agent(self, hyper: SacHyper | None = None) -> Agent:
        hyper = hyper or SacHyper(hidden=self.hidden)
        ag = Agent(self.obs_dim, self.act_dim, hyper, np.random.default_rng(0))
        ag.load(self.params)
        return ag

    def copy(self) -> "MetaPolicy":
        return MetaPolicy({k: v.copy() for k, v in self.params.items()}, self.obs_dim, self.act_dim, self.hidden)


@dataclass
class Task:
    seed: int
    env: object
    buffer: ReplayBuffer
    n_added: int = 0

    def split(self, every: int = 5):
        idx = np.arange(len(self.buffer))
        # the buffer is large enough that ring wrap-around never happens during meta-training
        query = idx[idx % every == every - 1]
        support = idx[idx % every != every - 1]
        return support, query


def make_tasks(cfg: ScenarioConfig, seeds, hyper: SacHyper, eps=None) -> list:
    tasks = []
    for s in seeds:
        env = morl.make_env(cfg, int(s), eps=eps)
        tasks.append(Task(int(s), env, ReplayBuffer(hyper.buffer, env.obs_dim, env.act_dim)))
    return tasks


def combined_grads(agent: Agent, batch: dict, rng) -> dict:
    g = agent.grads(agent.scaled(batch), rng)
    return {k: g[k] for k in NETS}


def inner_update(agent: Agent, task: Task, lr: float, iters: int, batch: int, rng) -> Agent:
    """Plain gradient steps on support-set batches; mutates and returns agent."""
    support, _ = task.split()
    for _ in range(iters):
        g = combined_grads(agent, task.buffer.sample(batch, rng, support), rng)
        agent.apply(g, mode="sgd", lrs={k: lr for k in NETS})
    return agent


def query_grads(agent: Agent, task: Task, batch: int, rng) -> dict:
    _, query = task.split()
    return combined_grads(agent, task.buffer.sample(batch, rng, query), rng)


def outer_update(meta: MetaPolicy, task_grads: list, lr: float, tau: float) -> MetaPolicy:
    """meta <- meta - lr * sum_n g_n (first order), then move the target value net."""
    out = meta.copy()
    for k in NETS:
        total = np.zeros_like(out.params[k])
        for g in task_grads:  # fixed left-to-right reduction
            total = total + g[k]
        out.params[k] = out.params[k] - lr * total
    out.params["v_t"] = tau * out.params["v"] + (1.0 - tau) * out.params["v_t"]
    return out


def collect(agent: Agent, task: Task, episodes: int, rng):
    for _ in range(episodes):
        w = morl.sample_preference(rng)
        morl.run_episode(agent, task.env, w, rng, task.buffer, learn=False)


@dataclass
class MetaResult:
    meta: MetaPolicy
    history: list = field(default_factory=list)


def meta_train(cfg: ScenarioConfig, hyper: MetaHyper | None = None, sac: SacHyper | None = None,
               seed: int = 0, task_seeds=None) -> MetaResult:
    hyper = hyper or MetaHyper()
    sac = sac or SacHyper()
    rng = np.random.default_rng([seed, 21])
    if task_seeds is None:
        task_seeds = [1000 + seed * 100 + n for n in range(hyper.n_tasks)]
    tasks = make_tasks(cfg, task_seeds, sac)
    env0 = tasks[0].env
    init = Agent(env0.obs_dim, env0.act_dim, sac, np.random.default_rng([seed, 22]))
    meta = MetaPolicy(init.snapshot(), env0.obs_dim, env0.act_dim, tuple(sac.hidden))
    history = []
    for it in range(hyper.meta_iters):
        grads = []
        qloss = np.zeros(2)
        for task in tasks:
            agent = meta.agent(sac)
            collect(agent, task, hyper.episodes_per_iter, rng)
            if len(task.split(hyper.query_every)[1]) == 0:
                continue
            inner_update(agent, task, hyper.inner_lr, hyper.inner_iters, hyper.batch, rng)
            g = query_grads(agent, task, hyper.batch, rng)
            for k in NETS:
                if not np.all(np.isfinite(g[k])):
                    raise morl.DivergenceError(f"task {task.seed}: non-finite {k} gradient")
            grads.append(g)
        meta = outer_update(meta, grads, hyper.outer_lr, hyper.tau_meta)
        history.append({"iter": it, "n_tasks": len(grads)})
    return MetaResult(meta, history)


def adapt(meta: MetaPolicy | None, env, episodes: int, seed: int = 0, sac: SacHyper | None = None,
          fixed_w=None) -> morl.TrainResult:
    """MO-SAC on a new task starting from meta (or from scratch when meta is None)."""
    sac = sac or SacHyper(hidden=meta.hidden if meta else SacHyper().hidden)
    init = meta.params if meta is not None else None
    return morl.train_mosac(env, sac, episodes=episodes, seed=seed, init=init, fixed_w=fixed_w)


def episodes_to_fraction(curve, frac: float = 0.9) -> int:
    """First episode whose moving average reaches frac of the final moving average."""
    ma = np.array([r["moving_avg"] for r in curve])
    final = ma[-1]
    thr = frac * final if final > 0 else final
    hit = np.flatnonzero(ma >= thr)
    return int(hit[0]) if len(hit) else len(ma)
