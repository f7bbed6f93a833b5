"""Experiment recipes. Each returns {table_name: rows} plus a summary dict."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import crlb, locest, meta, morl
from . import pareto as pa
from .scenario import ScenarioConfig

RECIPES = ("peb_heatmap", "rmse_curve", "train_compare", "adapt_compare", "pareto_front", "reliability_sweep")
EPS_SWEEP = (1e-7, 1e-5, 1e-3)
K_SWEEP = (64, 128, 256)


@dataclass
class Budget:
    """Desk-scale defaults; paper() returns the full-size training budgets."""
    trials: int = 100
    snr_list: tuple = (-5.0, 0.0, 5.0, 10.0)
    eta_bars: tuple = (5e-9, 10e-9, 20e-9)
    train_episodes: int = 400
    adapt_episodes: int = 80
    n_seeds: int = 10
    front_seeds: int = 5
    n_w: int = 21
    meta: meta.MetaHyper = field(default_factory=meta.MetaHyper)
    sac: morl.SacHyper = field(default_factory=lambda: morl.SacHyper(hidden=(32, 32)))
    fixed_w: tuple = (0.5, 0.5)
    delta_ts: tuple = tuple(np.round(np.arange(0.0, 150.01, 5.0) * 1e-6, 12))

    @classmethod
    def paper(cls) -> "Budget":
        return cls(train_episodes=1000, adapt_episodes=300, meta=meta.MetaHyper.paper_scale(),
                   sac=morl.SacHyper(hidden=(64, 64)))


# ------------------------------------------------------------------ localisation
def run_peb_heatmap(cfg: ScenarioConfig, seed: int, budget: Budget):
    xs, ys, H = crlb.peb_heatmap(cfg, seed=seed)
    rows = [{"x": float(x), "y": float(y), "peb_m": float(H[i, j])}
            for i, x in enumerate(xs) for j, y in enumerate(ys)]
    i, j = np.unravel_index(np.argmin(H), H.shape)
    return {"peb_heatmap": rows}, {"cells": len(rows), "argmin_xy": [float(xs[i]), float(ys[j])],
                                   "peb_min_m": float(H.min())}


def run_rmse_curve(cfg: ScenarioConfig, seed: int, budget: Budget):
    rows = locest.rmse_curve(cfg, budget.snr_list, trials=budget.trials, seed=seed)
    rows += locest.rmse_curve(cfg, [5.0], algorithms=("minibatch_sgd",), trials=budget.trials,
                              eta_bars=[e for e in budget.eta_bars if e != cfg.eta_bar],
                              seed=seed, eta_true_max=cfg.eta_bar)
    rows.sort(key=lambda r: (r["algorithm"], r["eta_bar"], r["snr_db"]))
    return {"rmse": rows}, {"rows": len(rows)}


# ------------------------------------------------------------------ learning
def run_train_compare(cfg: ScenarioConfig, seed: int, budget: Budget):
    env = morl.make_env(cfg, 500 + seed)
    rows = []
    for name, fw in (("mosac", None), ("fixed_w", budget.fixed_w)):
        res = morl.train_mosac(env, budget.sac, budget.train_episodes, seed=seed, fixed_w=fw)
        rows += [{"algorithm": name} | r for r in res.curve]
    return {"training": rows}, {"episodes": budget.train_episodes}


def _front_rows(points, algorithm, K, seed):
    return [{"seed": seed, "algorithm": algorithm, "K": K, "w1": p.record["w1"], "cost": p.cost,
             "latency": p.latency, "eps": p.record["eps"]} for p in sorted(points, key=lambda p: (p.cost, p.latency))]


def train_meta_models(cfg, seed, budget, sizes=(2, 10)) -> dict:
    return {n: meta.meta_train(cfg, meta.MetaHyper(**(budget.meta.__dict__ | {"n_tasks": n})),
                               budget.sac, seed=seed).meta for n in sizes}


def adaptation_study(cfg: ScenarioConfig, seed: int, budget: Budget, models=None) -> dict:
    """Adapt meta models (N=2, N=10), scratch MO-SAC and a frozen-preference agent on unseen tasks."""
    models = models or train_meta_models(cfg, seed, budget)
    out = {"curves": [], "eps_to_90": {}, "agents": []}
    for s in range(budget.n_seeds):
        task_seed = 500 + 1000 * seed + s
        env = morl.make_env(cfg, task_seed)
        runs = {f"meta_mosac_{n}": meta.adapt(m, env, budget.adapt_episodes, seed=s, sac=budget.sac)
                for n, m in sorted(models.items())}
        runs["mosac"] = meta.adapt(None, env, budget.adapt_episodes, seed=s, sac=budget.sac)
        runs["fixed_w"] = meta.adapt(models[max(models)], env, budget.adapt_episodes, seed=s,
                                     sac=budget.sac, fixed_w=budget.fixed_w)
        for name, r in runs.items():
            out["eps_to_90"].setdefault(name, []).append(meta.episodes_to_fraction(r.curve))
            out["curves"] += [{"seed": s, "episode": c["episode"], "algorithm": name,
                               "return": c["scalarised_return"], "moving_avg": c["moving_avg"]} for c in r.curve]
        out["agents"].append({"task_seed": task_seed, "adapted": runs[f"meta_mosac_{max(models)}"].agent,
                              "mosac": runs["mosac"].agent, "fixed_w": runs["fixed_w"].agent})
    return out


def fronts_for(cfg: ScenarioConfig, agents: dict, eps: float, budget: Budget, K=None) -> dict:
    env = morl.make_env(cfg, agents["task_seed"], eps=eps)
    fr = {"adapted": pa.pareto_filter(morl.front_points(agents["adapted"], env, budget.n_w)),
          "fixed_w": pa.pareto_filter(morl.front_points(agents["fixed_w"], env, budget.n_w, fixed_w=budget.fixed_w))}
    return fr


def hv_pair(fr: dict) -> dict:
    ref = pa.nadir_reference(*fr.values())
    return {k: pa.hypervolume(f, ref) for k, f in fr.items()}


def strictly_dominated_fraction(front, other) -> float:
    """Share of front points strictly dominated by some point of other."""
    if not front:
        return 0.0
    return float(np.mean([any(pa.dominates(q, p) for q in other) for p in front]))


def run_adapt_compare(cfg: ScenarioConfig, seed: int, budget: Budget, study=None):
    study = study or adaptation_study(cfg, seed, budget)
    hv = {"adapted": [], "fixed_w": []}
    for ag in study["agents"]:
        h = hv_pair(fronts_for(cfg, ag, cfg.eps_max, budget))
        for k in hv:
            hv[k].append(h[k])
    summary = {"median_eps_to_90": {k: float(np.median(v)) for k, v in study["eps_to_90"].items()},
               "eps_to_90": study["eps_to_90"], "hv_adapted": hv["adapted"], "hv_fixed_w": hv["fixed_w"]}
    hv_rows = [{"seed": i, "algorithm": k, "hypervolume": v} for k, vals in hv.items() for i, v in enumerate(vals)]
    return {"adaptation": study["curves"], "hypervolume": hv_rows}, summary


def run_pareto_front(cfg: ScenarioConfig, seed: int, budget: Budget, study=None):
    study = study or adaptation_study(cfg, seed, budget)
    rows, cov, dom = [], {e: [] for e in EPS_SWEEP}, []
    for i, ag in enumerate(study["agents"][:budget.front_seeds]):
        for e in EPS_SWEEP:
            fr = fronts_for(cfg.replace(eps_max=e), ag, e, budget)
            cov[e].append(pa.coverage(fr["adapted"]))
            for k, f in fr.items():
                rows += _front_rows(f, k, cfg.K, i)
            if e == cfg.eps_max:
                dom.append(strictly_dominated_fraction(fr["adapted"], fr["fixed_w"]))
    summary = {"coverage": {str(e): v for e, v in cov.items()},
               "median_coverage": {str(e): float(np.median(v)) for e, v in cov.items()},
               "dominated_fraction": dom, "median_dominated_fraction": float(np.median(dom))}
    hv_rows = [{"seed": i, "eps": e, "coverage": c} for e, v in cov.items() for i, c in enumerate(v)]
    return {"pareto_front": rows, "coverage": hv_rows}, summary


def run_reliability_sweep(cfg: ScenarioConfig, seed: int, budget: Budget, models=None):
    """Per K: adapt the meta model, take the lowest-latency front point, hold it for T slots."""
    models = models or train_meta_models(cfg, seed, budget, sizes=(10,))
    m = models[max(models)]
    lat, rows_front = {}, []
    for K in K_SWEEP:
        kcfg = cfg.replace(K_b=K // cfg.B)
        env = morl.make_env(kcfg, 500 + 1000 * seed)
        agent = meta.adapt(m, env, budget.adapt_episodes, seed=seed, sac=budget.sac).agent
        front = pa.pareto_filter(morl.front_points(agent, env, budget.n_w))
        best = min(front, key=lambda p: (p.latency, p.cost))
        per_user = env.latencies(morl.MoState(best.record["theta"], best.record["P"]))
        lat[K] = np.repeat(per_user[:, None], cfg.T, axis=1)
        rows_front += _front_rows(front, "adapted", K, seed)
    rows = pa.reliability_sweep(lat, budget.delta_ts)
    return {"reliability": rows, "pareto_front": rows_front}, {"K": list(K_SWEEP)}


def run(recipe: str, cfg: ScenarioConfig, seed: int, budget: Budget | None = None):
    budget = budget or Budget()
    fn = {"peb_heatmap": run_peb_heatmap, "rmse_curve": run_rmse_curve, "train_compare": run_train_compare,
          "adapt_compare": run_adapt_compare, "pareto_front": run_pareto_front,
          "reliability_sweep": run_reliability_sweep}.get(recipe)
    if fn is None:
        raise KeyError(recipe)
    return fn(cfg, seed, budget)
