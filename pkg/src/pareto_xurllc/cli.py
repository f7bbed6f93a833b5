"""Command-line experiment runner.

    pareto-xurllc run --recipe peb_heatmap --scenario default --seed 0 --out runs/heat
    pareto-xurllc rerun --manifest runs/heat/manifest.json --out runs/heat2
    pareto-xurllc svg --csv runs/heat/peb_heatmap.csv --kind heatmap --x x --y y --value peb_m
"""

from __future__ import annotations

import argparse
import ast
import csv
import dataclasses
import hashlib
import json
import platform
import shutil
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from . import svg
from .scenario import ConfigError, ScenarioConfig, coerce_value, load_config

# table -> (plot kind, column roles); tables not listed get no plot
PLOTS = {
    "peb_heatmap": ("heatmap", {"x": "x", "y": "y", "value": "peb_m", "title": "PEB (m)"}),
    "rmse": ("line", {"x": "snr_db", "y": "rmse_m", "series": "algorithm+eta_bar"}),
    "training": ("line", {"x": "episode", "y": "moving_avg", "series": "algorithm"}),
    "adaptation": ("line", {"x": "episode", "y": "moving_avg", "series": "algorithm"}),
    "pareto_front": ("scatter", {"x": "cost", "y": "latency", "series": "algorithm+eps+K"}),
    "reliability": ("line", {"x": "delta_t", "y": "xi", "series": "K"}),
}


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ config
def apply_overrides(cfg: ScenarioConfig, budget: ex.Budget, overrides) -> tuple:
    """key=value for scenario fields, budget.key=value for experiment budgets."""
    scen, bud = {}, {}
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    bnames = {f.name for f in dataclasses.fields(ex.Budget)} - {"meta", "sac"}
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, val = (t.strip() for t in item.split("=", 1))
        if key.startswith("budget."):
            k = key[len("budget."):]
            if k not in bnames:
                raise UsageError(f"unknown budget key {k!r}; expected one of {sorted(bnames)}")
            bud[k] = _budget_value(getattr(budget, k), val, k)
        elif key in names:
            scen[key] = coerce_value(key, val)
        else:
            raise UsageError(f"unknown override key {key!r}")
    return cfg.replace(**scen), dataclasses.replace(budget, **bud)


def _budget_value(default, val: str, key: str):
    try:
        v = ast.literal_eval(val)
    except (ValueError, SyntaxError) as exc:
        raise UsageError(f"budget.{key}: cannot parse {val!r}") from exc
    if isinstance(default, tuple):
        return tuple(v) if isinstance(v, (list, tuple)) else (v,)
    return type(default)(v)


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    return {"pareto_xurllc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# ------------------------------------------------------------------ output
def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, rows: list) -> None:
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    return x


def run_recipe(recipe: str, cfg: ScenarioConfig, seed: int, budget: ex.Budget, out: Path,
               meta_info: dict, plots: bool = True) -> dict:
    """Run one recipe into out/. Files are staged and only moved in on success."""
    if recipe not in ex.RECIPES:
        raise UsageError(f"unknown recipe {recipe!r}; valid recipes: {', '.join(ex.RECIPES)}")
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    stage = out / f".partial-{recipe}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    try:
        tables, summary = ex.run(recipe, cfg, seed, budget)
        files = {}
        for name, rows in sorted(tables.items()):
            p = stage / f"{name}.csv"
            write_csv(p, rows)
            files[p.name] = _sha(p)
            if plots and name in PLOTS:
                kind, cols = PLOTS[name]
                svg.emit_svg(p, kind, stage / f"{name}.svg", **cols)
        manifest = {"recipe": recipe, "seed": seed, "config_hash": config_hash(cfg),
                    "config": _jsonable(cfg.to_dict()), "budget": _jsonable(dataclasses.asdict(budget)),
                    "versions": versions(), "outputs": files, "summary": _jsonable(summary)} | meta_info
        (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
        for f in sorted(stage.iterdir()):
            f.replace(out / f.name)
        stage.rmdir()
        return manifest
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise


def budget_from_manifest(d: dict) -> ex.Budget:
    from .meta import MetaHyper
    from .morl import SacHyper
    d = dict(d)
    m = MetaHyper(**d.pop("meta"))
    s = d.pop("sac")
    s["hidden"] = tuple(s["hidden"])
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return ex.Budget(meta=m, sac=SacHyper(**s), **kw)


# ------------------------------------------------------------------ entry
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pareto-xurllc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment recipe")
    r.add_argument("--recipe", required=True, choices=ex.RECIPES)
    r.add_argument("--scenario", default="default", help="key = value file, or 'default'")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default="runs")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="scenario key, or budget.<key>; repeatable")
    r.add_argument("--paper-scale", action="store_true", help="use the full-size training budgets")
    r.add_argument("--no-svg", action="store_true")
    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("--manifest", required=True)
    rr.add_argument("--out", required=True)
    s = sub.add_parser("svg", help="render a CSV as SVG")
    s.add_argument("--csv", required=True)
    s.add_argument("--kind", required=True, choices=sorted(svg.REQUIRED))
    s.add_argument("--out")
    for role in ("x", "y", "value", "series", "title"):
        s.add_argument(f"--{role}")
    return ap


def _main(args) -> int:
    if args.cmd == "run":
        budget = ex.Budget.paper() if args.paper_scale else ex.Budget()
        cfg, budget = apply_overrides(load_config(args.scenario), budget, args.override)
        info = {"scenario": args.scenario, "overrides": list(args.override), "paper_scale": args.paper_scale}
        m = run_recipe(args.recipe, cfg, args.seed, budget, Path(args.out), info, plots=not args.no_svg)
        print(f"{args.recipe}: wrote {len(m['outputs'])} table(s) to {args.out}")
    elif args.cmd == "rerun":
        m = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        cfg = ScenarioConfig.from_dict(m["config"])
        if config_hash(cfg) != m["config_hash"]:
            raise ConfigError("manifest config does not match its config_hash")
        info = {k: m[k] for k in ("scenario", "overrides", "paper_scale") if k in m}
        run_recipe(m["recipe"], cfg, m["seed"], budget_from_manifest(m["budget"]), Path(args.out), info)
        print(f"{m['recipe']}: re-ran into {args.out}")
    else:
        cols = {k: getattr(args, k) for k in ("x", "y", "value", "series", "title") if getattr(args, k)}
        print(svg.emit_svg(args.csv, args.kind, args.out, **cols))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # argparse exits 2 on unknown recipes and bad flags
    try:
        return _main(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors carry their own message
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
