"""Command-line interface: ``quaymaint <command> [options]``.

Commands: train, evaluate, baseline, sweep-gamma, validate-env.

Settings are resolved from, in increasing priority: built-in defaults for
the chosen utility, the ``--config`` file (JSON or TOML), ``--set KEY=VALUE``
pairs, and explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import baselines
from .environments import PRESETS, ConfigError, resolve_env, save_config
from .evaluation import evaluate_policy, fmt
from .trainer import UTILITY_DEFAULTS, TrainerConfig, load_checkpoint, save_checkpoint, train
from .utilities import make_utility

DEFAULT_GAMMAS = (0.9, 0.975, 0.99, 0.995, 1.0)
DESK_STEPS = 500_000
FULL_STEPS = 25_000_000
POLICY_CHOICES = baselines.KINDS + ("nothing", "random")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_overrides(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(p.read_text())
    else:
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be a table/object")
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):  # allow [trainer] / [utility] sections
            flat.update({kk.replace("-", "_"): vv for kk, vv in v.items()})
        else:
            flat[k.replace("-", "_")] = v
    return flat


def settings(args) -> dict:
    """Merge config file, ``--set`` pairs and explicit flags."""
    merged = read_overrides(getattr(args, "config", None))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        merged[k.strip().replace("-", "_")] = _parse_value(v.strip())
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "set", "func", "command"):
            merged[k] = v
    return merged


def _utility(s: dict):
    kind = s.get("utility", "threshold")
    if kind == "threshold":
        return make_utility(
            "threshold",
            levels=s.get("threshold_levels"),
            multipliers=s.get("threshold_multipliers"),
            monotone=bool(s.get("threshold_monotone", False)),
        )
    if kind == "fmeca":
        return make_utility("fmeca", c_max=s.get("c_max"), f_max=s.get("f_max"))
    raise UsageError(f"unknown utility {kind!r}; expected threshold or fmeca")


def _gamma(s: dict) -> float:
    g = s.get("gamma", UTILITY_DEFAULTS[s.get("utility", "threshold")]["gamma"])
    if not 0.0 < float(g) <= 1.0:
        raise UsageError(f"--gamma must be in (0, 1], got {g}")
    return float(g)


def _trainer_config(s: dict) -> TrainerConfig:
    allowed = set(TrainerConfig.field_names())
    overrides = {k: v for k, v in s.items() if k in allowed}
    if "steps" in s:
        overrides["total_steps"] = int(s["steps"])
    elif "total_steps" not in s:
        overrides["total_steps"] = FULL_STEPS if s.get("full") else DESK_STEPS
    overrides["gamma"] = _gamma(s)
    unknown = sorted(k for k in s if k not in allowed and k not in _KNOWN_KEYS)
    if unknown:
        raise UsageError(f"unknown setting(s): {', '.join(unknown)}")
    try:
        return TrainerConfig.for_utility(s.get("utility", "threshold"), **overrides)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


_KNOWN_KEYS = {
    "env", "utility", "steps", "out_dir", "episodes", "workers", "threshold_levels",
    "threshold_multipliers", "threshold_monotone", "c_max", "f_max", "checkpoint", "policy",
    "parameter", "greedy", "out", "grid", "grid_episodes", "gammas", "quiet", "dump", "full",
}


def _out_dir(s: dict, default: str) -> Path:
    out = Path(s.get("out_dir", default))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(s: dict, msg: str) -> None:
    if not s.get("quiet"):
        print(msg, file=sys.stderr)


def cmd_train(args) -> int:
    s = settings(args)
    env = resolve_env(s.get("env", "simple"))
    utility = _utility(s)
    config = _trainer_config(s)
    out = _out_dir(s, "runs/train")
    _log(s, f"training on {env.name} for {config.total_steps} steps (seed {config.seed})")
    result = train(env, utility, config, progress=lambda row: _log(s, f"step {row['global_step']}: "
                                                                      f"utility {fmt(row['mean_utility'])}"))
    save_checkpoint(out, result, env, utility, {"updates": result.updates, "episodes": result.episodes})
    (out / "train_log.csv").write_text(result.log_csv())
    if result.eval_rows:
        (out / "eval_log.csv").write_text(result.eval_csv())
    print(f"wrote {out}")
    return 0


def _report_out(s: dict, report, default_name: str) -> Path:
    if s.get("out"):
        path = Path(s["out"])
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out_dir(s, "runs/evaluate") / default_name
    report.write_csv(path)
    return path


def _print_summary(report) -> None:
    print(f"policy {report.policy_id}: {report.episodes} episodes")
    for f in ("score", "cost_discounted", "cost_raw", "prisk", "prisk_raw"):
        print(f"  {f:16s} {fmt(report.mean(f))} +- {fmt(report.std(f))}")


def cmd_evaluate(args) -> int:
    s = settings(args)
    episodes = int(s.get("episodes", 5000))
    seed = int(s.get("seed", 0))
    if s.get("checkpoint") and s.get("policy"):
        raise UsageError("--checkpoint and --policy are mutually exclusive")
    if episodes <= 0:
        raise UsageError("--episodes must be positive")
    if s.get("checkpoint"):
        try:
            agent, meta = load_checkpoint(s["checkpoint"])
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        env = resolve_env(s["env"]) if "env" in s else meta["env_config"]
        if "utility" not in s:
            s.update(_utility_settings(meta["utility"]))
        utility = _utility(s)
        gamma = float(s.get("gamma", agent.config.gamma))
        policy = agent.policy(greedy=bool(s.get("greedy", False)))
    else:
        env = resolve_env(s.get("env", "simple"))
        utility = _utility(s)
        gamma = _gamma(s)
        kind = s.get("policy")
        if kind is None:
            raise UsageError("evaluate needs --checkpoint or --policy")
        if kind in baselines.KINDS and s.get("parameter") is None:
            raise UsageError(f"--policy {kind} needs --parameter")
        policy = baselines.make_baseline(kind, s.get("parameter"), env.n_components)
    report = evaluate_policy(env, policy, utility, gamma, episodes, seed, s.get("workers"))
    path = _report_out(s, report, "report.csv")
    _print_summary(report)
    print(f"wrote {path}")
    return 0


def _utility_settings(desc: dict) -> dict:
    kind = desc.get("kind", "threshold")
    out = {"utility": kind}
    if kind == "threshold":
        for key, flag in (("levels", "threshold_levels"), ("multipliers", "threshold_multipliers"),
                          ("monotone", "threshold_monotone")):
            if key in desc:
                out[flag] = desc[key]
    else:
        out.update({k: desc[k] for k in ("c_max", "f_max") if k in desc})
    return out


def cmd_baseline(args) -> int:
    s = settings(args)
    env = resolve_env(s.get("env", "simple"))
    utility = _utility(s)
    gamma = _gamma(s)
    kind = s["policy"]
    if kind not in baselines.KINDS:
        raise UsageError(f"--policy must be one of {', '.join(baselines.KINDS)}")
    grid = s.get("grid")
    if grid is not None:
        grid = _floats(grid) if isinstance(grid, str) else tuple(grid)
        if not grid:
            raise UsageError("--grid is empty")
    seed = int(s.get("seed", 0))
    workers = s.get("workers")
    result = baselines.grid_search(kind, env, utility, gamma, grid, int(s.get("grid_episodes", 500)), seed, workers)
    out = _out_dir(s, f"runs/baseline_{kind}")
    (out / "grid.csv").write_text(result.csv_text())
    report = evaluate_policy(env, result.best, utility, gamma, int(s.get("episodes", 5000)), seed, workers)
    report.write_csv(out / "report.csv")
    print(f"best {result.best.name}")
    _print_summary(report)
    print(f"wrote {out}")
    return 0


SWEEP_FIELDS = (
    "gamma", "mean_utility", "cost_discounted", "cost_undiscounted",
    "prisk_discounted", "prisk_undiscounted",
)


def cmd_sweep_gamma(args) -> int:
    s = settings(args)
    gammas = s.get("gammas", DEFAULT_GAMMAS)
    gammas = _floats(gammas) if isinstance(gammas, str) else tuple(float(g) for g in gammas)
    env = resolve_env(s.get("env", "simple"))
    utility = _utility(s)
    out = _out_dir(s, "runs/sweep_gamma")
    episodes, seed = int(s.get("episodes", 5000)), int(s.get("seed", 0))
    rows = []
    for g in gammas:
        config = _trainer_config({**s, "gamma": g})
        _log(s, f"gamma {g}: training {config.total_steps} steps")
        result = train(env, utility, config)
        run_dir = out / f"gamma_{fmt(g)}"
        save_checkpoint(run_dir, result, env, utility)
        (run_dir / "train_log.csv").write_text(result.log_csv())
        rep = evaluate_policy(env, result.agent.policy(), utility, g, episodes, seed, s.get("workers"))
        rep.write_csv(run_dir / "report.csv")
        rows.append((g, rep.mean("utility"), rep.mean("cost_discounted"), rep.mean("cost_raw"),
                     rep.mean("prisk"), rep.mean("prisk_raw")))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    (out / "sweep.csv").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def cmd_validate_env(args) -> int:
    s = settings(args)
    env = resolve_env(s.get("env", "simple"))
    print(f"{env.name}: {env.n_components} components, horizon {env.horizon}, "
          f"{len(env.degradation_models)} degradation models, {len(env.dependency_groups)} dependency groups")
    if s.get("dump"):
        save_config(env, s["dump"])
        print(f"wrote {s['dump']}")
    return 0


def _common(p: argparse.ArgumentParser, env=True, utility=True) -> None:
    if env:
        p.add_argument("--env", help=f"preset ({', '.join(PRESETS)}) or path to a JSON environment file")
    if utility:
        p.add_argument("--utility", choices=("threshold", "fmeca"))
        p.add_argument("--threshold-monotone", action="store_true", default=None,
                       help="penalise with m*(R - offset) instead of m*(R + offset)")
        p.add_argument("--threshold-levels", type=_floats)
        p.add_argument("--threshold-multipliers", type=_floats)
        p.add_argument("--c-max", type=float)
        p.add_argument("--f-max", type=float)
        p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--config", help="JSON or TOML file of setting overrides")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
    p.add_argument("--quiet", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quaymaint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train MO-DCMAC and write a checkpoint")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--full", action="store_true", default=None,
                   help=f"train for {FULL_STEPS} steps instead of {DESK_STEPS} (ignored with --steps)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Monte-Carlo evaluation of a checkpoint or baseline")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=POLICY_CHOICES)
    p.add_argument("--parameter", type=float, help="interval (yba/ybi) or fraction (cbi)")
    p.add_argument("--greedy", action="store_true", default=None)
    p.add_argument("--episodes", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="grid-search a baseline family, then evaluate the winner")
    _common(p)
    p.add_argument("--policy", choices=baselines.KINDS, required=True)
    p.add_argument("--grid", help="comma-separated parameter values")
    p.add_argument("--grid-episodes", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep-gamma", help="train and evaluate once per discount factor")
    _common(p)
    p.add_argument("--gammas", help="comma-separated discount factors")
    p.add_argument("--steps", type=int)
    p.add_argument("--full", action="store_true", default=None)
    p.add_argument("--episodes", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("validate-env", help="check an environment file or preset")
    _common(p, utility=False)
    p.add_argument("--dump", help="write the resolved environment as JSON")
    p.set_defaults(func=cmd_validate_env)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
