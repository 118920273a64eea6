"""Command-line experiment runner.

Subcommands ``simulate``, ``replay``, ``sweep`` and ``validate`` read a flat
``key = value`` config file with dotted keys::

    scenario = drift
    scenario.total_steps = 2000
    policies = dcts,ts
    policy.dcts.lambda = 1
    replications = 10
    sweep.grid.policy.dcts.gamma = 0,0.25,0.5,0.75,1

Environment variables ``APP_<KEY>`` override the file, with ``__`` standing
for a dot (``APP_POLICY__DCTS__LAMBDA=10``). ``--seed``, ``--out`` and
``--workers`` override both. Replication ``r`` is seeded with
``base_seed + r``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import replay as rp
from .envsim import (ScenarioConfig, env_policy_factory, mean_ci, preset_policy_config,
                     recovery_step, run_replication, scenario_preset)
from .policies import POLICIES, PolicyConfig, make_policy

MODES = ("simulate", "replay", "sweep")
ENV_PREFIX = "APP_"

# config key -> PolicyConfig field
POLICY_KEYS = {
    "lambda": "lam", "g": "g", "gamma": "gamma", "discount_interval": "discount_interval",
    "neighbor_k": "neighbor_k", "alpha_ucb": "alpha_ucb", "seed": "seed",
    "global_mean_mode": "global_mean_mode", "same_source_users": "same_source_users",
    "index_method": "index_method", "lsh_bits": "lsh_bits", "lsh_tables": "lsh_tables",
}
SCENARIO_KEYS = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)
                 if f.name not in ("scenario", "replications", "base_seed")}
TOP_KEYS = {"mode", "scenario", "policies", "replications", "base_seed", "output_dir",
            "workers"}
REPLAY_KEYS = {"log", "pretrain_log", "pretrain_sources", "user_contexts", "ad_contexts",
               "discount_interval"}

REPLAY_DISCOUNT_INTERVAL = 3600.0


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass
class ExperimentConfig:
    mode: str = "simulate"
    scenario: ScenarioConfig = field(default_factory=lambda: scenario_preset("transfer"))
    policies: list = field(default_factory=lambda: ["dcts", "ts"])
    policy_configs: dict = field(default_factory=dict)
    replications: int = 10
    base_seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    log: str | None = None
    pretrain_log: str | None = None
    pretrain_sources: list = field(default_factory=list)
    user_contexts: str | None = None
    ad_contexts: str | None = None
    replay_discount_interval: float = REPLAY_DISCOUNT_INTERVAL
    sweep_mode: str = "simulate"
    grid: dict = field(default_factory=dict)

    def policy_config(self, name: str) -> PolicyConfig:
        return self.policy_configs.get(name) or PolicyConfig()


# -- raw key/value handling ----------------------------------------------------

def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError([f"{origin}:{lineno}: expected key = value"])
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError([f"{origin}:{lineno}: empty key"])
        out[key] = value.strip()
    return out


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    return parse_config_text(text, str(path))


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            out[name[len(ENV_PREFIX):].lower().replace("__", ".")] = value
    return out


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _convert(text: str, like):
    if isinstance(like, bool):
        return _to_bool(text)
    if isinstance(like, int):
        return _to_int(text)
    if isinstance(like, float):
        return float(text)
    if like is None:
        return None if text.strip().lower() in ("", "none") else _to_int(text)
    return text.strip()


def _split_list(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


# -- building and validation ---------------------------------------------------

def build_config(raw: Mapping[str, str], mode: str | None = None) -> tuple:
    """Interpret raw keys. Returns ``(ExperimentConfig, diagnostics)``."""
    diags: list[str] = []
    cfg = ExperimentConfig()
    cfg.mode = mode or raw.get("mode", "simulate")
    if cfg.mode not in MODES:
        diags.append(f"mode must be one of {MODES}, got {cfg.mode!r}")

    scenario_name = raw.get("scenario", "transfer")
    scen_over: dict = {}
    policy_over: dict = {}
    for key, value in raw.items():
        parts = key.split(".")
        try:
            if key in TOP_KEYS:
                if key == "replications":
                    cfg.replications = _to_int(value)
                elif key == "base_seed":
                    cfg.base_seed = _to_int(value)
                elif key == "workers":
                    cfg.workers = _to_int(value)
                elif key == "output_dir":
                    cfg.output_dir = value
                elif key == "policies":
                    cfg.policies = _split_list(value)
            elif parts[0] == "scenario" and len(parts) == 2:
                if parts[1] not in SCENARIO_KEYS:
                    diags.append(f"unknown scenario key {key!r}")
                    continue
                like = getattr(ScenarioConfig(), parts[1])
                scen_over[parts[1]] = _convert(value, like)
            elif parts[0] == "policy" and len(parts) == 3:
                name, param = parts[1], parts[2]
                if param not in POLICY_KEYS:
                    diags.append(f"unknown policy parameter {key!r}")
                    continue
                like = getattr(PolicyConfig(), POLICY_KEYS[param])
                policy_over.setdefault(name, {})[POLICY_KEYS[param]] = _convert(value, like)
            elif parts[0] == "replay" and len(parts) == 2 and parts[1] in REPLAY_KEYS:
                if parts[1] == "pretrain_sources":
                    cfg.pretrain_sources = _split_list(value)
                elif parts[1] == "discount_interval":
                    cfg.replay_discount_interval = float(value)
                else:
                    setattr(cfg, parts[1], value or None)
            elif key == "sweep.mode":
                cfg.sweep_mode = value
            elif parts[0] == "sweep" and len(parts) > 2 and parts[1] == "grid":
                cfg.grid[".".join(parts[2:])] = _split_list(value)
            else:
                diags.append(f"unknown key {key!r}")
        except ValueError as exc:
            diags.append(f"{key}: {exc}")

    try:
        cfg.scenario = scenario_preset(scenario_name, base_seed=cfg.base_seed,
                                       replications=max(cfg.replications, 1), **scen_over)
        diags.extend(cfg.scenario.problems())
    except (ValueError, TypeError) as exc:
        diags.append(str(exc))

    for name in cfg.policies:
        if name not in POLICIES:
            diags.append(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    for name in policy_over:
        if name not in POLICIES:
            diags.append(f"unknown policy {name!r} in policy.* keys")
    if not cfg.policies:
        diags.append("policies list is empty")
    effective_mode = cfg.sweep_mode if cfg.mode == "sweep" else cfg.mode
    for name in POLICIES:
        base = default_policy_config(name, effective_mode, scenario_name)
        pc = dataclasses.replace(base, **policy_over.get(name, {}))
        if name in cfg.policies:
            for problem in pc.problems():
                diags.append(f"policy.{name}: {problem}")
        cfg.policy_configs[name] = pc

    if cfg.replications < 1:
        diags.append(f"replications must be >= 1, got {cfg.replications}")
    if cfg.workers < 1:
        diags.append(f"workers must be >= 1, got {cfg.workers}")
    if effective_mode == "replay":
        if not cfg.log:
            diags.append("replay needs replay.log")
        for key in ("log", "pretrain_log", "user_contexts", "ad_contexts"):
            path = getattr(cfg, key)
            if path and not Path(path).is_file():
                diags.append(f"replay.{key}: no such file {path}")
        if cfg.replay_discount_interval <= 0:
            diags.append("replay.discount_interval must be > 0")
    if cfg.mode == "sweep":
        if cfg.sweep_mode not in ("simulate", "replay"):
            diags.append(f"sweep.mode must be simulate or replay, got {cfg.sweep_mode!r}")
        if not cfg.grid:
            diags.append("sweep grid is empty (add sweep.grid.<key> = v1,v2,...)")
        for key, values in cfg.grid.items():
            if not values:
                diags.append(f"sweep.grid.{key} has no values")
                continue
            for v in values:
                point = dict(raw)
                point[key] = v
                _, point_diags = build_config(_drop_grid(point), effective_mode)
                diags.extend(f"sweep.grid.{key}={v}: {d}" for d in point_diags)
    return cfg, list(dict.fromkeys(diags))


def _drop_grid(raw: Mapping[str, str]) -> dict:
    return {k: v for k, v in raw.items() if not k.startswith("sweep.") and k != "mode"}


def default_policy_config(name: str, mode: str, scenario: str) -> PolicyConfig:
    if name != "dcts":
        return PolicyConfig()
    if mode == "replay":
        return PolicyConfig(lam=10.0, g=1.0, gamma=0.5)
    return preset_policy_config(scenario)


def validate_config(raw: Mapping[str, str], mode: str | None = None) -> list[str]:
    """Every problem with ``raw``, reported together. Empty means valid."""
    return build_config(raw, mode)[1]


def load_config(raw: Mapping[str, str], mode: str | None = None) -> ExperimentConfig:
    cfg, diags = build_config(raw, mode)
    if diags:
        raise ConfigError(diags)
    return cfg


# -- output ----------------------------------------------------------------------

def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_csv(path: Path, header: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _map(fn, jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# -- simulate ------------------------------------------------------------------------

def _simulate_job(job):
    name, pc, scenario, r = job
    return run_replication(env_policy_factory(name, pc, scenario), scenario, r)


def simulate_jobs(cfg: ExperimentConfig) -> list:
    return [(name, cfg.policy_config(name), cfg.scenario, r)
            for name in cfg.policies for r in range(cfg.replications)]


def simulate_summary(cfg: ExperimentConfig, traces: dict) -> tuple:
    """Per-replication rows and per-policy summary rows from ``traces[(name, r)]``."""
    sc = cfg.scenario
    rep_rows, summary = [], []
    for name in cfg.policies:
        means, posts, regrets = [], [], []
        for r in range(cfg.replications):
            tr = traces[(name, r)]
            m = float(tr.reward.mean())
            post = float(tr.reward[sc.switch_step:].mean())
            reg = float(tr.regret.sum())
            rec = recovery_step(tr.reward, sc.switch_step, sc.window)
            rep_rows.append([name, r, cfg.base_seed + r, m, post, reg, rec])
            means.append(m)
            posts.append(post)
            regrets.append(reg)
        summary.append([name, cfg.replications, *mean_ci(means), *mean_ci(posts),
                        float(np.mean(regrets))])
    return rep_rows, summary


REPLICATION_HEADER = ["policy", "replication", "seed", "mean_reward", "post_switch_reward",
                      "cumulative_regret", "recovery_step"]
SIM_SUMMARY_HEADER = ["policy", "replications", "ctr", "ctr_lo", "ctr_hi",
                      "post_switch_ctr", "post_switch_lo", "post_switch_hi",
                      "cumulative_regret"]
SIM_TRACE_HEADER = ["policy", "replication", "seed", "step", "reward", "expected_reward",
                    "cumulative_reward", "ctr", "regret"]


def run_simulate(cfg: ExperimentConfig, out: Path) -> list:
    jobs = simulate_jobs(cfg)
    results = _map(_simulate_job, jobs, cfg.workers)
    traces = {(j[0], j[3]): tr for j, tr in zip(jobs, results)}
    for r in range(cfg.replications):
        rows = []
        for name in cfg.policies:
            tr = traces[(name, r)]
            cum = np.cumsum(tr.reward)
            steps = np.arange(tr.reward.shape[0])
            ctr = cum / (steps + 1)
            regret = tr.regret
            for t in range(tr.reward.shape[0]):
                rows.append([name, r, cfg.base_seed + r, int(t), int(tr.reward[t]),
                             tr.expected[t], int(cum[t]), ctr[t], regret[t]])
        write_csv(out / f"trace_r{r}.csv", SIM_TRACE_HEADER, rows)
    rep_rows, summary = simulate_summary(cfg, traces)
    write_csv(out / "replications.csv", REPLICATION_HEADER, rep_rows)
    write_csv(out / "summary.csv", SIM_SUMMARY_HEADER, summary)
    return summary


# -- replay ---------------------------------------------------------------------------

@dataclass
class ReplayData:
    impressions: list
    pretrain: list
    user_contexts: dict
    ad_contexts: dict | None
    report: rp.AttributionReport


def load_replay_data(cfg: ExperimentConfig) -> ReplayData:
    report = rp.AttributionReport()
    impressions = rp.attribute_clicks(rp.load_log(cfg.log), report)
    if cfg.pretrain_log:
        pretrain = rp.attribute_clicks(rp.load_log(cfg.pretrain_log), report)
    else:
        pretrain = []
    if cfg.pretrain_sources:
        extra, impressions = rp.split_by_source(impressions, cfg.pretrain_sources)
        pretrain = sorted(pretrain + extra, key=lambda imp: imp.timestamp)
    users = rp.load_contexts(cfg.user_contexts) if cfg.user_contexts else {}
    ads = rp.load_contexts(cfg.ad_contexts) if cfg.ad_contexts else None
    if not impressions:
        raise ValueError("no target impressions left after attribution")
    return ReplayData(impressions, pretrain, users, ads, report)


def replay_policy(name: str, pc: PolicyConfig, data: ReplayData, interval: float):
    pc = dataclasses.replace(pc, discount_interval=interval)
    ad_sources = {}
    for imp in list(data.pretrain) + list(data.impressions):
        for ad in imp.displayed:
            ad_sources.setdefault(ad, imp.source_id)
    if name == "dcts":
        if data.ad_contexts is not None:
            return make_policy(name, pc, user_contexts=data.user_contexts,
                               ad_contexts=data.ad_contexts)
        return make_policy(name, pc, user_contexts=data.user_contexts,
                           ad_context_mode="clicks")
    ad_contexts = data.ad_contexts
    if ad_contexts is None and name in ("hlinucb", "tlinucb"):
        if not data.user_contexts:
            raise ValueError(f"{name} needs replay.user_contexts or replay.ad_contexts")
        ad_contexts = rp.ad_contexts_from_log(list(data.pretrain) + list(data.impressions),
                                              data.user_contexts)
    return make_policy(name, pc, user_contexts=data.user_contexts, ad_contexts=ad_contexts,
                       ad_sources=ad_sources)


def _replay_job(job):
    name, pc, data, interval, seed = job
    policy = replay_policy(name, pc, data, interval)
    return rp.evaluate(policy, data.impressions, data.pretrain, np.random.default_rng(seed))


def replay_jobs(cfg: ExperimentConfig, data: ReplayData) -> list:
    names = list(cfg.policies)
    if "random" not in names:
        names.append("random")
    return [(name, cfg.policy_config(name), data, cfg.replay_discount_interval,
             cfg.base_seed + r) for name in names for r in range(cfg.replications)]


REPLAY_SUMMARY_HEADER = ["policy", "replications", "impressions", "clicks", "ctr", "ctr_lo",
                         "ctr_hi", "relative_ctr"]
REPLAY_TRACE_HEADER = ["policy", "replication", "seed", "step", "timestamp", "reward",
                       "cumulative_clicks", "ctr"]


def replay_summary(cfg: ExperimentConfig, results: dict) -> list:
    random_ctr = float(np.mean([results[("random", r)].final_ctr
                                for r in range(cfg.replications)]))
    names = list(cfg.policies) + ([] if "random" in cfg.policies else ["random"])
    rows = []
    for name in names:
        res = [results[(name, r)] for r in range(cfg.replications)]
        ctrs = [x.final_ctr for x in res]
        m, lo, hi = mean_ci(ctrs)
        rows.append([name, cfg.replications, res[0].reward.shape[0],
                     float(np.mean([x.reward.sum() for x in res])), m, lo, hi,
                     rp.relative_ctr(m, random_ctr)])
    return rows


def run_replay(cfg: ExperimentConfig, out: Path) -> list:
    data = load_replay_data(cfg)
    jobs = replay_jobs(cfg, data)
    out_list = _map(_replay_job, jobs, cfg.workers)
    results = {(j[0], j[4] - cfg.base_seed): res for j, res in zip(jobs, out_list)}
    names = sorted({j[0] for j in jobs}, key=[j[0] for j in jobs].index)
    for r in range(cfg.replications):
        rows = []
        for name in names:
            res = results[(name, r)]
            cum = res.cumulative_clicks
            ctr = res.ctr
            for t in range(res.reward.shape[0]):
                rows.append([name, r, cfg.base_seed + r, t, int(res.timestamp[t]),
                             int(res.reward[t]), int(cum[t]), ctr[t]])
        write_csv(out / f"trace_r{r}.csv", REPLAY_TRACE_HEADER, rows)
    summary = replay_summary(cfg, results)
    write_csv(out / "summary.csv", REPLAY_SUMMARY_HEADER, summary)
    rep = data.report
    write_csv(out / "attribution.csv", ["impressions", "duplicate_impressions",
                                        "attributed_clicks", "orphan_clicks", "extra_clicks"],
              [[rep.impressions, rep.duplicate_impressions, rep.attributed_clicks,
                rep.orphan_clicks, rep.extra_clicks]])
    return summary


# -- sweep ----------------------------------------------------------------------------

def grid_points(grid: Mapping[str, list]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_sweep(cfg: ExperimentConfig, raw: Mapping[str, str], out: Path) -> list:
    """One summary row per (grid point, policy); no per-step traces."""
    points = grid_points(cfg.grid)
    point_cfgs = []
    for point in points:
        praw = _drop_grid(raw)
        praw.update(point)
        pcfg = load_config(praw, cfg.sweep_mode)
        pcfg.workers = cfg.workers
        point_cfgs.append(pcfg)
    rows = []
    keys = list(cfg.grid)
    if cfg.sweep_mode == "simulate":
        jobs, owners = [], []
        for i, pcfg in enumerate(point_cfgs):
            for j in simulate_jobs(pcfg):
                jobs.append(j)
                owners.append(i)
        results = _map(_simulate_job, jobs, cfg.workers)
        for i, pcfg in enumerate(point_cfgs):
            traces = {(j[0], j[3]): tr for j, tr, o in zip(jobs, results, owners) if o == i}
            _, summary = simulate_summary(pcfg, traces)
            rows.extend([*(points[i][k] for k in keys), *row] for row in summary)
        header = keys + SIM_SUMMARY_HEADER
    else:
        data = load_replay_data(point_cfgs[0])
        jobs, owners = [], []
        for i, pcfg in enumerate(point_cfgs):
            for j in replay_jobs(pcfg, data):
                jobs.append(j)
                owners.append(i)
        results = _map(_replay_job, jobs, cfg.workers)
        for i, pcfg in enumerate(point_cfgs):
            res = {(j[0], j[4] - pcfg.base_seed): x
                   for j, x, o in zip(jobs, results, owners) if o == i}
            rows.extend([*(points[i][k] for k in keys), *row]
                        for row in replay_summary(pcfg, res))
        header = keys + REPLAY_SUMMARY_HEADER
    write_csv(out / "sweep_summary.csv", header, rows)
    return rows


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcts", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "run a synthetic scenario"),
                       ("replay", "evaluate policies on a logged carousel"),
                       ("sweep", "run a grid of configurations"),
                       ("validate", "check a config and report every problem")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides base_seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        if name == "validate":
            p.add_argument("--mode", choices=MODES, help="mode to validate for")
    return parser


def gather_raw(args, environ: Mapping[str, str] | None = None) -> dict:
    raw = read_config_file(args.config) if args.config else {}
    raw.update(env_overrides(environ))
    if args.seed is not None:
        raw["base_seed"] = str(args.seed)
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.workers is not None:
        raw["workers"] = str(args.workers)
    return raw


def main(argv=None, environ: Mapping[str, str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = gather_raw(args, environ)
        if args.command == "validate":
            diags = validate_config(raw, args.mode)
            if diags:
                for d in diags:
                    print(d, file=sys.stderr)
                return 1
            print("ok")
            return 0
        cfg = load_config(raw, args.command)
        out = Path(cfg.output_dir)
        if args.command == "simulate":
            run_simulate(cfg, out)
        elif args.command == "replay":
            run_replay(cfg, out)
        else:
            run_sweep(cfg, raw, out)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
