"""Command-line entry points for every pipeline stage.

All commands accept --store/--seed/--config after the subcommand; outputs are
tab-separated text so they pipe cleanly into external tooling. Exit status is
0 on success and 1 with a one-line diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import envproto
from ..envproto import EnvConfig, serve_stdio
from ..optimizer import load_space
from ..ransim import ScenarioSpec, load_manifest, save_manifest
from ..rlagent import evaluate, load_checkpoint, train
from ..study import StudyStore, export_csv
from . import pipelines
from .config import BenchConfig, load_bench_config
from .pipelines import (build_scorecard, format_scorecard, median_trial,
                        run_baseline, run_dynamic, run_hpo, run_offline,
                        select_test_scenarios, static_trial_score, study_name,
                        write_curve_csv, write_trajectory_csv)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--store", help="trial store file (JSON record log)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="bench config file (JSON)")


def _load_scenarios(arg: str) -> list[ScenarioSpec]:
    """Comma-separated manifest paths, or a directory of *.json manifests."""
    path = Path(arg)
    if path.is_dir():
        files = sorted(path.glob("ts*.json")) or sorted(path.glob("*.json"))
    else:
        files = [Path(p) for p in arg.split(",")]
    specs = []
    for f in files:
        if f.name == "selection.json":
            continue
        specs.append(load_manifest(f))
    if not specs:
        raise ValueError(f"no scenario manifests found at {arg!r}")
    return specs


def _need_store(args) -> StudyStore:
    if not args.store:
        raise ValueError("this command needs --store")
    return StudyStore(args.store)


def _env_config(cfg: BenchConfig, scenario: ScenarioSpec) -> EnvConfig:
    return EnvConfig(scenario=scenario, **cfg.env.as_kwargs())


def _print_table(header: list[str], rows: list[list]) -> None:
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(c) for c in row))


# -- commands -----------------------------------------------------------------


def cmd_sample_scenarios(args, cfg: BenchConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    specs, report = select_test_scenarios(
        count=args.count, scan_start=args.scan_start,
        scan_limit=args.scan_limit, radio=cfg.radio, score_params=cfg.score,
        require_headroom=not args.no_headroom_check)
    for spec in specs:
        save_manifest(spec, out / f"{spec.name.lower()}.json")
    with open(out / "selection.json", "w", encoding="utf-8") as fh:
        json.dump({"criteria": {
            "max_enbs_used_at_baseline": 2,
            "grid_headroom_checked": not args.no_headroom_check,
        }, "scenarios": report}, fh, indent=2)
        fh.write("\n")
    _print_table(["name", "seed", "enbs_used", "baseline", "grid_best"],
                 [[r["name"], r["seed"], r["enbs_used_at_baseline"],
                   r["baseline_score"], r["grid_best_score"]] for r in report])
    return 0


def cmd_simulate(args, cfg: BenchConfig) -> int:
    scenario = load_manifest(args.scenario)
    powers = [float(p) for p in args.powers.split(",")]
    if len(powers) != 3:
        raise ValueError("--powers needs three comma-separated dBm values")
    if args.record == "baseline":
        store = _need_store(args)
        name = run_baseline(scenario, store, cfg.score, cfg.radio)
        score = store.complete_trials(name)[0].score
        print(f"study\t{name}")
    else:
        score = static_trial_score(
            scenario, powers, cfg.score, cfg.radio,
            duration_ms=int(args.duration_s * 1000),
            warmup_ms=cfg.env.warmup_ms)
    print(f"score\t{score!r}")
    return 0


def cmd_optimize(args, cfg: BenchConfig) -> int:
    scenario = load_manifest(args.scenario)
    store = _need_store(args)
    name = run_offline(scenario, args.method, args.trials, store,
                       seed=args.seed, score_params=cfg.score,
                       radio=cfg.radio, tpe_cfg=cfg.tpe)
    best = store.best_trial(name)
    print(f"study\t{name}")
    print(f"trials\t{len(store.trials(name))}")
    print(f"best_score\t{best.score!r}")
    print("best_params\t" + json.dumps(best.params, sort_keys=True))
    return 0


def cmd_train_rl(args, cfg: BenchConfig) -> int:
    scenarios = _load_scenarios(args.scenarios)
    env_cfg = _env_config(cfg, scenarios[0])
    arch = replace(cfg.arch, history_len=env_cfg.history_len,
                   n_features=env_cfg.rsrq_quantiles + 1)
    factory = pipelines.make_env_factory(scenarios, env_cfg, cfg.score,
                                         cfg.radio)
    result = train(factory, cfg.hyperparams, arch, args.timesteps,
                   seed=args.seed, checkpoint_path=args.checkpoint,
                   checkpoint_every=args.checkpoint_every)
    if args.curve:
        write_curve_csv(result, args.curve)
    finished = [e for e in result.curve if e["n_episodes"] > 0]
    print(f"updates\t{len(result.curve)}")
    print(f"timesteps\t{result.total_timesteps}")
    if finished:
        print(f"final_mean_episode_score\t{finished[-1]['mean_episode_score']!r}")
    print(f"checkpoint\t{args.checkpoint}")
    return 0


def cmd_eval_rl(args, cfg: BenchConfig) -> int:
    arch, params, _ = load_checkpoint(args.checkpoint)
    scenario = load_manifest(args.scenario)
    env_cfg = replace(_env_config(cfg, scenario),
                      history_len=arch.history_len,
                      rsrq_quantiles=arch.n_features - 1)
    store = StudyStore(args.store) if args.store else None
    trials = evaluate(params, arch, env_cfg, n_trials=args.trials,
                      duration_s=args.duration_s, seed=args.seed,
                      score_params=cfg.score, radio=cfg.radio, store=store,
                      study=study_name("rl", scenario.name) if store else None)
    scores = np.array([t.score for t in trials])
    if args.trajectory:
        write_trajectory_csv(median_trial(trials), args.trajectory)
    _print_table(["trials", "min", "median", "max"],
                 [[len(trials), repr(scores.min()),
                   repr(float(np.median(scores))), repr(scores.max())]])
    return 0


def cmd_tune_hparams(args, cfg: BenchConfig) -> int:
    store = _need_store(args)
    scenarios = _load_scenarios(args.scenarios)
    space = load_space(args.space) if args.space else \
        pipelines.default_rl_hpo_space()
    name = run_hpo(space, args.trials, args.timesteps_per_trial, store,
                   scenarios, seed=args.seed, name=args.study_name,
                   tpe_cfg=cfg.tpe,
                   eval_trials_per_scenario=args.eval_trials,
                   eval_duration_s=args.eval_duration_s,
                   score_params=cfg.score, radio=cfg.radio)
    if args.export:
        export_csv(store, args.export, studies=[name])
    complete = store.complete_trials(name)
    print(f"study\t{name}")
    print(f"trials\t{len(store.trials(name))}")
    print(f"complete\t{len(complete)}")
    if complete:
        best = store.best_trial(name)
        print(f"best_score\t{best.score!r}")
        print("best_params\t" + json.dumps(best.params, sort_keys=True))
    return 0


def cmd_dynamic_trial(args, cfg: BenchConfig) -> int:
    arch, params, _ = load_checkpoint(args.checkpoint)
    cycle = _load_scenarios(args.cycle)
    env_cfg = replace(_env_config(cfg, cycle[0]),
                      history_len=arch.history_len,
                      rsrq_quantiles=arch.n_features - 1)
    result = run_dynamic(params, arch, cycle, dwell_s=args.dwell_s,
                         total_cycles=args.cycles, env_config=env_cfg,
                         score_params=cfg.score, radio=cfg.radio)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("t_ms\tpower_1\tpower_2\tpower_3\tscore\tstatic_at\n")
            for t, p, s in zip(result.times_ms, result.powers, result.scores):
                label = ""
                for a in result.annotations:
                    if a["start_ms"] <= t <= a["end_ms"]:
                        label = a["scenario"]
                        break
                fh.write(f"{t}\t{p[0]!r}\t{p[1]!r}\t{p[2]!r}\t{s!r}\t{label}\n")
    _print_table(["phase", "scenario", "start_ms", "end_ms", "tail_mean_score"],
                 [[d["phase"], d["scenario"], d["start_ms"], d["end_ms"],
                   repr(d["tail_mean_score"])]
                  for d in result.dwell_scores()])
    return 0


def cmd_scorecard(args, cfg: BenchConfig) -> int:
    store = _need_store(args)
    names = []
    for token in args.scenarios.split(","):
        names.append(load_manifest(token).name if Path(token).is_file()
                     else token)
    card = build_scorecard(store, names, expect_rl_trials=args.trials)
    text = format_scorecard(card)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.plot:
        _plot_scorecard(card, args.plot)
    return 0


def _plot_scorecard(card, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    xs = np.arange(len(card.rows))
    for row, x in zip(card.rows, xs):
        jitter = (np.arange(len(row.rl_scores)) % 7 - 3) * 0.02
        ax.scatter(x + jitter, row.rl_scores, s=8, alpha=0.4,
                   color="tab:blue", label="RL trials" if x == 0 else None)
    ax.plot(xs, [r.baseline for r in card.rows], "kv", label="baseline")
    ax.plot(xs, [r.grid_best for r in card.rows], "gs", label="grid best")
    ax.plot(xs, [r.tpe_best for r in card.rows], "r^", label="tpe best")
    ax.set_xticks(xs, [r.scenario for r in card.rows])
    ax.set_ylabel("score")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_serve_env(args, cfg: BenchConfig) -> int:
    scenario = load_manifest(args.scenario)
    env_cfg = _env_config(cfg, scenario)
    return serve_stdio(env_cfg, episode_seed=args.episode_seed,
                       score_params=cfg.score, radio=cfg.radio)


def cmd_export(args, cfg: BenchConfig) -> int:
    store = _need_store(args)
    studies = args.studies.split(",") if args.studies else None
    export_csv(store, args.out, studies=studies)
    n = sum(len(store.trials(s)) for s in (studies or store.studies()))
    print(f"rows\t{n}")
    print(f"out\t{args.out}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranbench",
        description="Benchmark offline optimizers against an online RL agent "
                    "on cell transmit-power tuning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-scenarios",
                       help="scan seeds for committed test scenarios")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--scan-start", type=int, default=0)
    p.add_argument("--scan-limit", type=int, default=10000)
    p.add_argument("--no-headroom-check", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_sample_scenarios)

    p = sub.add_parser("simulate", help="score one static power triple")
    p.add_argument("--scenario", required=True)
    p.add_argument("--powers", default="30,30,30")
    p.add_argument("--duration-s", type=float, default=10.0)
    p.add_argument("--record", choices=["baseline"], default=None,
                   help="record the run as the scenario's baseline study")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="offline power optimization")
    p.add_argument("--scenario", required=True)
    p.add_argument("--method", choices=["tpe", "grid", "random"],
                   required=True)
    p.add_argument("--trials", type=int, default=125)
    _common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train-rl", help="train the agent")
    p.add_argument("--scenarios", required=True,
                   help="manifest dir or comma-separated files")
    p.add_argument("--timesteps", type=int, required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--curve", help="write the learning curve as CSV")
    _common(p)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval-rl", help="greedy evaluation trials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--duration-s", type=float, default=30.0)
    p.add_argument("--trajectory",
                   help="write the median trial's trajectory as CSV")
    _common(p)
    p.set_defaults(func=cmd_eval_rl)

    p = sub.add_parser("tune-hparams", help="hyperparameter search")
    p.add_argument("--space", help="search-space file (default: built-in)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--timesteps-per-trial", type=int, default=200000)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--study-name", default="rl-hpo")
    p.add_argument("--eval-trials", type=int, default=2)
    p.add_argument("--eval-duration-s", type=float, default=10.0)
    p.add_argument("--export", help="write the trial table as CSV")
    _common(p)
    p.set_defaults(func=cmd_tune_hparams)

    p = sub.add_parser("dynamic-trial",
                       help="continuous session cycling between scenarios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cycle", required=True,
                   help="comma-separated scenario manifests")
    p.add_argument("--dwell-s", type=float, default=30.0)
    p.add_argument("--cycles", type=int, default=1)
    p.add_argument("--out", help="write the session time series as TSV")
    _common(p)
    p.set_defaults(func=cmd_dynamic_trial)

    p = sub.add_parser("scorecard", help="per-scenario comparison table")
    p.add_argument("--scenarios", required=True,
                   help="comma-separated names or manifest files")
    p.add_argument("--trials", type=int, default=None,
                   help="expected RL trial count per scenario")
    p.add_argument("--out")
    p.add_argument("--plot", help="write a static figure (needs matplotlib)")
    _common(p)
    p.set_defaults(func=cmd_scorecard)

    p = sub.add_parser("serve-env",
                       help="serve one episode over the stdio protocol")
    p.add_argument("--scenario", required=True)
    p.add_argument("--episode-seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_serve_env)

    p = sub.add_parser("export", help="dump trial records as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--studies", help="comma-separated study names (default all)")
    _common(p)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_bench_config(args.config)
        return args.func(args, cfg)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
