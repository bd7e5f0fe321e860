"""Command-line entry point: run, report, tts, validate-dsl, gen."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .coevolution import SCHEDULE_PRESETS, CoEvolution, CoEvolutionError, RunMode
from .config import ConfigError, RunConfig, load_config
from .dsl import DslError, ParseError, parse, to_text
from .envs import env_interface, get_spec
from .llm import BackendUnavailable, PromptContext, build_prompt, generate_candidates
from .metrics import compute_tts
from .report import build_report, report, summary_from_state, write_report
from .runstore import IncompleteRun, RunStore, load_run

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_INCOMPLETE = 0, 2, 3, 4


def _load(args) -> RunConfig:
    return load_config(args.config).with_overrides(
        mode=getattr(args, "mode", None), seed=getattr(args, "seed", None), llm=getattr(args, "llm", None),
        out_dir=getattr(args, "out_dir", None))


def cmd_run(args) -> int:
    cfg = _load(args)
    spec = cfg.env_spec()
    store = RunStore.create(cfg.out_dir, cfg.seed)
    store.write_json("config.json", cfg.to_dict())
    engine = CoEvolution(cfg.mode, cfg.schedule, spec, cfg.backend(spec), cfg.seed, ppo=cfg.ppo,
                         bo_kwargs=cfg.bo, workers=cfg.workers, events=store.events, store=store)
    try:
        state = engine.run()
    finally:
        store.close()
    live = summary_from_state(state, spec.name, cfg.mode, cfg.seed, cfg.schedule)
    write_report(build_report([live]), store.root)
    print(f"run dir: {store.root}")
    print(f"mode={cfg.mode.label} env={spec.name} seed={cfg.seed} v_best={state.v_best!r} "
          f"mts_best={state.mts_best!r} epochs={state.total_epochs}")
    return EXIT_OK


def cmd_report(args) -> int:
    baselines = json.loads(Path(args.baselines).read_text()) if args.baselines else None
    rep = report(args.runs, args.out, baselines)
    sys.stdout.write(rep.table_csv())
    for note in rep.notes:
        print(f"# note: {note}")
    print(f"# wrote {Path(args.out) / 'report.csv'} and plots under {Path(args.out) / 'plots'}")
    return EXIT_OK


def cmd_tts(args) -> int:
    if args.preset:
        if args.preset not in SCHEDULE_PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(SCHEDULE_PRESETS)}")
        schedule = SCHEDULE_PRESETS[args.preset]
    else:
        schedule = load_config(args.config).schedule
    try:
        mode = RunMode.parse(args.mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = compute_tts(schedule, mode)
    print(f"mode: {res.mode}")
    print(f"first round: {res.first_round} epochs")
    print(f"subsequent rounds: {res.n_dp_rounds} x {res.per_dp_round} = {res.subsequent} epochs")
    print(f"total: {res.total_epochs} epochs")
    print(f"ratio vs eureka ({res.eureka_epochs}): {res.ratio_vs_eureka:.4f}")
    if res.discrepancy:
        print(f"note: {res.discrepancy}")
    return EXIT_OK


def cmd_validate(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    try:
        program = parse(text)
        if args.env:
            program.check_features(get_spec(args.env).feature_names)
    except ParseError as exc:
        print(f"{args.file}:{exc.line}:{exc.column}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DslError as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(to_text(program))
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = _load(args)
    spec = cfg.env_spec()
    program = stats = None
    if args.round > 1:
        if not args.run:
            raise ConfigError("--round > 1 needs --run <dir> to condition on the previous round")
        events = load_run(args.run, require_complete=False).events
        prev = [e for e in events if e.get("event") == "round_end" and e["round"] == args.round - 1]
        if not prev:
            raise IncompleteRun(f"{args.run} has no round {args.round - 1}")
        program = parse(prev[0]["prompt_program"]) if prev[0].get("prompt_program") else None
        stats = prev[0].get("prompt_stats")
    ctx = PromptContext(spec.task_description, env_interface(spec), program, stats)
    prompt = build_prompt(ctx)
    cands = generate_candidates(ctx, cfg.schedule.batch_size, cfg.backend(spec),
                                (cfg.seed, "gen", args.round, 0), spec.feature_names, prompt=prompt)
    print("=== prompt ===")
    print(prompt)
    for c in cands:
        flag = " (fallback)" if c.fallback else ""
        print(f"=== candidate {c.index}{flag} ===")
        sys.stdout.write(to_text(c.program))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coevolve", description="Reward-policy co-evolution experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", help="roska | eureka | roska-u | fixed-alpha=<a>")
    r.add_argument("--seed", type=int)
    r.add_argument("--llm", choices=("mock", "http"))
    r.add_argument("--out-dir", dest="out_dir")
    r.set_defaults(fn=cmd_run)

    rp = sub.add_parser("report", help="aggregate finished runs")
    rp.add_argument("--runs", nargs="+", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--baselines", help='JSON {env: {"sparse": x, "human": y}} for HNS')
    rp.set_defaults(fn=cmd_report)

    t = sub.add_parser("tts", help="closed-form training-epoch accounting")
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", help=f"one of {sorted(SCHEDULE_PRESETS)}")
    t.add_argument("--mode", required=True)
    t.set_defaults(fn=cmd_tts)

    v = sub.add_parser("validate-dsl", help="parse a reward program and print its canonical form")
    v.add_argument("file")
    v.add_argument("--env", help="also check features against this environment")
    v.set_defaults(fn=cmd_validate)

    gen = sub.add_parser("gen", help="emit the prompt and candidates for a round without training")
    gen.add_argument("--config", required=True)
    gen.add_argument("--round", type=int, default=1)
    gen.add_argument("--run", help="run directory supplying the previous round (round > 1)")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--llm", choices=("mock", "http"))
    gen.set_defaults(fn=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendUnavailable as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except IncompleteRun as exc:
        print(f"incomplete run: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (CoEvolutionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
