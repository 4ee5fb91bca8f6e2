"""Command-line entry point: simulate, train, evaluate, verify, identifiability.

Exit codes: 0 success, 1 check or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigMismatch, PushIdentError
from .runio import RunDirectory, compat_hash, config_hash, write_metrics_csv

OUT_ROOT_ENV = "PUSHIDENT_OUT_ROOT"


def _load_config(path):
    from .training import ExperimentConfig

    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_file(path)


def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def cmd_simulate(args) -> int:
    from .chain import push_window, sample_chain, settle
    from .interaction import (
        EpisodeTrajectory,
        PushAction,
        UniformRandomSource,
        initial_configuration,
        resolve_action,
        save_episodes,
    )

    config = _load_config(args.config)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 5)))
    model = sample_chain(
        rng, config.n_links, config.mass_range, config.mu_range,
        config.length_range, joint_limit=config.joint_limit,
    )
    state = initial_configuration(model, rng)
    source = UniformRandomSource()
    noise = config.noise_std
    N = model.ndof
    q_seq = [state.q + noise * rng.standard_normal(N)]
    a_seq = []
    print(f"chain: n={model.n} mu={model.mu:.3f} lengths={np.round(model.lengths, 4)}")
    print(f"push 0 (initial): q = {np.round(q_seq[0], 4)}")
    for t in range(args.pushes):
        action = source(q_seq[-1], rng)
        noisy = PushAction(
            action.a1 + noise * rng.standard_normal(),
            action.a2 + noise * rng.standard_normal(),
        ).clamped()
        command = resolve_action(model, state.q, noisy)
        pushed = push_window(
            model, state, command.link_index, command.local_offset,
            command.side, command.direction, command.speed,
        )
        state, steps = settle(model, pushed)
        a_seq.append(noisy.as_array())
        q_seq.append(state.q + noise * rng.standard_normal(N))
        print(
            f"push {t + 1}: a=({noisy.a1:+.3f},{noisy.a2:+.3f}) "
            f"link={command.link_index} settle_steps={steps} "
            f"q={np.round(q_seq[-1], 4)}"
        )
    episode = EpisodeTrajectory(
        q_seq=np.array(q_seq), a_seq=np.array(a_seq).reshape(len(a_seq), 2),
        m_true=model.mass_fractions, n=model.n, mu=model.mu,
        lengths=model.lengths, seed=args.seed,
    )
    if args.trajectory:
        save_episodes(args.trajectory, [episode])
        print(f"trajectory written to {args.trajectory}")
    return 0


def cmd_train(args) -> int:
    from .training import ExperimentConfig, run_alternate, run_rp, run_rp_plus

    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    workers = args.workers
    root = _out_root(args)
    stage_key = args.stage.replace("+", "plus")
    run_id = f"{stage_key}-seed{config.seed}-{config.hash()[:8]}"
    run = RunDirectory(root, run_id)
    if args.stage == "rp":
        out = run_rp(run, config, workers)
        print(f"rp predictor val_l1 = {out['val_l1']:.4f}")
    elif args.stage == "rp+":
        out = run_rp_plus(run, config, workers)
        print(f"rp+ predictor val_l1 = {out['val_l1']:.4f}")
    else:
        out = run_alternate(run, config, workers)
        for row in out["history"]:
            print(
                f"meta {row['meta_iteration']}: val_l1 = {row['val_l1']:.4f} "
                f"({row['provenance']}, {row['episodes_total']} episodes)"
            )
    print(f"run directory: {run.root}")
    return 0


def _model_from_run(run_dir: Path, config):
    """(name, predictor, source_spec) for the final checkpoint of a run."""
    from .nn import load_params
    from .training import UNIFORM_SOURCE

    ckpts = sorted((run_dir / "checkpoints").glob("predictor-*.ckpt"))
    if not ckpts:
        raise FileNotFoundError(f"no predictor checkpoint under {run_dir}")

    def stage_order(p):
        stem = p.stem.replace("predictor-", "")
        if stem.startswith("meta"):
            return (1, int(stem[4:]))
        return (0, 0)

    ckpt = max(ckpts, key=stage_order)
    predictor = config.build_predictor()
    predictor.store.load_blocks(load_params(ckpt))
    policies = sorted((run_dir / "checkpoints").glob("policy-meta*.ckpt"))
    if policies:
        policy_ckpt = max(policies, key=lambda p: int(p.stem.replace("policy-meta", "")))
        policy = config.build_policy()
        policy.store.load_blocks(load_params(policy_ckpt))
        from .training import policy_source_spec

        source = policy_source_spec(policy, False)
    else:
        source = UNIFORM_SOURCE
    return run_dir.name, predictor, source


def cmd_evaluate(args) -> int:
    from .training import ExperimentConfig, evaluate

    run_dirs = [Path(p) for p in args.runs]
    configs = []
    for rd in run_dirs:
        run = RunDirectory(rd.parent, rd.name)
        configs.append(run.read_config())
    reference = configs[0]
    for cfg_dict, rd in zip(configs[1:], run_dirs[1:]):
        if compat_hash(cfg_dict) != compat_hash(reference):
            raise ConfigMismatch(
                f"{rd} was produced under an incompatible config"
            )
    config = ExperimentConfig.from_dict(reference)
    if args.test_seed_range:
        start, stop = (int(v) for v in args.test_seed_range.split(":"))
    else:
        start, stop = 0, config.test_episodes
    models = []
    for rd in run_dirs:
        name, predictor, source = _model_from_run(rd, config)
        if args.deterministic_policy and source["kind"] == "policy":
            source = dict(source, deterministic=True)
        models.append((name, predictor, source))
    report = evaluate(models, config, (start, stop), workers=args.workers)
    out_prefix = Path(args.report) if args.report else Path("evaluation")
    write_metrics_csv(out_prefix.with_suffix(".csv"), report.csv_rows())
    out_prefix.with_suffix(".txt").write_text(report.to_text())
    print(report.to_text())
    print(f"report written to {out_prefix.with_suffix('.csv')} and .txt")
    return 0


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = list(SUITES) if args.suite == "all" else [args.suite]
    checks = run_suites(names, seed=args.seed)
    failed = 0
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} [{c['suite']}] {c['name']}: {c['detail']}")
        failed += 0 if c["passed"] else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_identifiability(args) -> int:
    from .chain import sample_chain
    from .identifiability import identifiability_table
    from .interaction import initial_configuration
    from .runio import write_metrics_csv

    config = _load_config(args.config)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 6)))
    model = sample_chain(
        rng, config.n_links, config.mass_range, config.mu_range,
        config.length_range, joint_limit=config.joint_limit,
    )
    configurations = [
        initial_configuration(model, rng).q for _ in range(args.configs)
    ]
    grid = [
        (a1, a2)
        for a1 in np.linspace(-1, 1, 5)
        for a2 in np.linspace(-1, 1, 9)
    ]
    rows = identifiability_table(model, configurations, grid)
    write_metrics_csv(args.table, rows)
    print(f"{len(rows)} rows written to {args.table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pushident",
        description="Mass-distribution identification of pushed articulated chains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out one random-push episode")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pushes", type=int, default=5)
    p.add_argument("--trajectory", help="write the episode to this jsonl file")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="run a training stage")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--stage", choices=["rp", "rp+", "alternate"], default="alternate")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=16)
    p.add_argument("--out", help=f"output root (default ${OUT_ROOT_ENV} or ./runs)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score trained runs on held-out episodes")
    p.add_argument("runs", nargs="+", help="run directories to compare")
    p.add_argument("--test-seed-range", help="A:B episode index range")
    p.add_argument("--report", help="output file prefix (default ./evaluation)")
    p.add_argument("--workers", type=int, default=16)
    p.add_argument("--deterministic-policy", action="store_true",
                   help="use mean actions for policy-paired test episodes")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("verify", help="run the physics/gradients/identifiability suites")
    p.add_argument("--suite", choices=["physics", "gradients", "identifiability", "all"],
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("identifiability", help="emit a per-configuration excitation table")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=3)
    p.add_argument("--table", default="identifiability.csv")
    p.set_defaults(fn=cmd_identifiability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (PushIdentError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
