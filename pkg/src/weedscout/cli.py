"""Command-line entry point.

Verbs: train, evaluate, baseline, compare, render, generate-field. Every verb
takes the same config plumbing (defaults < --preset, in order < --config file
< --set overrides < --seed) and writes a manifest next to its outputs, so any
run can be repeated with `--config <out>/manifest.yaml`.

Heavy imports stay inside functions: --single-threaded must pin the BLAS
thread-count environment variables before numpy first loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file or a manifest from a previous run")
    common.add_argument(
        "--preset",
        metavar="NAME",
        action="append",
        default=[],
        help="named preset, repeatable; applied in order before --config",
    )
    common.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="single setting override (YAML value), e.g. --set train.learning_rate=1e-4",
    )
    common.add_argument("--seed", type=int, help="experiment seed, overrides config")
    common.add_argument("--out", metavar="DIR", help="output directory (default runs/<verb>)")
    common.add_argument(
        "--single-threaded",
        action="store_true",
        help="pin linear-algebra libraries to one thread for bit-exact reproducibility",
    )

    p = argparse.ArgumentParser(
        prog="weedscout",
        description="Train and evaluate a drone search policy over simulated weed fields.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", parents=[common], help="train a policy and write checkpoints")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", parents=[common], help="evaluate a trained checkpoint")
    sp.add_argument("--checkpoint", metavar="PATH")
    sp.add_argument("--policy", choices=("greedy", "random"), default="greedy")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser(
        "baseline",
        parents=[common],
        help="evaluate the row-by-row coverage plan (flies the full route regardless of stopping config)",
    )
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("compare", parents=[common], help="significance-test two evaluation directories")
    sp.add_argument("dir_a", metavar="DIR_A")
    sp.add_argument("dir_b", metavar="DIR_B")
    sp.add_argument("--alpha", type=float, default=0.001)
    sp.add_argument("--label-a", default="a")
    sp.add_argument("--label-b", default="b")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("render", parents=[common], help="render episode logs or field files to images")
    sp.add_argument("inputs", metavar="FILE", nargs="+")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("generate-field", parents=[common], help="sample fields and save them as text + image")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--with-prior", action="store_true", help="overlay the simulated survey map on the image")
    sp.set_defaults(func=cmd_generate_field)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.single_threaded:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, "1")
    from .config import ConfigError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _load_experiment(args):
    from .config import apply_preset, apply_set_overrides, default_config, load_config

    cfg = default_config()
    for name in args.preset:
        apply_preset(cfg, name)
    if args.config:
        load_config(args.config, cfg)
    if args.set:
        apply_set_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _out_dir(args, verb: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / verb
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    from .config import save_manifest
    from .neuralnet import save_params
    from .trainer import training_loop

    cfg = _load_experiment(args)
    out = _out_dir(args, "train")
    spec = cfg.network_spec()

    def progress(row):
        print(
            f"step {row['step']}: loss {row['loss']:.5f} "
            f"val_reward {row['val_mean_reward']:.3f} val_found {row['val_mean_found']:.3f}",
            flush=True,
        )

    result = training_loop(cfg.env_config(), spec, cfg.train, cfg.seed, progress=progress)

    best_path = out / "checkpoint_best.bin"
    final_path = out / "checkpoint_final.bin"
    history_path = out / "history.tsv"
    save_params(best_path, result.best_params, spec)
    save_params(final_path, result.final_params, spec)
    with open(history_path, "w") as fh:
        fh.write("step\tloss\tval_mean_reward\tval_mean_found\n")
        for row in result.history:
            fh.write(
                f"{row['step']}\t{row['loss']!r}\t{row['val_mean_reward']!r}\t{row['val_mean_found']!r}\n"
            )
    artifacts = {
        "checkpoint_best": str(best_path),
        "checkpoint_final": str(final_path),
        "history": str(history_path),
    }
    if result.history:
        from .render import render_training

        render_training(result.history, out / "training.png")
        artifacts["training_plot"] = str(out / "training.png")
    save_manifest(
        out / "manifest.yaml",
        cfg,
        "train",
        artifacts,
        result={
            "best_step": result.best_step,
            "best_reward": result.best_reward,
            "env_steps": result.env_steps,
            "episodes": result.episodes,
        },
    )
    print(
        f"trained {result.env_steps} env steps / {result.episodes} episodes in {result.wall_time:.1f}s; "
        f"best validation reward {result.best_reward:.3f} at step {result.best_step}"
    )
    print(f"outputs in {out}")
    return 0


def _run_evaluation(args, cfg, policy, verb: str, record_q: bool = False) -> int:
    from .config import save_manifest
    from .evaluation import aggregate, evaluate_policy, write_eval_outputs
    from .render import render_curves, render_episode

    out = _out_dir(args, verb)
    logs = evaluate_policy(cfg.env_config(), policy, cfg.seed, cfg.eval.episodes, record_q=record_q)
    summary = aggregate(logs, cfg.eval.checkpoints)
    artifacts = write_eval_outputs(out, summary)

    logs_dir = out / "logs"
    logs_dir.mkdir(exist_ok=True)
    for lg in logs:
        lg.save(logs_dir / f"episode_{lg.episode:05d}.log")
    artifacts["logs"] = str(logs_dir)
    render_curves([(verb, summary)], out / "curve.png")
    render_episode(logs[0], out / "episode_first.png")
    artifacts["curve_plot"] = str(out / "curve.png")
    artifacts["episode_plot"] = str(out / "episode_first.png")
    save_manifest(
        out / "manifest.yaml",
        cfg,
        verb,
        artifacts,
        result={
            "episodes": summary.n_episodes,
            "mean_found": summary.found_stats[0],
            "mean_path": summary.path_stats[0],
            "done_reasons": dict(sorted(summary.done_reasons.items())),
        },
    )
    fm, fs = summary.found_stats
    pm, ps = summary.path_stats
    print(f"{summary.n_episodes} episodes: found {fm:.3f}+-{fs:.3f}, path {pm:.1f}+-{ps:.1f}")
    for c in summary.checkpoints:
        m, s = summary.found_at(c)
        print(f"  found at step {c}: {m:.3f}+-{s:.3f}")
    print(f"outputs in {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .neuralnet import QNetwork, load_params
    from .trainer import GreedyQPolicy

    cfg = _load_experiment(args)
    if args.policy == "random":
        from .evaluation import RandomWalkPolicy
        from .rng import STREAM_POLICY, RngStream

        policy = RandomWalkPolicy(
            RngStream(cfg.seed, STREAM_POLICY), n_actions=cfg.env_config().n_actions
        )
    else:
        if not args.checkpoint:
            from .config import ConfigError

            raise ConfigError("evaluate --policy greedy needs --checkpoint")
        spec = cfg.network_spec()
        params = load_params(args.checkpoint, spec)
        policy = GreedyQPolicy(QNetwork(spec), params)
    return _run_evaluation(args, cfg, policy, "evaluate", record_q=cfg.eval.record_q)


def cmd_baseline(args) -> int:
    from .baseline import PlanPolicy
    from .environment import StoppingCriterion

    cfg = _load_experiment(args)
    # the coverage plan always flies its whole route; only the battery can cut it
    cfg.stopping = StoppingCriterion(kind="none")
    return _run_evaluation(args, cfg, PlanPolicy(), "baseline")


def cmd_compare(args) -> int:
    from .config import save_manifest
    from .evaluation import compare, load_eval_outputs

    cfg = _load_experiment(args)
    out = _out_dir(args, "compare")
    report = compare(
        load_eval_outputs(args.dir_a),
        load_eval_outputs(args.dir_b),
        alpha=args.alpha,
        label_a=args.label_a,
        label_b=args.label_b,
    )
    print(report.to_text())
    (out / "compare.tsv").write_text(report.to_tsv())
    (out / "compare.txt").write_text(report.to_text() + "\n")
    save_manifest(
        out / "manifest.yaml",
        cfg,
        "compare",
        {"a": str(args.dir_a), "b": str(args.dir_b), "table": str(out / "compare.tsv")},
        result={"alpha": args.alpha},
    )
    return 0


def cmd_render(args) -> int:
    from .evaluation import EpisodeLog
    from .fieldsim import load_field
    from .render import render_episode, render_field

    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for name in args.inputs:
        src = Path(name)
        with open(src) as fh:
            first = fh.readline()
        dst = (out / src.name if out else src).with_suffix(".png")
        if first.startswith("# weedscout-episode"):
            render_episode(EpisodeLog.load(src), dst)
        elif first.startswith("# weedscout-field"):
            render_field(load_field(src), dst)
        else:
            print(f"error: {src}: not an episode log or field file", file=sys.stderr)
            return 2
        print(f"wrote {dst}")
    return 0


def cmd_generate_field(args) -> int:
    from .config import save_manifest
    from .fieldsim import generate_field, generate_prior_map, save_field
    from .render import render_field
    from .rng import STREAM_FIELD, STREAM_PRIOR, RngStream

    cfg = _load_experiment(args)
    out = _out_dir(args, "fields")
    artifacts = {}
    for i in range(args.count):
        field = generate_field(cfg.field, RngStream(cfg.seed, STREAM_FIELD, (i,)))
        prior = None
        if args.with_prior:
            prior = generate_prior_map(field, cfg.resolved_prior(), RngStream(cfg.seed, STREAM_PRIOR, (i,)))
        txt = out / f"field_{i:04d}.txt"
        png = out / f"field_{i:04d}.png"
        save_field(txt, field)
        render_field(field, png, prior=prior)
        artifacts[f"field_{i:04d}"] = str(txt)
        print(f"wrote {txt} ({field.n_weeds} weeds)")
    save_manifest(out / "manifest.yaml", cfg, "generate-field", artifacts, result={"count": args.count})
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
