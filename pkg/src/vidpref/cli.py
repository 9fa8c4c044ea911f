"""Command-line interface.

Every subcommand reads the YAML config (defaults apply when omitted) plus
flag overrides, and exits 0 on success, 1 on a runtime error with a
message on stderr, and 2 on usage errors.  Stage sub-seeds derive from one
master seed, so chaining the subcommands reproduces the in-process
pipeline bit-for-bit.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from . import evalreport, pipeline
from .diffusion import load_checkpoint, save_checkpoint, train_initial
from .errors import VidprefError
from .hpo import save_trace, train_hpo
from .repository import load_repository, save_repository
from .rewards import default_scorers, normalize_repository, read_score_table, write_score_table
from .selection import load_pairs, save_pairs


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file; defaults apply when omitted")
    p.add_argument("--seed", type=int, help="master seed override")


def _resolve(args, bundle_seed: int | None = None) -> tuple[dict, int]:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        seed = args.seed
    elif bundle_seed is not None:
        seed = bundle_seed
    else:
        seed = cfg["seed"]
    return cfg, seed


def _load_setup(args):
    cfg = cfgmod.load_config(args.config)
    setup = pipeline.load_world_bundle(args.world, cfg)
    seed = args.seed if args.seed is not None else setup.seed
    return cfg, setup, seed


def cmd_gen_world(args) -> int:
    cfg, seed = _resolve(args)
    setup = pipeline.build_setup(cfg, seed)
    pipeline.save_world_bundle(setup, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train_init(args) -> int:
    cfg, setup, seed = _load_setup(args)
    d = cfg["diffusion"]
    ckpts: list[str] = []

    hook = None
    if args.ckpt_dir:
        ckpt_dir = Path(args.ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        every = cfg["eval"]["checkpoint_every"]

        def hook(step, params, _dir=ckpt_dir, _every=every):
            if _every > 0 and step % _every == 0:
                p = _dir / f"{args.stage}-{step:06d}.ckpt"
                save_checkpoint(params, p, step=step)
                ckpts.append(str(p))

    if args.stage == "pretrain":
        params = (
            load_checkpoint(args.init_from)[0]
            if args.init_from
            else pipeline.init_model(setup, cfg, seed)
        )
        videos, conds = pipeline.pretrain_corpus(setup, cfg, seed)
        steps = args.steps if args.steps is not None else d["pretrain_steps"]
        trained = train_initial(
            params,
            videos,
            steps=steps,
            lr=d["lr"],
            weight_decay=d["weight_decay"],
            rng_seed=cfgmod.derive_seed(seed, pipeline._S_PRETRAIN),
            conds=conds,
            schedule=setup.schedule,
            cond_dropout=d["cond_dropout"],
            checkpoint_hook=hook,
        )
    else:
        if not args.init_from:
            raise VidprefError("--from checkpoint is required for --stage reference")
        params, _ = load_checkpoint(args.init_from)
        if args.ckpt_dir:
            step0 = Path(args.ckpt_dir) / "reference-000000.ckpt"
            save_checkpoint(params, step0, step=0)
            ckpts.insert(0, str(step0))
        trained = pipeline.finetune_on_references(
            params, setup, cfg, seed, steps=args.steps, checkpoint_hook=hook
        )
    steps_done = args.steps
    if steps_done is None:
        steps_done = d["pretrain_steps"] if args.stage == "pretrain" else d["init_steps"]
    save_checkpoint(trained, args.out, step=steps_done)
    print(f"wrote {args.out}" + (f" and {len(ckpts)} cadence checkpoints" if ckpts else ""))
    return 0


def cmd_build_repo(args) -> int:
    cfg, setup, seed = _load_setup(args)
    ft_model, _ = load_checkpoint(args.ft)
    init_model, _ = load_checkpoint(args.init)
    repo = pipeline.sample_repository(setup, cfg, ft_model, init_model, seed)
    save_repository(repo, args.out)
    print(f"wrote {args.out} ({len(repo.records)} records)")
    return 0


def cmd_score(args) -> int:
    repo = load_repository(args.repo)
    if args.world:
        cfg = cfgmod.load_config(args.config)
        setup = pipeline.load_world_bundle(args.world, cfg)
        world, references = setup.world, setup.references
    else:
        # the manifest carries the seeded world config, and the inflated
        # static records carry the reference frames
        from .repository import Source
        from .world import make_world

        world = make_world(repo.manifest.world_config)
        references = [rec.frames[0] for rec in repo.subset((Source.STATIC_REF,))]
        if not references:
            raise VidprefError(
                "repository has no static reference records; pass --world instead"
            )
    scorers = default_scorers(world, references)
    raw = pipeline.score_repository(repo, scorers)
    rewards = normalize_repository(raw)
    write_score_table(
        args.out,
        [(rec.id, rec.source.value, raw[rec.id], rewards[rec.id]) for rec in repo.records],
    )
    print(f"wrote {args.out}")
    return 0


def cmd_select_pairs(args) -> int:
    cfg = cfgmod.load_config(args.config)
    repo = load_repository(args.repo)
    table = read_score_table(args.scores)
    for rec in repo.records:
        if rec.id not in table:
            raise VidprefError(f"score table is missing record {rec.id!r}")
        rec.rewards = table[rec.id][2]
    _, _, pairs = pipeline.select_pairs(
        repo, cfgmod.selection_config(cfg), pipeline.AblationSpec()
    )
    save_pairs(pairs, args.out)
    print(f"wrote {args.out} ({len(pairs)} pairs)")
    return 0


def cmd_train_hpo(args) -> int:
    cfg, setup, seed = _load_setup(args)
    theta_init, _ = load_checkpoint(args.init)
    pairs = load_pairs(args.pairs)
    repo = load_repository(args.repo)
    hpo_cfg = cfgmod.hpo_config(cfg, cfgmod.derive_seed(seed, pipeline._S_HPO))

    hook = None
    if args.ckpt_dir:
        ckpt_dir = Path(args.ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        every = cfg["eval"]["checkpoint_every"]
        save_checkpoint(theta_init, ckpt_dir / "hpo-000000.ckpt", step=0)

        def hook(step, params, _dir=ckpt_dir, _every=every):
            if _every > 0 and step % _every == 0:
                save_checkpoint(params, _dir / f"hpo-{step:06d}.ckpt", step=step)

    theta, trace = train_hpo(theta_init, pairs, repo, hpo_cfg, setup.schedule, checkpoint_hook=hook)
    save_checkpoint(theta, args.out, step=hpo_cfg.steps)
    if args.trace:
        save_trace(trace, args.trace)
    print(f"wrote {args.out}")
    return 0


def cmd_eval_identity(args) -> int:
    cfg, setup, seed = _load_setup(args)
    model, _ = load_checkpoint(args.model)
    eval_seed = cfgmod.derive_seed(seed, pipeline._S_EVAL)
    run = evalreport.EvalRun(
        checkpoint=str(args.model),
        world_ref=str(args.world),
        rows=evalreport.eval_identity_vs_length(
            model, cfg["eval"]["lengths"], setup, cfg,
            n_samples=cfg["eval"]["n_samples"], seed=eval_seed,
        ),
        seed=eval_seed,
    )
    evalreport.emit_report(run.rows, args.out, "csv")
    print(f"wrote {args.out}")
    return 0


def cmd_eval_dynamic(args) -> int:
    cfg, setup, seed = _load_setup(args)
    eval_seed = cfgmod.derive_seed(seed, pipeline._S_EVAL)
    run = evalreport.EvalRun(
        checkpoint=";".join(str(c) for c in args.ckpts),
        world_ref=str(args.world),
        rows=evalreport.eval_dynamic_vs_checkpoints(
            args.ckpts, setup.prompts, setup, cfg,
            n_samples=cfg["eval"]["n_samples"], seed=eval_seed,
        ),
        seed=eval_seed,
    )
    evalreport.emit_report(run.rows, args.out, "csv")
    print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg, seed = _resolve(args)
    toggles = {t: False for t in (args.disable or [])}
    spec = pipeline.AblationSpec(**toggles)
    outdir = Path(args.out)
    rows = evalreport.run_ablation(spec, cfg, seed, outdir)
    evalreport.emit_report(rows, outdir / "metrics.csv", "csv")
    evalreport.emit_report(rows, outdir / "metrics.svg", "svg")
    for name, x, value in rows:
        print(f"{name}: {value:.6g}")
    print(f"wrote {outdir / 'metrics.csv'} and {outdir / 'metrics.svg'}")
    return 0


def cmd_report(args) -> int:
    rows = evalreport.read_report_rows(args.rows)
    out = Path(args.out)
    formats = [args.format] if args.format else ["csv", "svg"]
    for fmt in formats:
        path = out if out.suffix == f".{fmt}" else out.with_suffix(f".{fmt}")
        evalreport.emit_report(rows, path, fmt)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidpref",
        description="Toy video preference-optimization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="create the world bundle (bases, identity, references, prompts)")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("train-init", help="denoising-regression training (pretrain or reference stage)")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--stage", choices=["pretrain", "reference"], default="reference")
    p.add_argument("--from", dest="init_from", help="starting checkpoint")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--ckpt-dir", help="write cadence checkpoints here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_init)

    p = sub.add_parser("build-repo", help="sample the base video dataset repository")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--ft", required=True, help="fine-tuned model checkpoint")
    p.add_argument("--init", required=True, help="initial model checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_repo)

    p = sub.add_parser("score", help="score a repository and write the reward table")
    _add_common(p)
    p.add_argument("--world", help="world bundle; omit to reconstruct from the repo manifest")
    p.add_argument("--repo", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select-pairs", help="select preference pairs from a scored repository")
    _add_common(p)
    p.add_argument("--repo", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_pairs)

    p = sub.add_parser("train-hpo", help="preference-optimization training over selected pairs")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--repo", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--init", required=True, help="starting (and frozen reference) checkpoint")
    p.add_argument("--trace", help="write the per-step loss trace here")
    p.add_argument("--ckpt-dir", help="write cadence checkpoints here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_hpo)

    p = sub.add_parser("eval-identity", help="identity score vs video length")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_identity)

    p = sub.add_parser("eval-dynamic", help="dynamic score vs training step over checkpoints")
    _add_common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_dynamic)

    p = sub.add_parser("ablate", help="run the full pipeline with components toggled off")
    _add_common(p)
    p.add_argument(
        "--disable",
        action="append",
        choices=["id_pairs", "dynamic_pairs", "id_reward", "dynamic_reward", "semantic_reward"],
        help="repeatable; component to turn off",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render metric rows as CSV and/or an SVG chart")
    p.add_argument("--rows", required=True, help="metric rows CSV")
    p.add_argument("--format", choices=["csv", "svg"], help="default: emit both")
    p.add_argument("--out", required=True, help="output path or basename")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (VidprefError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
