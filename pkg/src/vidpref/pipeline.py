"""End-to-end pipeline orchestration.

Wires the stages together: build the synthetic world and its identity,
pretrain a base model on a generic dynamic corpus, fine-tune it on the
inflated references, sample the repository, score and normalize, select
preference pairs, and run preference optimization.  Every stage draws
from a sub-seed derived from one master seed, so a pipeline run is fully
reproducible and its artifacts are byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import config as cfgmod
from .diffusion import (
    Conditioning,
    DenoiserParams,
    NoiseSchedule,
    make_schedule,
    sample_video,
    save_checkpoint,
    train_initial,
)
from .errors import ConfigurationError, ParseError
from .hpo import TrainTrace, save_trace, train_hpo
from .repository import Repository, build_repository, save_repository
from .rewards import (
    NEUTRAL_REWARD,
    RawScores,
    RewardVector,
    ScorerSet,
    default_scorers,
    normalize_repository,
    write_score_table,
)
from .selection import (
    PreferencePair,
    merge_pairs,
    save_pairs,
    select_dynamic_pairs,
    select_id_pairs,
)
from .world import (
    IdentitySpec,
    MotionSpec,
    PromptSpec,
    World,
    WorldConfig,
    inflate_reference,
    make_world,
    render_video,
    unit_vector,
)

WORLD_FORMAT = "magicid-world/1"

# stage indexes for sub-seed derivation
_S_WORLD, _S_IDENTITY, _S_REFS, _S_PROMPTS, _S_MODEL, _S_CORPUS = 0, 1, 2, 3, 4, 5
_S_PRETRAIN, _S_INIT, _S_REPO, _S_HPO, _S_BASELINE, _S_EVAL = 6, 7, 8, 9, 10, 11

# corpus motion amplitudes span this range (log scale); the amplitude is a
# deterministic function of the prompt direction so the conditioning alone
# determines how dynamic a prompt's videos are
CORPUS_AMPLITUDE_RANGE = (0.5, 12.0)


def corpus_amplitude(direction: np.ndarray) -> float:
    """Motion amplitude requested by a prompt, inferred from its direction."""
    lo, hi = CORPUS_AMPLITUDE_RANGE
    frac = (float(direction[0]) + 1.0) / 2.0
    return float(np.exp(np.log(lo) + frac * (np.log(hi) - np.log(lo))))


@dataclass(frozen=True)
class AblationSpec:
    """Which pair stages and reward channels participate in a run."""

    id_pairs: bool = True
    dynamic_pairs: bool = True
    id_reward: bool = True
    dynamic_reward: bool = True
    semantic_reward: bool = True

    def __post_init__(self):
        if not any(
            (self.id_pairs, self.dynamic_pairs, self.id_reward, self.dynamic_reward, self.semantic_reward)
        ):
            raise ConfigurationError("ablation spec must keep at least one toggle on")

    @property
    def active_channels(self) -> tuple[str, ...]:
        channels = []
        if self.id_reward:
            channels.append("id")
        if self.dynamic_reward:
            channels.append("dy")
        if self.semantic_reward:
            channels.append("sem")
        return tuple(channels)

    @property
    def disabled_channels(self) -> tuple[str, ...]:
        return tuple(c for c in ("id", "dy", "sem") if c not in self.active_channels)


@dataclass
class Setup:
    """Frozen per-run context: world, identity, references, prompts, schedule."""

    world: World
    identity: IdentitySpec
    references: list[np.ndarray]
    prompts: list[PromptSpec]
    frames: int
    schedule: NoiseSchedule
    seed: int

    @property
    def frame_dim(self) -> int:
        return self.world.config.frame_dim


def build_setup(cfg: Mapping[str, Any], seed: int) -> Setup:
    """Deterministically create the world, user identity, references, prompts."""
    wcfg = cfgmod.world_config(cfg, cfgmod.derive_seed(seed, _S_WORLD))
    world = make_world(wcfg)
    w = cfg["world"]
    id_rng = np.random.default_rng(cfgmod.derive_seed(seed, _S_IDENTITY))
    identity = IdentitySpec(embedding=unit_vector(id_rng, wcfg.identity_dim))
    ref_seed = cfgmod.derive_seed(seed, _S_REFS)
    still = MotionSpec(direction=np.eye(wcfg.motion_dim)[0], amplitude=0.0)
    references = [
        render_video(world, identity, still, frames=1, rng_seed=ref_seed + k)[0]
        for k in range(w["reference_count"])
    ]
    prompt_rng = np.random.default_rng(cfgmod.derive_seed(seed, _S_PROMPTS))
    prompts = [
        PromptSpec(
            prompt_id=f"prompt-{k:02d}",
            target_direction=unit_vector(prompt_rng, wcfg.motion_dim),
            text=f"motion pattern {k:02d}",
        )
        for k in range(w["prompt_count"])
    ]
    d = cfg["diffusion"]
    schedule = make_schedule(d["timesteps"], d["beta_min"], d["beta_max"])
    return Setup(
        world=world,
        identity=identity,
        references=references,
        prompts=prompts,
        frames=w["frames"],
        schedule=schedule,
        seed=seed,
    )


def init_model(setup: Setup, cfg: Mapping[str, Any], seed: int) -> DenoiserParams:
    return DenoiserParams.init(
        video_dim=setup.frames * setup.frame_dim,
        cond_dim=setup.frame_dim,
        hidden=cfg["diffusion"]["hidden_dim"],
        rng_seed=cfgmod.derive_seed(seed, _S_MODEL),
    )


def pretrain_corpus(setup: Setup, cfg: Mapping[str, Any], seed: int):
    """Generic dynamic corpus: random identities, prompt-aligned motion ramps.

    Every video of a prompt moves along that prompt's direction with that
    prompt's amplitude, so the base model's samples span near-static to
    strongly dynamic depending on the prompt; pair selection relies on
    this spread.
    """
    rng = np.random.default_rng(cfgmod.derive_seed(seed, _S_CORPUS))
    videos, conds = [], []
    for k in range(cfg["diffusion"]["pretrain_corpus"]):
        prompt = setup.prompts[k % len(setup.prompts)]
        who = IdentitySpec(embedding=unit_vector(rng, setup.world.config.identity_dim))
        video = render_video(
            setup.world,
            who,
            MotionSpec(
                direction=prompt.target_direction,
                amplitude=corpus_amplitude(prompt.target_direction),
            ),
            frames=setup.frames,
            rng_seed=int(rng.integers(0, 2**31 - 1)),
        )
        videos.append(video.reshape(-1))
        conds.append(Conditioning.for_direction(prompt.target_direction, setup.frame_dim))
    return videos, conds


def pretrain_base(setup: Setup, cfg: Mapping[str, Any], seed: int) -> DenoiserParams:
    """Train the initial model so its samples carry dynamics and prompt following."""
    d = cfg["diffusion"]
    params = init_model(setup, cfg, seed)
    videos, conds = pretrain_corpus(setup, cfg, seed)
    return train_initial(
        params,
        videos,
        steps=d["pretrain_steps"],
        lr=d["lr"],
        weight_decay=d["weight_decay"],
        rng_seed=cfgmod.derive_seed(seed, _S_PRETRAIN),
        conds=conds,
        schedule=setup.schedule,
        cond_dropout=d["cond_dropout"],
    )


def finetune_on_references(
    base: DenoiserParams,
    setup: Setup,
    cfg: Mapping[str, Any],
    seed: int,
    steps: int | None = None,
    stream: int = _S_INIT,
    checkpoint_hook=None,
) -> DenoiserParams:
    """Self-reconstruction stage: denoising regression on inflated references.

    When an adapter rank is configured and the base has none yet, low-rank
    factors are attached here so customization (and any later preference
    optimization) trains only the adapter while the pretrained weights stay
    frozen.
    """
    d = cfg["diffusion"]
    if d["adapter_rank"] > 0 and base.adapter_rank == 0:
        base = base.with_adapter(d["adapter_rank"], cfgmod.derive_seed(seed, _S_MODEL) + 1)
    videos = [inflate_reference(r, setup.frames).reshape(-1) for r in setup.references]
    return train_initial(
        base,
        videos,
        steps=d["init_steps"] if steps is None else steps,
        lr=d["lr"],
        weight_decay=d["weight_decay"],
        rng_seed=cfgmod.derive_seed(seed, stream),
        schedule=setup.schedule,
        cond_dropout=d["cond_dropout"],
        checkpoint_hook=checkpoint_hook,
    )


def sample_repository(
    setup: Setup,
    cfg: Mapping[str, Any],
    ft_model: DenoiserParams,
    base_model: DenoiserParams,
    seed: int,
) -> Repository:
    d = cfg["diffusion"]
    return build_repository(
        ft_model=ft_model,
        init_model=base_model,
        references=setup.references,
        prompts=setup.prompts,
        counts=(cfg["repo"]["n_finetuned"], cfg["repo"]["n_initial"]),
        frames=setup.frames,
        schedule=setup.schedule,
        sampler_steps=d["sampler_steps"],
        guidance_scale=d["guidance_scale"],
        rng_seed=cfgmod.derive_seed(seed, _S_REPO),
        world_config=setup.world.config,
    )


def score_repository(
    repo: Repository,
    scorers: ScorerSet,
    repo_prompts: Mapping[str, PromptSpec] | None = None,
) -> dict[str, RawScores]:
    """Raw-score every record; records without a prompt get semantic 0."""
    prompts = repo_prompts or {p.prompt_id: p for p in repo.manifest.prompts}
    raw: dict[str, RawScores] = {}
    for rec in repo.records:
        sem = 0.0
        if rec.prompt_id is not None:
            sem = scorers.semantic(rec.frames, prompts[rec.prompt_id])
        raw[rec.id] = RawScores(
            id_raw=scorers.identity(rec.frames),
            dy_raw=scorers.dynamic(rec.frames),
            sem_raw=sem,
        )
    return raw


def apply_channel_ablation(
    rewards: dict[str, RewardVector], disabled: tuple[str, ...]
) -> dict[str, RewardVector]:
    """Force disabled channels to the neutral value; identity when none disabled."""
    if not disabled:
        return rewards
    out = {}
    for vid, rv in rewards.items():
        vals = {"r_id": rv.r_id, "r_dy": rv.r_dy, "r_sem": rv.r_sem}
        for c in disabled:
            vals[{"id": "r_id", "dy": "r_dy", "sem": "r_sem"}[c]] = NEUTRAL_REWARD
        out[vid] = RewardVector(**vals)
    return out


def select_pairs(
    repo: Repository,
    selection_cfg,
    ablation: AblationSpec,
) -> tuple[list[PreferencePair], list[PreferencePair], list[PreferencePair]]:
    """Run both selection stages honoring the ablation toggles."""
    from .repository import Source

    id_pairs: list[PreferencePair] = []
    dyn_pairs: list[PreferencePair] = []
    if ablation.id_pairs:
        id_pairs = select_id_pairs(
            repo.subset((Source.STATIC_REF, Source.INITIAL)), selection_cfg
        )
    if ablation.dynamic_pairs:
        dyn_pairs = select_dynamic_pairs(
            repo.subset((Source.INITIAL, Source.FINE_TUNED)),
            selection_cfg,
            channels=ablation.active_channels,
        )
    return id_pairs, dyn_pairs, merge_pairs(id_pairs, dyn_pairs)


def evaluate_model(
    params: DenoiserParams,
    setup: Setup,
    cfg: Mapping[str, Any],
    seed: int,
    n_samples: int | None = None,
) -> dict[str, float]:
    """Sample the model over the prompt set and report raw-scale score means."""
    n = cfg["eval"]["n_samples"] if n_samples is None else n_samples
    if n < 1:
        raise ValueError("n_samples must be >= 1")
    d = cfg["diffusion"]
    scorers = default_scorers(setup.world, setup.references)
    base = cfgmod.derive_seed(seed, _S_EVAL)
    ids, dys, sems = [], [], []
    for k in range(n):
        prompt = setup.prompts[k % len(setup.prompts)]
        cond = Conditioning.for_direction(prompt.target_direction, params.cond_dim)
        flat = sample_video(
            params, cond, d["sampler_steps"], d["guidance_scale"], base + k, setup.schedule
        )
        video = flat.reshape(setup.frames, setup.frame_dim)
        ids.append(scorers.identity(video))
        dys.append(scorers.dynamic(video))
        sems.append(scorers.semantic(video, prompt))
    return {
        "identity": float(np.mean(ids)),
        "dynamic": float(np.mean(dys)),
        "semantic": float(np.mean(sems)),
    }


@dataclass
class PipelineResult:
    setup: Setup
    base_model: DenoiserParams
    theta_init: DenoiserParams
    repo: Repository
    raw_scores: dict[str, RawScores]
    rewards: dict[str, RewardVector]
    id_pairs: list[PreferencePair]
    dynamic_pairs: list[PreferencePair]
    pairs: list[PreferencePair]
    theta_final: DenoiserParams
    trace: TrainTrace
    hpo_checkpoints: list[Path] = field(default_factory=list)
    paths: dict[str, Path] = field(default_factory=dict)
    final_metrics: dict[str, float] = field(default_factory=dict)


def run_pipeline(
    cfg: Mapping[str, Any],
    seed: int,
    outdir,
    ablation: AblationSpec = AblationSpec(),
    evaluate: bool = True,
) -> PipelineResult:
    """Execute the full pipeline, writing every artifact under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = outdir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    setup = build_setup(cfg, seed)
    paths = {"world": outdir / "world.json"}
    save_world_bundle(setup, paths["world"])

    base = pretrain_base(setup, cfg, seed)
    paths["base"] = outdir / "base.ckpt"
    save_checkpoint(base, paths["base"], step=0)

    theta_init = finetune_on_references(base, setup, cfg, seed)
    paths["init"] = outdir / "init.ckpt"
    save_checkpoint(theta_init, paths["init"], step=cfg["diffusion"]["init_steps"])

    repo = sample_repository(setup, cfg, theta_init, base, seed)
    paths["repo"] = outdir / "repo.jsonl"
    save_repository(repo, paths["repo"])

    scorers = default_scorers(setup.world, setup.references)
    raw = score_repository(repo, scorers)
    rewards = apply_channel_ablation(normalize_repository(raw), ablation.disabled_channels)
    for rec in repo.records:
        rec.rewards = rewards[rec.id]
    paths["scores"] = outdir / "scores.csv"
    write_score_table(
        paths["scores"],
        [(rec.id, rec.source.value, raw[rec.id], rewards[rec.id]) for rec in repo.records],
    )

    id_pairs, dyn_pairs, pairs = select_pairs(repo, cfgmod.selection_config(cfg), ablation)
    paths["pairs"] = outdir / "pairs.jsonl"
    save_pairs(pairs, paths["pairs"])

    hpo_cfg = cfgmod.hpo_config(cfg, cfgmod.derive_seed(seed, _S_HPO))
    every = cfg["eval"]["checkpoint_every"]
    ckpts: list[Path] = []

    def _hook(step: int, params: DenoiserParams) -> None:
        if every > 0 and step % every == 0:
            p = ckpt_dir / f"hpo-{step:06d}.ckpt"
            save_checkpoint(params, p, step=step)
            ckpts.append(p)

    step0 = ckpt_dir / "hpo-000000.ckpt"
    save_checkpoint(theta_init, step0, step=0)
    ckpts.append(step0)
    theta_final, trace = train_hpo(theta_init, pairs, repo, hpo_cfg, setup.schedule, checkpoint_hook=_hook)
    paths["final"] = outdir / "hpo-final.ckpt"
    save_checkpoint(theta_final, paths["final"], step=hpo_cfg.steps)
    paths["trace"] = outdir / "trace.csv"
    save_trace(trace, paths["trace"])

    metrics = evaluate_model(theta_final, setup, cfg, seed) if evaluate else {}
    return PipelineResult(
        setup=setup,
        base_model=base,
        theta_init=theta_init,
        repo=repo,
        raw_scores=raw,
        rewards=rewards,
        id_pairs=id_pairs,
        dynamic_pairs=dyn_pairs,
        pairs=pairs,
        theta_final=theta_final,
        trace=trace,
        hpo_checkpoints=ckpts,
        paths=paths,
        final_metrics=metrics,
    )


def run_selfrecon_baseline(
    setup: Setup,
    theta_init: DenoiserParams,
    cfg: Mapping[str, Any],
    seed: int,
    steps: int,
    ckpt_dir,
) -> list[Path]:
    """Continue self-reconstruction training, checkpointing at the eval cadence.

    This is the traditional-customization baseline whose dynamics decay as
    training proceeds; checkpoints (including step 0) land in ``ckpt_dir``.
    """
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    every = cfg["eval"]["checkpoint_every"]
    out: list[Path] = []
    step0 = ckpt_dir / "baseline-000000.ckpt"
    save_checkpoint(theta_init, step0, step=0)
    out.append(step0)

    def _hook(step: int, params: DenoiserParams) -> None:
        if every > 0 and step % every == 0:
            p = ckpt_dir / f"baseline-{step:06d}.ckpt"
            save_checkpoint(params, p, step=step)
            out.append(p)

    finetune_on_references(
        theta_init, setup, cfg, seed, steps=steps, stream=_S_BASELINE, checkpoint_hook=_hook
    )
    return out


# --- world bundle persistence ----------------------------------------------


def save_world_bundle(setup: Setup, path) -> None:
    payload = {
        "format": WORLD_FORMAT,
        "config": {
            "frame_dim": setup.world.config.frame_dim,
            "identity_dim": setup.world.config.identity_dim,
            "motion_dim": setup.world.config.motion_dim,
            "noise_sigma": setup.world.config.noise_sigma,
            "seed": setup.world.config.seed,
        },
        "frames": setup.frames,
        "seed": setup.seed,
        "identity_basis": [[float(v) for v in row] for row in setup.world.identity_basis],
        "motion_basis": [[float(v) for v in row] for row in setup.world.motion_basis],
        "identity": [float(v) for v in setup.identity.embedding],
        "references": [[float(v) for v in r] for r in setup.references],
        "prompts": [
            {
                "prompt_id": p.prompt_id,
                "target_direction": [float(v) for v in p.target_direction],
                "text": p.text,
            }
            for p in setup.prompts
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_world_bundle(path, cfg: Mapping[str, Any]) -> Setup:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid world bundle {path}: {exc}") from exc
    if payload.get("format") != WORLD_FORMAT:
        raise ParseError(f"unsupported world format {payload.get('format')!r}")
    c = payload["config"]
    world = World(
        identity_basis=np.array(payload["identity_basis"], dtype=float),
        motion_basis=np.array(payload["motion_basis"], dtype=float),
        config=WorldConfig(
            frame_dim=c["frame_dim"],
            identity_dim=c["identity_dim"],
            motion_dim=c["motion_dim"],
            noise_sigma=c["noise_sigma"],
            seed=c["seed"],
        ),
    )
    d = cfg["diffusion"]
    return Setup(
        world=world,
        identity=IdentitySpec(embedding=np.array(payload["identity"], dtype=float)),
        references=[np.array(r, dtype=float) for r in payload["references"]],
        prompts=[
            PromptSpec(
                prompt_id=p["prompt_id"],
                target_direction=np.array(p["target_direction"], dtype=float),
                text=p.get("text", ""),
            )
            for p in payload["prompts"]
        ],
        frames=payload["frames"],
        schedule=make_schedule(d["timesteps"], d["beta_min"], d["beta_max"]),
        seed=payload["seed"],
    )
