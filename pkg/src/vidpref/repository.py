"""Base video dataset repository: model samples plus inflated references.

Records come from three sources: videos sampled from the fine-tuned model,
videos sampled from the initial model, and static pseudo-videos inflated
from the user's reference frames.  The on-disk format is line-delimited
JSON with a manifest header line, versioned "magicid-repo/1"; finite
values round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .diffusion import Conditioning, DenoiserParams, NoiseSchedule, sample_video
from .errors import ConfigurationError, DataError, ParseError
from .rewards import RewardVector
from .world import PromptSpec, WorldConfig, inflate_reference

REPO_FORMAT = "magicid-repo/1"


class Source(str, Enum):
    FINE_TUNED = "FineTuned"
    INITIAL = "Initial"
    STATIC_REF = "StaticRef"


@dataclass
class VideoRecord:
    id: str
    source: Source
    prompt_id: str | None
    frames: np.ndarray  # (T, D)
    rewards: RewardVector | None = None

    def validate(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"record {self.id!r}: frames must be a non-empty T x D matrix")
        if self.source is Source.STATIC_REF and not np.all(self.frames == self.frames[0]):
            raise DataError(f"record {self.id!r}: StaticRef frames must be identical")


@dataclass
class RepositoryManifest:
    world_config: WorldConfig
    counts: dict[str, int]
    prompts: list[PromptSpec]
    seed: int


@dataclass
class Repository:
    manifest: RepositoryManifest
    records: list[VideoRecord] = field(default_factory=list)

    def validate(self) -> None:
        seen: set[str] = set()
        counts = {s.value: 0 for s in Source}
        prompt_ids = {p.prompt_id for p in self.manifest.prompts}
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            rec.validate()
            counts[rec.source.value] += 1
            if rec.prompt_id is not None and rec.prompt_id not in prompt_ids:
                raise DataError(f"record {rec.id!r} references unknown prompt {rec.prompt_id!r}")
        if counts != self.manifest.counts:
            raise DataError(
                f"manifest counts {self.manifest.counts} do not match records {counts}"
            )

    def by_id(self, record_id: str) -> VideoRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise DataError(f"unknown record id {record_id!r}")

    def subset(self, sources: tuple[Source, ...]) -> list[VideoRecord]:
        return [r for r in self.records if r.source in sources]

    def prompt(self, prompt_id: str) -> PromptSpec:
        for p in self.manifest.prompts:
            if p.prompt_id == prompt_id:
                return p
        raise DataError(f"unknown prompt id {prompt_id!r}")


def build_repository(
    ft_model: DenoiserParams,
    init_model: DenoiserParams,
    references: list[np.ndarray],
    prompts: list[PromptSpec],
    counts: tuple[int, int],
    frames: int,
    schedule: NoiseSchedule,
    sampler_steps: int,
    guidance_scale: float,
    rng_seed: int,
    world_config: WorldConfig,
) -> Repository:
    """Sample the repository deterministically.

    ``counts`` = (n from the fine-tuned model, n from the initial model);
    prompts cycle round-robin within each source.  Every reference frame is
    inflated into one StaticRef record.  Record k samples with seed
    ``rng_seed + k`` so the result is independent of scheduling.
    """
    n_ft, n_init = counts
    if n_ft < 0 or n_init < 0:
        raise ConfigurationError("sample counts must be >= 0")
    if not references:
        raise ConfigurationError("reference list must be non-empty")
    if (n_ft > 0 or n_init > 0) and not prompts:
        raise ConfigurationError("prompts must be non-empty when sampling videos")
    frame_dim = len(np.asarray(references[0]).reshape(-1))

    def sample_records(model: DenoiserParams, n: int, prefix: str, source: Source, base_index: int):
        recs = []
        for i in range(n):
            prompt = prompts[i % len(prompts)]
            cond = Conditioning.for_direction(prompt.target_direction, model.cond_dim)
            flat = sample_video(
                model, cond, sampler_steps, guidance_scale, rng_seed + base_index + i, schedule
            )
            recs.append(
                VideoRecord(
                    id=f"{prefix}{i:04d}",
                    source=source,
                    prompt_id=prompt.prompt_id,
                    frames=flat.reshape(frames, frame_dim),
                )
            )
        return recs

    records = sample_records(ft_model, n_ft, "ft-", Source.FINE_TUNED, 0)
    records += sample_records(init_model, n_init, "init-", Source.INITIAL, n_ft)
    for j, ref in enumerate(references):
        records.append(
            VideoRecord(
                id=f"ref-{j:04d}",
                source=Source.STATIC_REF,
                prompt_id=None,
                frames=inflate_reference(ref, frames),
            )
        )
    manifest = RepositoryManifest(
        world_config=world_config,
        counts={
            Source.FINE_TUNED.value: n_ft,
            Source.INITIAL.value: n_init,
            Source.STATIC_REF.value: len(references),
        },
        prompts=list(prompts),
        seed=rng_seed,
    )
    repo = Repository(manifest=manifest, records=records)
    repo.validate()
    return repo


# --- persistence ----------------------------------------------------------


def _prompt_to_dict(p: PromptSpec) -> dict:
    return {
        "prompt_id": p.prompt_id,
        "target_direction": [float(v) for v in p.target_direction],
        "text": p.text,
    }


def _prompt_from_dict(d: dict) -> PromptSpec:
    return PromptSpec(
        prompt_id=d["prompt_id"],
        target_direction=np.array(d["target_direction"], dtype=float),
        text=d.get("text", ""),
    )


def _rewards_to_dict(rv: RewardVector | None) -> dict | None:
    if rv is None:
        return None
    return {"r_id": rv.r_id, "r_dy": rv.r_dy, "r_sem": rv.r_sem}


def save_repository(repo: Repository, path) -> None:
    """Write manifest header plus one JSON record per line; rejects NaN frames."""
    repo.validate()
    m = repo.manifest
    header = {
        "format": REPO_FORMAT,
        "world_config": {
            "frame_dim": m.world_config.frame_dim,
            "identity_dim": m.world_config.identity_dim,
            "motion_dim": m.world_config.motion_dim,
            "noise_sigma": m.world_config.noise_sigma,
            "seed": m.world_config.seed,
        },
        "counts": m.counts,
        "prompts": [_prompt_to_dict(p) for p in m.prompts],
        "seed": m.seed,
    }
    lines = [json.dumps(header)]
    for rec in repo.records:
        if not np.all(np.isfinite(rec.frames)):
            raise DataError(f"record {rec.id!r} contains non-finite frame values")
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "source": rec.source.value,
                    "prompt_id": rec.prompt_id,
                    "frames": [[float(v) for v in row] for row in rec.frames],
                    "rewards": _rewards_to_dict(rec.rewards),
                }
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_repository(path) -> Repository:
    """Read a repository file, validating format, ids, and record invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"empty repository file {path}", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad manifest header: {exc}", line=1) from exc
    if header.get("format") != REPO_FORMAT:
        raise ParseError(f"unsupported repository format {header.get('format')!r}", line=1)
    wc = header["world_config"]
    manifest = RepositoryManifest(
        world_config=WorldConfig(
            frame_dim=wc["frame_dim"],
            identity_dim=wc["identity_dim"],
            motion_dim=wc["motion_dim"],
            noise_sigma=wc["noise_sigma"],
            seed=wc["seed"],
        ),
        counts=dict(header["counts"]),
        prompts=[_prompt_from_dict(d) for d in header["prompts"]],
        seed=header["seed"],
    )
    records: list[VideoRecord] = []
    seen: dict[str, int] = {}
    for n, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad record: {exc}", line=n) from exc
        rec_id = d.get("id")
        if not isinstance(rec_id, str):
            raise ParseError("record missing string id", line=n)
        if rec_id in seen:
            raise DataError(
                f"duplicate record id {rec_id!r} on lines {seen[rec_id]} and {n}"
            )
        seen[rec_id] = n
        rv = d.get("rewards")
        records.append(
            VideoRecord(
                id=rec_id,
                source=Source(d["source"]),
                prompt_id=d["prompt_id"],
                frames=np.array(d["frames"], dtype=float),
                rewards=None
                if rv is None
                else RewardVector(r_id=rv["r_id"], r_dy=rv["r_dy"], r_sem=rv["r_sem"]),
            )
        )
    repo = Repository(manifest=manifest, records=records)
    repo.validate()
    return repo
