"""Three customized video rewards behind a pluggable scorer interface.

The default scorers are deterministic analytic stand-ins for the heavy
perception models a production system would use: identity consistency via
identity-subspace cosines, dynamic degree via consecutive-frame delta
norms, and prompt following via motion-direction alignment.  Raw scores
are mapped repository-wide onto the 1..10 scale by per-channel min-max
normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .world import PromptSpec, World, _cosine

NEUTRAL_REWARD = 5.5  # midpoint used when a channel is constant across the repo

CHANNELS = ("id", "dy", "sem")


@dataclass(frozen=True)
class RawScores:
    """Pre-normalization score triple for one video."""

    id_raw: float
    dy_raw: float
    sem_raw: float

    def __post_init__(self):
        for name, value in (("id_raw", self.id_raw), ("dy_raw", self.dy_raw), ("sem_raw", self.sem_raw)):
            if math.isnan(value):
                raise DataError(f"{name} is NaN")
        if not -1.0 <= self.id_raw <= 1.0:
            raise ValueError(f"id_raw {self.id_raw} outside [-1, 1]")
        if self.dy_raw < 0.0:
            raise ValueError(f"dy_raw {self.dy_raw} must be >= 0")
        if not -1.0 <= self.sem_raw <= 1.0:
            raise ValueError(f"sem_raw {self.sem_raw} outside [-1, 1]")


@dataclass(frozen=True)
class RewardVector:
    """Normalized reward triple, every component in [1, 10]."""

    r_id: float
    r_dy: float
    r_sem: float

    def __post_init__(self):
        for name, value in (("r_id", self.r_id), ("r_dy", self.r_dy), ("r_sem", self.r_sem)):
            if math.isnan(value) or not 1.0 <= value <= 10.0:
                raise ValueError(f"{name} = {value} outside [1, 10]")

    def channel(self, name: str) -> float:
        return {"id": self.r_id, "dy": self.r_dy, "sem": self.r_sem}[name]


IdentityScorer = Callable[[np.ndarray], float]  # reference context bound at construction
DynamicScorer = Callable[[np.ndarray], float]
SemanticScorer = Callable[[np.ndarray, PromptSpec], float]


@dataclass(frozen=True)
class ScorerSet:
    """Pluggable scoring interface; each member is deterministic per input."""

    identity: IdentityScorer
    dynamic: DynamicScorer
    semantic: SemanticScorer


def score_identity(video: np.ndarray, references: Sequence[np.ndarray], world: World) -> float:
    """Mean per-frame cosine between frame and mean reference identity projections."""
    if len(references) == 0:
        raise ValueError("references must be non-empty")
    if video.shape[0] < 1:
        raise ValueError("video must have at least one frame")
    ref_coords = np.stack([np.asarray(r, dtype=float) @ world.identity_basis for r in references])
    mean_ref = ref_coords.mean(axis=0)
    frame_coords = video @ world.identity_basis
    return float(np.mean([_cosine(row, mean_ref) for row in frame_coords]))


def score_dynamic(video: np.ndarray) -> float:
    """Mean L2 norm of consecutive-frame deltas; 0 for single-frame videos."""
    if video.shape[0] < 1:
        raise ValueError("video must have at least one frame")
    if video.shape[0] == 1:
        return 0.0
    return float(np.mean(np.linalg.norm(np.diff(video, axis=0), axis=1)))


def score_semantic(video: np.ndarray, prompt: PromptSpec, world: World) -> float:
    """Cosine between the mean frame delta and the prompt's motion direction."""
    if video.shape[0] < 1:
        raise ValueError("video must have at least one frame")
    if video.shape[0] == 1:
        return 0.0
    mean_delta = np.diff(video, axis=0).mean(axis=0)
    return _cosine(mean_delta, world.motion_basis @ prompt.target_direction)


def default_scorers(world: World, references: Sequence[np.ndarray]) -> ScorerSet:
    """Analytic scorer set bound to a world and a fixed reference set."""
    return ScorerSet(
        identity=lambda video, refs=tuple(references): score_identity(video, refs, world),
        dynamic=score_dynamic,
        semantic=lambda video, prompt: score_semantic(video, prompt, world),
    )


def _normalize_channel(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(values.shape, NEUTRAL_REWARD)
    return np.clip(1.0 + 9.0 * (values - lo) / (hi - lo), 1.0, 10.0)


def normalize_repository(raw: Mapping[str, RawScores]) -> dict[str, RewardVector]:
    """Per-channel min-max map of raw scores onto [1, 10] across the repository.

    A channel that is constant over all videos maps to the 5.5 neutral
    value for every video.  Output iteration order follows the input.
    """
    if not raw:
        raise ValueError("raw score map must be non-empty")
    ids = list(raw.keys())
    table = np.array([[raw[i].id_raw, raw[i].dy_raw, raw[i].sem_raw] for i in ids])
    if np.isnan(table).any():
        raise DataError("NaN raw score in repository")
    cols = [_normalize_channel(table[:, c]) for c in range(3)]
    return {
        vid: RewardVector(r_id=float(cols[0][k]), r_dy=float(cols[1][k]), r_sem=float(cols[2][k]))
        for k, vid in enumerate(ids)
    }


def format_sig(x: float) -> str:
    """Format a float with 9 significant digits and a '.' decimal separator."""
    return f"{x:.9g}"


SCORE_COLUMNS = ("video_id", "source", "id_raw", "dy_raw", "sem_raw", "r_id", "r_dy", "r_sem")


def write_score_table(
    path,
    rows: Sequence[tuple[str, str, RawScores, RewardVector]],
) -> None:
    """Write the per-video score table as CSV with a fixed column order."""
    lines = [",".join(SCORE_COLUMNS)]
    for video_id, source, raw, rv in rows:
        lines.append(
            ",".join(
                [
                    video_id,
                    source,
                    format_sig(raw.id_raw),
                    format_sig(raw.dy_raw),
                    format_sig(raw.sem_raw),
                    format_sig(rv.r_id),
                    format_sig(rv.r_dy),
                    format_sig(rv.r_sem),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_score_table(path) -> dict[str, tuple[str, RawScores, RewardVector]]:
    """Read a score table back into per-video (source, raw, reward) entries."""
    from .errors import ParseError

    out: dict[str, tuple[str, RawScores, RewardVector]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split(",") != list(SCORE_COLUMNS):
        raise ParseError(f"bad score table header in {path}", line=1)
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(SCORE_COLUMNS):
            raise ParseError(f"expected {len(SCORE_COLUMNS)} columns, got {len(parts)}", line=n)
        video_id, source = parts[0], parts[1]
        try:
            vals = [float(p) for p in parts[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=n) from exc
        if video_id in out:
            raise DataError(f"duplicate video id {video_id!r} in score table")
        out[video_id] = (
            source,
            RawScores(id_raw=vals[0], dy_raw=vals[1], sem_raw=vals[2]),
            RewardVector(r_id=vals[3], r_dy=vals[4], r_sem=vals[5]),
        )
    return out
