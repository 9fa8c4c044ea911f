"""Hybrid preference-pair selection over a scored repository.

Stage 1 picks identity-preferred pairs from the static-reference and
initial-model records by thresholding the identity-score gap while
tolerating a bounded dynamic-score deficit.  Stage 2 picks
dynamic-preferred pairs from the model-sampled records via a Pareto-front
partition: candidate pairs cross the non-dominated and dominated sets,
must satisfy strict componentwise dominance, and are ranked by identity
gap with only the top K retained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .errors import ConfigurationError, DataError, ParseError, StateError
from .rewards import CHANNELS, RewardVector

PAIRS_FORMAT = "magicid-pairs/1"


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholds for pair selection on the normalized 1..10 reward scale."""

    theta_id: float = 3.0  # minimum identity-score gap winner - loser
    tau_dy: float = 2.0  # how far the loser may exceed the winner in dynamics
    top_k: int = 100

    def __post_init__(self):
        if self.theta_id <= 0:
            raise ConfigurationError("theta_id must be > 0")
        if self.tau_dy < 0:
            raise ConfigurationError("tau_dy must be >= 0")
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")


class Stage(str, Enum):
    ID_PREFERRED = "IdPreferred"
    DYNAMIC_PREFERRED = "DynamicPreferred"


@dataclass(frozen=True)
class PreferencePair:
    winner_id: str
    loser_id: str
    stage: Stage
    delta_id: float  # r_id(winner) - r_id(loser)

    def __post_init__(self):
        if self.winner_id == self.loser_id:
            raise DataError("preference pair cannot pair a video with itself")

    @property
    def key(self) -> tuple[str, str]:
        return (self.winner_id, self.loser_id)


def dominates(a: RewardVector, b: RewardVector, channels: Sequence[str] = CHANNELS) -> bool:
    """True iff a is strictly greater than b on every active reward channel."""
    return all(a.channel(c) > b.channel(c) for c in channels)


def partition_fronts(
    scored: Mapping[str, RewardVector], channels: Sequence[str] = CHANNELS
) -> tuple[list[str], list[str]]:
    """Split videos into the non-dominated set and its complement.

    Runs the fast non-dominated sorting bookkeeping: each unordered pair is
    compared once, per-video domination counts accumulate, and the
    non-dominated set is exactly the count-zero videos.  Returns both sets
    as lexicographically sorted id lists.
    """
    if not scored:
        raise ValueError("scored map must be non-empty")
    ids = sorted(scored.keys())
    n_dominators = {i: 0 for i in ids}
    dominated_by: dict[str, list[str]] = {i: [] for i in ids}
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if dominates(scored[a], scored[b], channels):
                dominated_by[a].append(b)
                n_dominators[b] += 1
            elif dominates(scored[b], scored[a], channels):
                dominated_by[b].append(a)
                n_dominators[a] += 1
    upper = [i for i in ids if n_dominators[i] == 0]
    lower = [i for i in ids if n_dominators[i] > 0]
    return upper, lower


def _require_scores(records) -> dict[str, RewardVector]:
    out = {}
    for rec in records:
        if rec.rewards is None:
            raise StateError(f"record {rec.id!r} has no rewards; score the repository first")
        out[rec.id] = rec.rewards
    return out


def select_id_pairs(records, config: SelectionConfig) -> list[PreferencePair]:
    """Identity-preferred ordered pairs over the StaticRef + Initial records.

    Keeps (w, l) when r_id(w) - r_id(l) >= theta_id and the loser's dynamic
    advantage r_dy(l) - r_dy(w) <= tau_dy.  Output is sorted by identity
    gap descending, ties broken by (winner_id, loser_id).
    """
    scored = _require_scores(records)
    pairs = []
    for w in sorted(scored):
        for l in sorted(scored):
            if w == l:
                continue
            gap = scored[w].r_id - scored[l].r_id
            if gap >= config.theta_id and (scored[l].r_dy - scored[w].r_dy) <= config.tau_dy:
                pairs.append(
                    PreferencePair(winner_id=w, loser_id=l, stage=Stage.ID_PREFERRED, delta_id=gap)
                )
    pairs.sort(key=lambda p: (-p.delta_id, p.winner_id, p.loser_id))
    return pairs


def select_dynamic_pairs(
    records, config: SelectionConfig, channels: Sequence[str] = CHANNELS
) -> list[PreferencePair]:
    """Dynamic-preferred pairs over the Initial + FineTuned records.

    Candidates cross the front partition (winner non-dominated, loser
    dominated) and must additionally satisfy strict dominance, which front
    membership alone does not guarantee.  Candidates are ranked by identity
    gap descending with (winner_id, loser_id) tie-break; the top
    ``config.top_k`` survive.
    """
    scored = _require_scores(records)
    upper, lower = partition_fronts(scored, channels)
    candidates = [
        PreferencePair(
            winner_id=w,
            loser_id=l,
            stage=Stage.DYNAMIC_PREFERRED,
            delta_id=scored[w].r_id - scored[l].r_id,
        )
        for w in upper
        for l in lower
        if dominates(scored[w], scored[l], channels)
    ]
    candidates.sort(key=lambda p: (-p.delta_id, p.winner_id, p.loser_id))
    return candidates[: config.top_k]


def merge_pairs(
    id_pairs: Sequence[PreferencePair], dynamic_pairs: Sequence[PreferencePair]
) -> list[PreferencePair]:
    """Concatenate the two stages, dropping duplicate (winner, loser) keys.

    The stage tag of the first occurrence wins; order is identity-preferred
    pairs first, then dynamic-preferred, each in their selection order.
    """
    seen: set[tuple[str, str]] = set()
    merged = []
    for pair in list(id_pairs) + list(dynamic_pairs):
        if pair.key in seen:
            continue
        seen.add(pair.key)
        merged.append(pair)
    return merged


def save_pairs(pairs: Sequence[PreferencePair], path) -> None:
    """Write pairs as line-delimited JSON under a versioned header line."""
    lines = [json.dumps({"format": PAIRS_FORMAT, "count": len(pairs)})]
    for p in pairs:
        lines.append(
            json.dumps(
                {
                    "winner_id": p.winner_id,
                    "loser_id": p.loser_id,
                    "stage": p.stage.value,
                    "delta_id": p.delta_id,
                }
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pairs(path) -> list[PreferencePair]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"empty pairs file {path}", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad pairs header: {exc}", line=1) from exc
    if header.get("format") != PAIRS_FORMAT:
        raise ParseError(f"unsupported pairs format {header.get('format')!r}", line=1)
    pairs = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad pair record: {exc}", line=n) from exc
        pairs.append(
            PreferencePair(
                winner_id=d["winner_id"],
                loser_id=d["loser_id"],
                stage=Stage(d["stage"]),
                delta_id=d["delta_id"],
            )
        )
    if len(pairs) != header.get("count"):
        raise DataError(f"pairs file {path}: header count {header.get('count')} != {len(pairs)}")
    return pairs
