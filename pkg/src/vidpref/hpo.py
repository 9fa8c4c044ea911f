"""Hybrid preference optimization: pairwise DPO-style noise-prediction loss.

For a preferred/dispreferred video pair the loss compares how much better
the policy denoises each video than a frozen reference copy does:

    inner = (d_theta_w - d_ref_w) - (d_theta_l - d_ref_l)
    loss  = -log sigmoid(-beta * inner)

with d = ||eps - eps_hat(v_t, t)||^2 at a shared timestep t and
independent noises per video.  The outer and inner negations make the
loss decrease when the policy improves on the winner relative to the
reference, which is the behavior the sigmoid preference objective
requires; at theta == ref the loss is exactly ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .diffusion import (
    Conditioning,
    DenoiserParams,
    NoiseSchedule,
    forward_diffuse,
    predict_noise,
)
from .errors import ConfigurationError, DataError, NumericError
from .repository import Repository, VideoRecord
from .selection import PreferencePair, Stage

TRACE_FORMAT = "magicid-trace/1"


@dataclass(frozen=True)
class HpoConfig:
    beta_dpo: float = 5.0  # sized so beta * inner spans the sigmoid's linear range
    steps: int = 5000
    lr: float = 1e-4
    weight_decay: float = 1e-4
    t_min: int = 1
    t_max: int | None = None  # None = schedule length
    curriculum: bool = False  # identity-stage pairs first, then the full mix
    shared_t: bool = True  # one timestep for both videos in a pair
    rng_seed: int = 0

    def __post_init__(self):
        if self.beta_dpo <= 0:
            raise ConfigurationError("beta_dpo must be > 0")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.t_min < 1:
            raise ConfigurationError("t_min must be >= 1")


@dataclass(frozen=True)
class PairBatch:
    """One training draw: both videos, their conditioning, timesteps, noises."""

    winner: np.ndarray  # flattened
    loser: np.ndarray
    cond_w: Conditioning
    cond_l: Conditioning
    t_w: int
    t_l: int
    noise_w: np.ndarray
    noise_l: np.ndarray


def pair_loss_from_distances(
    d_theta_w: float, d_ref_w: float, d_theta_l: float, d_ref_l: float, beta_dpo: float
) -> float:
    """Preference loss given the four noise-prediction distances.

    -log sigmoid(-beta * inner) with
    inner = (d_theta_w - d_ref_w) - (d_theta_l - d_ref_l).
    """
    inner = (d_theta_w - d_ref_w) - (d_theta_l - d_ref_l)
    return float(np.logaddexp(0.0, beta_dpo * inner))


def _branch_distances(
    params: DenoiserParams,
    v0: np.ndarray,
    t: int,
    noise: np.ndarray,
    cond: Conditioning,
    schedule: NoiseSchedule,
    want_cache: bool,
):
    v_t = forward_diffuse(v0, t, noise, schedule)
    out = predict_noise(params, v_t, t, cond, schedule, want_cache=want_cache)
    if want_cache:
        eps_hat, cache = out
    else:
        eps_hat, cache = out, None
    resid = eps_hat - noise
    return float(resid @ resid), resid, cache


def hpo_pair_loss(
    theta: DenoiserParams,
    ref: DenoiserParams,
    batch: PairBatch,
    beta_dpo: float,
    schedule: NoiseSchedule,
    want_grad: bool = False,
):
    """Pairwise preference loss; optionally also its gradient w.r.t. theta."""
    d_tw, resid_tw, cache_w = _branch_distances(
        theta, batch.winner, batch.t_w, batch.noise_w, batch.cond_w, schedule, want_grad
    )
    d_tl, resid_tl, cache_l = _branch_distances(
        theta, batch.loser, batch.t_l, batch.noise_l, batch.cond_l, schedule, want_grad
    )
    d_rw, _, _ = _branch_distances(
        ref, batch.winner, batch.t_w, batch.noise_w, batch.cond_w, schedule, False
    )
    d_rl, _, _ = _branch_distances(
        ref, batch.loser, batch.t_l, batch.noise_l, batch.cond_l, schedule, False
    )
    for name, value in (
        ("winner policy distance", d_tw),
        ("loser policy distance", d_tl),
        ("winner reference distance", d_rw),
        ("loser reference distance", d_rl),
    ):
        if not math.isfinite(value):
            raise NumericError(f"{name} is non-finite")
    inner = (d_tw - d_rw) - (d_tl - d_rl)
    loss = pair_loss_from_distances(d_tw, d_rw, d_tl, d_rl, beta_dpo)
    if not math.isfinite(loss):
        raise NumericError("pair loss is non-finite")
    if not want_grad:
        return loss
    # dL/d inner = beta * sigmoid(beta * inner); d d/d eps_hat = 2 * resid
    coeff = beta_dpo * float(expit(beta_dpo * inner))
    grad = coeff * (
        theta.backward(cache_w, 2.0 * resid_tw) - theta.backward(cache_l, 2.0 * resid_tl)
    )
    return loss, grad


def _record_conditioning(rec: VideoRecord, repo: Repository, cond_dim: int) -> Conditioning:
    if rec.prompt_id is None:
        return Conditioning.null(cond_dim)
    prompt = repo.prompt(rec.prompt_id)
    return Conditioning.for_direction(prompt.target_direction, cond_dim)


def make_pair_batch(
    pair: PreferencePair,
    repo: Repository,
    theta: DenoiserParams,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    t_min: int = 1,
    t_max: int | None = None,
    shared_t: bool = True,
) -> PairBatch:
    """Resolve a pair against the repository and draw its timestep and noises."""
    t_hi = schedule.steps if t_max is None else t_max
    winner = repo.by_id(pair.winner_id)
    loser = repo.by_id(pair.loser_id)
    t_w = int(rng.integers(t_min, t_hi + 1))
    t_l = t_w if shared_t else int(rng.integers(t_min, t_hi + 1))
    return PairBatch(
        winner=winner.frames.reshape(-1),
        loser=loser.frames.reshape(-1),
        cond_w=_record_conditioning(winner, repo, theta.cond_dim),
        cond_l=_record_conditioning(loser, repo, theta.cond_dim),
        t_w=t_w,
        t_l=t_l,
        noise_w=rng.standard_normal(theta.video_dim),
        noise_l=rng.standard_normal(theta.video_dim),
    )


def hpo_gradient_step(
    theta: DenoiserParams,
    ref: DenoiserParams,
    pair: PreferencePair,
    repo: Repository,
    config: HpoConfig,
    schedule: NoiseSchedule,
    step_rng: np.random.Generator,
) -> float:
    """One in-place descent-with-decay update of theta on a sampled batch."""
    batch = make_pair_batch(
        pair, repo, theta, schedule, step_rng, config.t_min, config.t_max, config.shared_t
    )
    loss, grad = hpo_pair_loss(theta, ref, batch, config.beta_dpo, schedule, want_grad=True)
    if config.lr != 0.0:
        theta.apply_update(-config.lr * grad - config.lr * config.weight_decay * theta.trainable)
    return loss


@dataclass
class TrainTrace:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    stages: list[Stage] = field(default_factory=list)


def train_hpo(
    theta_init: DenoiserParams,
    pairs: list[PreferencePair],
    repo: Repository,
    config: HpoConfig,
    schedule: NoiseSchedule,
    checkpoint_hook=None,
) -> tuple[DenoiserParams, TrainTrace]:
    """Run the preference-optimization loop against a frozen reference copy.

    The reference is a copy of ``theta_init`` and never changes.  Pair
    sampling is uniform over the merged set; with ``curriculum`` on, the
    first half of the steps draws only identity-stage pairs (when any
    exist) before switching to the full mix.  All randomness comes from a
    per-step seeded stream, so results are independent of scheduling.
    ``checkpoint_hook(step, theta)`` fires after every step when given.
    """
    if not pairs:
        raise ConfigurationError(
            "no preference pairs to train on; loosen theta_id / tau_dy in the selection config"
        )
    if not np.all(np.isfinite(theta_init.trainable)):
        raise DataError("initial parameters must be finite")
    theta = theta_init.copy()
    ref = theta_init.copy()
    id_pairs = [p for p in pairs if p.stage is Stage.ID_PREFERRED]
    trace = TrainTrace()
    for step in range(config.steps):
        rng = np.random.default_rng([config.rng_seed, step])
        pool = pairs
        if config.curriculum and id_pairs and step < config.steps // 2:
            pool = id_pairs
        pair = pool[int(rng.integers(len(pool)))]
        loss = hpo_gradient_step(theta, ref, pair, repo, config, schedule, rng)
        trace.steps.append(step + 1)
        trace.losses.append(loss)
        trace.stages.append(pair.stage)
        if checkpoint_hook is not None:
            checkpoint_hook(step + 1, theta)
    return theta, trace


def save_trace(trace: TrainTrace, path) -> None:
    """Write the per-step loss trace as delimited text."""
    from .rewards import format_sig

    lines = [f"# {TRACE_FORMAT}", "step,loss,pair_stage"]
    for s, loss, stage in zip(trace.steps, trace.losses, trace.stages):
        lines.append(f"{s},{format_sig(loss)},{stage.value}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
