"""Synthetic video domain with orthogonal identity and motion subspaces.

A "video" here is a T x D matrix of frame feature vectors.  Identity
content lives in the column span of ``U_id``, motion in the span of
``U_mo``, and the two subspaces are mutually orthogonal, so subspace
projections give exact closed-form ground truth for every reward the
scoring layer computes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class WorldConfig:
    """Dimensions and noise level of the synthetic world."""

    frame_dim: int = 24
    identity_dim: int = 8
    motion_dim: int = 8
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if min(self.frame_dim, self.identity_dim, self.motion_dim) < 1:
            raise ConfigurationError("all world dimensions must be >= 1")
        if self.identity_dim + self.motion_dim > self.frame_dim:
            raise ConfigurationError(
                f"identity_dim + motion_dim = {self.identity_dim + self.motion_dim} "
                f"exceeds frame_dim = {self.frame_dim}"
            )
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class World:
    """Immutable world bases; columns are orthonormal within and across bases."""

    identity_basis: np.ndarray  # (D, D_id)
    motion_basis: np.ndarray  # (D, D_mo)
    config: WorldConfig

    def __post_init__(self):
        uid, umo = self.identity_basis, self.motion_basis
        cross = np.abs(uid.T @ umo).max()
        gram_err = np.abs(uid.T @ uid - np.eye(uid.shape[1])).max()
        if cross > ORTHO_TOL or gram_err > 1e-9:
            raise ConfigurationError("world bases are not orthonormal")


@dataclass(frozen=True)
class IdentitySpec:
    """A unit identity embedding in the identity subspace coordinates."""

    embedding: np.ndarray  # (D_id,)

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.embedding)) - 1.0) > 1e-9:
            raise ValueError("identity embedding must be unit-norm")


@dataclass(frozen=True)
class MotionSpec:
    """A unit motion direction plus a nonnegative amplitude."""

    direction: np.ndarray  # (D_mo,)
    amplitude: float = 1.0

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-9:
            raise ValueError("motion direction must be unit-norm")
        if self.amplitude < 0:
            raise ValueError("motion amplitude must be >= 0")


@dataclass(frozen=True)
class PromptSpec:
    """A prompt: an id, a requested unit motion direction, and display text."""

    prompt_id: str
    target_direction: np.ndarray  # (D_mo,)
    text: str = ""

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.target_direction)) - 1.0) > 1e-9:
            raise ValueError("prompt target direction must be unit-norm")


def make_world(config: WorldConfig) -> World:
    """Build a world from seeded random vectors via QR orthonormalization.

    Deterministic for a given seed; the first ``identity_dim`` orthonormal
    columns become the identity basis and the next ``motion_dim`` the
    motion basis, which forces exact cross-orthogonality.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    raw = rng.standard_normal((config.frame_dim, config.identity_dim + config.motion_dim))
    q, _ = np.linalg.qr(raw)
    return World(
        identity_basis=q[:, : config.identity_dim].copy(),
        motion_basis=q[:, config.identity_dim : config.identity_dim + config.motion_dim].copy(),
        config=config,
    )


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Draw a uniformly random unit vector."""
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def render_video(
    world: World,
    identity: IdentitySpec,
    motion: MotionSpec,
    frames: int,
    rng_seed: int,
) -> np.ndarray:
    """Render a T x D video: static identity plus a linear motion ramp plus noise.

    Frame t is ``U_id e + U_mo m * (a * t / (T - 1)) + sigma * eta_t`` with
    seeded Gaussian ``eta_t``; for a single frame the ramp term is zero.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    base = world.identity_basis @ identity.embedding
    flow = world.motion_basis @ motion.direction
    ramp = np.zeros(frames) if frames == 1 else motion.amplitude * np.arange(frames) / (frames - 1)
    video = base[None, :] + ramp[:, None] * flow[None, :]
    sigma = world.config.noise_sigma
    if sigma > 0:
        rng = np.random.default_rng(rng_seed)
        video = video + sigma * rng.standard_normal((frames, world.config.frame_dim))
    return video


def inflate_reference(reference_frame: np.ndarray, frames: int) -> np.ndarray:
    """Replicate a single reference frame into a static T x D pseudo-video."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    ref = np.asarray(reference_frame, dtype=float).reshape(-1)
    return np.tile(ref, (frames, 1))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def oracle_scores(
    world: World,
    video: np.ndarray,
    reference: IdentitySpec,
    prompt: PromptSpec,
) -> tuple[float, float, float]:
    """Closed-form ground-truth score triple for a video.

    Returns (mean per-frame identity cosine against the reference embedding
    in identity-subspace coordinates, mean consecutive-frame delta norm,
    cosine of the mean frame delta against the prompt's motion direction).
    Degenerate zero-norm projections score 0.  Used by tests to validate
    the default scorers.
    """
    if video.shape[0] < 1:
        raise ValueError("video must have at least one frame")
    id_coords = video @ world.identity_basis  # (T, D_id)
    id_cos = float(np.mean([_cosine(row, reference.embedding) for row in id_coords]))
    if video.shape[0] == 1:
        return id_cos, 0.0, 0.0
    deltas = np.diff(video, axis=0)
    motion_mag = float(np.mean(np.linalg.norm(deltas, axis=1)))
    sem_cos = _cosine(deltas.mean(axis=0), world.motion_basis @ prompt.target_direction)
    return id_cos, motion_mag, sem_cos
