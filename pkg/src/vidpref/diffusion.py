"""Toy denoising-diffusion core over flattened videos.

Holds the linear noise schedule, a small fully connected noise-prediction
network with hand-written backprop (optionally restricted to low-rank
adapter factors), the closed-form forward process, a standard denoising
regression trainer, and a deterministic DDIM-style sampler with
classifier-free guidance.  Everything is plain float64 numpy so runs are
bit-reproducible for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError

CKPT_FORMAT = "magicid-ckpt/1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached alpha and cumulative-alpha tables."""

    betas: np.ndarray  # (T_diff,), index t-1 holds step t
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha at step t in 1..T_diff; step 0 is defined as 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside 1..{self.steps}")


def make_schedule(timesteps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Build a linear schedule of `timesteps` betas from beta_min to beta_max."""
    if timesteps < 1:
        raise ConfigurationError("timesteps must be >= 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    betas = np.linspace(beta_min, beta_max, timesteps)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_diffuse(v0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) * v0 + sqrt(1 - abar_t) * noise."""
    schedule._check_t(t)
    if v0.shape != noise.shape:
        raise ValueError(f"shape mismatch: v0 {v0.shape} vs noise {noise.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * v0 + np.sqrt(1.0 - ab) * noise


@dataclass(frozen=True)
class Conditioning:
    """Prompt conditioning vector; the null variant is the zero vector."""

    embedding: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        if self.is_null and np.any(self.embedding != 0.0):
            raise ValueError("null conditioning must carry a zero embedding")

    @staticmethod
    def null(cond_dim: int) -> "Conditioning":
        return Conditioning(embedding=np.zeros(cond_dim), is_null=True)

    @staticmethod
    def for_direction(direction: np.ndarray, cond_dim: int) -> "Conditioning":
        """Zero-pad a motion direction up to the conditioning width."""
        d = np.asarray(direction, dtype=float).reshape(-1)
        if len(d) > cond_dim:
            raise ValueError(f"direction dim {len(d)} exceeds cond_dim {cond_dim}")
        emb = np.zeros(cond_dim)
        emb[: len(d)] = d
        return Conditioning(embedding=emb)


# inputs are pre-scaled into the tanh linear range; the noise-prediction map
# is close to linear in v_t, and saturated units cannot represent it
INPUT_SCALE = 1.0 / 3.0


def _layer_shapes(in_dim: int, hidden: int, out_dim: int) -> list[tuple[int, int]]:
    return [(in_dim, hidden), (hidden, hidden), (hidden, out_dim)]


class DenoiserParams:
    """Flat-vector parameters of a two-hidden-layer tanh noise predictor.

    Input is the flattened noisy video concatenated with a 3-dim timestep
    embedding and the conditioning vector.  When ``adapter_rank`` > 0 each
    weight matrix W acts as W + A @ B and only the (A, B) factors are
    trainable; base weights stay frozen.
    """

    def __init__(
        self,
        video_dim: int,
        cond_dim: int,
        hidden: int,
        base: np.ndarray,
        adapter_rank: int = 0,
        adapter: np.ndarray | None = None,
    ):
        self.video_dim = video_dim
        self.cond_dim = cond_dim
        self.hidden = hidden
        self.in_dim = video_dim + 3 + cond_dim
        self.adapter_rank = adapter_rank
        self.shapes = _layer_shapes(self.in_dim, hidden, video_dim)
        if base.shape != (self.n_base(),):
            raise ValueError(f"base vector has {base.shape}, expected ({self.n_base()},)")
        if not np.all(np.isfinite(base)):
            raise ValueError("base parameters must be finite")
        self.base = base
        if adapter_rank > 0:
            if adapter is None or adapter.shape != (self.n_adapter(),):
                raise ValueError("adapter vector missing or mis-sized")
            if not np.all(np.isfinite(adapter)):
                raise ValueError("adapter parameters must be finite")
            self.adapter = adapter
        elif adapter is not None:
            raise ValueError("adapter vector given but adapter_rank is 0")
        else:
            self.adapter = None

    def n_base(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def n_adapter(self) -> int:
        r = self.adapter_rank
        return sum(i * r + r * o for i, o in self.shapes)

    @staticmethod
    def init(video_dim: int, cond_dim: int, hidden: int, rng_seed: int) -> "DenoiserParams":
        """Xavier-normal weights, zero biases, deterministic per seed."""
        rng = np.random.default_rng(rng_seed)
        chunks = []
        for i, o in _layer_shapes(video_dim + 3 + cond_dim, hidden, video_dim):
            scale = np.sqrt(2.0 / (i + o))
            chunks.append(scale * rng.standard_normal(i * o))
            chunks.append(np.zeros(o))
        return DenoiserParams(video_dim, cond_dim, hidden, base=np.concatenate(chunks))

    def with_adapter(self, rank: int, rng_seed: int) -> "DenoiserParams":
        """Attach fresh low-rank factors: A Gaussian, B zero, so the net is unchanged."""
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        rng = np.random.default_rng(rng_seed)
        chunks = []
        for i, o in self.shapes:
            chunks.append(rng.standard_normal(i * rank) / np.sqrt(i))
            chunks.append(np.zeros(rank * o))
        return DenoiserParams(
            self.video_dim,
            self.cond_dim,
            self.hidden,
            base=self.base.copy(),
            adapter_rank=rank,
            adapter=np.concatenate(chunks),
        )

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            self.video_dim,
            self.cond_dim,
            self.hidden,
            base=self.base.copy(),
            adapter_rank=self.adapter_rank,
            adapter=None if self.adapter is None else self.adapter.copy(),
        )

    # --- flat-vector views -------------------------------------------------

    def _base_views(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, off = [], 0
        for i, o in self.shapes:
            w = self.base[off : off + i * o].reshape(i, o)
            off += i * o
            b = self.base[off : off + o]
            off += o
            out.append((w, b))
        return out

    def _adapter_views(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, off = [], 0
        r = self.adapter_rank
        for i, o in self.shapes:
            a = self.adapter[off : off + i * r].reshape(i, r)
            off += i * r
            b = self.adapter[off : off + r * o].reshape(r, o)
            off += r * o
            out.append((a, b))
        return out

    def _effective_weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = self._base_views()
        if self.adapter_rank == 0:
            return layers
        return [
            (w + a @ b, bias)
            for (w, bias), (a, b) in zip(layers, self._adapter_views())
        ]

    # --- training interface -------------------------------------------------

    @property
    def trainable(self) -> np.ndarray:
        """The vector updated by gradient steps: adapter if enabled, else base."""
        return self.adapter if self.adapter_rank > 0 else self.base

    def n_trainable(self) -> int:
        return len(self.trainable)

    def apply_update(self, delta: np.ndarray) -> None:
        if self.adapter_rank > 0:
            self.adapter += delta
        else:
            self.base += delta

    # --- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Forward pass on a single flat input; optionally keep activations."""
        if x.shape != (self.in_dim,):
            raise ValueError(f"input has shape {x.shape}, expected ({self.in_dim},)")
        x = INPUT_SCALE * x
        layers = self._effective_weights()
        h1 = np.tanh(x @ layers[0][0] + layers[0][1])
        h2 = np.tanh(h1 @ layers[1][0] + layers[1][1])
        y = h2 @ layers[2][0] + layers[2][1]
        if not want_cache:
            return y
        return y, (x, h1, h2, layers)

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of (grad_out . output) w.r.t. the trainable vector."""
        x, h1, h2, layers = cache
        dz3 = grad_out
        dh2 = dz3 @ layers[2][0].T
        dz2 = dh2 * (1.0 - h2 * h2)
        dh1 = dz2 @ layers[1][0].T
        dz1 = dh1 * (1.0 - h1 * h1)
        weight_grads = [np.outer(x, dz1), np.outer(h1, dz2), np.outer(h2, dz3)]
        bias_grads = [dz1, dz2, dz3]
        if self.adapter_rank == 0:
            return np.concatenate(
                [np.concatenate([wg.ravel(), bg]) for wg, bg in zip(weight_grads, bias_grads)]
            )
        # d/dA = dW_eff @ B^T, d/dB = A^T @ dW_eff; biases are frozen base params
        chunks = []
        for wg, (a, b) in zip(weight_grads, self._adapter_views()):
            chunks.append((wg @ b.T).ravel())
            chunks.append((a.T @ wg).ravel())
        return np.concatenate(chunks)


def timestep_features(t: int, total_steps: int) -> np.ndarray:
    frac = t / total_steps
    return np.array([frac, np.sin(2.0 * np.pi * frac), np.cos(2.0 * np.pi * frac)])


def predict_noise(
    params: DenoiserParams,
    v_t: np.ndarray,
    t: int,
    cond: Conditioning,
    schedule: NoiseSchedule,
    want_cache: bool = False,
):
    """Deterministic forward pass of the noise predictor at step t."""
    schedule._check_t(t)
    v = np.asarray(v_t, dtype=float).reshape(-1)
    if len(v) != params.video_dim:
        raise ValueError(f"video length {len(v)} != model video_dim {params.video_dim}")
    if len(cond.embedding) != params.cond_dim:
        raise ValueError(f"cond length {len(cond.embedding)} != model cond_dim {params.cond_dim}")
    x = np.concatenate([v, timestep_features(t, schedule.steps), cond.embedding])
    return params.forward(x, want_cache=want_cache)


def regression_loss_and_grad(
    params: DenoiserParams,
    v0: np.ndarray,
    t: int,
    noise: np.ndarray,
    cond: Conditioning,
    schedule: NoiseSchedule,
) -> tuple[float, np.ndarray]:
    """Squared-error denoising loss ||eps - eps_hat||^2 and its gradient."""
    v_t = forward_diffuse(v0, t, noise, schedule)
    eps_hat, cache = predict_noise(params, v_t, t, cond, schedule, want_cache=True)
    resid = eps_hat - noise
    return float(resid @ resid), params.backward(cache, 2.0 * resid)


def train_initial(
    params: DenoiserParams,
    videos: list[np.ndarray],
    steps: int,
    lr: float,
    weight_decay: float,
    rng_seed: int,
    conds: list[Conditioning] | None = None,
    schedule: NoiseSchedule | None = None,
    cond_dropout: float = 0.1,
    checkpoint_hook=None,
) -> DenoiserParams:
    """Standard denoising-regression fine-tuning with decoupled weight decay.

    Per step: pick a training video uniformly, draw t uniform over the
    schedule and Gaussian noise, and descend on ||eps - eps_hat||^2.  The
    conditioning for each video defaults to null (static reference videos
    carry no prompt); with probability ``cond_dropout`` a prompt
    conditioning is dropped to null, which keeps classifier-free guidance
    usable downstream.  When an adapter is enabled only its factors move.
    ``checkpoint_hook(step, params)`` fires after each step when given.
    """
    if not videos:
        raise ConfigurationError("training set must be non-empty")
    if schedule is None:
        raise ValueError("schedule is required")
    if conds is None:
        conds = [Conditioning.null(params.cond_dim)] * len(videos)
    if len(conds) != len(videos):
        raise ValueError("conds must match videos one-to-one")
    null_cond = Conditioning.null(params.cond_dim)
    flat = [np.asarray(v, dtype=float).reshape(-1) for v in videos]
    out = params.copy()
    for step in range(steps):
        rng = np.random.default_rng([rng_seed, step])
        k = int(rng.integers(len(flat)))
        t = int(rng.integers(1, schedule.steps + 1))
        noise = rng.standard_normal(params.video_dim)
        cond = conds[k]
        if not cond.is_null and rng.random() < cond_dropout:
            cond = null_cond
        _, grad = regression_loss_and_grad(out, flat[k], t, noise, cond, schedule)
        if lr != 0.0:
            out.apply_update(-lr * grad - lr * weight_decay * out.trainable)
        if checkpoint_hook is not None:
            checkpoint_hook(step + 1, out)
    return out


def sample_video(
    params: DenoiserParams,
    cond: Conditioning,
    sampler_steps: int,
    guidance_scale: float,
    rng_seed: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Deterministic DDIM rollout over a strided subset of the schedule.

    Starts from seeded Gaussian noise.  Guidance blends conditional and
    null predictions as ``eps_null + s * (eps_cond - eps_null)``; at
    exactly s = 1 the null pass is skipped so the output is bit-identical
    to conditional-only sampling.
    """
    if sampler_steps < 1:
        raise ValueError("sampler_steps must be >= 1")
    if sampler_steps > schedule.steps:
        raise ConfigurationError(
            f"sampler_steps {sampler_steps} exceeds schedule steps {schedule.steps}"
        )
    taus = np.unique(np.linspace(1, schedule.steps, sampler_steps).round().astype(int))
    null_cond = Conditioning.null(params.cond_dim)
    rng = np.random.default_rng(rng_seed)
    x = rng.standard_normal(params.video_dim)
    for i in range(len(taus) - 1, -1, -1):
        t = int(taus[i])
        eps_hat = predict_noise(params, x, t, cond, schedule)
        if guidance_scale != 1.0:
            eps_null = predict_noise(params, x, t, null_cond, schedule)
            eps_hat = eps_null + guidance_scale * (eps_hat - eps_null)
        ab_t = schedule.alpha_bar(t)
        x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        ab_prev = schedule.alpha_bar(int(taus[i - 1])) if i > 0 else 1.0
        x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat
    return x


# --- checkpoint persistence ---------------------------------------------


def save_checkpoint(params: DenoiserParams, path, step: int | None = None) -> None:
    """Write a full-precision structured-text checkpoint."""
    payload = {
        "format": CKPT_FORMAT,
        "video_dim": params.video_dim,
        "cond_dim": params.cond_dim,
        "hidden": params.hidden,
        "adapter_rank": params.adapter_rank,
        "step": step,
        "base": [float(v) for v in params.base],
        "adapter": None if params.adapter is None else [float(v) for v in params.adapter],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[DenoiserParams, int | None]:
    """Load a checkpoint; usable as either the policy or the frozen reference."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid checkpoint {path}: {exc}") from exc
    if payload.get("format") != CKPT_FORMAT:
        raise ParseError(f"unsupported checkpoint format in {path}: {payload.get('format')!r}")
    params = DenoiserParams(
        video_dim=payload["video_dim"],
        cond_dim=payload["cond_dim"],
        hidden=payload["hidden"],
        base=np.array(payload["base"], dtype=float),
        adapter_rank=payload["adapter_rank"],
        adapter=None if payload["adapter"] is None else np.array(payload["adapter"], dtype=float),
    )
    return params, payload.get("step")
