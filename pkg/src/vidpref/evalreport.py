"""Diagnostic evaluations and report emission.

Produces the two diagnostic curves (identity similarity vs video length,
dynamic degree vs training step), runs ablation variants of the full
pipeline, and writes metric rows as CSV plus deterministic SVG line
charts.  Report values are on the raw score scale so runs are comparable
without sharing normalization statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .diffusion import Conditioning, DenoiserParams, load_checkpoint, sample_video
from .errors import ParseError, VidprefError
from .pipeline import AblationSpec, Setup, run_pipeline
from .rewards import default_scorers, format_sig
from .world import PromptSpec

REPORT_FORMAT = "magicid-report/1"
SVG_HASHSALT = "magicid-report"

MetricRow = tuple[str, float, float]  # (name, x, value)


@dataclass
class EvalRun:
    """One evaluation's provenance plus its sorted metric rows."""

    checkpoint: str
    world_ref: str
    rows: list[MetricRow] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.rows = sort_rows(self.rows)
        for name, x, value in self.rows:
            if not np.isfinite(x) or not np.isfinite(value):
                raise ValueError(f"non-finite metric row ({name}, {x}, {value})")


def sort_rows(rows: Sequence[MetricRow]) -> list[MetricRow]:
    return sorted(rows, key=lambda r: (r[0], r[1]))


def tile_to_length(video: np.ndarray, length: int) -> np.ndarray:
    """Extend or truncate a sampled video by cycling its frames."""
    if length < 1:
        raise ValueError("length must be >= 1")
    idx = np.arange(length) % video.shape[0]
    return video[idx]


def eval_identity_vs_length(
    model: DenoiserParams,
    lengths: Sequence[int],
    setup: Setup,
    cfg: Mapping[str, Any],
    n_samples: int,
    seed: int,
) -> list[MetricRow]:
    """Mean raw identity score of sampled videos at each requested length.

    The denoiser has a fixed flattened shape, so other lengths come from
    cycling the sampled frames before scoring; per-frame identity
    statistics carry over to the tiled video.
    """
    if not lengths or min(lengths) < 1:
        raise ValueError("lengths must be non-empty and >= 1")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = cfg["diffusion"]
    scorers = default_scorers(setup.world, setup.references)
    videos = []
    for k in range(n_samples):
        prompt = setup.prompts[k % len(setup.prompts)]
        cond = Conditioning.for_direction(prompt.target_direction, model.cond_dim)
        flat = sample_video(
            model, cond, d["sampler_steps"], d["guidance_scale"], seed + k, setup.schedule
        )
        videos.append(flat.reshape(setup.frames, setup.frame_dim))
    rows = []
    for length in lengths:
        mean_id = float(np.mean([scorers.identity(tile_to_length(v, length)) for v in videos]))
        rows.append(("identity", float(length), mean_id))
    return sort_rows(rows)


def eval_dynamic_vs_checkpoints(
    checkpoints: Sequence,
    prompts: Sequence[PromptSpec],
    setup: Setup,
    cfg: Mapping[str, Any],
    n_samples: int,
    seed: int,
) -> list[MetricRow]:
    """Mean raw dynamic score of samples from each checkpoint, keyed by step."""
    if len(checkpoints) < 2:
        raise ValueError("need at least 2 checkpoints")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = cfg["diffusion"]
    scorers = default_scorers(setup.world, setup.references)
    rows = []
    for ck in checkpoints:
        try:
            params, step = load_checkpoint(ck)
        except (OSError, ParseError) as exc:
            raise OSError(f"cannot load checkpoint {ck}: {exc}") from exc
        if step is None:
            raise VidprefError(f"checkpoint {ck} carries no training step")
        dys = []
        for k in range(n_samples):
            prompt = prompts[k % len(prompts)]
            cond = Conditioning.for_direction(prompt.target_direction, params.cond_dim)
            flat = sample_video(
                params, cond, d["sampler_steps"], d["guidance_scale"], seed + k, setup.schedule
            )
            dys.append(scorers.dynamic(flat.reshape(setup.frames, setup.frame_dim)))
        rows.append(("dynamic", float(step), float(np.mean(dys))))
    return sort_rows(rows)


def run_ablation(
    spec: AblationSpec,
    cfg: Mapping[str, Any],
    seed: int,
    outdir,
) -> list[MetricRow]:
    """Full pipeline under an ablation spec; rows are final-model score means."""
    result = run_pipeline(cfg, seed, outdir, ablation=spec)
    x = float(cfg["hpo"]["steps"])
    return sort_rows(
        [
            ("identity", x, result.final_metrics["identity"]),
            ("dynamic", x, result.final_metrics["dynamic"]),
            ("semantic", x, result.final_metrics["semantic"]),
        ]
    )


# --- emission ----------------------------------------------------------------


def emit_report(rows: Sequence[MetricRow], out_path, format: str) -> None:
    """Write metric rows as CSV, or as one SVG line chart per metric name.

    Identical inputs produce byte-identical files; the SVG renderer pins
    the matplotlib hash salt and strips the creation date for this.
    """
    if format == "csv":
        lines = ["metric,x,value,format"]
        for name, x, value in sort_rows(rows):
            lines.append(f"{name},{format_sig(x)},{format_sig(value)},{REPORT_FORMAT}")
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    elif format == "svg":
        if not rows:
            raise ValueError("no metric rows to chart")
        render_chart(rows, out_path)
    else:
        raise ValueError(f"unknown report format {format!r}")


def render_chart(rows: Sequence[MetricRow], out_path) -> None:
    """Render one line chart per metric name into a single SVG file."""
    ordered = sort_rows(rows)
    names = sorted({r[0] for r in ordered})
    with plt.rc_context({"svg.hashsalt": SVG_HASHSALT}):
        fig, axes = plt.subplots(len(names), 1, figsize=(6.4, 3.2 * len(names)), squeeze=False)
        for ax, name in zip(axes[:, 0], names):
            xs = [r[1] for r in ordered if r[0] == name]
            ys = [r[2] for r in ordered if r[0] == name]
            ax.plot(xs, ys, marker="o")
            ax.set_title(name)
            ax.set_xlabel("x")
            ax.set_ylabel(name)
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None, "Title": REPORT_FORMAT})
        plt.close(fig)


def read_report_rows(path) -> list[MetricRow]:
    """Read metric rows back from a report CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("metric,x,value"):
        raise ParseError(f"bad report header in {path}", line=1)
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) < 3:
            raise ParseError("expected at least 3 columns", line=n)
        rows.append((parts[0], float(parts[1]), float(parts[2])))
    return sort_rows(rows)
