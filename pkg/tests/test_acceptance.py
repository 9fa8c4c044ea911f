"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`.  The heavy end-to-end
criteria share session-scoped pipeline runs; every tolerance is asserted
exactly as stated, and each criterion checks its own runtime budget.
"""

import math
import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import spearmanr

from vidpref import config as cfgmod
from vidpref import evalreport, pipeline
from vidpref.diffusion import (
    Conditioning,
    DenoiserParams,
    forward_diffuse,
    make_schedule,
    regression_loss_and_grad,
)
from vidpref.hpo import PairBatch, hpo_pair_loss
from vidpref.rewards import RawScores, RewardVector, normalize_repository
from vidpref.selection import (
    SelectionConfig,
    dominates,
    partition_fronts,
    select_dynamic_pairs,
    select_id_pairs,
)

LN2 = math.log(2.0)


def report(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} - {detail}")


def random_reward_map(rng, n):
    return {
        f"v{i:03d}": RewardVector(*(1.0 + 9.0 * rng.random(3))) for i in range(n)
    }


def scored_records(reward_map):
    return [SimpleNamespace(id=k, rewards=v) for k, v in reward_map.items()]


# --- criteria 1-6, 10: property checks --------------------------------------


def test_criterion_1_pareto_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(101)
    mismatches = 0
    dominance_violations = 0
    for _ in range(200):
        n = int(rng.integers(1, 201))
        scored = random_reward_map(rng, n)
        upper, lower = partition_fronts(scored)
        table = np.array([[scored[k].r_id, scored[k].r_dy, scored[k].r_sem] for k in sorted(scored)])
        strictly_greater = (table[:, None, :] > table[None, :, :]).all(axis=2)
        dominated_mask = strictly_greater.any(axis=0)
        ids = sorted(scored)
        brute_upper = [ids[i] for i in range(n) if not dominated_mask[i]]
        brute_lower = [ids[i] for i in range(n) if dominated_mask[i]]
        if upper != brute_upper or lower != brute_lower:
            mismatches += 1
        pairs = select_dynamic_pairs(scored_records(scored), SelectionConfig(top_k=100))
        for p in pairs:
            if not dominates(scored[p.winner_id], scored[p.loser_id]):
                dominance_violations += 1
    elapsed = time.time() - t0
    ok = mismatches == 0 and dominance_violations == 0 and elapsed < 30
    report(1, ok, f"200 repos, {mismatches} partition mismatches, "
                  f"{dominance_violations} dominance violations, {elapsed:.1f}s")
    assert mismatches == 0
    assert dominance_violations == 0
    assert elapsed < 30


def test_criterion_2_dominance_order_properties():
    t0 = time.time()
    rng = np.random.default_rng(102)
    n = 100_000
    a = 1.0 + 9.0 * rng.random((n, 3))
    b = 1.0 + 9.0 * rng.random((n, 3))
    c = 1.0 + 9.0 * rng.random((n, 3))
    ab = (a > b).all(axis=1)
    ba = (b > a).all(axis=1)
    bc = (b > c).all(axis=1)
    ac = (a > c).all(axis=1)
    aa = (a > a).all(axis=1)
    irreflexive = not aa.any()
    asymmetric = not (ab & ba).any()
    premises = ab & bc
    transitive = bool(ac[premises].all())
    n_premises = int(premises.sum())
    # spot-check the scalar implementation against the vectorized check
    for i in range(0, n, 9973):
        va, vb = RewardVector(*a[i]), RewardVector(*b[i])
        assert dominates(va, vb) == bool(ab[i])
    elapsed = time.time() - t0
    ok = irreflexive and asymmetric and transitive and elapsed < 10
    report(2, ok, f"1e5 triples ({n_premises} transitivity premises), {elapsed:.1f}s")
    assert irreflexive and asymmetric and transitive
    assert elapsed < 10


def test_criterion_3_loss_identity():
    t0 = time.time()
    schedule = make_schedule(50, 1e-4, 0.02)
    theta = DenoiserParams.init(video_dim=24, cond_dim=6, hidden=10, rng_seed=1)
    ref = theta.copy()
    other = DenoiserParams.init(video_dim=24, cond_dim=6, hidden=10, rng_seed=2)
    rng = np.random.default_rng(103)
    worst = 0.0
    for k in range(100):
        t = int(rng.integers(1, 51))
        batch = PairBatch(
            winner=rng.standard_normal(24),
            loser=rng.standard_normal(24),
            cond_w=Conditioning.null(6),
            cond_l=Conditioning.null(6),
            t_w=t,
            t_l=t,
            noise_w=rng.standard_normal(24),
            noise_l=rng.standard_normal(24),
        )
        worst = max(worst, abs(hpo_pair_loss(theta, ref, batch, 1000.0, schedule) - LN2))
        worst = max(worst, abs(hpo_pair_loss(theta, other, batch, 0.0, schedule) - LN2))
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and elapsed < 5
    report(3, ok, f"max |loss - ln2| = {worst:.2e} over 100 batches x 2 modes, {elapsed:.1f}s")
    assert worst <= 1e-9
    assert elapsed < 5


def _central_diff(loss_fn, params, h=1e-5):
    grad = np.zeros(params.n_trainable())
    for i in range(len(grad)):
        plus = params.copy()
        plus.trainable[i] += h
        minus = params.copy()
        minus.trainable[i] -= h
        grad[i] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)
    return grad


def _max_rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def test_criterion_4_gradient_fidelity():
    t0 = time.time()
    schedule = make_schedule(50, 1e-4, 0.02)
    theta = DenoiserParams.init(video_dim=24, cond_dim=6, hidden=12, rng_seed=3)
    ref = DenoiserParams.init(video_dim=24, cond_dim=6, hidden=12, rng_seed=4)
    assert theta.n_trainable() <= 5000
    rng = np.random.default_rng(104)
    worst_reg, worst_hpo = 0.0, 0.0
    for _ in range(20):
        v0 = rng.standard_normal(24)
        noise = rng.standard_normal(24)
        t = int(rng.integers(1, 51))
        cond = Conditioning.null(6)
        _, grad = regression_loss_and_grad(theta, v0, t, noise, cond, schedule)
        fd = _central_diff(
            lambda q: regression_loss_and_grad(q, v0, t, noise, cond, schedule)[0], theta
        )
        worst_reg = max(worst_reg, _max_rel_err(grad, fd))
    for _ in range(20):
        t = int(rng.integers(1, 51))
        batch = PairBatch(
            winner=rng.standard_normal(24),
            loser=rng.standard_normal(24),
            cond_w=Conditioning.null(6),
            cond_l=Conditioning.null(6),
            t_w=t,
            t_l=t,
            noise_w=rng.standard_normal(24),
            noise_l=rng.standard_normal(24),
        )
        _, grad = hpo_pair_loss(theta, ref, batch, 5.0, schedule, want_grad=True)
        fd = _central_diff(lambda q: hpo_pair_loss(q, ref, batch, 5.0, schedule), theta)
        worst_hpo = max(worst_hpo, _max_rel_err(grad, fd))
    elapsed = time.time() - t0
    ok = worst_reg <= 1e-4 and worst_hpo <= 1e-4 and elapsed < 60
    report(4, ok, f"max rel err: regression {worst_reg:.2e}, preference {worst_hpo:.2e}, {elapsed:.1f}s")
    assert worst_reg <= 1e-4
    assert worst_hpo <= 1e-4
    assert elapsed < 60


def test_criterion_5_forward_process_moments():
    t0 = time.time()
    schedule = make_schedule(100, 1e-4, 0.02)
    rng = np.random.default_rng(106)
    dim, n = 8, 100_000
    v0 = rng.standard_normal(dim)
    v0_tiled = np.tile(v0, (n, 1))
    failures = []
    for t in (1, 25, 50, 75, 100):
        eps = rng.standard_normal((n, dim))
        ab = schedule.alpha_bar(t)
        vt = forward_diffuse(v0_tiled, t, eps, schedule)
        se_mean = math.sqrt((1.0 - ab) / n)
        mean_err = np.abs(vt.mean(axis=0) - np.sqrt(ab) * v0).max()
        if mean_err > 3 * se_mean:
            failures.append(f"mean t={t}")
        se_var = (1.0 - ab) * math.sqrt(2.0 / (n - 1))
        var_err = np.abs(vt.var(axis=0, ddof=1) - (1.0 - ab)).max()
        if var_err > 3 * se_var:
            failures.append(f"var t={t}")
        centered = vt - vt.mean(axis=0)
        cov01 = float(centered[:, 0] @ centered[:, 1] / (n - 1))
        if abs(cov01) > 3 * (1.0 - ab) / math.sqrt(n - 1):
            failures.append(f"cov t={t}")
    elapsed = time.time() - t0
    ok = not failures and elapsed < 30
    report(5, ok, f"5 timesteps x 1e5 draws within 3 SE ({failures or 'all good'}), {elapsed:.1f}s")
    assert not failures
    assert elapsed < 30


def test_criterion_6_selection_rule_soundness():
    t0 = time.time()
    rng = np.random.default_rng(106)
    cfg = SelectionConfig(theta_id=3.0, tau_dy=2.0, top_k=100)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 120))
        scored = random_reward_map(rng, n)
        records = scored_records(scored)
        for p in select_id_pairs(records, cfg):
            if scored[p.winner_id].r_id - scored[p.loser_id].r_id < cfg.theta_id:
                bad += 1
            if scored[p.loser_id].r_dy - scored[p.winner_id].r_dy > cfg.tau_dy:
                bad += 1
        dyn = select_dynamic_pairs(records, cfg)
        if len(dyn) > cfg.top_k:
            bad += 1
        keys = [(-p.delta_id, p.winner_id, p.loser_id) for p in dyn]
        if keys != sorted(keys):
            bad += 1
    elapsed = time.time() - t0
    ok = bad == 0 and elapsed < 10
    report(6, ok, f"100 repos, {bad} violations, {elapsed:.1f}s")
    assert bad == 0
    assert elapsed < 10


def test_criterion_10_normalization_invariants():
    t0 = time.time()
    rng = np.random.default_rng(110)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        raw = {
            f"v{i}": RawScores(
                id_raw=float(rng.uniform(-1, 1)),
                dy_raw=float(rng.uniform(0, 4)),
                sem_raw=float(rng.uniform(-1, 1)),
            )
            for i in range(n)
        }
        out = normalize_repository(raw)
        for rv in out.values():
            for v in (rv.r_id, rv.r_dy, rv.r_sem):
                if not 1.0 <= v <= 10.0:
                    bad += 1
        ids = list(raw)
        for i in range(min(len(ids), 20)):
            for j in range(min(len(ids), 20)):
                if raw[ids[i]].id_raw < raw[ids[j]].id_raw and n > 1:
                    if not out[ids[i]].r_id < out[ids[j]].r_id:
                        bad += 1
        # positive affine transform of one raw channel leaves outputs unchanged
        k, c = float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.0, 2.0))
        scaled = {
            key: RawScores(id_raw=r.id_raw, dy_raw=k * r.dy_raw + c, sem_raw=r.sem_raw)
            for key, r in raw.items()
        }
        out2 = normalize_repository(scaled)
        for key in raw:
            if abs(out[key].r_dy - out2[key].r_dy) > 1e-9:
                bad += 1
        if n == 1 and list(out.values())[0].r_dy != 5.5:
            bad += 1
    elapsed = time.time() - t0
    ok = bad == 0 and elapsed < 10
    report(10, ok, f"100 repos, {bad} violations, {elapsed:.1f}s")
    assert bad == 0
    assert elapsed < 10


# --- criteria 7-9: end-to-end runs -------------------------------------------


@dataclass
class PipelineRun:
    result: object
    outdir: object
    elapsed: float


def _run(cfg, seed, outdir, ablation=None):
    t0 = time.time()
    result = pipeline.run_pipeline(
        cfg, seed, outdir, ablation=ablation or pipeline.AblationSpec()
    )
    return PipelineRun(result=result, outdir=outdir, elapsed=time.time() - t0)


@pytest.fixture(scope="session")
def default_cfg():
    return cfgmod.load_config()


@pytest.fixture(scope="session")
def run_default(default_cfg, tmp_path_factory):
    return _run(default_cfg, 0, tmp_path_factory.mktemp("default_a"))


@pytest.fixture(scope="session")
def run_default_again(default_cfg, tmp_path_factory):
    return _run(default_cfg, 0, tmp_path_factory.mktemp("default_b"))


@pytest.fixture(scope="session")
def run_id_only(default_cfg, tmp_path_factory):
    spec = pipeline.AblationSpec(dynamic_pairs=False)
    return _run(default_cfg, 0, tmp_path_factory.mktemp("idonly"), ablation=spec)


def test_criterion_7_dynamic_reduction(default_cfg, run_default, tmp_path_factory):
    t0 = time.time()
    res = run_default.result
    ckpt_dir = tmp_path_factory.mktemp("baseline")
    baseline_ckpts = pipeline.run_selfrecon_baseline(
        res.setup, res.theta_init, default_cfg, 0,
        steps=default_cfg["hpo"]["steps"], ckpt_dir=ckpt_dir,
    )
    n = default_cfg["eval"]["n_samples"]
    rows_b = evalreport.eval_dynamic_vs_checkpoints(
        baseline_ckpts, res.setup.prompts, res.setup, default_cfg, n_samples=n, seed=777
    )
    rows_h = evalreport.eval_dynamic_vs_checkpoints(
        res.hpo_checkpoints, res.setup.prompts, res.setup, default_cfg, n_samples=n, seed=777
    )
    steps = [r[1] for r in rows_b]
    dyn_b = [r[2] for r in rows_b]
    dyn_h = [r[2] for r in rows_h]
    rho = spearmanr(steps, dyn_b).statistic
    elapsed = time.time() - t0 + run_default.elapsed
    ok = rho < 0 and dyn_h[-1] > dyn_b[-1] and elapsed < 600
    report(7, ok, f"baseline spearman(step, dynamic) = {rho:.3f}; "
                  f"final dynamic hpo {dyn_h[-1]:.3f} vs baseline {dyn_b[-1]:.3f}; {elapsed:.0f}s")
    assert rho < 0
    assert dyn_h[-1] > dyn_b[-1]
    assert elapsed < 600


def test_criterion_8_identity_preference(default_cfg, run_default, run_id_only):
    t0 = time.time()
    res_both = run_default.result
    res_id = run_id_only.result
    untrained = pipeline.evaluate_model(res_both.theta_init, res_both.setup, default_cfg, 0)
    m_id = res_id.final_metrics
    m_both = res_both.final_metrics
    elapsed = time.time() - t0 + run_default.elapsed + run_id_only.elapsed
    ok = (
        m_id["identity"] >= untrained["identity"]
        and m_both["dynamic"] > m_id["dynamic"]
        and elapsed < 900
    )
    report(8, ok, f"identity: id-only {m_id['identity']:.3f} >= untrained {untrained['identity']:.3f}; "
                  f"dynamic: id+dyn {m_both['dynamic']:.3f} > id-only {m_id['dynamic']:.3f}; {elapsed:.0f}s")
    assert m_id["identity"] >= untrained["identity"]
    assert m_both["dynamic"] > m_id["dynamic"]
    assert elapsed < 900


def test_criterion_9_determinism(default_cfg, run_default, run_default_again):
    t0 = time.time()
    a, b = run_default, run_default_again
    mismatched = []
    for key in ("world", "base", "init", "repo", "scores", "pairs", "final", "trace"):
        if a.result.paths[key].read_bytes() != b.result.paths[key].read_bytes():
            mismatched.append(key)
    for pa, pb in zip(a.result.hpo_checkpoints, b.result.hpo_checkpoints):
        if pa.read_bytes() != pb.read_bytes():
            mismatched.append(pa.name)
    for run in (a, b):
        x = float(default_cfg["hpo"]["steps"])
        rows = [(name, x, run.result.final_metrics[name]) for name in ("identity", "dynamic", "semantic")]
        evalreport.emit_report(rows, run.outdir / "metrics.csv", "csv")
        evalreport.emit_report(rows, run.outdir / "metrics.svg", "svg")
    for name in ("metrics.csv", "metrics.svg"):
        if (a.outdir / name).read_bytes() != (b.outdir / name).read_bytes():
            mismatched.append(name)
    elapsed = time.time() - t0 + a.elapsed + b.elapsed
    ok = not mismatched and elapsed < 600
    report(9, ok, f"two full runs byte-identical across "
                  f"{8 + len(a.result.hpo_checkpoints) + 2} artifacts "
                  f"({mismatched or 'no mismatches'}); {elapsed:.0f}s")
    assert not mismatched
    assert elapsed < 600
