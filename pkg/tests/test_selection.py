import numpy as np
import pytest

from vidpref.errors import ConfigurationError, DataError, StateError
from vidpref.repository import Source, VideoRecord
from vidpref.rewards import RewardVector, normalize_repository, RawScores
from vidpref.selection import (
    PreferencePair,
    SelectionConfig,
    Stage,
    dominates,
    load_pairs,
    merge_pairs,
    partition_fronts,
    save_pairs,
    select_dynamic_pairs,
    select_id_pairs,
)


def rv(a, b, c):
    return RewardVector(r_id=float(a), r_dy=float(b), r_sem=float(c))


def rec(rid, rewards, source=Source.INITIAL):
    return VideoRecord(
        id=rid, source=source, prompt_id=None, frames=np.zeros((2, 3)), rewards=rewards
    )


def test_dominates_examples():
    assert dominates(rv(5, 5, 5), rv(4, 4, 4))
    assert not dominates(rv(5, 4, 5), rv(4, 4, 4))  # tie on one channel
    a = rv(5, 5, 5)
    assert not dominates(a, a)


def test_dominates_strict_partial_order_properties():
    rng = np.random.default_rng(0)
    vecs = [rv(*(1 + 9 * rng.random(3))) for _ in range(60)]
    for a in vecs:
        assert not dominates(a, a)
    for _ in range(4000):
        i, j, k = rng.integers(len(vecs), size=3)
        a, b, c = vecs[i], vecs[j], vecs[k]
        if dominates(a, b):
            assert not dominates(b, a)
        if dominates(a, b) and dominates(b, c):
            assert dominates(a, c)


def brute_force_partition(scored):
    non_dom, dom = [], []
    for a in sorted(scored):
        if any(dominates(scored[b], scored[a]) for b in scored if b != a):
            dom.append(a)
        else:
            non_dom.append(a)
    return non_dom, dom


def test_partition_fronts_example():
    scored = {"a": rv(9, 2, 5), "b": rv(2, 9, 5), "c": rv(1, 1, 1)}
    upper, lower = partition_fronts(scored)
    assert upper == ["a", "b"] and lower == ["c"]


def test_partition_single_video():
    upper, lower = partition_fronts({"only": rv(5, 5, 5)})
    assert upper == ["only"] and lower == []


def test_partition_identical_scores_all_non_dominated():
    scored = {f"v{i}": rv(5, 5, 5) for i in range(4)}
    upper, lower = partition_fronts(scored)
    assert len(upper) == 4 and lower == []


def test_partition_matches_brute_force_on_random_repos():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(1, 80))
        scored = {f"v{i:03d}": rv(*(1 + 9 * rng.random(3))) for i in range(n)}
        assert partition_fronts(scored) == brute_force_partition(scored)


def test_select_id_pairs_threshold_rule():
    cfg6 = SelectionConfig(theta_id=3.0, tau_dy=6.0)
    cfg4 = SelectionConfig(theta_id=3.0, tau_dy=4.0)
    records = [rec("x", rv(10, 1, 5)), rec("y", rv(4, 6, 5))]
    pairs = select_id_pairs(records, cfg6)
    assert [(p.winner_id, p.loser_id) for p in pairs] == [("x", "y")]
    assert pairs[0].stage is Stage.ID_PREFERRED and pairs[0].delta_id == 6.0
    assert select_id_pairs(records, cfg4) == []


def test_select_id_pairs_equal_identity_gives_nothing():
    records = [rec("x", rv(5, 1, 5)), rec("y", rv(5, 9, 5))]
    assert select_id_pairs(records, SelectionConfig()) == []


def test_select_id_pairs_sorted_by_gap_then_id():
    records = [
        rec("a", rv(10, 1, 5)),
        rec("b", rv(9, 1, 5)),
        rec("c", rv(1, 1, 5)),
        rec("d", rv(1, 1, 5)),
    ]
    pairs = select_id_pairs(records, SelectionConfig(theta_id=3.0, tau_dy=2.0))
    # gaps: (a,c)=(a,d)=9, (b,c)=(b,d)=8; ties break lexicographically
    assert [(p.winner_id, p.loser_id) for p in pairs] == [
        ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"),
    ]


def test_select_dynamic_pairs_example():
    records = [rec("a", rv(9, 2, 5)), rec("b", rv(2, 9, 5)), rec("c", rv(1, 1, 1))]
    pairs = select_dynamic_pairs(records, SelectionConfig(top_k=1))
    assert [(p.winner_id, p.loser_id) for p in pairs] == [("a", "c")]
    assert pairs[0].stage is Stage.DYNAMIC_PREFERRED and pairs[0].delta_id == 8.0


def test_select_dynamic_pairs_no_dominance_gives_nothing():
    records = [rec("a", rv(9, 2, 5)), rec("b", rv(2, 9, 5))]
    assert select_dynamic_pairs(records, SelectionConfig()) == []


def test_select_dynamic_pairs_top_k_larger_than_candidates():
    records = [rec("a", rv(9, 9, 9)), rec("b", rv(5, 5, 5)), rec("c", rv(1, 1, 1))]
    pairs = select_dynamic_pairs(records, SelectionConfig(top_k=100))
    # candidates: (a,b), (a,c); b is dominated so it cannot be a winner
    assert len(pairs) == 2
    assert all(dominates(rv_of(records, p.winner_id), rv_of(records, p.loser_id)) for p in pairs)


def rv_of(records, rid):
    return next(r.rewards for r in records if r.id == rid)


def test_unscored_record_raises_state_error():
    records = [rec("a", rv(9, 9, 9)), rec("b", None)]
    with pytest.raises(StateError):
        select_id_pairs(records, SelectionConfig())
    with pytest.raises(StateError):
        select_dynamic_pairs(records, SelectionConfig())


def test_merge_pairs_union_semantics():
    p1 = [PreferencePair("a", "b", Stage.ID_PREFERRED, 4.0)]
    p2 = [
        PreferencePair("a", "b", Stage.DYNAMIC_PREFERRED, 4.0),
        PreferencePair("c", "d", Stage.DYNAMIC_PREFERRED, 5.0),
    ]
    merged = merge_pairs(p1, p2)
    assert len(merged) == 2
    assert merged[0].stage is Stage.ID_PREFERRED  # first occurrence kept
    assert merge_pairs([], []) == []


def test_merge_disjoint_sizes_add():
    p1 = [PreferencePair(f"w{i}", f"l{i}", Stage.ID_PREFERRED, 3.0) for i in range(12)]
    p2 = [PreferencePair(f"W{i}", f"L{i}", Stage.DYNAMIC_PREFERRED, 3.0) for i in range(100)]
    assert len(merge_pairs(p1, p2)) == 112


def test_selected_pairs_revalidate_on_random_repos():
    rng = np.random.default_rng(2)
    cfg = SelectionConfig(theta_id=2.0, tau_dy=3.0, top_k=10)
    for _ in range(40):
        n = int(rng.integers(2, 40))
        records = [rec(f"v{i:03d}", rv(*(1 + 9 * rng.random(3)))) for i in range(n)]
        scored = {r.id: r.rewards for r in records}
        for p in select_id_pairs(records, cfg):
            assert scored[p.winner_id].r_id - scored[p.loser_id].r_id >= cfg.theta_id
            assert scored[p.loser_id].r_dy - scored[p.winner_id].r_dy <= cfg.tau_dy
            assert p.delta_id == scored[p.winner_id].r_id - scored[p.loser_id].r_id
        dyn = select_dynamic_pairs(records, cfg)
        assert len(dyn) <= cfg.top_k
        deltas = [p.delta_id for p in dyn]
        assert deltas == sorted(deltas, reverse=True)
        for p in dyn:
            assert dominates(scored[p.winner_id], scored[p.loser_id])


def test_monotone_transform_preserves_dominance_structure():
    # strictly increasing per-channel maps leave dominance, the front
    # partition, and the stage-2 candidate set unchanged; with top_k covering
    # all candidates the selected id-pair set is unchanged as well
    rng = np.random.default_rng(3)
    maps = [lambda x: x**3, lambda x: np.expm1(x), lambda x: np.arctan(x)]
    for _ in range(20):
        n = int(rng.integers(2, 30))
        raw = {
            f"v{i:03d}": RawScores(
                id_raw=float(rng.uniform(-1, 1)),
                dy_raw=float(rng.uniform(0, 4)),
                sem_raw=float(rng.uniform(-1, 1)),
            )
            for i in range(n)
        }
        transformed = {
            k: RawScores(
                id_raw=float(np.arctan(r.id_raw)),
                dy_raw=float(np.expm1(r.dy_raw)),
                sem_raw=float(r.sem_raw**3),
            )
            for k, r in raw.items()
        }
        norm_a, norm_b = normalize_repository(raw), normalize_repository(transformed)
        ids = sorted(raw)
        for i in ids:
            for j in ids:
                assert dominates(norm_a[i], norm_a[j]) == dominates(norm_b[i], norm_b[j])
        assert partition_fronts(norm_a) == partition_fronts(norm_b)
        cfg = SelectionConfig(theta_id=1.0, tau_dy=2.0, top_k=10**6)
        recs_a = [rec(k, norm_a[k]) for k in ids]
        recs_b = [rec(k, norm_b[k]) for k in ids]
        keys_a = {p.key for p in select_dynamic_pairs(recs_a, cfg)}
        keys_b = {p.key for p in select_dynamic_pairs(recs_b, cfg)}
        assert keys_a == keys_b


def test_selection_config_validation():
    with pytest.raises(ConfigurationError):
        SelectionConfig(theta_id=0.0)
    with pytest.raises(ConfigurationError):
        SelectionConfig(top_k=0)
    with pytest.raises(DataError):
        PreferencePair("same", "same", Stage.ID_PREFERRED, 1.0)


def test_pairs_round_trip(tmp_path):
    pairs = [
        PreferencePair("w1", "l1", Stage.ID_PREFERRED, 4.5),
        PreferencePair("w2", "l2", Stage.DYNAMIC_PREFERRED, 1.25),
    ]
    path = tmp_path / "pairs.jsonl"
    save_pairs(pairs, path)
    loaded = load_pairs(path)
    assert loaded == pairs
    header = path.read_text().splitlines()[0]
    assert "magicid-pairs/1" in header
