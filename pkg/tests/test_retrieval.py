import numpy as np
import pytest

from trimoret.retrieval import (
    EmbeddingStore,
    REPORT_ORDER,
    RECALL_RANKS,
    TABLE_ALIASES,
    TASKS,
    evaluate_task,
    full_report,
    mrecall,
    rank_candidates,
    recall_at_k,
    report_to_csv,
    task_ranks,
)
from trimoret.types import SOURCES


# --- metric oracles -----------------------------------------------------------

def test_recall_at_k_enumeration():
    # [DERIVED] ranks <= 3: {1, 3, 2} out of 5 -> 60%
    assert recall_at_k([1, 3, 7, 2, 11], 3) == 60.0


def test_recall_all_first():
    assert all(recall_at_k([1, 1, 1], k) == 100.0 for k in RECALL_RANKS)


def test_recall_none_within_cutoff():
    assert recall_at_k([11, 12, 13], 10) == 0.0


def test_recall_empty_rejected():
    with pytest.raises(ValueError):
        recall_at_k([], 1)


def test_mrecall_arithmetic_mean():
    # [DERIVED] mean of {10,20,30,50,70}
    assert mrecall({1: 10, 2: 20, 3: 30, 5: 50, 10: 70}) == 36.0


def test_mrecall_perfect():
    assert mrecall({k: 100.0 for k in RECALL_RANKS}) == 100.0


def test_mrecall_rejects_other_rank_sets():
    with pytest.raises(ValueError):
        mrecall({1: 10, 2: 20, 3: 30, 4: 40, 5: 50})


# --- candidate ranking ----------------------------------------------------------

def test_rank_exact_match_first():
    ranked, rank = rank_candidates(
        np.array([1.0, 0.0]),
        [("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.0]))],
        truth_id="a")
    assert ranked[0] == "a" and rank == 1


def test_rank_tie_breaks_by_ascending_id():
    ranked, _ = rank_candidates(
        np.array([1.0, 1.0]),
        [("z", np.array([1.0, 0.0])), ("a", np.array([0.0, 1.0]))],
        truth_id="z")
    assert ranked == ["a", "z"]


def test_rank_missing_truth_rejected():
    with pytest.raises(ValueError):
        rank_candidates(np.ones(2), [("a", np.ones(2))], truth_id="b")


def test_rank_matches_full_sort_oracle(rng):
    query = rng.standard_normal(6)
    cands = [(f"c{i}", rng.standard_normal(6)) for i in range(5)]
    ranked, rank = rank_candidates(query, cands, truth_id="c3")

    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    oracle = sorted(cands, key=lambda kv: (-cos(query, kv[1]), kv[0]))
    assert ranked == [cid for cid, _ in oracle]
    assert rank == ranked.index("c3") + 1


# --- task catalogue ----------------------------------------------------------

def test_twelve_tasks():
    assert set(TASKS) == {"st2m", "m2st", "ms2t", "t2ms", "mt2s", "s2mt",
                          "t2m", "m2t", "s2m", "m2s", "t2s", "s2t"}
    for name, (q, c) in TASKS.items():
        assert q != c
        assert name == f"{q}2{c}"


def test_report_header_uses_table_aliases():
    assert TABLE_ALIASES == {"t2ms": "t2sm", "mt2s": "tm2s"}


# --- protocol evaluation against a brute-force oracle ---------------------------

def _random_store(n, d, rng):
    ids = tuple(f"s{i:02d}" for i in range(n))
    vectors = {src: rng.standard_normal((n, d)).astype(np.float32) for src in SOURCES}
    return EmbeddingStore(ids=ids, vectors=vectors)


def _oracle_ranks(store, task, indices):
    """Independent per-query brute-force ranking with id tie-breaks."""
    qsrc, csrc = TASKS[task]
    ranks = []
    for qi in indices:
        q = store.vectors[qsrc][qi].astype(np.float64)
        cands = [(store.ids[ci], store.vectors[csrc][ci]) for ci in indices]
        _, rank = rank_candidates(q, cands, truth_id=store.ids[qi])
        ranks.append(rank)
    return ranks


@pytest.mark.parametrize("task", sorted(TASKS))
def test_all_protocol_matches_oracle(task, rng):
    store = _random_store(8, 5, rng)
    got = task_ranks(task, store)
    expected = _oracle_ranks(store, task, list(range(8)))
    assert list(got) == expected


@pytest.mark.parametrize("task", sorted(TASKS))
def test_small_batches_matches_oracle(task, rng):
    store = _random_store(8, 5, rng)
    shuffle_seed = 3
    got = evaluate_task(task, "small", store, batch=4, shuffle_seed=shuffle_seed)

    perm = np.random.default_rng(shuffle_seed).permutation(8)
    per_batch = []
    for b0 in (0, 4):
        idx = [int(i) for i in perm[b0:b0 + 4]]
        ranks = _oracle_ranks(store, task, idx)
        per_batch.append({k: recall_at_k(ranks, k) for k in RECALL_RANKS})
    expected = {k: float(np.mean([pb[k] for pb in per_batch])) for k in RECALL_RANKS}
    assert got == expected


def test_protocols_coincide_when_test_size_equals_batch(rng):
    store = _random_store(6, 4, rng)
    for task in ("st2m", "t2s"):
        assert (evaluate_task(task, "all", store)
                == evaluate_task(task, "small", store, batch=6))


def test_perfect_oracle_embeddings_hit_recall_100(rng):
    n = 8
    ids = tuple(f"s{i}" for i in range(n))
    onehot = np.eye(n, dtype=np.float32)
    store = EmbeddingStore(ids=ids, vectors={src: onehot.copy() for src in SOURCES})
    for task in TASKS:
        recalls = evaluate_task(task, "all", store)
        assert all(v == 100.0 for v in recalls.values())


def test_small_batches_drops_remainder(rng):
    store = _random_store(10, 4, rng)  # one batch of 4 fits twice, 2 dropped
    got = evaluate_task("t2m", "small", store, batch=4, shuffle_seed=0)
    perm = np.random.default_rng(0).permutation(10)
    used = [int(i) for i in perm[:8]]
    assert len(used) == 8  # batches of 4, remainder of 2 unused
    assert all(0.0 <= v <= 100.0 for v in got.values())


def test_small_batches_requires_enough_samples(rng):
    store = _random_store(8, 4, rng)
    with pytest.raises(ValueError):
        evaluate_task("t2m", "small", store, batch=32)


def test_recall_monotone_in_k(rng):
    store = _random_store(32, 4, rng)
    report = full_report(store, protocols=("all", "small"), shuffle_seed=1)
    for protocol in ("all", "small"):
        per_task = report["protocols"][protocol]
        for task in REPORT_ORDER:
            rec = per_task[task]["recall"]
            vals = [rec[k] for k in RECALL_RANKS]
            assert vals == sorted(vals)


def test_full_report_csv_layout(rng):
    store = _random_store(8, 4, rng)
    report = full_report(store, protocols=("all",))
    csv = report_to_csv(report)
    header = csv.splitlines()[0].split(",")
    assert header == ["protocol", "metric", "st2m", "m2st", "ms2t", "t2sm",
                      "tm2s", "s2mt", "t2m", "m2t", "s2m", "m2s", "t2s",
                      "s2t", "avg"]
    assert csv.splitlines()[1].startswith("all,mrecall,")


def test_full_report_deterministic(rng):
    store = _random_store(8, 4, rng)
    a = report_to_csv(full_report(store, protocols=("all",)))
    b = report_to_csv(full_report(store, protocols=("all",)))
    assert a == b
