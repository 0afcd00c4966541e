"""Retrieval tasks, protocols, and recall metrics.

Twelve tasks over the six latent sources: double-to-single (st2m, ms2t,
mt2s), single-to-double (m2st, t2ms, s2mt), and single-to-single. The "All"
protocol ranks against the whole test set; "Small Batches" ranks within
seeded partitions of 32 samples and averages. Candidate pools for
single-to-double tasks are the test tuples' paired cross-modal latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import collate, prepare_dataset
from .types import SOURCES, LatentVector

# task name -> (query source, candidate source)
TASKS: dict[str, tuple[str, str]] = {
    "st2m": ("st", "m"), "m2st": ("m", "st"),
    "ms2t": ("ms", "t"), "t2ms": ("t", "ms"),
    "mt2s": ("mt", "s"), "s2mt": ("s", "mt"),
    "t2m": ("t", "m"), "m2t": ("m", "t"),
    "s2m": ("s", "m"), "m2s": ("m", "s"),
    "t2s": ("t", "s"), "s2t": ("s", "t"),
}

# report column order and headers (the two single-to-double tasks go by
# their table aliases in CSV output)
REPORT_ORDER = ("st2m", "m2st", "ms2t", "t2ms", "mt2s", "s2mt",
                "t2m", "m2t", "s2m", "m2s", "t2s", "s2t")
TABLE_ALIASES = {"t2ms": "t2sm", "mt2s": "tm2s"}

RECALL_RANKS = (1, 2, 3, 5, 10)
SMALL_BATCH = 32


@dataclass(frozen=True)
class EmbeddingStore:
    """Eval-mode latents for a corpus, aligned per source with `ids`."""

    ids: tuple[str, ...]
    vectors: dict[str, np.ndarray]  # source -> (N, d) float32

    def __post_init__(self):
        n = len(self.ids)
        for src, mat in self.vectors.items():
            if mat.shape[0] != n:
                raise ValueError(f"source {src} has {mat.shape[0]} rows for {n} ids")

    def to_latents(self) -> list[LatentVector]:
        out = []
        for src in SOURCES:
            if src not in self.vectors:
                continue
            for i, sid in enumerate(self.ids):
                out.append(LatentVector(values=self.vectors[src][i], source=src, sample_id=sid))
        return out

    @classmethod
    def from_latents(cls, latents: list[LatentVector]) -> "EmbeddingStore":
        ids = []
        seen = set()
        for lv in latents:
            if lv.sample_id not in seen:
                seen.add(lv.sample_id)
                ids.append(lv.sample_id)
        index = {sid: i for i, sid in enumerate(ids)}
        by_src: dict[str, dict[int, np.ndarray]] = {}
        for lv in latents:
            by_src.setdefault(lv.source, {})[index[lv.sample_id]] = lv.values
        vectors = {}
        for src, rows in by_src.items():
            if len(rows) != len(ids):
                raise ValueError(f"source {src} does not cover every sample")
            vectors[src] = np.stack([rows[i] for i in range(len(ids))])
        return cls(ids=tuple(ids), vectors=vectors)


def embed_corpus(model, samples, prepared=None, batch_size: int = 64) -> EmbeddingStore:
    """Deterministic eval-mode latents for every sample, id-indexed."""
    if prepared is None:
        prepared = prepare_dataset(samples, model.cfg)
    model.eval()
    dtype = next(model.parameters()).dtype
    chunks: dict[str, list[np.ndarray]] = {}
    ids: list[str] = []
    with torch.no_grad():
        for i in range(0, len(prepared), batch_size):
            batch = collate(prepared[i:i + batch_size], dtype=dtype)
            latents, _ = model.forward_batch(batch, noise=None)
            ids.extend(batch["ids"])
            for src, vals in latents.items():
                chunks.setdefault(src, []).append(vals.cpu().numpy().astype(np.float32))
    vectors = {src: np.concatenate(parts) for src, parts in chunks.items()}
    return EmbeddingStore(ids=tuple(ids), vectors=vectors)


def _normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if (norms == 0).any():
        raise FloatingPointError("zero-norm latent in store")
    return mat / norms


def rank_candidates(query: np.ndarray, candidates: list[tuple[str, np.ndarray]],
                    truth_id: str) -> tuple[list[str], int]:
    """Candidates by descending cosine similarity; ties by ascending id."""
    if truth_id not in {cid for cid, _ in candidates}:
        raise ValueError(f"ground truth {truth_id!r} not among candidates")
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    scored = []
    for cid, vec in candidates:
        v = np.asarray(vec, dtype=np.float64)
        scored.append((-float(q @ (v / np.linalg.norm(v))), cid))
    scored.sort()
    ranked = [cid for _, cid in scored]
    return ranked, ranked.index(truth_id) + 1


def _pool_ranks(q: np.ndarray, c: np.ndarray, ids: list[str]) -> np.ndarray:
    """Rank of the diagonal entry for every query in one candidate pool."""
    sims = _normalize(q.astype(np.float64)) @ _normalize(c.astype(np.float64)).T
    n = sims.shape[0]
    order = np.argsort(ids)  # position in ascending-id order, for tie-breaking
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[order] = np.arange(n)
    diag = sims[np.arange(n), np.arange(n)]
    better = (sims > diag[:, None]).sum(axis=1)
    ties = (sims == diag[:, None]) & (id_rank[None, :] < id_rank[np.arange(n), None])
    return 1 + better + ties.sum(axis=1)


def recall_at_k(ranks, k: int) -> float:
    """Percentage of ranks at or above cutoff k."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    return 100.0 * float((ranks <= k).sum()) / ranks.size


def mrecall(recalls: dict[int, float]) -> float:
    if set(recalls) != set(RECALL_RANKS):
        raise ValueError(f"mRecall requires recalls at ranks {RECALL_RANKS}")
    return float(np.mean([recalls[k] for k in RECALL_RANKS]))


def task_ranks(task: str, store: EmbeddingStore, indices: np.ndarray | None = None) -> np.ndarray:
    qsrc, csrc = TASKS[task]
    q, c = store.vectors[qsrc], store.vectors[csrc]
    ids = list(store.ids)
    if indices is not None:
        q, c = q[indices], c[indices]
        ids = [ids[i] for i in indices]
    return _pool_ranks(q, c, ids)


def evaluate_task(task: str, protocol: str, store: EmbeddingStore, *,
                  batch: int = SMALL_BATCH, shuffle_seed: int = 0) -> dict[int, float]:
    """Recall@{1,2,3,5,10} for one task under one protocol."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    n = len(store.ids)
    if protocol == "all":
        ranks = task_ranks(task, store)
        return {k: recall_at_k(ranks, k) for k in RECALL_RANKS}
    if protocol == "small":
        if n < batch:
            raise ValueError(f"test set of {n} smaller than batch {batch}")
        rng = np.random.default_rng(shuffle_seed)
        perm = rng.permutation(n)
        per_batch = []
        for b0 in range(0, n - batch + 1, batch):
            idx = perm[b0:b0 + batch]
            ranks = task_ranks(task, store, idx)
            per_batch.append({k: recall_at_k(ranks, k) for k in RECALL_RANKS})
        return {k: float(np.mean([pb[k] for pb in per_batch])) for k in RECALL_RANKS}
    raise ValueError(f"unknown protocol {protocol!r}")


def full_report(store: EmbeddingStore, protocols=("all", "small"), *,
                shuffle_seed: int = 0) -> dict:
    """Per task x protocol Recall@K and mRecall."""
    report = {"pool_size": len(store.ids), "shuffle_seed": shuffle_seed, "protocols": {}}
    for protocol in protocols:
        per_task = {}
        for task in REPORT_ORDER:
            recalls = evaluate_task(task, protocol, store, shuffle_seed=shuffle_seed)
            per_task[task] = {"recall": recalls, "mrecall": mrecall(recalls)}
        report["protocols"][protocol] = per_task
    return report


def report_to_csv(report: dict) -> str:
    """mRecall and Recall@K rows in the table column order."""
    headers = [TABLE_ALIASES.get(t, t) for t in REPORT_ORDER]
    lines = ["protocol,metric," + ",".join(headers) + ",avg"]
    for protocol, per_task in report["protocols"].items():
        for metric in ["mrecall"] + [f"recall@{k}" for k in RECALL_RANKS]:
            vals = []
            for task in REPORT_ORDER:
                entry = per_task[task]
                vals.append(entry["mrecall"] if metric == "mrecall"
                            else entry["recall"][int(metric.split("@")[1])])
            row = [protocol, metric] + [f"{v:.4f}" for v in vals] + [f"{float(np.mean(vals)):.4f}"]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"
