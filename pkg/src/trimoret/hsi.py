"""Evaluation toolkit for human-scene interaction: Frechet distance over
motion-scene cross-modal embeddings, condition-adherence recall, rotation
plausibility sweeps, and grid-search object placement.

"Generated" motions are perturbed ground truth; the toolkit only needs
trained parameters read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np
import torch

from .model import collate, prepare_dataset, prepare_sample
from .retrieval import EmbeddingStore, embed_corpus, recall_at_k
from .types import MotionSequence, PELVIS, ScenePointCloud, TrimodalSample

DEFAULT_ANGLES = tuple(np.linspace(0.0, math.pi, 9))
INTERPENETRATION_MARGIN = 0.02  # box shrink, meters
POINT_FALLBACK_RADIUS = 0.05    # meta-less scenes: joint-to-point distance


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray        # (d,)
    covariance: np.ndarray  # (d, d), symmetric PSD (eigenvalues clamped on use)
    count: int


def fit_gaussian(latents: np.ndarray) -> GaussianMoments:
    """Sample mean and unbiased sample covariance."""
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two latent vectors")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, bias=False)
    cov = np.atleast_2d(cov)
    return GaussianMoments(mean=mean, covariance=cov, count=x.shape[0])


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(g1: GaussianMoments, g2: GaussianMoments) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)."""
    for g in (g1, g2):
        c = g.covariance
        if not np.allclose(c, c.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
    c1 = 0.5 * (g1.covariance + g1.covariance.T)
    c2 = 0.5 * (g2.covariance + g2.covariance.T)
    s1 = _sqrtm_psd(c1)
    cross = _sqrtm_psd(s1 @ c2 @ s1)
    mean_term = float(((g1.mean - g2.mean) ** 2).sum())
    return mean_term + float(np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))


def fid_score(model, generated, reference, *, source: str = "ms") -> float:
    """Frechet distance between motion-scene embedding populations."""
    if len(generated) < 2 or len(reference) < 2:
        raise ValueError("both populations need at least two samples")
    gen = embed_corpus(model, generated).vectors[source]
    ref = embed_corpus(model, reference).vectors[source]
    return frechet_distance(fit_gaussian(gen), fit_gaussian(ref))


def fid_self_baseline(model, samples, seed: int = 0, *, source: str = "ms") -> float:
    """FID between two seeded halves of the same population."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    half = len(samples) // 2
    a = [samples[i] for i in perm[:half]]
    b = [samples[i] for i in perm[half:2 * half]]
    return fid_score(model, a, b, source=source)


def hsi_recall(model, generated, condition_pool, ks=(1, 2, 3)) -> dict[int, float]:
    """Rank the pool's scene-text latents against each generated motion.

    Generated samples must carry the id of their (scene, text) condition.
    """
    if len(condition_pool) < 2:
        raise ValueError("condition pool must have at least two entries")
    pool_store = embed_corpus(model, condition_pool)
    gen_store = embed_corpus(model, generated)
    vm = gen_store.vectors["m"]
    vst = pool_store.vectors["st"]
    vm = vm / np.linalg.norm(vm, axis=1, keepdims=True)
    vst = vst / np.linalg.norm(vst, axis=1, keepdims=True)
    sims = vm.astype(np.float64) @ vst.astype(np.float64).T
    pool_index = {sid: i for i, sid in enumerate(pool_store.ids)}
    ranks = []
    for row, sid in enumerate(gen_store.ids):
        if sid not in pool_index:
            raise ValueError(f"condition pool missing sample {sid!r}")
        truth = pool_index[sid]
        s = sims[row]
        ranks.append(1 + int((s > s[truth]).sum()))
    return {k: recall_at_k(ranks, k) for k in ks}


# ---------------------------------------------------------------------------
# geometric perturbations


def rotate_motion(motion: MotionSequence, theta: float,
                  pivot: np.ndarray | None = None) -> MotionSequence:
    """Rotate every joint about the vertical axis through the pivot.

    The pivot defaults to the final-frame pelvis position; heights are
    unchanged.
    """
    frames = np.asarray(motion.frames, dtype=np.float64).copy()
    if pivot is None:
        pivot = frames[-1, PELVIS, :2]
    else:
        pivot = np.asarray(pivot, dtype=np.float64)[:2]
    c, s = math.cos(theta), math.sin(theta)
    x = frames[..., 0] - pivot[0]
    y = frames[..., 1] - pivot[1]
    frames[..., 0] = c * x - s * y + pivot[0]
    frames[..., 1] = s * x + c * y + pivot[1]
    return MotionSequence(frames=frames.astype(np.float32))


def check_interpenetration(motion: MotionSequence, scene: ScenePointCloud,
                           margin: float = INTERPENETRATION_MARGIN):
    """True plus offending (frame, joint) pairs if any joint sits inside a
    scene object box shrunk by the margin.

    Scenes without metadata fall back to a joint-to-point proximity test
    against non-floor points.
    """
    frames = np.asarray(motion.frames, dtype=np.float64)
    hits: list[tuple[int, int]] = []
    if scene.meta is not None:
        for obj in scene.meta.objects:
            lo = obj.box_min + margin
            hi = obj.box_max - margin
            inside = ((frames > lo) & (frames < hi)).all(axis=2)
            for f, j in np.argwhere(inside):
                hits.append((int(f), int(j)))
    else:
        pts = np.asarray(scene.points, dtype=np.float64)
        solid = pts[pts[:, 2] > 1e-6, :3]
        if len(solid):
            flat = frames.reshape(-1, 3)
            d2 = ((flat[:, None, :] - solid[None, :, :]) ** 2).sum(-1).min(axis=1)
            for idx in np.nonzero(d2 < POINT_FALLBACK_RADIUS ** 2)[0]:
                hits.append((int(idx // frames.shape[1]), int(idx % frames.shape[1])))
    hits = sorted(set(hits))
    return bool(hits), hits


def motion_in_bounds(motion: MotionSequence, scene: ScenePointCloud) -> bool:
    if scene.meta is None:
        return True
    lo, hi = scene.meta.room_bounds
    xy = np.asarray(motion.frames, dtype=np.float64)[..., :2]
    return bool((xy >= lo[:2]).all() and (xy <= hi[:2]).all())


@dataclass(frozen=True)
class RotationSweepResult:
    angles: tuple[float, ...]
    fid: tuple[float, ...]
    recall1: tuple[float, ...]
    mode: str  # filtered | unfiltered
    kept: tuple[int, ...]
    interpenetrating: tuple[int, ...]
    skipped_angles: tuple[float, ...]


def rotation_sweep(model, samples, angles=DEFAULT_ANGLES, mode: str = "filtered") -> RotationSweepResult:
    """Per angle: rotate all motions, filter, and score FID plus st2m Recall@1.

    Filtered mode drops rotations that leave the room or interpenetrate;
    unfiltered keeps every rotation, so its population is identical across
    angles and per-angle scores measure degradation, not survivor selection
    (motions are never voxelized, so out-of-room frames stay representable).
    """
    if mode not in ("filtered", "unfiltered"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    angles = tuple(float(a) for a in angles)
    if sorted(angles) != list(angles) or angles[0] != 0.0:
        raise ValueError("angle grid must be ascending and start at 0")

    ref_store = embed_corpus(model, samples)
    ref_ms = ref_store.vectors["ms"]
    ref_gauss = fit_gaussian(ref_ms)
    vst = ref_store.vectors["st"]
    vst = (vst / np.linalg.norm(vst, axis=1, keepdims=True)).astype(np.float64)
    vm_ref = ref_store.vectors["m"]
    vm_ref = (vm_ref / np.linalg.norm(vm_ref, axis=1, keepdims=True)).astype(np.float64)
    # distractor similarities vs the clean pool; the pool size stays fixed
    # across angles so Recall@1 measures degradation, not pool shrinkage
    base_sims = vst @ vm_ref.T

    fids, recalls, kept_counts, interp_counts, skipped = [], [], [], [], []
    for theta in angles:
        rotated, keep_idx, n_interp = [], [], 0
        for i, s in enumerate(samples):
            m = rotate_motion(s.motion, theta)
            in_bounds = motion_in_bounds(m, s.scene)
            interp, _ = check_interpenetration(m, s.scene)
            n_interp += int(interp)
            if mode == "filtered" and (interp or not in_bounds):
                continue
            rotated.append(dc_replace(s, motion=m))
            keep_idx.append(i)
        interp_counts.append(n_interp)
        if len(rotated) < 2:
            skipped.append(theta)
            fids.append(float("nan"))
            recalls.append(float("nan"))
            kept_counts.append(len(rotated))
            continue
        rot_store = embed_corpus(model, rotated)
        fids.append(frechet_distance(fit_gaussian(rot_store.vectors["ms"]), ref_gauss))
        vm = rot_store.vectors["m"]
        vm = (vm / np.linalg.norm(vm, axis=1, keepdims=True)).astype(np.float64)
        # each rotated motion competes against the other samples' clean
        # motions for its own (scene, text) query
        keep = np.asarray(keep_idx)
        rot_sim = np.einsum("ij,ij->i", vst[keep], vm)
        better = (base_sims[keep] > rot_sim[:, None]).sum(axis=1)
        better -= (base_sims[keep, keep] > rot_sim).astype(np.int64)  # self excluded
        recalls.append(recall_at_k(1 + better, 1))
        kept_counts.append(len(rotated))

    return RotationSweepResult(
        angles=angles, fid=tuple(fids), recall1=tuple(recalls), mode=mode,
        kept=tuple(kept_counts), interpenetrating=tuple(interp_counts),
        skipped_angles=tuple(skipped),
    )


def sweep_to_csv(result: RotationSweepResult) -> str:
    lines = ["theta,fid,recall1,mode,kept,interpenetrating"]
    for i, theta in enumerate(result.angles):
        lines.append(f"{theta!r},{result.fid[i]!r},{result.recall1[i]!r},"
                     f"{result.mode},{result.kept[i]},{result.interpenetrating[i]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# in-scene object placement


def offset_lattice(cell: float = 0.25, grid: int = 5) -> np.ndarray:
    """(grid^3, 3) xyz offsets in meters, centered on zero."""
    half = grid // 2
    steps = np.arange(-half, grid - half)
    return np.array([(i * cell, j * cell, k * cell)
                     for i in steps for j in steps for k in steps])


def _edit_scene(scene: ScenePointCloud, target_index: int, offset: np.ndarray) -> ScenePointCloud | None:
    """Translate the target object's points; None if the box leaves the room."""
    obj = scene.meta.objects[target_index]
    lo, hi = scene.meta.room_bounds
    if ((obj.box_min + offset) < lo).any() or ((obj.box_max + offset) > hi).any():
        return None
    s, e = obj.point_range
    pts = np.asarray(scene.points, dtype=np.float64).copy()
    pts[s:e, :3] += offset
    return ScenePointCloud(points=pts.astype(np.float32), meta=scene.meta)


@dataclass(frozen=True)
class PlacementResult:
    predicted_offset: np.ndarray  # (3,) meters
    error_cm: float
    scores: np.ndarray            # per scored offset
    offsets: np.ndarray           # (n_scored, 3) offsets actually scored
    rejected: int


def place_object_grid(model, sample: TrimodalSample, *, cell: float = 0.25,
                      grid: int = 5, scorer=None) -> PlacementResult:
    """Score edited scenes against the sample's motion-text embedding and
    pick the argmax cell; error is the predicted offset norm in cm.

    `scorer(offsets) -> scores` replaces the model-based scoring when given
    (oracle hook for tests).
    """
    meta = sample.scene.meta
    if meta is None or not (0 <= sample.truth.target_index < len(meta.objects)):
        raise ValueError("invalid target index")
    lattice = offset_lattice(cell, grid)

    offsets, scenes = [], []
    rejected = 0
    for off in lattice:
        edited = _edit_scene(sample.scene, sample.truth.target_index, off)
        if edited is None:
            rejected += 1
            continue
        offsets.append(off)
        scenes.append(edited)
    offsets = np.array(offsets)

    if scorer is not None:
        scores = np.asarray(scorer(offsets), dtype=np.float64)
    else:
        store = embed_corpus(model, [sample])
        vmt = store.vectors["mt"][0].astype(np.float64)
        vmt /= np.linalg.norm(vmt)
        vs = _embed_scenes(model, scenes)
        vs = vs / np.linalg.norm(vs, axis=1, keepdims=True)
        scores = vs @ vmt

    # argmax; ties broken by lowest offset norm, then lexicographic order
    norms = np.linalg.norm(offsets, axis=1)
    best = min(range(len(offsets)),
               key=lambda i: (-scores[i], norms[i], tuple(offsets[i])))
    pred = offsets[best]
    return PlacementResult(predicted_offset=pred, error_cm=float(np.linalg.norm(pred) * 100.0),
                           scores=scores, offsets=offsets, rejected=rejected)


def _embed_scenes(model, scenes: list[ScenePointCloud]) -> np.ndarray:
    """Mean latents from the scene encoder alone."""
    from .model import voxelize_scene, _pad_stack

    dtype = next(model.parameters()).dtype
    feats, voxes = [], []
    for sc in scenes:
        f, v = voxelize_scene(sc, model.cfg)
        feats.append(f)
        voxes.append(v)
    feat_t, mask = _pad_stack(feats, dtype)
    vox = np.zeros(mask.shape, dtype=np.int64)
    for i, v in enumerate(voxes):
        vox[i, : len(v)] = v
    with torch.no_grad():
        tokens = model.scene_tokens(feat_t, torch.as_tensor(vox))
        mu, _, _ = model.unimodal["s"](tokens, mask)
        skip = model.scene_code_skip(feat_t, mask)
        if skip is not None:
            mu = mu + skip
    return mu.cpu().numpy().astype(np.float64)


def placement_report_csv(rows: list[tuple[str, np.ndarray, float]]) -> str:
    lines = ["sample_id,pred_offset_x_cm,pred_offset_y_cm,pred_offset_z_cm,error_cm"]
    for sid, off, err in rows:
        cm = off * 100.0
        lines.append(f"{sid},{cm[0]!r},{cm[1]!r},{cm[2]!r},{err!r}")
    return "\n".join(lines) + "\n"
