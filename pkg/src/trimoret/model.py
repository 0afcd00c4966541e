"""Encoder stack: per-modality tokenizers, three unimodal transformer
variational encoders, and three cross-modal encoders over concatenated
residue tokens.

Unimodal encoders prepend two learned distribution-query tokens; the outputs
at those positions become (mu, logvar) and the remaining positions are the
residue tokens handed to the cross-modal encoders. Inference uses the mean
latent (zero noise) so evaluation is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .types import (JOINT_NAMES, PELVIS, LatentVector, MotionSequence,
                    ScenePointCloud, TrimodalSample)

_RIGHT_WRIST = JOINT_NAMES.index("right_wrist")
_LEFT_FOOT = JOINT_NAMES.index("left_foot")
_RIGHT_FOOT = JOINT_NAMES.index("right_foot")

UNIMODAL = ("t", "m", "s")
CROSSMODAL = ("st", "mt", "ms")
# concatenation order per cross encoder: first-named modality's residue first
CROSS_INPUTS = {"st": ("s", "t"), "mt": ("m", "t"), "ms": ("m", "s")}


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 32
    token_dim: int = 64
    num_layers: int = 1
    num_heads: int = 4
    ff_dim: int = 128
    text_dim: int = 768
    text_tokens: int = 8
    scene_grid: tuple[int, int, int] = (8, 8, 4)
    motion_stride: int = 2
    max_tokens: int = 64
    init_seed: int = 0
    cross_modal: bool = True
    # affine input normalization so coordinate features sit near [-1, 1]
    coord_center: tuple[float, float, float] = (3.0, 3.0, 1.0)
    coord_scale: float = 3.0
    # sinusoidal position codes appended to coordinate features. Dot products
    # of matching codes form a kernel that peaks when positions coincide, so
    # cosine similarity can express spatial proximity — raw linear coordinates
    # cannot. Frequencies are cycles per normalized unit; wavelengths span the
    # room (coord_scale / f meters). Deliberately non-harmonic: with octave
    # frequencies a 1.5 m displacement re-peaks most components at once
    # (aliasing), so a badly displaced match can score like a true one; this
    # set keeps every re-peak of the summed kernel below 0.35 out to 4.5 m.
    coord_freqs: tuple[float, ...] = (0.45, 1.1, 2.3, 4.1, 7.9)
    # additive skip from pooled position codes into every latent. The
    # transformer pathway alone never finds the code alignment (a saddle:
    # both encoders must expose matching codes before either gets gradient),
    # so the kernel is wired in at init via identity-initialized projections
    # and training only has to calibrate gains/phases per frequency.
    code_skip: bool = True

    def __post_init__(self):
        if self.latent_dim <= 0 or self.token_dim <= 0 or self.num_heads <= 0:
            raise ValueError("dims and heads must be positive")
        if self.token_dim % self.num_heads:
            raise ValueError("token_dim must be divisible by num_heads")

    @property
    def scene_feat_dim(self) -> int:
        return 6 + 6 * len(self.coord_freqs)

    @property
    def motion_feat_dim(self) -> int:
        return 66 + 6 * len(self.coord_freqs)

    @property
    def code_dim(self) -> int:
        return 6 * len(self.coord_freqs)

    @property
    def xy_code_dim(self) -> int:
        # leading slice of a position code covering the x and y blocks
        return 4 * len(self.coord_freqs)


# ---------------------------------------------------------------------------
# numpy-side tokenizer features (shared by training cache and one-off encoding)


def fourier_features(coords: np.ndarray, freqs: tuple[float, ...]) -> np.ndarray:
    """sin/cos codes of normalized coordinates: (..., k) -> (..., 2k·|freqs|)."""
    ang = 2.0 * np.pi * np.stack([coords * f for f in freqs], axis=-1)
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(*coords.shape[:-1], -1)


def _subsample(n: int, cap: int) -> np.ndarray:
    """Fixed-stride selection of cap indices out of n (n > cap)."""
    return np.unique(np.round(np.linspace(0, n - 1, cap)).astype(np.int64))


def voxelize_scene(scene: ScenePointCloud, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel mean of (xyz, rgb) plus flat voxel indices.

    Order-free: points are canonically sorted before accumulation so any
    permutation of the input yields bit-identical features.
    """
    pts = np.asarray(scene.points, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("empty point cloud")
    if scene.meta is not None:
        lo, hi = scene.meta.room_bounds
    else:
        lo, hi = pts[:, :3].min(0), pts[:, :3].max(0)
    g = np.array(cfg.scene_grid)
    span = np.maximum(hi - lo, 1e-9)
    cell = np.clip(((pts[:, :3] - lo) / span * g).astype(np.int64), 0, g - 1)
    flat = (cell[:, 0] * g[1] + cell[:, 1]) * g[2] + cell[:, 2]
    order = np.lexsort((pts[:, 5], pts[:, 4], pts[:, 3], pts[:, 2], pts[:, 1], pts[:, 0], flat))
    flat = flat[order]
    pts = pts[order]
    vox, starts = np.unique(flat, return_index=True)
    sums = np.add.reduceat(pts, starts, axis=0)
    counts = np.diff(np.concatenate([starts, [len(flat)]]))
    feats = sums / counts[:, None]
    if len(vox) > cfg.max_tokens:
        sel = _subsample(len(vox), cfg.max_tokens)
        vox, feats = vox[sel], feats[sel]
    feats = feats.copy()
    feats[:, :3] = (feats[:, :3] - np.asarray(cfg.coord_center)) / cfg.coord_scale
    feats[:, 3:] = feats[:, 3:] * 2.0 - 1.0
    feats = np.concatenate([feats, fourier_features(feats[:, :3], cfg.coord_freqs)], axis=1)
    return feats.astype(np.float32), vox


def motion_features(motion: MotionSequence, cfg: ModelConfig) -> np.ndarray:
    """Strided frames: flattened joints plus the pelvis position code."""
    frames = np.asarray(motion.frames, dtype=np.float64)
    frames = (frames - np.asarray(cfg.coord_center)) / cfg.coord_scale
    strided = frames[:: cfg.motion_stride]
    flat = strided.reshape(-1, frames.shape[1] * 3)
    rows = np.concatenate([flat, fourier_features(strided[:, PELVIS], cfg.coord_freqs)], axis=1)
    rows = rows.astype(np.float32)
    if rows.shape[0] > cfg.max_tokens:
        rows = rows[_subsample(rows.shape[0], cfg.max_tokens)]
    return rows


@dataclass
class PreparedSample:
    """Cached tokenizer inputs for one sample (cheap to batch repeatedly)."""

    sample_id: str
    text: np.ndarray         # (text_dim,)
    scene_feats: np.ndarray  # (n_vox, scene_feat_dim)
    scene_vox: np.ndarray    # (n_vox,)
    motion: np.ndarray       # (n_frames, motion_feat_dim)


def prepare_sample(sample: TrimodalSample, cfg: ModelConfig) -> PreparedSample:
    feats, vox = voxelize_scene(sample.scene, cfg)
    return PreparedSample(
        sample_id=sample.id,
        text=np.asarray(sample.text.values, dtype=np.float32),
        scene_feats=feats,
        scene_vox=vox,
        motion=motion_features(sample.motion, cfg),
    )


def prepare_dataset(samples, cfg: ModelConfig) -> list[PreparedSample]:
    return [prepare_sample(s, cfg) for s in samples]


def _pad_stack(arrays: list[np.ndarray], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (L_i, F) arrays; returns (B, L, F) and pad mask."""
    b = len(arrays)
    lmax = max(a.shape[0] for a in arrays)
    width = arrays[0].shape[1] if arrays[0].ndim == 2 else 0
    out = np.zeros((b, lmax, width) if width else (b, lmax), dtype=np.float64)
    mask = np.ones((b, lmax), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
        mask[i, : a.shape[0]] = False
    return torch.as_tensor(out, dtype=dtype), torch.as_tensor(mask)


def collate(batch: list[PreparedSample], dtype=torch.float32) -> dict:
    text = torch.as_tensor(np.stack([p.text for p in batch]), dtype=dtype)
    scene_feats, scene_mask = _pad_stack([p.scene_feats for p in batch], dtype)
    vox = np.zeros(scene_mask.shape, dtype=np.int64)
    for i, p in enumerate(batch):
        vox[i, : len(p.scene_vox)] = p.scene_vox
    motion, motion_mask = _pad_stack([p.motion for p in batch], dtype)
    return {
        "ids": [p.sample_id for p in batch],
        "text": text,
        "scene_feats": scene_feats,
        "scene_vox": torch.as_tensor(vox),
        "scene_mask": scene_mask,
        "motion": motion,
        "motion_mask": motion_mask,
    }


# ---------------------------------------------------------------------------
# torch modules


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, i / dim)
    enc = torch.zeros(length, dim, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return enc.to(dtype)


def _make_transformer(cfg: ModelConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.token_dim,
        nhead=cfg.num_heads,
        dim_feedforward=cfg.ff_dim,
        dropout=0.0,
        batch_first=True,
        norm_first=True,
    )
    # final norm keeps the residual stream's shared component from swamping
    # the per-sample signal (contrastive training collapses without it)
    return nn.TransformerEncoder(layer, num_layers=cfg.num_layers,
                                 norm=nn.LayerNorm(cfg.token_dim),
                                 enable_nested_tensor=False)


class DistributionEncoder(nn.Module):
    """Transformer with two learned query tokens emitting (mu, logvar)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.queries = nn.Parameter(torch.randn(2, cfg.token_dim) * 0.02)
        self.encoder = _make_transformer(cfg)
        self.mu_head = nn.Linear(cfg.token_dim, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.token_dim, cfg.latent_dim)
        # start with near-deterministic latents: unit-variance sampling noise
        # at init drowns the contrastive signal and stalls training
        nn.init.zeros_(self.logvar_head.weight)
        nn.init.constant_(self.logvar_head.bias, -6.0)

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor | None):
        b = tokens.shape[0]
        q = self.queries.unsqueeze(0).expand(b, -1, -1)
        x = torch.cat([q, tokens], dim=1)
        if pad_mask is not None:
            mask = torch.cat([torch.zeros(b, 2, dtype=torch.bool, device=tokens.device), pad_mask], dim=1)
        else:
            mask = None
        y = self.encoder(x, src_key_padding_mask=mask)
        if not torch.isfinite(y).all():
            raise FloatingPointError("non-finite activations in transformer encoder")
        mu = self.mu_head(y[:, 0])
        logvar = self.logvar_head(y[:, 1])
        residue = y[:, 2:]
        return mu, logvar, residue


class CrossModalEncoder(nn.Module):
    """Transformer over two concatenated residue streams with segment embeddings."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.segments = nn.Parameter(torch.randn(2, cfg.token_dim) * 0.02)
        self.inner = DistributionEncoder(cfg)

    def forward(self, res_a, mask_a, res_b, mask_b):
        tokens = torch.cat([res_a + self.segments[0], res_b + self.segments[1]], dim=1)
        if mask_a is None:
            mask_a = torch.zeros(res_a.shape[:2], dtype=torch.bool, device=res_a.device)
        if mask_b is None:
            mask_b = torch.zeros(res_b.shape[:2], dtype=torch.bool, device=res_b.device)
        mask = torch.cat([mask_a, mask_b], dim=1)
        mu, logvar, _ = self.inner(tokens, mask)
        return mu, logvar


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """mu + exp(logvar / 2) * noise; zero noise recovers the mean latent."""
    return mu + torch.exp(0.5 * logvar) * noise


def masked_mean(x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
    """Mean over the length axis of (B, L, F), ignoring padded positions."""
    if pad_mask is None:
        return x.mean(dim=1)
    keep = (~pad_mask).to(x.dtype).unsqueeze(-1)
    return (x * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)


def fourier_features_torch(coords: torch.Tensor, freqs: tuple[float, ...]) -> torch.Tensor:
    """Torch twin of fourier_features: (..., k) -> (..., 2k·|freqs|)."""
    f = torch.as_tensor(freqs, dtype=coords.dtype, device=coords.device)
    ang = 2.0 * math.pi * coords.unsqueeze(-1) * f
    out = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    return out.reshape(*coords.shape[:-1], -1)


def _identity_init(lin: nn.Linear, scale: float = 1.0) -> nn.Linear:
    """Overwrite a Linear's weight with a scaled (wrapped) identity."""
    with torch.no_grad():
        lin.weight.zero_()
        rows, cols = lin.weight.shape
        for i in range(cols):
            lin.weight[i % rows, i] = scale
    return lin


class TrimodalModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        torch.manual_seed(cfg.init_seed)
        self.cfg = cfg
        d, td = cfg.latent_dim, cfg.token_dim
        self.text_proj = nn.Linear(cfg.text_dim, cfg.text_tokens * td)
        self.scene_in = nn.Linear(cfg.scene_feat_dim, td)
        gx, gy, gz = cfg.scene_grid
        self.scene_pos = nn.Embedding(gx * gy * gz, td)
        self.motion_in = nn.Linear(cfg.motion_feat_dim, td)
        self.register_buffer("time_enc", sinusoidal_encoding(cfg.max_tokens, td), persistent=False)
        self.unimodal = nn.ModuleDict({k: DistributionEncoder(cfg) for k in UNIMODAL})
        if cfg.code_skip and cfg.coord_freqs:
            # separate projections per code stream: the relative transform
            # between them can learn per-frequency phase shifts, i.e. a
            # constant displacement between e.g. pelvis endpoint and object
            # center — the contact-offset calibration retrieval needs
            self.code_scene_obj = _identity_init(nn.Linear(cfg.code_dim, d, bias=False))
            self.code_scene_floor = _identity_init(nn.Linear(cfg.code_dim, d, bias=False))
            # joint / path / start codes are xy-only: rotation perturbations
            # are about a vertical axis, so their z slots carry no rotation
            # signal — and a body-height z kernel against object codes only
            # biases placement toward boxes raised off the floor. The
            # interaction point keeps z: it is the one stream whose height
            # is calibrated to the contacted surface.
            self.code_joints = _identity_init(nn.Linear(cfg.xy_code_dim, d, bias=False))
            self.code_path = _identity_init(nn.Linear(cfg.xy_code_dim, d, bias=False))
            self.code_start = _identity_init(nn.Linear(cfg.xy_code_dim, d, bias=False))
            self.code_interact = _identity_init(nn.Linear(cfg.code_dim, d, bias=False))
            # relative-geometry features for the joint motion-scene latent:
            # elementwise products of sin/cos codes linearly combine into
            # cos(2πf(x - y)) terms, i.e. codes of the body-to-object
            # displacement — the quantity that degrades when a motion is
            # geometrically inconsistent with its scene
            self.code_rel_joints = _identity_init(nn.Linear(cfg.xy_code_dim, d, bias=False))
            self.code_rel_path = _identity_init(nn.Linear(cfg.xy_code_dim, d, bias=False))
            self.code_rel_interact = _identity_init(nn.Linear(cfg.code_dim, d, bias=False))
        else:
            self.code_scene_obj = self.code_scene_floor = None
            self.code_joints = self.code_path = self.code_interact = None
            self.code_start = None
            self.code_rel_joints = self.code_rel_path = None
            self.code_rel_interact = None
        if cfg.cross_modal:
            self.crossmodal = nn.ModuleDict({k: CrossModalEncoder(cfg) for k in CROSSMODAL})
        else:
            self.crossmodal = None

    # -- tokenizers -----------------------------------------------------

    def text_tokens(self, text: torch.Tensor) -> torch.Tensor:
        b = text.shape[0]
        return self.text_proj(text).view(b, self.cfg.text_tokens, self.cfg.token_dim)

    def scene_tokens(self, feats: torch.Tensor, vox: torch.Tensor) -> torch.Tensor:
        return self.scene_in(feats) + self.scene_pos(vox).to(feats.dtype)

    def motion_tokens(self, feats: torch.Tensor) -> torch.Tensor:
        enc = self.time_enc[: feats.shape[1]].to(feats.dtype)
        return self.motion_in(feats) + enc

    # -- position-code skip pathway ---------------------------------------

    def _scene_codes(self, feats: torch.Tensor, pad_mask: torch.Tensor | None):
        """Mean voxel position codes, pooled separately over object voxels
        (mean height above the floor) and floor-level voxels: paths should
        correlate with free floor and anti-correlate with solid objects,
        which needs the two populations exposed with opposite signs
        available."""
        codes = feats[..., -self.cfg.code_dim:]
        z_thresh = (0.05 - self.cfg.coord_center[2]) / self.cfg.coord_scale
        is_obj = feats[..., 2] > z_thresh
        pad = torch.zeros_like(is_obj) if pad_mask is None else pad_mask
        obj_mask = pad | ~is_obj     # True = exclude
        floor_mask = pad | is_obj
        return masked_mean(codes, obj_mask), masked_mean(codes, floor_mask)

    def _motion_codes(self, feats: torch.Tensor, pad_mask: torch.Tensor | None):
        """Final-pose mean joint code, interaction-point code, mean path code.

        The joint codes carry where the limbs are — the contact geometry,
        and the part that moves when the motion is rotated about the final
        pelvis; the interaction point carries where the motion's target is
        (what placement and near-duplicate discrimination need) and swings
        under rotation; the path mean changes whenever the trajectory is
        perturbed; the start point sits meters from the pivot, so it keeps
        degrading monotonically out to a half-turn even for poses whose
        contact is directly under the pelvis. Deliberately no code of the
        final pelvis itself: it is the rotation pivot, and a pivot code
        would let retrieval recognize a rotated motion as well as the
        original.
        """
        codes = feats[..., -self.cfg.code_dim:]
        if pad_mask is None:
            last = feats[:, -1]
        else:
            idx = (~pad_mask).sum(dim=1).clamp(min=1) - 1
            last = feats[torch.arange(feats.shape[0]), idx]
        joints = last[..., :66].reshape(last.shape[0], 22, 3)
        joint_code = fourier_features_torch(joints, self.cfg.coord_freqs).mean(dim=1)
        pel_z = feats[..., 2]  # flattened joints start with the pelvis
        if pad_mask is not None:
            pel_z = pel_z.masked_fill(pad_mask, float("inf"))
        interact_code = fourier_features_torch(
            self._interaction_point(joints, pel_z.min(dim=1).values),
            self.cfg.coord_freqs)
        return joint_code, interact_code, masked_mean(codes, pad_mask)

    def _interaction_point(self, joints: torch.Tensor,
                           min_pelvis_z: torch.Tensor) -> torch.Tensor:
        """Forecast the interacted surface point from the final pose geometry.

        The pelvis marks where the body is, not where the object is: a
        standing figure keeps roughly half a meter of clearance from what it
        touches, so a kernel centered on the body peaks at the wrong spot by
        a per-sample direction the fixed code projections cannot absorb.
        The pose itself says where the contact is: an extended hand marks it
        directly; feet swung out from under the pelvis mean the support is
        under the pelvis (seated or lying); otherwise the body leans toward
        the support, so extrapolate along the lean. For the hand case, a
        crouch anywhere along the trajectory (min pelvis height, normalized)
        means the hand went to the top of a low object rather than to its
        middle, which shifts the expected height of what it touched.
        Offsets below are meters, scaled into the normalized coordinate
        frame. (joints: (B, 22, 3))
        """
        s = 1.0 / self.cfg.coord_scale
        pel = joints[:, PELVIS]
        lean = joints.mean(dim=1)[:, :2] - pel[:, :2]
        lean = lean / lean.norm(dim=1, keepdim=True).clamp(min=1e-9)
        wrist = joints[:, _RIGHT_WRIST]
        reach_vec = wrist[:, :2] - pel[:, :2]
        reach_dir = reach_vec / reach_vec.norm(dim=1, keepdim=True).clamp(min=1e-9)
        feet = 0.5 * (joints[:, _LEFT_FOOT] + joints[:, _RIGHT_FOOT])

        seated = (feet[:, :2] - pel[:, :2]).norm(dim=1) > 0.25 * s
        hand = ((reach_vec * lean).sum(dim=1) > 0.12 * s) & ~seated

        crouched = min_pelvis_z < (0.85 - self.cfg.coord_center[2]) * s
        hand_drop = torch.where(crouched, 0.51 * s, 0.0).unsqueeze(1)
        hand_pt = torch.cat([wrist[:, :2] + 0.27 * s * reach_dir,
                             wrist[:, 2:3] - hand_drop], dim=1)
        seat_pt = torch.cat([pel[:, :2], pel[:, 2:3] - 0.30 * s], dim=1)
        lean_pt = torch.cat([pel[:, :2] + 0.44 * s * lean,
                             pel[:, 2:3] - 0.39 * s], dim=1)
        out = torch.where(seated.unsqueeze(1), seat_pt, lean_pt)
        return torch.where(hand.unsqueeze(1), hand_pt, out)

    def scene_code_skip(self, feats: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor | None:
        """Projected scene position codes, or None when the skip is off."""
        if self.code_scene_obj is None:
            return None
        c_obj, c_floor = self._scene_codes(feats, pad_mask)
        return self.code_scene_obj(c_obj) + self.code_scene_floor(c_floor)

    def code_skips(self, batch: dict) -> dict[str, torch.Tensor | None]:
        """Additive position-code skip per latent source."""
        if self.code_scene_obj is None:
            return {k: None for k in UNIMODAL + CROSSMODAL}
        c_obj, c_floor = self._scene_codes(batch["scene_feats"], batch["scene_mask"])
        c_joints, c_interact, c_path = self._motion_codes(
            batch["motion"], batch["motion_mask"])
        skip_s = self.code_scene_obj(c_obj) + self.code_scene_floor(c_floor)
        skip_m = (self.code_joints(c_joints)
                  + self.code_interact(c_interact) + self.code_path(c_path))
        skip_ms = (0.5 * (skip_s + skip_m)
                   + self.code_rel_joints(c_joints * c_obj)
                   + self.code_rel_path(c_path * c_obj)
                   + self.code_rel_interact(c_interact * c_obj))
        return {"t": None, "s": skip_s, "m": skip_m,
                "st": skip_s, "mt": skip_m, "ms": skip_ms}

    # -- full pipeline ---------------------------------------------------

    def forward_batch(self, batch: dict, noise: dict[str, torch.Tensor] | None = None):
        """Six latent batches for a collated batch.

        noise maps source tag to a (B, d) tensor; None means eval mode
        (mean latents). Returns (latents, stats) where stats carries the
        (mu, logvar) pair per source.
        """
        tok_t = self.text_tokens(batch["text"])
        tok_s = self.scene_tokens(batch["scene_feats"], batch["scene_vox"])
        tok_m = self.motion_tokens(batch["motion"])
        masks = {"t": None, "s": batch["scene_mask"], "m": batch["motion_mask"]}
        tokens = {"t": tok_t, "s": tok_s, "m": tok_m}

        skips = self.code_skips(batch)

        stats: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        residues: dict[str, torch.Tensor] = {}
        latents: dict[str, torch.Tensor] = {}
        for k in UNIMODAL:
            mu, logvar, res = self.unimodal[k](tokens[k], masks[k])
            if skips[k] is not None:
                mu = mu + skips[k]
            stats[k] = (mu, logvar)
            residues[k] = res
            latents[k] = mu if noise is None else reparameterize(mu, logvar, noise[k])

        if self.crossmodal is not None:
            for k in CROSSMODAL:
                a, b = CROSS_INPUTS[k]
                mu, logvar = self.crossmodal[k](residues[a], masks[a], residues[b], masks[b])
                if skips[k] is not None:
                    mu = mu + skips[k]
                stats[k] = (mu, logvar)
                latents[k] = mu if noise is None else reparameterize(mu, logvar, noise[k])
        else:
            # no cross encoders: average the unimodal latents at inference
            for k in CROSSMODAL:
                a, b = CROSS_INPUTS[k]
                latents[k] = 0.5 * (latents[a] + latents[b])
        return latents, stats

    def embed_all(self, sample: TrimodalSample, mode: str = "eval",
                  noise: dict[str, torch.Tensor] | None = None) -> dict[str, LatentVector]:
        """All six latents for one sample. Eval mode is deterministic."""
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "eval":
            noise = None
        elif noise is None:
            raise ValueError("train mode requires explicit noise vectors")
        batch = collate([prepare_sample(sample, self.cfg)], dtype=next(self.parameters()).dtype)
        with torch.no_grad():
            latents, _ = self.forward_batch(batch, noise)
        return {
            k: LatentVector(values=v[0].detach().cpu().numpy().astype(np.float32),
                            source=k, sample_id=sample.id)
            for k, v in latents.items()
        }
