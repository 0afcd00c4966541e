"""Deterministic mini-batch training loop with bit-exact checkpointing.

All randomness (shuffling, reparameterization noise) is drawn from one
PCG64 stream whose state is stored in checkpoints, so resuming reproduces
the uninterrupted run's loss trace exactly.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .loss import TermSet, build_term_set, total_loss
from .model import CROSSMODAL, UNIMODAL, ModelConfig, PreparedSample, TrimodalModel, collate, prepare_dataset
from .store import CHECKPOINT_MAGIC, FORMAT_VERSION, StoreFormatError, canonical_json
import json


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 32
    epochs: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    temperature: float = 0.1
    variant: str = "full"
    kl_weight: float = 0.0
    eval_every: int = 0
    # shuffle blocks of this many consecutive samples as one unit. The
    # generator emits scene families as consecutive samples; keeping a family
    # in one batch supplies the near-duplicate negatives that teach fine
    # spatial discrimination. 1 disables grouping.
    group_size: int = 4

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (InfoNCE needs negatives)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")


class Adam:
    """Adam with decoupled weight decay; moments kept in float64."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.names = [n for n, _ in named_params]
        self.params = {n: p for n, p in named_params}
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {n: torch.zeros(p.shape, dtype=torch.float64) for n, p in self.params.items()}
        self.v = {n: torch.zeros(p.shape, dtype=torch.float64) for n, p in self.params.items()}

    @torch.no_grad()
    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n in self.names:
            p = self.params[n]
            if p.grad is None:
                continue
            g = p.grad.to(torch.float64)
            self.m[n].mul_(self.beta1).add_(g, alpha=1 - self.beta1)
            self.v[n].mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
            update = self.lr * (self.m[n] / bc1) / ((self.v[n] / bc2).sqrt() + self.eps)
            if self.wd:
                update = update + self.lr * self.wd * p.to(torch.float64)
            p.sub_(update.to(p.dtype))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    trainer_cfg: TrainerConfig
    epochs_done: int
    rng_state: dict
    params: dict[str, torch.Tensor]
    adam_t: int
    adam_m: dict[str, torch.Tensor]
    adam_v: dict[str, torch.Tensor]
    trace: list[dict]


@dataclass
class TrainResult:
    model: TrimodalModel
    trace: list[dict]
    term_set: TermSet
    epochs_done: int


def model_config_for_variant(model_cfg: ModelConfig, variant: str) -> ModelConfig:
    """Cross-modal encoders are absent entirely for the bridged ablation."""
    return replace(model_cfg, cross_modal=(variant != "without_cross_modal"))


def _draw_noise(rng: np.random.Generator, model: TrimodalModel, b: int, d: int, dtype):
    sources = list(UNIMODAL) + (list(CROSSMODAL) if model.crossmodal is not None else [])
    return {k: torch.as_tensor(rng.standard_normal((b, d)), dtype=dtype) for k in sources}


def _kl_term(stats) -> torch.Tensor:
    kl = None
    for k in sorted(stats):
        mu, logvar = stats[k]
        term = (-0.5 * (1 + logvar - mu ** 2 - logvar.exp())).sum(dim=1).mean()
        kl = term if kl is None else kl + term
    return kl


def train(samples, model_cfg: ModelConfig, trainer_cfg: TrainerConfig, *,
          prepared: list[PreparedSample] | None = None,
          resume_from: Checkpoint | None = None) -> TrainResult:
    """Seeded mini-batch training; incomplete final batches are dropped."""
    if len(samples) < trainer_cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    term_set = build_term_set(trainer_cfg.variant)
    model_cfg = model_config_for_variant(model_cfg, trainer_cfg.variant)

    if resume_from is not None:
        model = TrimodalModel(resume_from.model_cfg)
        model.load_state_dict(resume_from.params)
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = resume_from.rng_state
        start_epoch = resume_from.epochs_done
        trace = list(resume_from.trace)
    else:
        model = TrimodalModel(model_cfg)
        rng = np.random.default_rng(trainer_cfg.seed)
        start_epoch = 0
        trace = []

    opt = Adam(list(model.named_parameters()), lr=trainer_cfg.lr, beta1=trainer_cfg.beta1,
               beta2=trainer_cfg.beta2, eps=trainer_cfg.eps, weight_decay=trainer_cfg.weight_decay)
    if resume_from is not None:
        opt.t = resume_from.adam_t
        for n in opt.names:
            opt.m[n] = resume_from.adam_m[n].clone()
            opt.v[n] = resume_from.adam_v[n].clone()

    if prepared is None:
        prepared = prepare_dataset(samples, model_cfg)
    dtype = next(model.parameters()).dtype
    n = len(prepared)
    bs = trainer_cfg.batch_size
    step = start_epoch * (n // bs)

    g = min(trainer_cfg.group_size, n)

    model.train()
    for epoch in range(start_epoch, trainer_cfg.epochs):
        if g > 1:
            # shuffle whole blocks so generator families stay in one batch;
            # a short tail block keeps every sample in the epoch
            starts = np.arange(0, n, g)
            perm = np.concatenate([np.arange(s, min(s + g, n))
                                   for s in starts[rng.permutation(len(starts))]])
        else:
            perm = rng.permutation(n)
        for b0 in range(0, n - bs + 1, bs):
            batch = collate([prepared[i] for i in perm[b0:b0 + bs]], dtype=dtype)
            noise = _draw_noise(rng, model, bs, model_cfg.latent_dim, dtype)
            latents, stats = model.forward_batch(batch, noise)
            loss, per_pair = total_loss(latents, term_set, trainer_cfg.temperature)
            if trainer_cfg.kl_weight > 0:
                loss = loss + trainer_cfg.kl_weight * _kl_term(stats)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            row = {"step": step, "epoch": epoch, "total": float(loss.detach())}
            row.update({k: float(v.detach()) for k, v in per_pair.items()})
            trace.append(row)
            step += 1
    model.eval()

    result = TrainResult(model=model, trace=trace, term_set=term_set, epochs_done=trainer_cfg.epochs)
    result._rng_state = rng.bit_generator.state  # kept for checkpointing
    result._opt = opt
    return result


# ---------------------------------------------------------------------------
# checkpoint persistence


def _tensor_manifest(tensors: dict[str, torch.Tensor], dtype_code: str) -> list:
    return [[n, list(tensors[n].shape), dtype_code] for n in sorted(tensors)]


def save_checkpoint(path, result_or_ckpt, model_cfg: ModelConfig | None = None,
                    trainer_cfg: TrainerConfig | None = None) -> None:
    """Serialize a finished TrainResult (or a loaded Checkpoint) to disk."""
    if isinstance(result_or_ckpt, Checkpoint):
        ckpt = result_or_ckpt
    else:
        r = result_or_ckpt
        ckpt = Checkpoint(
            model_cfg=r.model.cfg,
            trainer_cfg=trainer_cfg,
            epochs_done=r.epochs_done,
            rng_state=r._rng_state,
            params={n: p.detach() for n, p in r.model.state_dict().items()},
            adam_t=r._opt.t,
            adam_m=r._opt.m,
            adam_v=r._opt.v,
            trace=r.trace,
        )
    header = {
        "model_cfg": asdict(ckpt.model_cfg),
        "trainer_cfg": asdict(ckpt.trainer_cfg),
        "epochs_done": ckpt.epochs_done,
        "rng_state": ckpt.rng_state,
        "adam_t": ckpt.adam_t,
        "params": _tensor_manifest(ckpt.params, "f4"),
        "moments": _tensor_manifest(ckpt.adam_m, "f8"),
        "trace": ckpt.trace,
    }
    blob = canonical_json(header)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, _, _ in header["params"]:
            f.write(ckpt.params[name].detach().cpu().numpy().astype("<f4").tobytes())
        for name, _, _ in header["moments"]:
            f.write(ckpt.adam_m[name].cpu().numpy().astype("<f8").tobytes())
            f.write(ckpt.adam_v[name].cpu().numpy().astype("<f8").tobytes())


def _rng_state_from_json(state):
    # JSON turns the PCG64 state ints into plain ints; restore the layout
    return {
        "bit_generator": state["bit_generator"],
        "state": {"state": int(state["state"]["state"]), "inc": int(state["state"]["inc"])},
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def load_checkpoint(path) -> Checkpoint:
    from .store import check_header, _r_blob  # framing helpers

    with open(path, "rb") as f:
        check_header(f, CHECKPOINT_MAGIC, "checkpoint")
        header = json.loads(_r_blob(f))
        params = {}
        for name, shape, _ in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            params[name] = torch.as_tensor(arr.copy())
        adam_m, adam_v = {}, {}
        for name, shape, _ in header["moments"]:
            count = int(np.prod(shape)) if shape else 1
            adam_m[name] = torch.as_tensor(np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy())
            adam_v[name] = torch.as_tensor(np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy())
        if f.read(1):
            raise StoreFormatError("trailing bytes in checkpoint")

    mc = header["model_cfg"]
    mc["scene_grid"] = tuple(mc["scene_grid"])
    mc["coord_center"] = tuple(mc["coord_center"])
    mc["coord_freqs"] = tuple(mc["coord_freqs"])
    return Checkpoint(
        model_cfg=ModelConfig(**mc),
        trainer_cfg=TrainerConfig(**header["trainer_cfg"]),
        epochs_done=header["epochs_done"],
        rng_state=_rng_state_from_json(header["rng_state"]),
        params=params,
        adam_t=header["adam_t"],
        adam_m=adam_m,
        adam_v=adam_v,
        trace=header["trace"],
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TrimodalModel:
    model = TrimodalModel(ckpt.model_cfg)
    model.load_state_dict(ckpt.params)
    model.eval()
    return model


def trace_to_csv(trace: list[dict]) -> str:
    """Deterministic CSV rendering of a loss trace."""
    if not trace:
        return "step,epoch,total\n"
    # sorted extras keep the layout stable across checkpoint round-trips
    keys = ["step", "epoch", "total"] + sorted(k for k in trace[0] if k not in ("step", "epoch", "total"))
    lines = [",".join(keys)]
    for row in trace:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys))
    return "\n".join(lines) + "\n"
