"""Contrastive objective: term sets, cosine similarity matrices, symmetric
InfoNCE per matrix, and the aggregate loss averaged over the term set.

Per-matrix InfoNCE is a batch sum of symmetric per-sample terms; the
aggregate divides each matrix loss by N, turning it into a per-sample mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

VARIANTS = ("full", "without_cross_modal", "without_single")

_FULL_PAIRS = (("t", "s"), ("m", "t"), ("m", "s"), ("st", "m"), ("mt", "s"), ("ms", "t"))


def _is_degenerate(pair: tuple[str, str]) -> bool:
    i, j = pair
    return (len(i) == 2 and j in i) or (len(j) == 2 and i in j)


@dataclass(frozen=True)
class TermSet:
    """Ordered modality pairs entering the contrastive loss."""

    pairs: tuple[tuple[str, str], ...]
    variant: str

    def __post_init__(self):
        seen = set()
        for pair in self.pairs:
            if _is_degenerate(pair):
                raise ValueError(f"degenerate collapse-prone pair {pair}")
            if pair in seen:
                raise ValueError(f"duplicate pair {pair}")
            seen.add(pair)

    def sources(self) -> set[str]:
        return {m for pair in self.pairs for m in pair}


def build_term_set(variant: str) -> TermSet:
    if variant == "full":
        return TermSet(pairs=_FULL_PAIRS, variant=variant)
    if variant == "without_cross_modal":
        return TermSet(pairs=_FULL_PAIRS[:3], variant=variant)
    if variant == "without_single":
        return TermSet(pairs=_FULL_PAIRS[3:], variant=variant)
    raise ValueError(f"unknown term-set variant {variant!r}")


def cosine_matrix(u: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """N x N cosine similarities; entry (a, b) compares u_a with w_b."""
    if u.shape != w.shape:
        raise ValueError("latent batches must have equal shapes")
    un = u.norm(dim=1)
    wn = w.norm(dim=1)
    for name, norms in (("first", un), ("second", wn)):
        bad = (norms == 0).nonzero()
        if len(bad):
            raise FloatingPointError(f"zero-norm latent in {name} batch at index {int(bad[0])}")
    return (u / un[:, None]) @ (w / wn[:, None]).T


def info_nce(sim: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric (row + column) InfoNCE, summed over the batch."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    logits = sim / temperature
    labels = torch.arange(sim.shape[0], device=sim.device)
    row = F.cross_entropy(logits, labels, reduction="sum")
    col = F.cross_entropy(logits.T, labels, reduction="sum")
    return 0.5 * (row + col)


def total_loss(latents: dict[str, torch.Tensor], term_set: TermSet,
               temperature: float) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Average of per-pair InfoNCE / N over the term set.

    Returns (scalar loss, per-pair loss dict keyed "i-j").
    """
    missing = term_set.sources() - set(latents)
    if missing:
        raise KeyError(f"missing latent sources for term set: {sorted(missing)}")
    n = next(iter(latents.values())).shape[0]
    per_pair: dict[str, torch.Tensor] = {}
    total = None
    for i, j in term_set.pairs:
        sim = cosine_matrix(latents[i], latents[j])
        pair_loss = info_nce(sim, temperature) / n
        per_pair[f"{i}-{j}"] = pair_loss
        total = pair_loss if total is None else total + pair_loss
    return total / len(term_set.pairs), per_pair
