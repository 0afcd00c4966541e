import math

import numpy as np
import pytest
import torch

from trimoret.loss import (
    TermSet,
    build_term_set,
    cosine_matrix,
    info_nce,
    total_loss,
)

FULL_PAIRS = (("t", "s"), ("m", "t"), ("m", "s"), ("st", "m"), ("mt", "s"), ("ms", "t"))


# --- term sets --------------------------------------------------------------

def test_full_term_set():
    assert build_term_set("full").pairs == FULL_PAIRS


def test_without_cross_modal_term_set():
    assert build_term_set("without_cross_modal").pairs == FULL_PAIRS[:3]


def test_without_single_term_set():
    assert build_term_set("without_single").pairs == FULL_PAIRS[3:]


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        build_term_set("bogus")


@pytest.mark.parametrize("pair", [("st", "t"), ("st", "s"), ("mt", "m"),
                                  ("mt", "t"), ("ms", "m"), ("ms", "s"),
                                  ("t", "st"), ("s", "ms")])
def test_degenerate_pairs_rejected(pair):
    with pytest.raises(ValueError, match="degenerate"):
        TermSet(pairs=(pair,), variant="custom")


def test_duplicate_pairs_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        TermSet(pairs=(("t", "s"), ("t", "s")), variant="custom")


# --- cosine matrices ----------------------------------------------------------

def test_cosine_identity_on_orthonormal_batch():
    u = torch.eye(4)
    sim = cosine_matrix(u, u)
    assert torch.allclose(sim, torch.eye(4), atol=1e-7)


def test_cosine_closed_form():
    u = torch.tensor([[1.0, 0.0]])
    w = torch.tensor([[1.0, 1.0]])
    sim = cosine_matrix(u, w)
    # [DERIVED] dot((1,0), (1,1)/sqrt(2)) = 1/sqrt(2)
    assert abs(float(sim[0, 0]) - 0.70710678) < 1e-7


def test_cosine_scale_invariance(rng):
    u = torch.tensor(rng.standard_normal((5, 8)))
    w = torch.tensor(rng.standard_normal((5, 8)))
    base = cosine_matrix(u, w)
    scaled = cosine_matrix(u * 5.0, w)
    assert torch.allclose(base, scaled, atol=1e-12)


def test_cosine_zero_norm_names_index():
    u = torch.ones(3, 4)
    u[1] = 0.0
    with pytest.raises(FloatingPointError, match="index 1"):
        cosine_matrix(u, torch.ones(3, 4))


def test_cosine_shape_mismatch():
    with pytest.raises(ValueError):
        cosine_matrix(torch.ones(3, 4), torch.ones(2, 4))


# --- InfoNCE closed forms ----------------------------------------------------

def test_info_nce_uniform_matrix_is_n_log_n():
    for n in (2, 5, 32):
        sim = torch.full((n, n), 0.3, dtype=torch.float64)
        val = float(info_nce(sim, temperature=0.7))
        assert abs(val - n * math.log(n)) < 1e-9 * n


def test_info_nce_identity_2x2_tau1():
    val = float(info_nce(torch.eye(2), temperature=1.0))
    # [DERIVED] per sample per side: -log(e/(e+1)) = 0.31326169; 2 samples
    assert abs(val - 0.62652338) < 1e-7


def test_info_nce_saturated_diagonal():
    sim = torch.eye(4) * 50.0
    assert float(info_nce(sim, temperature=1.0)) < 1e-9


def test_info_nce_requires_positive_temperature():
    with pytest.raises(ValueError):
        info_nce(torch.eye(2), temperature=0.0)


def test_info_nce_requires_square():
    with pytest.raises(ValueError):
        info_nce(torch.ones(2, 3), temperature=1.0)


def test_info_nce_asymmetric_matrix_averages_row_and_column():
    sim = torch.tensor([[1.0, 0.0], [0.5, 1.0]])
    logits = sim
    row = -torch.log_softmax(logits, dim=1).diag().sum()
    col = -torch.log_softmax(logits.T, dim=1).diag().sum()
    expected = 0.5 * float(row + col)
    assert abs(float(info_nce(sim, 1.0)) - expected) < 1e-7


# --- total loss ----------------------------------------------------------------

def _orth_latents(n, d, sources, rng):
    return {src: torch.tensor(rng.standard_normal((n, d))) for src in sources}


def test_total_loss_single_pair_identity():
    latents = {"t": torch.eye(2), "s": torch.eye(2)}
    ts = TermSet(pairs=(("t", "s"),), variant="custom")
    loss, per_pair = total_loss(latents, ts, temperature=1.0)
    # [DERIVED] 0.62652338 / N with N=2
    assert abs(float(loss) - 0.31326169) < 1e-7
    assert set(per_pair) == {"t-s"}


def test_total_loss_uniform_is_log_n(rng):
    n = 6
    one = torch.ones(n, 8, dtype=torch.float64)
    latents = {src: one.clone() for src in ("t", "m", "s", "st", "mt", "ms")}
    loss, _ = total_loss(latents, build_term_set("full"), temperature=0.3)
    assert abs(float(loss) - math.log(n)) < 1e-9


def test_total_loss_saturated_alignment(rng):
    n, d = 4, 8
    base = torch.eye(n, d) * 50.0
    latents = {src: base.clone() for src in ("t", "m", "s", "st", "mt", "ms")}
    loss, _ = total_loss(latents, build_term_set("full"), temperature=0.02)
    assert float(loss) < 1e-9


def test_total_loss_missing_source():
    latents = {"t": torch.eye(2), "s": torch.eye(2)}
    with pytest.raises(KeyError):
        total_loss(latents, build_term_set("full"), temperature=1.0)


def test_total_loss_permutation_invariance(rng):
    n, d = 5, 8
    latents = _orth_latents(n, d, ("t", "m", "s", "st", "mt", "ms"), rng)
    loss, _ = total_loss(latents, build_term_set("full"), temperature=0.1)
    perm = torch.tensor(rng.permutation(n))
    permuted = {k: v[perm] for k, v in latents.items()}
    loss_p, _ = total_loss(permuted, build_term_set("full"), temperature=0.1)
    assert abs(float(loss) - float(loss_p)) < 1e-9
