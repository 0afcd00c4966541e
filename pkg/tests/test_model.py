import numpy as np
import pytest
import torch

from trimoret.loss import build_term_set, total_loss
from trimoret.model import (
    CROSS_INPUTS,
    ModelConfig,
    TrimodalModel,
    collate,
    motion_features,
    prepare_dataset,
    prepare_sample,
    reparameterize,
    voxelize_scene,
)
from trimoret.types import MotionSequence, ScenePointCloud

from conftest import tiny_model_config


# --- config validation -----------------------------------------------------------

def test_config_rejects_bad_dims():
    with pytest.raises(ValueError):
        ModelConfig(latent_dim=0)
    with pytest.raises(ValueError):
        ModelConfig(token_dim=10, num_heads=4)


# --- tokenizer features -----------------------------------------------------------

def test_voxelize_single_voxel():
    cfg = tiny_model_config(scene_grid=(1, 1, 1))
    pts = np.random.default_rng(0).uniform(0, 1, (50, 6)).astype(np.float32)
    feats, vox = voxelize_scene(ScenePointCloud(points=pts), cfg)
    assert feats.shape == (1, cfg.scene_feat_dim)
    assert list(vox) == [0]


def test_voxelize_permutation_invariant(small_dataset):
    cfg = tiny_model_config()
    scene = small_dataset[0].samples[0].scene
    feats, vox = voxelize_scene(scene, cfg)
    perm = np.random.default_rng(1).permutation(scene.points.shape[0])
    shuffled = ScenePointCloud(points=np.asarray(scene.points)[perm], meta=scene.meta)
    feats2, vox2 = voxelize_scene(shuffled, cfg)
    assert np.array_equal(vox, vox2)
    assert np.array_equal(feats, feats2)


def test_voxelize_caps_token_count(small_dataset):
    cfg = tiny_model_config(scene_grid=(8, 8, 4), max_tokens=5)
    scene = small_dataset[0].samples[0].scene
    feats, vox = voxelize_scene(scene, cfg)
    assert feats.shape[0] <= 5


def test_motion_stride_arithmetic():
    cfg = tiny_model_config(motion_stride=2, max_tokens=64)
    frames = np.zeros((60, 22, 3), dtype=np.float32)
    assert motion_features(MotionSequence(frames=frames), cfg).shape == (30, cfg.motion_feat_dim)
    frames = np.zeros((2, 22, 3), dtype=np.float32)
    assert motion_features(MotionSequence(frames=frames), cfg).shape == (1, cfg.motion_feat_dim)


# --- reparameterization ------------------------------------------------------------

def test_reparameterize_zero_noise_is_mu():
    mu = torch.tensor([1.0, 2.0])
    logvar = torch.tensor([0.3, -0.7])
    assert torch.equal(reparameterize(mu, logvar, torch.zeros(2)), mu)


def test_reparameterize_unit_variance():
    mu = torch.tensor([1.0, 2.0])
    out = reparameterize(mu, torch.zeros(2), torch.ones(2))
    assert torch.allclose(out, mu + 1.0)


def test_reparameterize_closed_form():
    # [DERIVED] exp(ln 3) = 3
    mu = torch.zeros(2)
    logvar = torch.full((2,), 2.0 * np.log(3.0))
    noise = torch.tensor([1.0, 0.0])
    out = reparameterize(mu, logvar, noise)
    assert abs(float(out[0]) - 3.0) < 1e-6
    assert float(out[1]) == 0.0


# --- encoder pipeline ---------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_model_and_batch():
    from trimoret.synthgen import GeneratorConfig, gen_dataset
    cfg = tiny_model_config()
    gcfg = GeneratorConfig(points_per_object=64, floor_points=128, frames=24,
                           text_dim=cfg.text_dim)
    train, _ = gen_dataset(gcfg, 4, 1)
    model = TrimodalModel(cfg)
    batch = collate(prepare_dataset(train.samples, cfg))
    return model, batch, train.samples


def test_six_latents_with_correct_shapes(tiny_model_and_batch):
    model, batch, _ = tiny_model_and_batch
    latents, stats = model.forward_batch(batch, noise=None)
    assert set(latents) == {"t", "m", "s", "st", "mt", "ms"}
    for src, mat in latents.items():
        assert mat.shape == (4, model.cfg.latent_dim)
    for src, (mu, logvar) in stats.items():
        assert mu.shape == logvar.shape == (4, model.cfg.latent_dim)
        assert float(logvar.detach().abs().max()) <= 20.0


def test_eval_mode_deterministic(tiny_model_and_batch):
    model, batch, _ = tiny_model_and_batch
    a, _ = model.forward_batch(batch, noise=None)
    b, _ = model.forward_batch(batch, noise=None)
    for src in a:
        assert torch.equal(a[src], b[src])


def test_no_cross_sample_coupling(tiny_model_and_batch):
    """Duplicating a sample in a batch leaves its latents unchanged."""
    model, _, samples = tiny_model_and_batch
    cfg = model.cfg
    once = collate(prepare_dataset([samples[0], samples[1]], cfg))
    twice = collate(prepare_dataset([samples[0], samples[1], samples[1]], cfg))
    la, _ = model.forward_batch(once, noise=None)
    lb, _ = model.forward_batch(twice, noise=None)
    for src in la:
        assert torch.allclose(la[src][0], lb[src][0], atol=1e-5)
        assert torch.allclose(lb[src][1], lb[src][2], atol=1e-5)


def test_embed_all_tags_and_determinism(tiny_model_and_batch):
    model, _, samples = tiny_model_and_batch
    out = model.embed_all(samples[0])
    assert set(out) == {"t", "m", "s", "st", "mt", "ms"}
    for src, lv in out.items():
        assert lv.source == src
        assert lv.sample_id == samples[0].id
    again = model.embed_all(samples[0])
    for src in out:
        assert np.array_equal(out[src].values, again[src].values)


def test_embed_all_train_mode_reproducible(tiny_model_and_batch):
    model, _, samples = tiny_model_and_batch
    d = model.cfg.latent_dim
    noise = {src: torch.as_tensor(
        np.random.default_rng(5).standard_normal((1, d)), dtype=torch.float32)
        for src in ("t", "m", "s", "st", "mt", "ms")}
    a = model.embed_all(samples[0], mode="train", noise=noise)
    b = model.embed_all(samples[0], mode="train", noise=noise)
    for src in a:
        assert np.array_equal(a[src].values, b[src].values)
    # and differs from the zero-noise mean latent
    mean = model.embed_all(samples[0])
    assert not np.allclose(a["t"].values, mean["t"].values)


def test_train_mode_requires_noise(tiny_model_and_batch):
    model, _, samples = tiny_model_and_batch
    with pytest.raises(ValueError):
        model.embed_all(samples[0], mode="train")


def test_segment_order_matters(tiny_model_and_batch):
    """Swapping the residue streams changes a cross-modal encoder's output."""
    model, batch, _ = tiny_model_and_batch
    tok_s = model.scene_tokens(batch["scene_feats"], batch["scene_vox"])
    tok_t = model.text_tokens(batch["text"])
    mu_s, _, res_s = model.unimodal["s"](tok_s, batch["scene_mask"])
    mu_t, _, res_t = model.unimodal["t"](tok_t, None)
    enc = model.crossmodal["st"]
    fwd, _ = enc(res_s, batch["scene_mask"], res_t, None)
    rev, _ = enc(res_t, None, res_s, batch["scene_mask"])
    assert not torch.allclose(fwd, rev, atol=1e-5)


def test_without_cross_modal_variant_averages(tiny_model_and_batch):
    _, batch, samples = tiny_model_and_batch
    cfg = tiny_model_config(cross_modal=False)
    model = TrimodalModel(cfg)
    assert model.crossmodal is None
    latents, _ = model.forward_batch(batch, noise=None)
    for k, (a, b) in CROSS_INPUTS.items():
        assert torch.allclose(latents[k], 0.5 * (latents[a] + latents[b]))


def test_init_seed_reproducible():
    cfg = tiny_model_config()
    a = TrimodalModel(cfg).state_dict()
    b = TrimodalModel(cfg).state_dict()
    assert set(a) == set(b)
    for k in a:
        assert torch.equal(a[k], b[k])


# --- gradient check ------------------------------------------------------------------

def test_gradients_match_finite_differences(tiny_model_and_batch):
    """Full six-term loss, batch 2, float64: analytic vs central differences."""
    _, _, samples = tiny_model_and_batch
    cfg = tiny_model_config(token_dim=4, num_heads=2, ff_dim=8, text_tokens=2)
    model = TrimodalModel(cfg).double()
    batch = collate(prepare_dataset(samples[:2], cfg), dtype=torch.float64)
    rng = np.random.default_rng(7)
    noise = {src: torch.as_tensor(rng.standard_normal((2, cfg.latent_dim)))
             for src in ("t", "m", "s", "st", "mt", "ms")}
    term_set = build_term_set("full")

    def loss_value() -> torch.Tensor:
        latents, _ = model.forward_batch(batch, noise)
        loss, _ = total_loss(latents, term_set, temperature=0.5)
        return loss

    model.zero_grad()
    loss_value().backward()
    analytic = {n: p.grad.detach().clone() for n, p in model.named_parameters()}

    eps = 1e-6
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                hi = float(loss_value())
                flat[i] = orig - eps
                lo = float(loss_value())
                flat[i] = orig
                fd[i] = (hi - lo) / (2 * eps)
            a = analytic[name].view(-1)
            denom = max(float(a.norm()), float(fd.norm()), 1e-8)
            rel = float((a - fd).norm()) / denom
            worst = max(worst, rel)
            assert rel <= 1e-3, f"{name}: relative gradient error {rel}"
    assert worst <= 1e-3
