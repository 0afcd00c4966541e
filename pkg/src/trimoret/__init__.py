"""Deterministic trimodal (text, motion, scene) contrastive retrieval and
human-scene-interaction evaluation toolkit."""

from .types import (
    JOINT_NAMES,
    LatentVector,
    MotionSequence,
    SceneGraphMeta,
    ScenePointCloud,
    SOURCES,
    TextFeature,
    TrimodalSample,
    validate_sample,
)
from .synthgen import GeneratorConfig, featurize_text, gen_caption, gen_dataset, gen_motion, gen_scene
from .model import ModelConfig, TrimodalModel, reparameterize
from .loss import TermSet, build_term_set, cosine_matrix, info_nce, total_loss
from .train import TrainerConfig, load_checkpoint, save_checkpoint, train
from .retrieval import EmbeddingStore, embed_corpus, evaluate_task, full_report, mrecall, recall_at_k
from .hsi import (
    GaussianMoments,
    check_interpenetration,
    fid_score,
    fit_gaussian,
    frechet_distance,
    hsi_recall,
    place_object_grid,
    rotate_motion,
    rotation_sweep,
)

__version__ = "0.1.0"
