import numpy as np
import pytest

from trimoret.types import (
    JOINT_COUNT,
    JOINT_NAMES,
    LatentVector,
    MotionSequence,
    SampleTruth,
    ScenePointCloud,
    SOURCES,
    TextFeature,
    TrimodalSample,
    validate_sample,
)


def test_joint_convention():
    assert len(JOINT_NAMES) == 22
    assert JOINT_NAMES[0] == "pelvis"
    assert len(set(JOINT_NAMES)) == 22


def test_sources_are_the_six_encoder_tags():
    assert SOURCES == ("t", "m", "s", "st", "mt", "ms")


def test_latent_vector_rejects_unknown_source():
    with pytest.raises(ValueError):
        LatentVector(values=np.zeros(4), source="x", sample_id="a")


def test_latent_vector_is_immutable():
    lv = LatentVector(values=np.zeros(4), source="t", sample_id="a")
    with pytest.raises(ValueError):
        lv.values[0] = 1.0


def test_motion_pelvis_path_shape():
    frames = np.zeros((5, JOINT_COUNT, 3))
    frames[:, 0, 0] = np.arange(5)
    m = MotionSequence(frames=frames)
    assert m.frame_count == 5
    assert m.pelvis_path().shape == (5, 3)
    assert m.pelvis_path()[3, 0] == 3.0


def test_validate_well_formed_sample(small_dataset):
    train, _ = small_dataset
    for s in train.samples:
        assert validate_sample(s, d_text=s.text.values.shape[0]) == []


def _mutate(sample, **kw):
    from dataclasses import replace
    return replace(sample, **kw)


def test_validate_flags_nan_motion(small_dataset):
    s = small_dataset[0].samples[0]
    frames = np.asarray(s.motion.frames).copy()
    frames[0, 0, 0] = np.nan
    bad = _mutate(s, motion=MotionSequence(frames=frames))
    assert "non-finite motion" in validate_sample(bad, d_text=s.text.values.shape[0])


def test_validate_flags_text_length_mismatch(small_dataset):
    s = small_dataset[0].samples[0]
    bad = _mutate(s, text=TextFeature(values=np.ones(10), raw_caption="x"))
    assert "text length mismatch" in validate_sample(bad, d_text=768)


def test_validate_flags_joint_span(small_dataset):
    s = small_dataset[0].samples[0]
    frames = np.asarray(s.motion.frames).copy()
    frames[0, 21] = frames[0, 0] + np.array([3.0, 0.0, 0.0])
    bad = _mutate(s, motion=MotionSequence(frames=frames))
    assert "joint span exceeds bound" in validate_sample(bad, d_text=s.text.values.shape[0])


def test_validate_flags_color_out_of_range(small_dataset):
    s = small_dataset[0].samples[0]
    pts = np.asarray(s.scene.points).copy()
    pts[0, 3] = 1.5
    bad = _mutate(s, scene=ScenePointCloud(points=pts, meta=s.scene.meta))
    assert "scene color out of range" in validate_sample(bad, d_text=s.text.values.shape[0])


def test_validate_flags_bad_target_index(small_dataset):
    s = small_dataset[0].samples[0]
    bad_truth = SampleTruth(target_index=99, action=s.truth.action,
                            waypoints=s.truth.waypoints)
    bad = _mutate(s, truth=bad_truth)
    assert "target index invalid" in validate_sample(bad, d_text=s.text.values.shape[0])


def test_validate_flags_endpoint_far_from_target(small_dataset):
    s = small_dataset[0].samples[0]
    frames = np.asarray(s.motion.frames).copy()
    anchor = s.scene.meta.objects[s.truth.target_index].anchor
    frames[-1, :, 0] = anchor[0] + 1.0
    frames[-1, :, 1] = anchor[1] + 1.0
    bad = _mutate(s, motion=MotionSequence(frames=frames))
    report = validate_sample(bad, d_text=s.text.values.shape[0])
    assert "motion endpoint far from target anchor" in report
