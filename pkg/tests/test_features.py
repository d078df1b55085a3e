import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleqa.backbone import RoI, adaptive_avg_pool, extract_frame_maps, make_extractor, roi_pool
from teleqa.errors import FormatError
from teleqa.features import (
    CacheRecord,
    FeatureCache,
    FeatureVector,
    FrontendConfig,
    audio_features,
    audio_min_samples,
    audio_sequence,
    cache_read,
    cache_write,
    clip_features,
    frame_features,
    frame_vector_to_sequence,
    fuse_visual,
    iqa_score,
    multi_scale_rois,
    patch_features,
    pooled_to_sequence,
    roi_scores,
    visual_sequence,
)
from teleqa.regressor import RegressorParams, forward_sequence


def test_multi_scale_rois_count_and_order():
    rois = multi_scale_rois(0, 4)
    assert len(rois) == 341
    assert rois[0] == RoI.full()
    assert rois[1] == RoI(0.0, 0.0, 0.5, 0.5) and rois[2] == RoI(0.5, 0.0, 1.0, 0.5)
    assert len(multi_scale_rois(1, 4)) == 340
    with pytest.raises(ValueError):
        multi_scale_rois(3, 2)


def test_frame_vector_layout(rng):
    ex = make_extractor(3, (4, 5), seed=1)
    fv = frame_features(rng.uniform(size=(24, 24, 3)), ex)
    assert fv.modality == "frame" and fv.dim == 15
    pooled = adaptive_avg_pool(extract_frame_maps(rng.uniform(size=(24, 24, 3)), ex), 1, 3)
    seq = pooled_to_sequence(pooled)
    assert seq.shape == (3, 5)
    np.testing.assert_array_equal(frame_vector_to_sequence(pooled.reshape(-1)), seq)


def test_patch_scores_match_per_roi_head(rng):
    ex = make_extractor(3, (4, 4), seed=1)
    head = RegressorParams.init(4, 3, (3, 3, 3), seed=2, out_bias=3.0)
    frame = rng.uniform(size=(40, 40, 3))
    pf = patch_features(frame, ex, head, 0, 2)
    assert pf.dim == 21
    maps = extract_frame_maps(frame, ex)
    for k, roi in enumerate(multi_scale_rois(0, 2)):
        seq = pooled_to_sequence(roi_pool(maps, roi, 1, 3))
        assert pf.values[k] == pytest.approx(forward_sequence(head, seq)[-1], rel=1e-12)
    assert pf.values[0] == pytest.approx(iqa_score(frame, ex, head), rel=1e-12)
    assert roi_scores(maps, [], head).shape == (0,)


def test_patch_equals_crop_then_score_pointwise(rng, pointwise_extractor):
    head = RegressorParams.init(5, 3, (3, 3, 3), seed=4, out_bias=3.0)
    frame = rng.uniform(size=(32, 48, 3))
    pf = patch_features(frame, pointwise_extractor, head, 0, 4)
    for k, roi in enumerate(multi_scale_rois(0, 4)):
        r0, r1 = round(roi.y0 * 32), round(roi.y1 * 32)
        c0, c1 = round(roi.x0 * 48), round(roi.x1 * 48)
        ref = iqa_score(frame[r0:r1, c0:c1], pointwise_extractor, head)
        assert abs(pf.values[k] - ref) <= 1e-6


def test_clip_features_dim(rng):
    ex = make_extractor(3, (4, 4), seed=2, temporal_kernel=3, clip_len=8)
    assert clip_features(rng.uniform(size=(8, 16, 16, 3)), ex).dim == 12


def test_audio_features_and_minimum_length(rng):
    fe = FrontendConfig()
    ex = make_extractor(1, (8, 16, 16), seed=3)
    n = audio_min_samples(fe, ex)
    # 15-frame receptive field at hop 256 after a 512 window
    assert n == 512 + 16 * 256
    assert audio_features(rng.uniform(-0.5, 0.5, size=n), 8000, fe, ex).dim == 48
    with pytest.raises(ValueError, match="audio segment too short"):
        audio_features(np.zeros(n - 1), 8000, fe, ex)


def test_fuse_visual_order_and_checks():
    p = FeatureVector("patch", np.arange(3.0))
    f = FeatureVector("frame", np.arange(3.0, 9.0))
    c = FeatureVector("clip", np.arange(9.0, 12.0))
    fused = fuse_visual(p, f, c)
    assert fused.modality == "visual-fused"
    np.testing.assert_array_equal(fused.values, np.arange(12.0))
    with pytest.raises(ValueError, match="expected patch"):
        fuse_visual(f, p, c)
    with pytest.raises(ValueError, match="configured"):
        fuse_visual(p, f, c, dims=(3, 6, 4))


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector("depth", np.zeros(3))
    with pytest.raises(ValueError):
        FeatureVector("frame", np.array([1.0, np.inf]))


records_st = st.lists(
    st.tuples(st.integers(0, 5), st.sampled_from(["frame", "patch", "clip", "audio", "visual-fused"]),
              st.lists(st.floats(-1e6, 1e6, width=32), max_size=6)),
    max_size=12,
)


@given(records_st)
def test_cache_roundtrip(tmp_path_factory, recs):
    recs = sorted(recs, key=lambda r: r[0])
    records = [CacheRecord(s, m, np.array(v, dtype=np.float32)) for s, m, v in recs]
    path = tmp_path_factory.mktemp("c") / "f.tqaf"
    cache_write(path, records)
    back = cache_read(path)
    assert back == FeatureCache(records)
    cache_write(path.with_suffix(".b"), back.records)
    assert path.read_bytes() == path.with_suffix(".b").read_bytes()


def test_cache_header_and_record_layout(tmp_path):
    path = tmp_path / "c.tqaf"
    cache_write(path, [CacheRecord(3, "audio", np.array([1.0, 2.0], np.float32))])
    raw = path.read_bytes()
    assert raw[:4] == b"TQAF" and raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:12] == (3).to_bytes(4, "little") and raw[12] == 3 and raw[13:17] == (2).to_bytes(4, "little")
    assert len(raw) == 8 + 9 + 8


def test_cache_errors(tmp_path):
    path = tmp_path / "c.tqaf"
    cache_write(path, [CacheRecord(0, "frame", np.ones(4, np.float32))])
    raw = path.read_bytes()
    path.write_bytes(raw[:-2])
    with pytest.raises(FormatError, match="truncated payload"):
        cache_read(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        cache_read(path)
    path.write_bytes(raw[:4] + (9).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        cache_read(path)
    with pytest.raises(ValueError, match="non-decreasing"):
        cache_write(path, [CacheRecord(2, "frame", np.ones(1)), CacheRecord(1, "frame", np.ones(1))])


def test_visual_sequence_holds_clips():
    recs = [CacheRecord(t, "frame", np.full(2, float(t))) for t in range(4)]
    recs.insert(2, CacheRecord(1, "clip", np.array([9.0])))
    recs.append(CacheRecord(3, "audio", np.array([7.0, 8.0])))
    cache = FeatureCache(recs)
    steps, rows = visual_sequence(cache, ["frame", "clip"], clip_dim=1)
    assert steps == [0, 1, 2, 3]
    np.testing.assert_array_equal(rows[:, 2], [0.0, 9.0, 9.0, 9.0])
    with pytest.raises(ValueError, match="lacks"):
        visual_sequence(cache, ["patch", "frame"], clip_dim=1)
    a_steps, a_rows = audio_sequence(cache)
    assert a_steps == [3] and a_rows.shape == (1, 2)
