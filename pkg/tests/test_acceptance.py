"""Acceptance suite: one test per criterion, each timed against its budget.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import contextlib
import time
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import ACCEPTANCE, random_model, small_config

from teleqa.backbone import make_extractor
from teleqa.config import Config, FusionConfig, full_scale
from teleqa.features import CacheRecord, cache_read, cache_write, iqa_score, multi_scale_rois, patch_features
from teleqa.pipeline import (
    DEFAULT,
    FRESH,
    HELD,
    TeleVQA,
    evaluate_ablation,
    kpn_fuse,
    kpn_raw,
    predict_offline,
    predict_online,
)
from teleqa.regressor import RegressorParams, backward_batch, forward_batch, mse_loss
from teleqa.stream_io import (
    Stream,
    SynthSpec,
    load_stream,
    packetize,
    severity_dataset,
    store_stream,
    synth_stream,
)
from teleqa.study import lcc, recover_matrix, split_half_consistency, srcc


@contextlib.contextmanager
def criterion(number, title, budget):
    t0 = time.perf_counter()
    note = SimpleNamespace(detail="")
    try:
        yield note
    except BaseException as exc:
        ACCEPTANCE[number] = (False, title, time.perf_counter() - t0, budget, f"{type(exc).__name__}: {exc}")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < budget
    detail = note.detail if ok else f"{note.detail} over time budget".strip()
    ACCEPTANCE[number] = (ok, title, elapsed, budget, detail)
    assert ok, f"criterion {number} took {elapsed:.2f}s, budget {budget}s"


def test_criterion_01_fusion_exactness():
    with criterion(1, "fusion exactness", 1.0) as note:
        grid = np.linspace(1.0, 5.0, 41)
        worst = 0.0
        for sa in grid:
            for sv in grid:
                direct = 1.12 + 0.007 * sa + 0.24 * sv + 0.088 * sa * sv
                worst = max(worst, abs(kpn_raw(sa, sv) - direct))
                assert kpn_fuse(sa, sv) == min(5.0, max(1.0, kpn_raw(sa, sv)))
        assert worst <= 1e-9
        for (sa, sv), want in {(3, 3): 2.653, (1, 1): 1.455, (5, 5): 4.555}.items():
            assert abs(kpn_fuse(sa, sv) - want) <= 1e-9
        note.detail = f"max abs err {worst:.1e}"


def half_up(x):
    return int(np.floor(x + 0.5))


def test_criterion_02_patch_scores_equal_crops():
    with criterion(2, "roi pooling equals crop-then-score", 10.0) as note:
        rng = np.random.default_rng(20)
        extractor = make_extractor(3, (6, 5), kernel=1, stride=1, seed=7)
        head = RegressorParams.init(5, 3, (3, 3, 3), seed=4, out_bias=3.0)
        rois = multi_scale_rois(0, 4)
        assert len(rois) == 341
        worst = 0.0
        for _ in range(20):
            h, w = int(rng.integers(24, 49)), int(rng.integers(48, 81))
            frame = rng.uniform(size=(h, w, 3))
            scores = patch_features(frame, extractor, head).values
            for k, roi in enumerate(rois):
                crop = frame[half_up(roi.y0 * h):half_up(roi.y1 * h), half_up(roi.x0 * w):half_up(roi.x1 * w)]
                worst = max(worst, abs(scores[k] - iqa_score(crop, extractor, head)))
        assert worst <= 1e-6
        note.detail = f"max abs err {worst:.1e} over 20x341"


def random_stream(rng, i):
    n = int(rng.integers(10, 21))
    audio = i % 5 != 0
    spec = SynthSpec(32, 32, 10.0, n, 8000 if audio else None)
    stream = synth_stream(spec, int(rng.integers(2**31)))[0]
    packets = packetize(stream, 8)
    if audio and i % 3 == 0:
        lo = int(rng.integers(2, n - 2))
        for p in packets[lo:lo + int(rng.integers(1, 6))]:
            p.audio = None
    if i % 2 == 1:
        for k in rng.choice(n, size=int(rng.integers(1, 4)), replace=False):
            packets[k].frame = None
    return packets


def test_criterion_03_online_equals_offline():
    with criterion(3, "online/offline equivalence", 60.0) as note:
        rng = np.random.default_rng(3)
        model = random_model(small_config(), seed=5)
        worst, held = 0.0, 0
        for i in range(50):
            packets = random_stream(rng, i)
            on, off = predict_online(model, packets), predict_offline(model, packets)
            assert len(on) == len(off) == len(packets)
            for a, b in zip(on, off):
                assert (a.flag_v, a.flag_a) == (b.flag_v, b.flag_a)
                x, y = np.array([a.S_v, a.S_a, a.S_av]), np.array([b.S_v, b.S_a, b.S_av])
                worst = max(worst, float(np.max(np.abs(x - y) / np.abs(y))))
                held += (a.flag_a == HELD) + (a.flag_v == HELD)
        assert worst <= 1e-6 and held > 0
        note.detail = f"max rel err {worst:.1e}, {held} held scores"


def test_criterion_04_gradients():
    with criterion(4, "gradient correctness", 60.0) as note:
        worst = 0.0
        eps = 1e-6
        for seed in range(20):
            rng = np.random.default_rng(seed)
            p = RegressorParams.init(6, 4, seed=seed)
            for name in p.trainable:
                if name.startswith("b_") or name.endswith("bias"):
                    p.tensors[name] = rng.normal(0, 0.3, size=p.tensors[name].shape)
            X, y = rng.normal(size=(3, 5, 6)), rng.uniform(1, 5, size=3)
            modes = ("all", "last")
            Y, cache = forward_batch(p, X)
            grads = [backward_batch(p, cache, mse_loss(Y, y, m)[1]) for m in modes]
            for name in p.trainable:
                t = p.tensors[name]
                num = np.zeros((2,) + t.shape)
                for idx in np.ndindex(t.shape):
                    old = t[idx]
                    t[idx] = old + eps
                    Yp = forward_batch(p, X)[0]
                    t[idx] = old - eps
                    Ym = forward_batch(p, X)[0]
                    t[idx] = old
                    for j, m in enumerate(modes):
                        num[(j,) + idx] = (mse_loss(Yp, y, m)[0] - mse_loss(Ym, y, m)[0]) / (2 * eps)
                for j, g in enumerate(grads):
                    denom = max(np.linalg.norm(num[j]), np.linalg.norm(g[name]), 1e-8)
                    worst = max(worst, float(np.linalg.norm(num[j] - g[name]) / denom))
        assert worst <= 1e-4
        note.detail = f"max rel err {worst:.1e}"


@pytest.mark.slow
def test_criterion_05_training_sanity():
    with criterion(5, "training sanity and ablation ordering", 600.0) as note:
        streams, mos, _ = severity_dataset(200, seed=0, mos_fusion=FusionConfig().coeffs)
        res = evaluate_ablation(streams, mos, Config(), [("p", "f", "c", "a"), ("f", "c", "a"), ("f",)])
        full, fca, f = (res[k]["srcc"] for k in ("pfca", "fca", "f"))
        note.detail = f"srcc pfca {full:.4f}  fca {fca:.4f}  f {f:.4f}"
        assert full >= 0.9, note.detail
        assert full >= fca >= f, note.detail


def test_criterion_06_full_scale_dimensions():
    with criterion(6, "full-scale dimensions", 60.0) as note:
        cfg = full_scale()
        dims = cfg.feature_dims()
        assert dims["frame"] == 2880 and dims["patch"] == 341
        assert dims["clip"] == 1536 and dims["audio"] == 1536
        assert cfg.visual_dim() == 4757
        frame_ex = cfg.frame_extractor.build(3)
        assert frame_ex.final_channels * 3 == 2880
        assert len(multi_scale_rois(cfg.patch_scales[0], cfg.patch_scales[1])) == 341
        head = RegressorParams.zeros(frame_ex.final_channels, 4)
        vis = RegressorParams.zeros(cfg.visual_dim(), 4)
        aud = RegressorParams.zeros(dims["audio"], 4)
        assert forward_batch(head, np.zeros((1, 3, 960)))[0].shape == (1, 3)
        assert forward_batch(vis, np.zeros((1, 2, 4757)))[0].shape == (1, 2)
        assert forward_batch(aud, np.zeros((1, 2, 1536)))[0].shape == (1, 2)
        note.detail = "2880 / 341 / 1536 / 1536 / 4757"


def test_criterion_07_score_recovery():
    with criterion(7, "score recovery", 10.0) as note:
        rng = np.random.default_rng(7)
        psi = rng.uniform(1.5, 4.5, size=50)
        delta = rng.normal(0, 0.3, size=20)
        delta -= delta.mean()
        nu = rng.uniform(0.2, 0.5, size=20)
        nu[11] = 1.5
        U = psi[:, None] + delta[None, :] + nu[None, :] * rng.normal(size=(50, 20))
        rec = recover_matrix(U)
        r = float(np.corrcoef(rec.psi, psi)[0, 1])
        assert r >= 0.99
        assert int(np.argmax(rec.nu)) == 11
        assert np.all(np.diff(rec.loglik) >= -1e-9)
        note.detail = f"pearson {r:.4f}, {len(rec.loglik)} iterations"


def rank_oracle(v):
    v = np.asarray(v)
    return np.array([(v < x).sum() + ((v == x).sum() + 1) / 2 for x in v])


def pearson_oracle(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    cov = ((a - a.mean()) * (b - b.mean())).sum()
    return cov / np.sqrt(((a - a.mean()) ** 2).sum() * ((b - b.mean()) ** 2).sum())


def test_criterion_08_statistics():
    with criterion(8, "statistics correctness", 10.0) as note:
        rng = np.random.default_rng(8)
        worst = 0.0
        for i in range(1000):
            n = int(rng.integers(3, 40))
            if i % 2:
                a, b = rng.integers(0, 5, size=n).astype(float), rng.integers(0, 5, size=n).astype(float)
            else:
                a, b = rng.normal(size=n), rng.normal(size=n)
            if np.ptp(a) == 0 or np.ptp(b) == 0:
                a[0], b[0] = a[0] + 1.0, b[0] + 1.0
            worst = max(worst, abs(lcc(a, b) - pearson_oracle(a, b)))
            worst = max(worst, abs(srcc(a, b) - pearson_oracle(rank_oracle(a), rank_oracle(b))))
        assert worst <= 1e-9
        U = rng.uniform(1, 5, size=(30, 12))
        assert split_half_consistency(U, 50, seed=2) == split_half_consistency(U, 50, seed=2)
        cloned = np.repeat(rng.uniform(1, 5, size=(25, 1)), 10, axis=1)
        assert split_half_consistency(cloned, 50, seed=2) == pytest.approx(1.0, abs=1e-12)
        note.detail = f"max abs err {worst:.1e}"


def test_criterion_09_missing_modality():
    with criterion(9, "missing-modality contract", 5.0) as note:
        model = random_model(small_config(), seed=9)
        silent = synth_stream(SynthSpec(32, 32, 10.0, 14, None), 1)[0]
        for q in predict_online(model, packetize(silent, 8)):
            assert q.S_a == 3.0 and q.flag_a == DEFAULT
        packets = packetize(synth_stream(SynthSpec(32, 32, 10.0, 20, 8000), 2)[0], 8)
        for p in packets[11:]:
            p.audio = None
        trace = predict_online(model, packets)
        fresh = [q for q in trace[:11] if q.flag_a == FRESH]
        assert fresh, "no fresh audio before the dropout"
        for q in trace[11:]:
            assert q.flag_a == HELD and q.S_a == fresh[-1].S_a
        note.detail = f"held {len(trace) - 11} steps"


def test_criterion_10_format_round_trips(tmp_path):
    with criterion(10, "format round-trips", 10.0) as note:
        rng = np.random.default_rng(10)
        for i in range(5):
            h, w, n = (int(v) for v in rng.integers(8, 40, size=3))
            audio = None
            if i % 2 == 0:
                audio = rng.uniform(-1, 1, size=int(n / 10.0 * 8000)).astype(np.float32)
            s = Stream(w, h, 10.0, rng.uniform(size=(n, h, w, 3)).astype(np.float32), audio, 8000 if audio is not None else None)
            store_stream(s, tmp_path / f"s{i}")
            assert load_stream(tmp_path / f"s{i}") == s

            records = [CacheRecord(int(rng.integers(0, 1000)), str(rng.choice(["frame", "clip", "audio", "patch"])),
                       rng.normal(size=int(rng.integers(1, 50))).astype(np.float32)) for _ in range(20)]
            records.sort(key=lambda r: r.step)
            cache_write(tmp_path / f"c{i}.tqaf", records)
            back = cache_read(tmp_path / f"c{i}.tqaf").records
            assert [(r.step, r.modality) for r in back] == [(r.step, r.modality) for r in records]
            assert all(a.values.astype(np.float32).tobytes() == b.values.tobytes() for a, b in zip(back, records))

            model = random_model(small_config(), seed=i)
            model.save(tmp_path / f"m{i}")
            again = TeleVQA.load(tmp_path / f"m{i}")
            for ours, theirs in ((model.head, again.head), (model.visual, again.visual), (model.audio, again.audio)):
                assert ours.tensors.keys() == theirs.tensors.keys()
                assert all(np.array_equal(ours.tensors[k], theirs.tensors[k]) for k in ours.tensors)
            for name in ("frame_extractor", "clip_extractor", "audio_extractor"):
                a, b = getattr(model, name), getattr(again, name)
                assert all(np.array_equal(x, y) for x, y in zip(a.tensors().values(), b.tensors().values()))
            again.save(tmp_path / f"n{i}")
            for f in (tmp_path / f"m{i}").iterdir():
                assert f.read_bytes() == (tmp_path / f"n{i}" / f.name).read_bytes()
        note.detail = "5 randomized rounds"
