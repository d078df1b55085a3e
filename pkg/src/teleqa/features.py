"""Per-timestep feature vectors and the binary feature cache.

Vectors per modality: frame ``3*C`` (1x3 pooled frame map), patch (one
score per multi-scale RoI, 341 for grids 1x1..16x16), clip ``3*C_clip``,
audio ``3*C_audio``. The visual vector is patch ⊕ frame ⊕ clip.

Cache layout (little-endian): ``b"TQAF"``, ``u32`` version, then records of
``u32 step, u8 modality, u32 dim, dim x f32``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import audio_frontend
from .backbone import (
    ExtractorParams,
    RoI,
    adaptive_avg_pool,
    extract_audio_maps,
    extract_clip_maps,
    extract_frame_maps,
    roi_pool_batch,
)
from .errors import FormatError
from .regressor import RegressorParams, forward_batch

MODALITIES = ("frame", "patch", "clip", "audio", "visual-fused")
MODALITY_CODE = {m: i for i, m in enumerate(MODALITIES)}
VISUAL_ORDER = ("patch", "frame", "clip")
SHORT = {"p": "patch", "f": "frame", "c": "clip", "a": "audio"}

MAGIC = b"TQAF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sI")
_RECORD = struct.Struct("<IBI")


@dataclass
class FeatureVector:
    modality: str
    values: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite {self.modality} features")

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass
class FrontendConfig:
    n_fft: int = 512
    hop: int = 256
    n_mels: int = 64
    window: str = "hann"
    context_s: float = 0.96


# ---------------------------------------------------------------------------
# frame / patch


def pooled_to_sequence(pooled: np.ndarray) -> np.ndarray:
    """``(..., C, 1, 3)`` pooled maps -> ``(..., 3, C)`` length-3 sequences."""
    return np.swapaxes(pooled[..., 0, :], -1, -2)


def frame_vector_to_sequence(values: np.ndarray) -> np.ndarray:
    """Inverse of frame flattening: a ``3*C`` vector as the head's ``(3, C)`` input."""
    return np.asarray(values).reshape(-1, 3).T


def frame_features_from_maps(maps: np.ndarray) -> FeatureVector:
    return FeatureVector("frame", adaptive_avg_pool(maps, 1, 3))


def frame_features(frame, extractor: ExtractorParams) -> FeatureVector:
    return frame_features_from_maps(extract_frame_maps(frame, extractor))


def multi_scale_rois(d_min: int = 0, d_max: int = 4) -> list:
    """Uniform ``2^d x 2^d`` grids for ``d = d_min..d_max``, each row-major."""
    if not 0 <= d_min <= d_max:
        raise ValueError("need 0 <= d_min <= d_max")
    rois = []
    for d in range(d_min, d_max + 1):
        n = 2**d
        rois.extend(RoI(j / n, i / n, (j + 1) / n, (i + 1) / n) for i in range(n) for j in range(n))
    return rois


def head_scores(head: RegressorParams, seqs: np.ndarray) -> np.ndarray:
    """Scoring head on ``(R, 3, C)`` pooled sequences: the last-step output."""
    Y, _ = forward_batch(head, seqs)
    return Y[:, -1]


def roi_scores(maps: np.ndarray, rois: Sequence[RoI], head: RegressorParams) -> np.ndarray:
    """Unclamped head scores for each RoI pooled from one global feature map."""
    if len(rois) == 0:
        return np.zeros(0)
    return head_scores(head, pooled_to_sequence(roi_pool_batch(maps, rois, 1, 3)))


def patch_features_from_maps(maps: np.ndarray, head: RegressorParams, d_min=0, d_max=4) -> FeatureVector:
    return FeatureVector("patch", roi_scores(maps, multi_scale_rois(d_min, d_max), head))


def patch_features(frame, extractor: ExtractorParams, head: RegressorParams, d_min=0, d_max=4) -> FeatureVector:
    return patch_features_from_maps(extract_frame_maps(frame, extractor), head, d_min, d_max)


def iqa_score(frame, extractor: ExtractorParams, head: RegressorParams) -> float:
    """Frame-level image quality: head on the globally pooled 1x3 map (unclamped)."""
    pooled = adaptive_avg_pool(extract_frame_maps(frame, extractor), 1, 3)
    return float(head_scores(head, pooled_to_sequence(pooled)[None])[0])


# ---------------------------------------------------------------------------
# clip / audio


def clip_features(clip, extractor: ExtractorParams) -> FeatureVector:
    return FeatureVector("clip", adaptive_avg_pool(extract_clip_maps(clip, extractor), 1, 3))


def audio_min_samples(frontend: FrontendConfig, extractor: ExtractorParams) -> int:
    """Shortest signal whose spectrogram survives the audio extractor and 1x3 pooling."""
    rf = extractor.receptive_field
    if frontend.n_mels < rf:
        raise ValueError(f"n_mels={frontend.n_mels} is below the audio receptive field {rf}")
    n = rf
    while extractor.output_size(n) < 3:
        n += 1
    return audio_frontend.min_samples(n, frontend.n_fft, frontend.hop)


def audio_features(samples, sample_rate: float, frontend: FrontendConfig,
                   extractor: ExtractorParams) -> FeatureVector:
    if len(samples) < audio_min_samples(frontend, extractor):
        raise ValueError("audio segment too short")
    spec = audio_frontend.mel_spectrogram(
        samples, frontend.n_fft, frontend.hop, frontend.n_mels, sample_rate, frontend.window)
    return FeatureVector("audio", adaptive_avg_pool(extract_audio_maps(spec, extractor), 1, 3))


# ---------------------------------------------------------------------------
# fusion


def fuse_visual(fp: FeatureVector, ff: FeatureVector, fc: FeatureVector,
                dims: Optional[Sequence[int]] = None) -> FeatureVector:
    """Concatenate patch ⊕ frame ⊕ clip; ``dims`` optionally pins their sizes."""
    parts = (fp, ff, fc)
    for vec, expected in zip(parts, VISUAL_ORDER):
        if vec.modality != expected:
            raise ValueError(f"expected {expected} features, got {vec.modality}")
    if dims is not None and tuple(v.dim for v in parts) != tuple(dims):
        raise ValueError(f"feature dims {[v.dim for v in parts]} != configured {list(dims)}")
    return FeatureVector("visual-fused", np.concatenate([v.values for v in parts]))


def concat_visual(vectors: dict, modalities: Sequence[str]) -> np.ndarray:
    """Concatenate the chosen visual modalities in the fixed patch, frame, clip order."""
    chosen = [m for m in VISUAL_ORDER if m in modalities]
    return np.concatenate([vectors[m].values for m in chosen]) if chosen else np.zeros(0)


# ---------------------------------------------------------------------------
# cache


@dataclass
class CacheRecord:
    step: int
    modality: str
    values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass
class FeatureCache:
    records: list = field(default_factory=list)

    def by_modality(self, modality: str) -> list:
        return [r for r in self.records if r.modality == modality]

    def __eq__(self, other):
        if not isinstance(other, FeatureCache) or len(self.records) != len(other.records):
            return False
        return all(
            a.step == b.step and a.modality == b.modality
            and np.asarray(a.values, "<f4").tobytes() == np.asarray(b.values, "<f4").tobytes()
            for a, b in zip(self.records, other.records)
        )


def cache_write(path, records: Sequence) -> None:
    last: dict = {}
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CACHE_VERSION))
        for rec in records:
            if rec.modality not in MODALITY_CODE:
                raise ValueError(f"unknown modality {rec.modality!r}")
            if rec.step < last.get(rec.modality, 0):
                raise ValueError(f"{rec.modality} steps must be non-decreasing")
            last[rec.modality] = rec.step
            payload = np.ascontiguousarray(rec.values, dtype="<f4").reshape(-1)
            fh.write(_RECORD.pack(rec.step, MODALITY_CODE[rec.modality], payload.size))
            fh.write(payload.tobytes())


def iter_cache(path) -> Iterator[CacheRecord]:
    """Stream records one at a time without loading the whole file."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError("truncated payload: missing header")
        magic, version = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != CACHE_VERSION:
            raise FormatError(f"unsupported cache version {version}")
        while True:
            raw = fh.read(_RECORD.size)
            if not raw:
                return
            if len(raw) < _RECORD.size:
                raise FormatError("truncated payload: partial record header")
            step, code, dim = _RECORD.unpack(raw)
            if code >= len(MODALITIES):
                raise FormatError(f"unknown modality code {code}")
            data = fh.read(4 * dim)
            if len(data) < 4 * dim:
                raise FormatError("truncated payload")
            yield CacheRecord(step, MODALITIES[code], np.frombuffer(data, dtype="<f4").copy())


def cache_read(path) -> FeatureCache:
    return FeatureCache(list(iter_cache(Path(path))))


def visual_sequence(cache: FeatureCache, modalities: Sequence[str], clip_dim: int) -> tuple:
    """Rows ``(patch ⊕ frame ⊕ clip)`` at every frame step of a cache.

    Clip features are held from the latest clip record at or before each
    step, zero before the first. Returns ``(steps, rows)``.
    """
    by_step: dict = {}
    clips = sorted(((r.step, r.values) for r in cache.by_modality("clip")), key=lambda x: x[0])
    for rec in cache.records:
        if rec.modality in ("patch", "frame"):
            by_step.setdefault(rec.step, {})[rec.modality] = FeatureVector(rec.modality, rec.values)
    steps, rows, ci = [], [], 0
    held = np.zeros(clip_dim)
    for step in sorted(by_step):
        while ci < len(clips) and clips[ci][0] <= step:
            held = np.asarray(clips[ci][1], dtype=np.float64)
            ci += 1
        vecs = dict(by_step[step], clip=FeatureVector("clip", held))
        if "frame" not in vecs:
            continue
        missing = [m for m in modalities if m not in vecs]
        if missing:
            raise ValueError(f"cache lacks {missing} features at step {step}")
        steps.append(step)
        rows.append(concat_visual(vecs, modalities))
    return steps, np.array(rows)


def audio_sequence(cache: FeatureCache) -> tuple:
    recs = cache.by_modality("audio")
    return [r.step for r in recs], np.array([np.asarray(r.values, dtype=np.float64) for r in recs])
