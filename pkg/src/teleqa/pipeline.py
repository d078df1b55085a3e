"""Online audiovisual quality prediction.

Each packet may carry a frame, a clip and an audio segment. Frames drive the
visual regressor (patch ⊕ frame ⊕ held clip features), buffered audio
drives the audio regressor, and the two clamped scores are fused with the
bilinear KPN polynomial. A pathway with no fresh input at a step holds its
last score; before any input it reports the default 3.0.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backbone import ExtractorParams, RoI, extract_frame_maps, roi_pool_batch
from .config import Config, FusionConfig, load_config
from .errors import ConfigError
from .features import (
    FeatureVector,
    audio_features,
    audio_min_samples,
    clip_features,
    concat_visual,
    frame_features_from_maps,
    frame_vector_to_sequence,
    multi_scale_rois,
    patch_features_from_maps,
    pooled_to_sequence,
    roi_scores,
)
from .regressor import (
    HiddenState,
    RegressorParams,
    TrainConfig,
    TrainLog,
    backward_batch,
    fit_normalizer,
    forward_batch,
    forward_sequence,
    predict_step,
    sample_steps,
    train,
    train_loop,
    _batches,
)
from .stream_io import Stream, StreamPacket, packetize
from .study import lcc, srcc

log = logging.getLogger(__name__)

FRESH, HELD, DEFAULT = "fresh", "held", "default"
COMPONENTS = ("frame_extractor", "clip_extractor", "audio_extractor", "head", "visual", "audio")


# ---------------------------------------------------------------------------
# fusion


def kpn_raw(s_a, s_v, coeffs: Sequence[float] = FusionConfig().coeffs):
    c0, c1, c2, c3 = coeffs
    return c0 + c1 * s_a + c2 * s_v + c3 * s_a * s_v


def kpn_fuse(s_a: float, s_v: float, coeffs: Sequence[float] = FusionConfig().coeffs,
             clamp: Sequence[float] = (1.0, 5.0)) -> float:
    lo, hi = clamp
    if not (lo <= s_a <= hi and lo <= s_v <= hi):
        raise ValueError(f"scores must lie in [{lo}, {hi}], got S_a={s_a}, S_v={s_v}")
    return float(min(hi, max(lo, kpn_raw(s_a, s_v, coeffs))))


def _clamp(x: float, clamp) -> float:
    return float(min(clamp[1], max(clamp[0], x)))


# ---------------------------------------------------------------------------
# model bundle


@dataclass(eq=False)
class TeleVQA:
    config: Config
    frame_extractor: ExtractorParams
    clip_extractor: ExtractorParams
    audio_extractor: ExtractorParams
    head: Optional[RegressorParams] = None
    visual: Optional[RegressorParams] = None
    audio: Optional[RegressorParams] = None

    @classmethod
    def build(cls, config: Config, head=None, visual=None, audio=None) -> "TeleVQA":
        return cls(
            config,
            config.frame_extractor.build(3),
            config.clip_extractor.build(3, config.clip_len),
            config.audio_extractor.build(1),
            head, visual, audio,
        )

    def validate(self) -> None:
        cfg = self.config
        dims = cfg.feature_dims()
        for name, key in (("frame_extractor", "frame"), ("clip_extractor", "clip"), ("audio_extractor", "audio")):
            got = getattr(self, name).final_channels * 3
            if got != dims[key]:
                raise ConfigError(f"{name} yields {key} dim {got}, config expects {dims[key]}")
        if "p" in cfg.modalities:
            if self.head is None:
                raise ConfigError("patch features need a scoring head")
            if self.head.input_dim != self.frame_extractor.final_channels:
                raise ConfigError(
                    f"head input_dim {self.head.input_dim} != frame channels "
                    f"{self.frame_extractor.final_channels}")
        if cfg.visual_modalities:
            if self.visual is None:
                raise ConfigError("visual regressor missing")
            if self.visual.input_dim != cfg.visual_dim():
                raise ConfigError(f"visual regressor input_dim {self.visual.input_dim} != "
                                  f"configured visual dim {cfg.visual_dim()}")
        if cfg.uses_audio:
            if self.audio is None:
                raise ConfigError("audio regressor missing")
            if self.audio.input_dim != cfg.feature_dims()["audio"]:
                raise ConfigError(f"audio regressor input_dim {self.audio.input_dim} != "
                                  f"configured audio dim {cfg.feature_dims()['audio']}")

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.config.save(path / "config.json")
        for name in COMPONENTS:
            part = getattr(self, name)
            if part is not None:
                part.save(path / name)

    @classmethod
    def load(cls, path) -> "TeleVQA":
        path = Path(path)
        if not (path / "config.json").is_file():
            raise FileNotFoundError(f"missing {path / 'config.json'}")
        config = load_config(path / "config.json")
        parts = {}
        for name in COMPONENTS:
            if (path / f"{name}.json").is_file():
                loader = ExtractorParams.load if name.endswith("extractor") else RegressorParams.load
                parts[name] = loader(path / name)
        model = cls.build(config)
        for name, part in parts.items():
            setattr(model, name, part)
        return model


# ---------------------------------------------------------------------------
# per-step feature extraction


class AudioBuffer:
    """Trailing audio context assembled from possibly overlapping segments.

    Samples already buffered are skipped; a gap in the timeline restarts
    the buffer so no window spans missing audio.
    """

    def __init__(self, context_s: float):
        self.context_s = context_s
        self.samples = np.zeros(0)
        self.sample_rate: Optional[int] = None
        self.end: Optional[int] = None

    def push(self, segment) -> bool:
        """Add a segment; return True when it contributed new samples."""
        sr = segment.sample_rate
        if self.sample_rate is not None and sr != self.sample_rate:
            raise ValueError("sample rate changed mid-stream")
        self.sample_rate = sr
        start = int(round(segment.start_time * sr))
        x = np.asarray(segment.samples, dtype=np.float64)
        if self.end is None or start > self.end:
            self.samples = x
        else:
            skip = self.end - start
            if skip >= len(x):
                return False
            self.samples = np.concatenate([self.samples, x[skip:]])
        self.end = start + len(x)
        keep = int(round(self.context_s * sr))
        self.samples = self.samples[-keep:]
        return True


@dataclass
class StepFeatures:
    vectors: dict = field(default_factory=dict)  # features computed at this step
    visual: Optional[np.ndarray] = None  # visual regressor input, if a frame arrived
    audio: Optional[np.ndarray] = None  # audio regressor input, if fresh audio suffices


class FeatureTracker:
    """Turns packets into regressor inputs, holding clip features and audio context."""

    def __init__(self, model: TeleVQA, modalities: Optional[Sequence[str]] = None):
        self.model = model
        cfg = model.config
        self.modalities = tuple(modalities if modalities is not None else cfg.modalities)
        self.visual_mods = [m for m in self.modalities if m != "a"]
        self.clip = FeatureVector("clip", np.zeros(cfg.feature_dims()["clip"]))
        self.buffer = AudioBuffer(cfg.frontend.context_s)
        self.min_audio = audio_min_samples(cfg.frontend, model.audio_extractor) if "a" in self.modalities else 0

    def update(self, packet: StreamPacket) -> StepFeatures:
        model, cfg = self.model, self.model.config
        out = StepFeatures()
        if packet.clip is not None and "c" in self.visual_mods:
            self.clip = clip_features(packet.clip, model.clip_extractor)
            out.vectors["clip"] = self.clip
        if packet.frame is not None and self.visual_mods:
            maps = extract_frame_maps(packet.frame, model.frame_extractor)
            vecs = {"frame": frame_features_from_maps(maps), "clip": self.clip}
            if "p" in self.visual_mods:
                vecs["patch"] = patch_features_from_maps(maps, model.head, *cfg.patch_scales)
            out.vectors.update({k: v for k, v in vecs.items() if k != "clip"})
            out.visual = concat_visual(vecs, [{"p": "patch", "f": "frame", "c": "clip"}[m]
                                              for m in self.visual_mods])
        if packet.audio is not None and "a" in self.modalities:
            if self.buffer.push(packet.audio) and len(self.buffer.samples) >= self.min_audio:
                vec = audio_features(self.buffer.samples, self.buffer.sample_rate, cfg.frontend,
                                     model.audio_extractor)
                out.vectors["audio"] = vec
                out.audio = vec.values
        return out


# ---------------------------------------------------------------------------
# online session


@dataclass
class QualityTriple:
    step: int
    S_v: float
    S_a: float
    S_av: float
    flag_v: str
    flag_a: str


@dataclass(eq=False)
class SessionState:
    model: TeleVQA
    tracker: FeatureTracker
    visual_state: HiddenState
    audio_state: HiddenState
    last_S_v: float = 3.0
    last_S_a: float = 3.0
    flag_v: str = DEFAULT
    flag_a: str = DEFAULT
    step: int = 0


def init_session(model: TeleVQA) -> SessionState:
    model.validate()
    cfg = model.config
    return SessionState(
        model=model,
        tracker=FeatureTracker(model),
        visual_state=HiddenState.zeros(model.visual.hidden_dim if model.visual else 0),
        audio_state=HiddenState.zeros(model.audio.hidden_dim if model.audio else 0),
        last_S_v=cfg.default_score,
        last_S_a=cfg.default_score,
    )


def fuse(s_a: float, s_v: float, cfg: Config) -> float:
    left = s_a if cfg.fusion.operand == "audio" else s_v
    return kpn_fuse(left, s_v, cfg.fusion.coeffs, cfg.clamp)


def current_scores(session: SessionState) -> QualityTriple:
    """Scores as of the last step, without consuming a packet."""
    cfg = session.model.config
    return QualityTriple(session.step - 1, session.last_S_v, session.last_S_a,
                         fuse(session.last_S_a, session.last_S_v, cfg), session.flag_v, session.flag_a)


def _hold(flag: str) -> str:
    return DEFAULT if flag == DEFAULT else HELD


def step(session: SessionState, packet: StreamPacket) -> QualityTriple:
    """Advance the session by exactly one packet."""
    if packet.step != session.step:
        raise ValueError(f"packet step {packet.step} != session step {session.step}")
    model, cfg = session.model, session.model.config
    feats = session.tracker.update(packet)
    if feats.visual is not None:
        score, session.visual_state = predict_step(feats.visual, session.visual_state, model.visual)
        session.last_S_v, session.flag_v = _clamp(score, cfg.clamp), FRESH
    else:
        session.flag_v = _hold(session.flag_v)
    if feats.audio is not None:
        score, session.audio_state = predict_step(feats.audio, session.audio_state, model.audio)
        session.last_S_a, session.flag_a = _clamp(score, cfg.clamp), FRESH
    else:
        session.flag_a = _hold(session.flag_a)
    session.step += 1
    return current_scores(session)


def predict_online(model: TeleVQA, packets: Sequence[StreamPacket]) -> list:
    session = init_session(model)
    return [step(session, p) for p in packets]


def predict_offline(model: TeleVQA, packets: Sequence[StreamPacket]) -> list:
    """Reference path: extract every step first, regress whole sequences in one batch."""
    model.validate()
    cfg = model.config
    tracker = FeatureTracker(model)
    per_step = [tracker.update(p) for p in packets]
    vis_idx = [i for i, f in enumerate(per_step) if f.visual is not None]
    aud_idx = [i for i, f in enumerate(per_step) if f.audio is not None]
    s_v = np.full(len(packets), np.nan)
    s_a = np.full(len(packets), np.nan)
    if vis_idx:
        s_v[vis_idx] = forward_sequence(model.visual, np.stack([per_step[i].visual for i in vis_idx]))
    if aud_idx:
        s_a[aud_idx] = forward_sequence(model.audio, np.stack([per_step[i].audio for i in aud_idx]))
    triples = []
    last_v, last_a = cfg.default_score, cfg.default_score
    flag_v = flag_a = DEFAULT
    for t in range(len(packets)):
        if np.isnan(s_v[t]):
            flag_v = _hold(flag_v)
        else:
            last_v, flag_v = _clamp(s_v[t], cfg.clamp), FRESH
        if np.isnan(s_a[t]):
            flag_a = _hold(flag_a)
        else:
            last_a, flag_a = _clamp(s_a[t], cfg.clamp), FRESH
        triples.append(QualityTriple(packets[t].step, last_v, last_a, fuse(last_a, last_v, cfg), flag_v, flag_a))
    return triples


def stream_score(triples: Sequence[QualityTriple], config: Config) -> float:
    """Video-level prediction: the final fused score, or the visual score without audio."""
    last = triples[-1]
    return last.S_av if config.uses_audio else last.S_v


# ---------------------------------------------------------------------------
# quality maps and local queries


def quality_map(frame, M: int, N: int, extractor: ExtractorParams, head: RegressorParams,
                clamp=(1.0, 5.0)) -> np.ndarray:
    """``M x N`` grid of clamped local scores from a single extraction pass."""
    if M < 1 or N < 1:
        raise ValueError("grid must be at least 1x1")
    maps = extract_frame_maps(frame, extractor)
    if M > maps.shape[1] or N > maps.shape[2]:
        raise ValueError(f"grid exceeds feature resolution: {M}x{N} on a "
                         f"{maps.shape[1]}x{maps.shape[2]} feature map")
    rois = [RoI(j / N, i / M, (j + 1) / N, (i + 1) / M) for i in range(M) for j in range(N)]
    return np.clip(roi_scores(maps, rois, head), *clamp).reshape(M, N)


def local_quality(frame, rois: Sequence[RoI], extractor: ExtractorParams, head: RegressorParams,
                  clamp=(1.0, 5.0)) -> list:
    """Clamped score per RoI, in input order."""
    if len(rois) == 0:
        return []
    maps = extract_frame_maps(frame, extractor)
    out = []
    for i, roi in enumerate(rois):
        try:
            s = roi_scores(maps, [roi], head)[0]
        except ValueError as exc:
            raise ValueError(f"roi {i}: {exc}") from exc
        out.append(float(np.clip(s, *clamp)))
    return out


# ---------------------------------------------------------------------------
# trace / image output


TRACE_FIELDS = ("t", "S_v", "S_a", "S_av", "flag_v", "flag_a")


def write_trace(path, triples: Sequence[QualityTriple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for q in triples:
            w.writerow([q.step, repr(q.S_v), repr(q.S_a), repr(q.S_av), q.flag_v, q.flag_a])


def read_trace(path) -> list:
    with open(path, newline="") as fh:
        return [QualityTriple(int(r["t"]), float(r["S_v"]), float(r["S_a"]), float(r["S_av"]),
                              r["flag_v"], r["flag_a"]) for r in csv.DictReader(fh)]


def write_pgm(path, scores: np.ndarray, clamp=(1.0, 5.0)) -> None:
    """Binary PGM, one pixel per cell, score range mapped onto 0..255."""
    lo, hi = clamp
    img = np.round((np.clip(scores, lo, hi) - lo) / (hi - lo) * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    payload = data[m.end():]
    if len(payload) < w * h:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# training


def stream_sequences(model: TeleVQA, stream: Stream, modalities: Optional[Sequence[str]] = None):
    """Visual rows and audio vectors of a whole stream, as the online tracker sees them."""
    tracker = FeatureTracker(model, modalities)
    vis, aud = [], []
    for packet in packetize(stream, model.config.clip_len):
        f = tracker.update(packet)
        if f.visual is not None:
            vis.append(f.visual)
        if f.audio is not None:
            aud.append(f.audio)
    vis = np.array(vis) if vis else None
    aud = np.array(aud) if aud else None
    return vis, aud


def _head_dataset(model: TeleVQA, streams, mos, frames_per_stream: int, patches: int = 0, seed: int = 0):
    """Pooled frame sequences labelled with stream MOS, plus ``patches`` random RoIs per frame.

    Each RoI inherits its frame's label, so the head also learns to score the
    small regions it is later applied to.
    """
    rng = np.random.default_rng(seed)
    rois = multi_scale_rois(*model.config.patch_scales) if patches else []
    data = []
    for stream, y in zip(streams, mos):
        idx = np.unique(np.linspace(0, stream.n_frames - 1, min(frames_per_stream, stream.n_frames)).astype(int))
        for i in idx:
            maps = extract_frame_maps(stream.frames[i], model.frame_extractor)
            data.append((frame_vector_to_sequence(frame_features_from_maps(maps).values), y))
            if patches:
                pick = [rois[k] for k in rng.choice(len(rois), size=min(patches, len(rois)), replace=False)]
                data.extend((seq, y) for seq in pooled_to_sequence(roi_pool_batch(maps, pick, 1, 3)))
    return data


def train_head(model: TeleVQA, streams, mos, val=None, frames_per_stream: int = 8,
               train_log: Optional[TrainLog] = None) -> RegressorParams:
    """Fit the scoring head on pooled frame maps and RoIs labelled with stream MOS."""
    cfg = model.config
    n = cfg.head_patches
    data = _head_dataset(model, streams, mos, frames_per_stream, n, cfg.head_train.seed)
    val_data = _head_dataset(model, *val, frames_per_stream, n, cfg.head_train.seed + 1) if val else None
    return train(data, cfg.head_train, cfg.head.hidden_dim, cfg.head.fcn_dims, steps=None,
                 loss_steps="last", val=val_data, train_log=train_log)


def _fused_batch_loss(cfg: Config):
    coeffs, operand = cfg.fusion.coeffs, cfg.fusion.operand
    c0, c1, c2, c3 = coeffs

    def batch_loss(models, batch):
        B = len(batch)
        grads, total = {}, 0.0
        with_audio = [b for b in batch if b[1] is not None]
        without = [b for b in batch if b[1] is None]
        gv = {k: np.zeros_like(models["visual"][k]) for k in models["visual"].trainable}
        ga = {k: np.zeros_like(models["audio"][k]) for k in models["audio"].trainable}
        if with_audio:
            Xv = np.stack([b[0] for b in with_audio])
            Xa = np.stack([b[1] for b in with_audio])
            y = np.array([b[2] for b in with_audio])[:, None]
            Yv, cv = forward_batch(models["visual"], Xv)
            n, kv = Yv.shape
            if operand == "audio":
                Ya, ca = forward_batch(models["audio"], Xa)
                tau = (np.arange(kv) * Ya.shape[1]) // kv
                A = Ya[:, tau]
            else:
                A = Yv
            F = kpn_raw(A, Yv, coeffs)
            resid = F - y
            w = n / B
            total += w * float(np.mean(resid**2))
            dF = w * 2.0 * resid / resid.size
            if operand == "audio":
                dYv = dF * (c2 + c3 * A)
                dYa = np.zeros_like(Ya)
                np.add.at(dYa, (slice(None), tau), dF * (c1 + c3 * Yv))
                for k, v in backward_batch(models["audio"], ca, dYa).items():
                    ga[k] += v
            else:
                dYv = dF * (c1 + c2 + 2.0 * c3 * Yv)
            for k, v in backward_batch(models["visual"], cv, dYv).items():
                gv[k] += v
        if without:
            # a single modality is regressed directly, without the fusion layer
            Xv = np.stack([b[0] for b in without])
            y = np.array([b[2] for b in without])[:, None]
            Yv, cv = forward_batch(models["visual"], Xv)
            resid = Yv - y
            w = len(without) / B
            total += w * float(np.mean(resid**2))
            for k, v in backward_batch(models["visual"], cv, w * 2.0 * resid / resid.size).items():
                gv[k] += v
        grads["visual"], grads["audio"] = gv, ga
        return total, grads

    return batch_loss


def train_fused(visual_data, audio_data, targets, cfg: Config, val=None,
                train_log: Optional[TrainLog] = None):
    """Train both pathways jointly through the fusion polynomial.

    ``audio_data`` entries may be ``None`` (no audio); those samples train
    the visual pathway alone. Video step ``t`` of ``K_v`` is paired with
    audio step ``floor(t * K_a / K_v)``. Returns ``(visual, audio)`` params.
    """
    tc: TrainConfig = cfg.train
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) < 2:
        raise ValueError("training needs at least two samples")
    visual = RegressorParams.init(visual_data[0].shape[1], cfg.visual.hidden_dim, cfg.visual.fcn_dims,
                                  seed=tc.seed, out_bias=3.0)
    fit_normalizer(visual, visual_data)
    audio_seqs = [a for a in audio_data if a is not None]
    if not audio_seqs:
        raise ValueError("joint training needs audio for at least one sample")
    audio = RegressorParams.init(audio_seqs[0].shape[1], cfg.audio.hidden_dim, cfg.audio.fcn_dims,
                                 seed=tc.seed + 1, out_bias=3.0)
    fit_normalizer(audio, audio_seqs)

    def epoch_batches(rng):
        v = [sample_steps(s, tc.video_steps, rng) for s in visual_data]
        a = [None if s is None else sample_steps(s, tc.audio_steps, rng) for s in audio_data]
        for idx in _batches(len(targets), tc.batch_size, rng):
            yield [(v[i], a[i], targets[i]) for i in idx]

    def val_fn(models):
        v_val, a_val, y_val = val
        preds = [_pathway_fused(models["visual"], models["audio"], v, a, cfg) for v, a in zip(v_val, a_val)]
        return float(np.mean((np.array(preds) - np.asarray(y_val)) ** 2))

    rng = np.random.default_rng(tc.seed)
    out = train_loop({"visual": visual, "audio": audio}, epoch_batches, _fused_batch_loss(cfg), tc, rng,
                     val_fn if val else None, train_log)
    return out["visual"], out["audio"]


def _pathway_fused(visual, audio, v_seq, a_seq, cfg: Config) -> float:
    s_v = _clamp(forward_sequence(visual, v_seq)[-1], cfg.clamp)
    s_a = cfg.default_score if a_seq is None else _clamp(forward_sequence(audio, a_seq)[-1], cfg.clamp)
    return fuse(s_a, s_v, cfg)


def train_model(streams: Sequence[Stream], mos: Sequence[float], config: Config,
                val: Optional[tuple] = None, logs: Optional[dict] = None) -> TeleVQA:
    """End-to-end desk training: scoring head first, then the pathway regressors.

    ``val`` is an optional ``(streams, mos)`` pair used for model selection.
    The head is frozen while the pathways train.
    """
    stored = config
    model = TeleVQA.build(config)
    if config.seed:
        # the master seed offsets every training draw; the stored config stays as given
        config = dataclasses.replace(
            config,
            train=dataclasses.replace(config.train, seed=config.train.seed + config.seed),
            head_train=dataclasses.replace(config.head_train, seed=config.head_train.seed + config.seed),
        )
        model.config = config
    logs = logs if logs is not None else {}
    mods = config.modalities
    if "p" in mods:
        logs["head"] = TrainLog()
        model.head = train_head(model, streams, mos, val, train_log=logs["head"])

    def sequences(ss):
        return [stream_sequences(model, s) for s in ss]

    seqs = sequences(streams)
    val_seqs = sequences(val[0]) if val else None
    tc = config.train
    logs["pathways"] = TrainLog()
    if config.visual_modalities and config.uses_audio:
        val_arg = None
        if val:
            val_arg = ([v for v, _ in val_seqs], [a for _, a in val_seqs], list(val[1]))
        model.visual, model.audio = train_fused(
            [v for v, _ in seqs], [a for _, a in seqs], mos, config, val_arg, logs["pathways"])
    elif config.visual_modalities:
        data = [(v, y) for (v, _), y in zip(seqs, mos)]
        model.visual = _train_single(data, config, config.visual, tc.video_steps, val_seqs, val, 0, logs)
    else:
        data = [(a, y) for (_, a), y in zip(seqs, mos) if a is not None]
        model.audio = _train_single(data, config, config.audio, tc.audio_steps, val_seqs, val, 1, logs)
    model.config = stored
    model.validate()
    return model


def _train_single(data, config, rcfg, steps, val_seqs, val, which, logs):
    val_data = None
    if val:
        val_data = [(s[which], y) for s, y in zip(val_seqs, val[1]) if s[which] is not None]
    return train(data, config.train, rcfg.hidden_dim, rcfg.fcn_dims, steps=steps, loss_steps="all",
                 val=val_data, train_log=logs["pathways"])


# ---------------------------------------------------------------------------
# evaluation


def split_indices(n: int, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> tuple:
    """Random train/val/test index split; the test split takes the remainder."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_tr, n_va = int(round(fractions[0] * n)), int(round(fractions[1] * n))
    return perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]


def evaluate_ablation(streams: Sequence[Stream], mos: Sequence[float], config: Config,
                      modality_sets: Sequence[Sequence[str]], split_seed: int = 0,
                      fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> dict:
    """Train one model per modality set on a shared split and score the test streams.

    Returns ``{"".join(mods): {"srcc", "lcc", "seconds"}}``.
    """
    tr, va, te = split_indices(len(streams), fractions, split_seed)

    def pick(idx):
        return [streams[i] for i in idx], [mos[i] for i in idx]

    test_streams, test_mos = pick(te)
    out = {}
    for mods in modality_sets:
        t0 = time.perf_counter()
        cfg = dataclasses.replace(config, modalities=tuple(mods))
        model = train_model(*pick(tr), cfg, val=pick(va) if len(va) else None)
        pred = [stream_score(predict_offline(model, packetize(s, cfg.clip_len)), cfg) for s in test_streams]
        out["".join(mods)] = {"srcc": srcc(pred, test_mos), "lcc": lcc(pred, test_mos),
                              "seconds": time.perf_counter() - t0}
        log.info("modalities %s: srcc %.4f", "".join(mods), out["".join(mods)]["srcc"])
    return out
