"""Audiovisual stream container, synthetic stream generation and packetization.

A *container* is a directory holding ``manifest.json``, ``frames.f32`` and an
optional ``audio.f32``. Pixels are float32 in [0, 1], stored frame-major with
planar R, G, B per frame; audio is float32 mono. Everything is little-endian.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import FormatError

DISTORTION_KINDS = ("blur", "blocking", "gaussian-noise", "audio-hum", "audio-clipping", "none")
VIDEO_KINDS = ("blur", "blocking", "gaussian-noise")
AUDIO_KINDS = ("audio-hum", "audio-clipping")

MANIFEST = "manifest.json"
FRAMES = "frames.f32"
AUDIO = "audio.f32"


@dataclass(eq=False)
class Stream:
    """Decoded stream at native resolution.

    ``frames`` has shape (n_frames, height, width, 3); ``audio`` is a 1-D
    mono signal or ``None``.
    """

    width: int
    height: int
    fps: float
    frames: np.ndarray
    audio: Optional[np.ndarray] = None
    sample_rate: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.width < 8 or self.height < 8:
            raise ValueError(f"stream must be at least 8x8, got {self.width}x{self.height}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frames.ndim != 4 or self.frames.shape[1:] != (self.height, self.width, 3):
            raise ValueError(
                f"frames shape {self.frames.shape} does not match "
                f"(n, {self.height}, {self.width}, 3)"
            )
        if len(self.frames) < 1:
            raise ValueError("stream has no frames")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite pixel values")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("pixel values outside [0, 1]")
        if self.audio is None:
            self.sample_rate = None
            return
        self.audio = np.asarray(self.audio, dtype=np.float32)
        if self.audio.ndim != 1:
            raise ValueError("audio must be mono")
        if not self.sample_rate or self.sample_rate <= 0:
            raise ValueError("audio present without a positive sample_rate")
        if not np.all(np.isfinite(self.audio)):
            raise ValueError("non-finite audio samples")
        if np.abs(self.audio).max(initial=0.0) > 1.0:
            raise ValueError("audio amplitude outside [-1, 1]")
        video_s = self.n_frames / self.fps
        audio_s = len(self.audio) / self.sample_rate
        if abs(audio_s - video_s) > 1.0 / self.fps + 1e-9:
            raise ValueError(
                f"audio duration {audio_s:.4f}s differs from video duration "
                f"{video_s:.4f}s by more than one frame period"
            )

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Stream):
            return NotImplemented
        same_audio = (self.audio is None and other.audio is None) or (
            self.audio is not None
            and other.audio is not None
            and self.audio.tobytes() == other.audio.tobytes()
        )
        return (
            (self.width, self.height, self.fps, self.sample_rate)
            == (other.width, other.height, other.fps, other.sample_rate)
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
            and same_audio
        )


@dataclass
class AudioSegment:
    samples: np.ndarray
    sample_rate: int
    start_time: float

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("empty audio segment")


@dataclass
class StreamPacket:
    """Inputs arriving at one timestep. Absent fields are ``None``."""

    step: int
    frame: Optional[np.ndarray] = None
    clip: Optional[np.ndarray] = None
    audio: Optional[AudioSegment] = None


@dataclass
class DistortionSpec:
    """One injected impairment.

    ``region`` is an optional normalized ``(x0, y0, x1, y1)`` rectangle that
    confines a video distortion to part of the frame; ``None`` means the
    whole frame. Audio kinds ignore it.
    """

    kind: str = "none"
    severity: float = 0.0
    onset_step: int = 0
    region: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")
        if self.onset_step < 0:
            raise ValueError("onset_step must be non-negative")
        if self.region is not None:
            self.region = tuple(float(v) for v in self.region)
            x0, y0, x1, y1 = self.region
            if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
                raise ValueError(f"invalid distortion region {self.region}")


@dataclass
class SynthSpec:
    width: int = 128
    height: int = 128
    fps: float = 10.0
    n_frames: int = 24
    sample_rate: Optional[int] = 8000
    distortions: list = field(default_factory=list)

    def __post_init__(self):
        self.distortions = [
            d if isinstance(d, DistortionSpec) else DistortionSpec(**d) for d in self.distortions
        ]
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.width < 8 or self.height < 8:
            raise ValueError("synthetic streams must be at least 8x8")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.sample_rate is not None and self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


# ---------------------------------------------------------------------------
# container I/O


def store_stream(stream: Stream, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "width": stream.width,
        "height": stream.height,
        "fps": stream.fps,
        "n_frames": stream.n_frames,
        "sample_rate": stream.sample_rate,
        "audio_n_samples": 0 if stream.audio is None else int(len(stream.audio)),
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    planar = np.ascontiguousarray(stream.frames.transpose(0, 3, 1, 2), dtype="<f4")
    (path / FRAMES).write_bytes(planar.tobytes())
    audio_path = path / AUDIO
    if stream.audio is not None:
        audio_path.write_bytes(np.ascontiguousarray(stream.audio, dtype="<f4").tobytes())
    elif audio_path.exists():
        audio_path.unlink()


def load_stream(path) -> Stream:
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        width = int(manifest["width"])
        height = int(manifest["height"])
        fps = manifest["fps"]
        n_frames = int(manifest["n_frames"])
        sample_rate = manifest.get("sample_rate")
        n_audio = int(manifest.get("audio_n_samples") or 0)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad manifest: {exc}") from exc

    frames_path = path / FRAMES
    if not frames_path.is_file():
        raise FileNotFoundError(f"missing {frames_path}")
    raw = frames_path.read_bytes()
    expected = n_frames * 3 * height * width * 4
    if len(raw) != expected:
        raise FormatError(f"payload length mismatch: {FRAMES} has {len(raw)} bytes, expected {expected}")
    planar = np.frombuffer(raw, dtype="<f4").reshape(n_frames, 3, height, width)
    frames = planar.transpose(0, 2, 3, 1).astype(np.float32)

    audio = None
    if sample_rate is not None:
        audio_path = path / AUDIO
        if not audio_path.is_file():
            raise FileNotFoundError(f"missing {audio_path}")
        raw = audio_path.read_bytes()
        if len(raw) != n_audio * 4:
            raise FormatError(
                f"payload length mismatch: {AUDIO} has {len(raw)} bytes, expected {n_audio * 4}"
            )
        audio = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        sample_rate = int(sample_rate)

    try:
        return Stream(width, height, fps, frames, audio, sample_rate)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# synthetic generation


def ground_truth_mos(distortions: Sequence[DistortionSpec], fusion: Optional[Sequence[float]] = None) -> float:
    """Severity-derived MOS on [1, 5].

    By default the worst severity ``u`` anywhere sets ``5 - 4u``. With
    ``fusion = (c0, c1, c2, c3)`` the video and audio qualities ``5 - 4u``
    (worst per modality) are combined as ``c0 + c1*q_a + c2*q_v + c3*q_a*q_v``.
    """
    def worst(kinds):
        return max((d.severity for d in distortions if d.kind in kinds), default=0.0)

    if fusion is None:
        score = 5.0 - 4.0 * max(worst(VIDEO_KINDS), worst(AUDIO_KINDS))
    else:
        c0, c1, c2, c3 = fusion
        q_v, q_a = 5.0 - 4.0 * worst(VIDEO_KINDS), 5.0 - 4.0 * worst(AUDIO_KINDS)
        score = c0 + c1 * q_a + c2 * q_v + c3 * q_a * q_v
    return float(min(5.0, max(1.0, score)))


def _texture(rng, h, w):
    """Periodic colour texture: 1/f noise with a fixed spectral slope.

    Content statistics are held nearly constant across seeds so that the
    injected distortion dominates the variation in quality cues.
    """
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    radius[0, 0] = 1.0
    amplitude = 1.0 / radius
    amplitude[0, 0] = 0.0
    channels = []
    for _ in range(3):
        phase = np.exp(2j * np.pi * rng.uniform(size=(h, w)))
        img = np.real(np.fft.ifft2(amplitude * phase))
        channels.append((img - img.mean()) / (img.std() + 1e-12))
    mix = rng.dirichlet(np.ones(3), size=3) * 0.5 + np.eye(3) * 0.5
    tex = np.stack(channels, axis=-1) @ mix.T
    tex = tex / (tex.std(axis=(0, 1), keepdims=True) + 1e-12)
    return np.clip(0.5 + 0.12 * tex + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)


def _block_mean(frame, block=8):
    h, w, _ = frame.shape
    ph, pw = -h % block, -w % block
    padded = np.pad(frame, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[0] // block, padded.shape[1] // block
    means = padded.reshape(hb, block, wb, block, 3).mean(axis=(1, 3))
    return np.repeat(np.repeat(means, block, axis=0), block, axis=1)[:h, :w]


def _region_mask(region, h, w):
    x0, y0, x1, y1 = region
    rows = slice(int(round(y0 * h)), max(int(round(y1 * h)), int(round(y0 * h)) + 1))
    cols = slice(int(round(x0 * w)), max(int(round(x1 * w)), int(round(x0 * w)) + 1))
    mask = np.zeros((h, w, 1), dtype=bool)
    mask[rows, cols] = True
    return mask


def _distort_frame(frame, d: DistortionSpec, rng):
    out = _distort_whole(frame, d, rng)
    if d.region is None:
        return out
    return np.where(_region_mask(d.region, *frame.shape[:2]), out, frame)


def _distort_whole(frame, d: DistortionSpec, rng):
    if d.kind == "blur":
        sigma = 3.0 * d.severity
        return gaussian_filter(frame, sigma=(sigma, sigma, 0.0), mode="wrap") if sigma > 0 else frame
    if d.kind == "blocking":
        return (1.0 - d.severity) * frame + d.severity * _block_mean(frame)
    if d.kind == "gaussian-noise":
        return frame + rng.normal(0.0, 0.2 * d.severity, size=frame.shape)
    return frame


def _speech_like(rng, n, sr):
    t = np.arange(n) / sr
    f0 = rng.uniform(100.0, 220.0) * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    voice = sum((0.7**k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi)) for k in range(1, 9))
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    signal = voice * envelope + 0.05 * rng.normal(size=n)
    return 0.5 * signal / (np.abs(signal).max() + 1e-12)


def _distort_audio(audio, d: DistortionSpec, start, sr):
    seg = audio[start:]
    if d.kind == "audio-hum":
        t = (start + np.arange(len(seg))) / sr
        buzz = sum((0.6**k) * np.sin(2 * np.pi * 50.0 * (2 * k + 1) * t) for k in range(5))
        seg[:] = seg + 0.45 * d.severity * buzz / 1.9
    elif d.kind == "audio-clipping":
        peak = np.abs(audio).max() + 1e-12
        level = peak * (1.0 - 0.9 * d.severity)
        seg[:] = np.clip(seg, -level, level)
    return audio


def synth_stream(spec, seed: int):
    """Generate a deterministic stream and its ground-truth MOS.

    The content is a drifting periodic texture with a speech-like audio
    track. Distortions take effect from their ``onset_step``; the MOS is
    ``5 - 4 * max(severity)`` regardless of onset.
    """
    if isinstance(spec, dict):
        spec = SynthSpec(**spec)
    # independent draws for content, distortion noise and audio, so adding a
    # distortion never perturbs the clean signal of either modality
    rng, noise_rng, audio_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    h, w = spec.height, spec.width
    tex = _texture(rng, h, w)
    vy, vx = rng.uniform(-1.5, 1.5, size=2)

    video_ds = [d for d in spec.distortions if d.kind in VIDEO_KINDS]
    frames = np.empty((spec.n_frames, h, w, 3), dtype=np.float32)
    for t in range(spec.n_frames):
        frame = np.roll(tex, (int(round(vy * t)), int(round(vx * t))), axis=(0, 1))
        for d in video_ds:
            if t >= d.onset_step:
                frame = _distort_frame(frame, d, noise_rng)
        frames[t] = np.clip(frame, 0.0, 1.0)

    audio = None
    if spec.sample_rate is not None:
        n = int(round(spec.n_frames * spec.sample_rate / spec.fps))
        audio = _speech_like(audio_rng, n, spec.sample_rate)
        for d in spec.distortions:
            if d.kind in AUDIO_KINDS:
                start = min(n, int(round(d.onset_step * spec.sample_rate / spec.fps)))
                audio = _distort_audio(audio, d, start, spec.sample_rate)
        audio = np.clip(audio, -1.0, 1.0).astype(np.float32)

    stream = Stream(w, h, spec.fps, frames, audio, spec.sample_rate)
    return stream, ground_truth_mos(spec.distortions)


COUPLINGS = ("tandem", "independent", "single")


def severity_dataset(n: int, seed: int = 0, coupling: str = "independent", spec: Optional[SynthSpec] = None,
                     local: bool = False, min_extent: float = 0.35, mos_fusion: Optional[Sequence[float]] = None):
    """Draw ``n`` severity-labelled streams.

    ``coupling`` decides how severities ``u ~ U(0, 1)`` are assigned:

    * ``"independent"``: one random video kind and one random audio kind,
      each with its own severity (MOS follows the worse of the two);
    * ``"tandem"``: the same two kinds share a single severity;
    * ``"single"``: one random kind from either modality.

    With ``local`` each video distortion covers a random rectangle whose
    sides span ``min_extent`` to the full frame. ``mos_fusion`` is passed to
    :func:`ground_truth_mos`. Returns ``(streams, mos, distortions)``.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")
    rng = np.random.default_rng(seed)
    base = spec or SynthSpec()
    streams, mos, labels = [], [], []
    for _ in range(n):
        u = rng.uniform(size=2)
        if coupling == "single":
            pool = VIDEO_KINDS + AUDIO_KINDS
            kinds = [pool[rng.integers(len(pool))]]
        else:
            kinds = [VIDEO_KINDS[rng.integers(len(VIDEO_KINDS))], AUDIO_KINDS[rng.integers(len(AUDIO_KINDS))]]
        if coupling != "independent":
            u[1] = u[0]
        region = None
        if local:
            ext = rng.uniform(min_extent, 1.0, size=2)
            x0, y0 = rng.uniform(0.0, 1.0 - ext)
            region = (x0, y0, min(1.0, x0 + ext[0]), min(1.0, y0 + ext[1]))
        ds = [DistortionSpec(k, float(u[i]), region=region if k in VIDEO_KINDS else None)
              for i, k in enumerate(kinds)]
        one = SynthSpec(base.width, base.height, base.fps, base.n_frames, base.sample_rate, ds)
        stream, _ = synth_stream(one, seed=int(rng.integers(2**31)))
        streams.append(stream)
        mos.append(ground_truth_mos(ds, mos_fusion))
        labels.append(ds)
    return streams, mos, labels


# ---------------------------------------------------------------------------
# packetization


def _sample_index(time: Fraction, sr: int) -> int:
    # first sample index whose timestamp i/sr is >= time
    return max(0, math.ceil(time * sr))


def packetize(stream: Stream, clip_len: int = 8, audio_window: Optional[float] = None):
    """Split a stream into one packet per frame.

    Packet ``t`` carries a clip of frames ``t-clip_len+1 .. t`` iff
    ``(t + 1) % clip_len == 0``; a trailing partial clip is never emitted.
    Audio is the samples whose timestamps fall in frame ``t``'s display
    interval, or, when ``audio_window`` is given, the trailing
    ``audio_window`` seconds ending with that interval.
    """
    if clip_len < 2:
        raise ValueError("clip_len must be >= 2")
    period = 1 / Fraction(stream.fps)
    packets = []
    for t in range(stream.n_frames):
        clip = None
        if (t + 1) % clip_len == 0:
            clip = stream.frames[t - clip_len + 1 : t + 1]
        audio = None
        if stream.audio is not None:
            sr = stream.sample_rate
            end_time = (t + 1) * period
            start_time = t * period if audio_window is None else end_time - Fraction(audio_window)
            i0 = _sample_index(max(start_time, Fraction(0)), sr)
            i1 = min(len(stream.audio), _sample_index(end_time, sr))
            if i1 > i0:
                audio = AudioSegment(stream.audio[i0:i1], sr, i0 / sr)
        packets.append(StreamPacket(t, stream.frames[t], clip, audio))
    return packets
