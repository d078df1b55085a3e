"""Frozen, seeded convolutional feature extractors and the pooling operators.

Feature maps are plain ``(C, H, W)`` float64 arrays. The extractors stand
in for pretrained backbones: a stack of same-padded convolutions with ReLU,
weights drawn once from a seed and never trained. The clip extractor adds a
1-D temporal convolution followed by a temporal mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensorfile import load_tensors, save_tensors


@dataclass(frozen=True)
class RoI:
    """Axis-aligned region in normalized frame coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(f"invalid RoI {self}")

    @classmethod
    def full(cls) -> "RoI":
        return cls(0.0, 0.0, 1.0, 1.0)


@dataclass(eq=False)
class ExtractorParams:
    weights: list
    biases: list
    strides: tuple
    seed: int = 0
    temporal_weight: Optional[np.ndarray] = None
    temporal_bias: Optional[np.ndarray] = None
    clip_len: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def in_channels(self) -> int:
        return self.weights[0].shape[1]

    @property
    def final_channels(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for w, s in zip(self.weights, self.strides):
            rf += (w.shape[-1] - 1) * jump
            jump *= s
        return rf

    def output_size(self, n: int) -> int:
        for w, s in zip(self.weights, self.strides):
            k = w.shape[-1]
            n = (n + 2 * ((k - 1) // 2) - k) // s + 1
        return n

    def tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"conv{i}.weight"] = w
            out[f"conv{i}.bias"] = b
        if self.temporal_weight is not None:
            out["temporal.weight"] = self.temporal_weight
            out["temporal.bias"] = self.temporal_bias
        return out

    def save(self, path) -> None:
        meta = dict(self.meta, strides=list(self.strides), seed=self.seed, clip_len=self.clip_len)
        save_tensors(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "ExtractorParams":
        tensors, meta = load_tensors(path)
        n = len(meta["strides"])
        meta = dict(meta)
        return cls(
            weights=[tensors[f"conv{i}.weight"] for i in range(n)],
            biases=[tensors[f"conv{i}.bias"] for i in range(n)],
            strides=tuple(meta.pop("strides")),
            seed=meta.pop("seed"),
            temporal_weight=tensors.get("temporal.weight"),
            temporal_bias=tensors.get("temporal.bias"),
            clip_len=meta.pop("clip_len"),
            meta=meta,
        )


def make_extractor(
    in_channels: int,
    channels: Sequence[int],
    kernel: int = 3,
    stride: int = 2,
    seed: int = 0,
    bias: bool = True,
    temporal_kernel: Optional[int] = None,
    clip_len: Optional[int] = None,
) -> ExtractorParams:
    """Draw a frozen extractor from ``seed``.

    Weights are He-normal; first-layer filters have their mean removed so the
    stack responds to local structure rather than brightness. Weights are
    rounded to float32 so that a saved extractor reloads bit-identically.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    c_in = in_channels
    for i, c_out in enumerate(channels):
        fan_in = c_in * kernel * kernel
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel))
        if i == 0 and kernel > 1:
            w -= w.mean(axis=(1, 2, 3), keepdims=True)
        b = rng.uniform(-0.05, 0.05, size=c_out) if bias else np.zeros(c_out)
        weights.append(w.astype(np.float32).astype(np.float64))
        biases.append(b.astype(np.float32).astype(np.float64))
        c_in = c_out
    tw = tb = None
    if temporal_kernel is not None:
        if clip_len is None or temporal_kernel > clip_len:
            raise ValueError("temporal_kernel requires clip_len >= temporal_kernel")
        tw = rng.normal(0.0, math.sqrt(2.0 / (c_in * temporal_kernel)), size=(c_in, c_in, temporal_kernel))
        tb = rng.uniform(-0.05, 0.05, size=c_in) if bias else np.zeros(c_in)
        tw = tw.astype(np.float32).astype(np.float64)
        tb = tb.astype(np.float32).astype(np.float64)
    return ExtractorParams(weights, biases, (stride,) * len(channels), seed, tw, tb, clip_len)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Same-padded 2-D convolution over the last two axes of ``(..., C, H, W)``."""
    k = w.shape[-1]
    pad = (k - 1) // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    xp = np.pad(x, widths) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    # win: (..., C, Ho, Wo, k, k)
    lead = win.shape[:-5]
    c, ho, wo = win.shape[-5:-2]
    win = np.moveaxis(win, -5, -3)  # (..., Ho, Wo, C, k, k)
    cols = win.reshape(*lead, ho * wo, c * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return np.moveaxis(out, -1, -2).reshape(*lead, w.shape[0], ho, wo)


def _spatial(x: np.ndarray, params: ExtractorParams) -> np.ndarray:
    for w, b, s in zip(params.weights, params.biases, params.strides):
        x = np.maximum(conv2d(x, w, b, s), 0.0)
    return x


def _check_size(h: int, w: int, params: ExtractorParams, what: str):
    rf = params.receptive_field
    if h < rf or w < rf:
        raise ValueError(f"{what} of size {h}x{w} is smaller than the receptive field {rf}")


def extract_frame_maps(frame: np.ndarray, params: ExtractorParams) -> np.ndarray:
    """Map an ``(H, W, 3)`` frame to a ``(C, ceil(H/s), ceil(W/s))`` feature map."""
    frame = np.asarray(frame, dtype=np.float64)
    _check_size(frame.shape[0], frame.shape[1], params, "frame")
    return _spatial(np.moveaxis(frame, -1, 0), params)


def temporal_path(maps: np.ndarray, params: ExtractorParams) -> np.ndarray:
    """Temporal convolution (valid), ReLU, then mean over time of ``(T, C, H, W)`` maps."""
    w, b = params.temporal_weight, params.temporal_bias
    kt = w.shape[-1]
    n_out = maps.shape[0] - kt + 1
    acc = np.zeros((n_out,) + maps.shape[1:])
    for k in range(kt):
        acc += np.einsum("oc,tchw->tohw", w[:, :, k], maps[k : k + n_out])
    acc += b[None, :, None, None]
    return np.maximum(acc, 0.0).mean(axis=0)


def extract_clip_maps(clip: np.ndarray, params: ExtractorParams) -> np.ndarray:
    """Per-frame spatial stack, then the temporal path; ``(L, H, W, 3) -> (C, H', W')``."""
    clip = np.asarray(clip, dtype=np.float64)
    if params.temporal_weight is None:
        raise ValueError("extractor has no temporal layer")
    if len(clip) != params.clip_len:
        raise ValueError(f"clip length {len(clip)} != configured clip_len {params.clip_len}")
    _check_size(clip.shape[1], clip.shape[2], params, "clip frame")
    return temporal_path(_spatial(np.moveaxis(clip, -1, 1), params), params)


def extract_audio_maps(spec: np.ndarray, params: ExtractorParams) -> np.ndarray:
    """2-D conv stack over a ``(bins, frames)`` spectrogram.

    The spectrogram is laid out as an image with time down the rows and
    frequency across the columns, so the map is ``(C, time', freq')`` and a
    1x3 pool yields three frequency bands averaged over time.
    """
    spec = np.asarray(spec, dtype=np.float64)
    _check_size(spec.shape[0], spec.shape[1], params, "spectrogram")
    return _spatial(spec.T[None], params)


# ---------------------------------------------------------------------------
# pooling


def _bins(n: int, out: int):
    starts = (np.arange(out) * n) // out
    ends = np.maximum((np.arange(1, out + 1) * n) // out, starts + 1)
    return starts, ends


def adaptive_avg_pool(fmap: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bin ``(i, j)`` averages rows ``[i*H//out_h, (i+1)*H//out_h)`` and likewise columns."""
    _, h, w = fmap.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ValueError(f"cannot pool a {h}x{w} map to {out_h}x{out_w}")
    return _pool(fmap, out_h, out_w, "avg")


def _pool(fmap, out_h, out_w, mode):
    _, h, w = fmap.shape
    rs, re = _bins(h, out_h)
    cs, ce = _bins(w, out_w)
    reduce = np.mean if mode == "avg" else np.max
    out = np.empty((fmap.shape[0], out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            out[:, i, j] = reduce(fmap[:, rs[i] : re[i], cs[j] : ce[j]], axis=(1, 2))
    return out


def roi_cells(roi: RoI, h: int, w: int):
    """Feature-cell rectangle ``(r0, r1, c0, c1)`` covered by ``roi`` on an ``h x w`` map."""
    r0, r1 = math.floor(roi.y0 * h + 0.5), math.floor(roi.y1 * h + 0.5)
    c0, c1 = math.floor(roi.x0 * w + 0.5), math.floor(roi.x1 * w + 0.5)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty RoI: {roi} covers no cells of a {h}x{w} map")
    return r0, r1, c0, c1


def roi_pool(fmap: np.ndarray, roi: RoI, out_h: int = 1, out_w: int = 3, mode: str = "avg") -> np.ndarray:
    """Pool the sub-rectangle under ``roi`` to ``(C, out_h, out_w)``.

    The RoI is scaled to map coordinates with round-half-up; bins follow the
    same rule as :func:`adaptive_avg_pool`, repeating cells when the region is
    narrower than the output grid.
    """
    if mode not in ("avg", "max"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    r0, r1, c0, c1 = roi_cells(roi, fmap.shape[1], fmap.shape[2])
    return _pool(fmap[:, r0:r1, c0:c1], out_h, out_w, mode)


def roi_pool_batch(fmap: np.ndarray, rois: Sequence[RoI], out_h: int = 1, out_w: int = 3) -> np.ndarray:
    """Average-mode :func:`roi_pool` for many RoIs at once, ``(R, C, out_h, out_w)``.

    Uses an integral image, so results match the direct path to float rounding.
    """
    c, h, w = fmap.shape
    integral = np.zeros((c, h + 1, w + 1))
    integral[:, 1:, 1:] = fmap.cumsum(axis=1).cumsum(axis=2)
    boxes = np.array([roi_cells(r, h, w) for r in rois]).reshape(-1, 4)
    r0, r1, c0, c1 = boxes.T
    rh, cw = r1 - r0, c1 - c0
    ir = np.arange(out_h)[None, :]
    ic = np.arange(out_w)[None, :]
    ys = r0[:, None] + (ir * rh[:, None]) // out_h
    ye = np.maximum(r0[:, None] + ((ir + 1) * rh[:, None]) // out_h, ys + 1)
    xs = c0[:, None] + (ic * cw[:, None]) // out_w
    xe = np.maximum(c0[:, None] + ((ic + 1) * cw[:, None]) // out_w, xs + 1)
    Y0, X0 = ys[:, :, None], xs[:, None, :]
    Y1, X1 = ye[:, :, None], xe[:, None, :]
    sums = integral[:, Y1, X1] - integral[:, Y0, X1] - integral[:, Y1, X0] + integral[:, Y0, X0]
    area = (Y1 - Y0) * (X1 - X0)
    return np.moveaxis(sums / area, 0, 1)
