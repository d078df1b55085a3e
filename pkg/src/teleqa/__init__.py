"""Online audiovisual quality assessment for telecommunication streams."""

from .config import Config, load_config, full_scale
from .pipeline import (
    QualityTriple,
    TeleVQA,
    init_session,
    kpn_fuse,
    local_quality,
    predict_offline,
    predict_online,
    quality_map,
    step,
    train_model,
)
from .stream_io import Stream, StreamPacket, load_stream, packetize, store_stream, synth_stream

__version__ = "0.1.0"

__all__ = [
    "Config",
    "QualityTriple",
    "Stream",
    "StreamPacket",
    "TeleVQA",
    "init_session",
    "kpn_fuse",
    "load_config",
    "load_stream",
    "local_quality",
    "packetize",
    "full_scale",
    "predict_offline",
    "predict_online",
    "quality_map",
    "step",
    "store_stream",
    "synth_stream",
    "train_model",
]
