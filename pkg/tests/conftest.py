import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from teleqa.backbone import make_extractor
from teleqa.config import Config, ExtractorConfig, RegressorConfig
from teleqa.pipeline import TeleVQA
from teleqa.regressor import RegressorParams

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def small_config(**kw) -> Config:
    """Narrow extractors and regressors so pipeline tests stay fast."""
    base = dict(
        frame_extractor=ExtractorConfig((4, 4, 4), seed=1),
        clip_extractor=ExtractorConfig((4, 4, 4), seed=2, temporal_kernel=3),
        audio_extractor=ExtractorConfig((4, 4, 4), seed=3),
        head=RegressorConfig(4, (4, 4, 4)),
        visual=RegressorConfig(4, (4, 4, 4)),
        audio=RegressorConfig(4, (4, 4, 4)),
        patch_scales=(0, 2),
    )
    base.update(kw)
    return Config(**base)


def random_model(config: Config, seed: int = 0) -> TeleVQA:
    """Untrained bundle with random regressor weights for every active pathway."""
    model = TeleVQA.build(config)
    c = model.frame_extractor.final_channels
    model.head = RegressorParams.init(c, config.head.hidden_dim, config.head.fcn_dims, seed=seed, out_bias=3.0)
    if config.visual_modalities:
        model.visual = RegressorParams.init(config.visual_dim(), config.visual.hidden_dim,
                                            config.visual.fcn_dims, seed=seed + 1, out_bias=3.0)
    if config.uses_audio:
        model.audio = RegressorParams.init(config.feature_dims()["audio"], config.audio.hidden_dim,
                                           config.audio.fcn_dims, seed=seed + 2, out_bias=3.0)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pointwise_extractor():
    # 1x1 kernels, stride 1: every feature cell sees exactly one pixel
    return make_extractor(3, (6, 5), kernel=1, stride=1, seed=7)


# criterion number -> (passed, title, seconds, budget, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, secs, budget, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}  {title:<38} {secs:7.2f}s / {budget:g}s  {detail}")
