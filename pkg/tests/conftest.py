import numpy as np
import pytest

from robustvad.scorer.params import ScorerConfig, init_params
from robustvad.videostore.model import Video
from robustvad.videostore.synth import SceneSpec, generate_video, video_rng


@pytest.fixture(scope="session")
def scfg():
    return ScorerConfig()


@pytest.fixture(scope="session")
def params(scfg):
    return init_params(scfg, seed=0)


@pytest.fixture(scope="session")
def scene():
    return SceneSpec()


def make_videos(scene, n_normal, n_abnormal, seed, split="test"):
    """Render a small list of Video objects without touching disk."""
    vids = []
    idx = 0
    for k in range(n_normal):
        px, fl, _ = generate_video(scene, video_rng(seed, idx), abnormal=False)
        vids.append(Video(f"{split}_n{k:03d}", px, 0, fl))
        idx += 1
    for k in range(n_abnormal):
        px, fl, _ = generate_video(scene, video_rng(seed, idx), abnormal=True)
        vids.append(Video(f"{split}_a{k:03d}", px, 1, fl))
        idx += 1
    return vids


@pytest.fixture(scope="session")
def small_videos(scene):
    return make_videos(scene, 3, 3, seed=123)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
