from dataclasses import replace

import pytest

from wildpose.config import DataConfig, RunConfig, StageConfig
from wildpose.network import ModelConfig
from wildpose.synthdata import GenConfig, generate_dataset, load_dataset

SMALL_MODEL = ModelConfig(
    latent_channels=20,
    z_dim=32,
    lifting_width=32,
    camera_hidden=8,
    backbone_blocks=((8, 2), (12, 2), (20, 1)),
)


def small_run_config(**changes) -> RunConfig:
    cfg = RunConfig(
        model=SMALL_MODEL,
        stage1=StageConfig(iterations=10, batch_size=4, mix_ratio_2d=0.0),
        stage2=StageConfig(iterations=10, batch_size=5, mix_ratio_2d=0.4),
        data=DataConfig("train.pld", "train.pld", "heldout.pld"),
    )
    return replace(cfg, **changes).validate()


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    generate_dataset(GenConfig(sample_count=30, seed=3), None, d / "train.pld")
    generate_dataset(GenConfig(sample_count=12, seed=4, fraction_only2d=0.5), None, d / "heldout.pld")
    return d


@pytest.fixture(scope="session")
def train_set(data_dir):
    return load_dataset(data_dir / "train.pld")


@pytest.fixture(scope="session")
def heldout_set(data_dir):
    return load_dataset(data_dir / "heldout.pld")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
