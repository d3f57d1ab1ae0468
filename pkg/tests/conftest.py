import pytest

from phonoscope.synth import build_corpus


@pytest.fixture(scope="session")
def demo_manifest(tmp_path_factory):
    """Small synthetic corpus shared by the CLI and pipeline tests."""
    return build_corpus(str(tmp_path_factory.mktemp("demo")), n_utterances=4, seed=0)
