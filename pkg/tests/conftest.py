import pytest

from aai import synthcorpus


@pytest.fixture(scope="session")
def small_disk_corpus(tmp_path_factory):
    """Tiny on-disk synthetic corpus shared by CLI-level tests."""
    spec = synthcorpus.SynthSpec(subjects=2, utterances=10,
                                 duration_range=(0.6, 0.9), feature_dim=16,
                                 seed=123)
    root = tmp_path_factory.mktemp("corpus") / "synth"
    synthcorpus.gen_corpus(spec, root, split_seed=0)
    return root, spec
