import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory):
    """A 40-stay synthetic dataset with all four modalities, shared across
    test modules that only need valid input files."""
    from modimg.synth import SignalSpec, SynthSpec, generate_synthetic

    out = tmp_path_factory.mktemp("synth_small")
    spec = SynthSpec(
        n_stays=40,
        seed=11,
        signals=[SignalSpec("clinical", "heart_rate", 4.0)],
        label_noise=0.05,
        ecg_missing_rate=0.3,
    )
    generate_synthetic(spec, out)
    return out
