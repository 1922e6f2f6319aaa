import numpy as np
import pytest

from bridge_helpers import silence, tone, write_wav


@pytest.fixture
def speech_wav(tmp_path):
    """Two 'phones' separated by a silence gap; one second total."""
    sig = np.concatenate([
        tone(300, 0.3), silence(0.2), tone(2000, 0.3), silence(0.2),
    ])
    path = tmp_path / "utt1.wav"
    write_wav(path, sig)
    return path


@pytest.fixture
def silent_wav(tmp_path):
    path = tmp_path / "quiet.wav"
    write_wav(path, silence(0.5))
    return path
