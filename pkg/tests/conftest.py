import numpy as np
import pytest

from srsjade import ArrayGeometry, SrsConfig


@pytest.fixture
def srs64():
    # post-reduction style waveform: 64 tones at 1.92 MHz
    return SrsConfig(4.85e9, 1.92e6, 64)


@pytest.fixture
def ula4():
    return ArrayGeometry.half_wavelength_ula(4, 4.85e9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
