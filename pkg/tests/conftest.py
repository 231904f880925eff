import numpy as np
import pytest

from sasvolt.mesh import make_icosphere
from sasvolt.signal import Window, make_lfm
from sasvolt.simulator import SensorPose


@pytest.fixture(scope="session")
def chirp():
    """25-45 kHz, 1 ms tukey chirp at 100 kHz: the workhorse waveform."""
    return make_lfm(25e3, 45e3, 1e-3, 100e3, Window.tukey(0.1))


@pytest.fixture(scope="session")
def small_sphere():
    return make_icosphere(0.05, 2)


@pytest.fixture()
def down_pose():
    return SensorPose(tx_origin=(0.0, 0.0, 0.4), rx_origin=(0.0, 0.0, 0.4),
                      boresight=(0.0, 0.0, -1.0), beamwidth_rad=np.pi / 4)
