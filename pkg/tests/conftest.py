import numpy
import pytest

from evpriv import recon_net, split_protocol
from evpriv.events import VoxelGrid


@pytest.fixture(scope="function")
def small_network():
    return recon_net.init_params(bins=4, widths=(6, 8, 6), split_points=(1, 3), seed=11)


@pytest.fixture(scope="function")
def random_grid():
    rng = numpy.random.default_rng(5)
    return VoxelGrid(rng.normal(size=(4, 12, 10)))


@pytest.fixture(scope="function")
def middle_server(request, small_network):
    handle = split_protocol.serve(small_network.middle, "127.0.0.1:0", session_timeout=5.0)

    def finalizer():
        handle.close()

    request.addfinalizer(finalizer)
    return handle
