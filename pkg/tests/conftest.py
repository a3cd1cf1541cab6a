import pytest

from fracsaddle.core import ProblemParams, model_by_name
from fracsaddle.layer import arctan_layer, solve_layer
from fracsaddle.saddle import make_grid3, solve_saddle


@pytest.fixture(scope="session")
def sine_layer_small():
    # reduced-size solve shared by the layer and saddle test modules
    return solve_layer(model_by_name("sine"), 0.5, L=30.0, N=600)


@pytest.fixture(scope="session")
def arctan_ref():
    return arctan_layer(L=50.0, N=1000)


@pytest.fixture(scope="session")
def cubic_layer_small():
    return solve_layer(model_by_name("cubic"), 0.5, L=30.0, N=600)


@pytest.fixture(scope="session")
def m7_saddle_small(cubic_layer_small):
    # shared solved field: m=7, gamma=1/2, cubic, 48x48x16 box of size 8
    params = ProblemParams(m=7, gamma=0.5)
    grid = make_grid3(params, S=8.0, Lambda=8.0, ns=48, nl=16)
    return solve_saddle(grid, params, model_by_name("cubic"),
                        cubic_layer_small, tol=1e-5)


@pytest.fixture(scope="session")
def verified_saddle(cubic_layer_small):
    # tighter solve with collar padding; derivative fields populated, so
    # the verification and stability modules can run their full batteries
    params = ProblemParams(m=7, gamma=0.5)
    grid = make_grid3(params, S=8.0, Lambda=8.0, ns=48, nl=16)
    return solve_saddle(grid, params, model_by_name("cubic"),
                        cubic_layer_small, tol=1e-6, pad=4.5)


@pytest.fixture(scope="session")
def m2_saddle_small(cubic_layer_small):
    # low-dimension field whose bottom quadratic form has a negative
    # direction; used by the stability tests
    params = ProblemParams(m=2, gamma=0.5)
    grid = make_grid3(params, S=8.0, Lambda=8.0, ns=48, nl=16)
    return solve_saddle(grid, params, model_by_name("cubic"),
                        cubic_layer_small, tol=1e-6)
