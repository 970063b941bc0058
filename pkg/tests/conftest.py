import math

import pytest

from periberg import cellgeom, confmap, kernels


@pytest.fixture(scope="session")
def strip_ctx():
    return kernels.strip_context(0.5)


@pytest.fixture(scope="session")
def strip_ctx_sigma():
    # log rho = 2 pi^2: the channel whose closed form collapses to the
    # sech^2 strip kernel
    return kernels.strip_context(math.pi)


@pytest.fixture(scope="session")
def strip_region():
    return cellgeom.CellRegion(cellgeom.rectangle_cell(0.5), nx=32, ny=32)


@pytest.fixture(scope="session")
def zigzag_spec():
    return cellgeom.zigzag_cell(mid_offset=0.1)


@pytest.fixture(scope="session")
def zigzag_ctx(zigzag_spec):
    params = confmap.solve_sc_parameters(zigzag_spec)
    return kernels.make_context(confmap.annulus_map_from_sc(params))


@pytest.fixture(scope="session")
def zigzag_region(zigzag_spec):
    return cellgeom.CellRegion(zigzag_spec, nx=8, ny=8)
