import numpy as np
import pytest

from pathloss.geodesy import GeoPoint
from pathloss.raster import Raster, TerrainDataset

ORIGIN = GeoPoint(40.0, -86.0)


def flat_terrain(size=200, cell=10.0, ground=200.0, clutter=0.0, origin=ORIGIN):
    dhm = np.full((size, size), clutter)
    dsm = np.full((size, size), ground) + dhm
    return TerrainDataset(Raster(dsm, 0.0, 0.0, cell, origin=origin), Raster(dhm, 0.0, 0.0, cell, origin=origin), origin)


@pytest.fixture
def flat():
    return flat_terrain()


@pytest.fixture(scope="session")
def toy_tables():
    """Labelled real and synthetic tables for both toy environments (computed once)."""
    from pathloss.toyworld import ENVS, labelled_tables, make_terrain

    out = {}
    for env in ENVS:
        out[env] = labelled_tables(env, make_terrain(env))
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
