import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from layertone.grid import GridSpec, MM_PER_INCH, VoxelClass, surface_from_interior

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PRINTER_PITCH = (MM_PER_INCH / 600, MM_PER_INCH / 600, MM_PER_INCH / 900)

ACCEPTANCE_LINES: list[str] = []


def classes_from_interior(inside: np.ndarray) -> np.ndarray:
    """Class volume for a boolean interior volume (out-of-grid is not exterior)."""
    nz = inside.shape[0]
    return np.stack([
        surface_from_interior(inside[z - 1] if z > 0 else None, inside[z],
                              inside[z + 1] if z < nz - 1 else None)
        for z in range(nz)
    ])


def random_blobs(rng, shape, n_balls=6, rmin=3.0, rmax=8.0) -> np.ndarray:
    nz, ny, nx = shape
    z, y, x = np.mgrid[0:nz, 0:ny, 0:nx]
    inside = np.zeros(shape, dtype=bool)
    for _ in range(n_balls):
        c = rng.uniform([2, 2, 2], [nz - 2, ny - 2, nx - 2])
        r = rng.uniform(rmin, rmax)
        inside |= (z - c[0]) ** 2 + (y - c[1]) ** 2 + (x - c[2]) ** 2 <= r * r
    return inside


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def printer_pitch():
    return PRINTER_PITCH


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
