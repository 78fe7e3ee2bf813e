import numpy as np
import pytest

from spheredem import TriMesh, icosphere, initial_conformal_map


def regular_tetrahedron():
    """Regular tetrahedron with unit edge length, outward orientation."""
    verts = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    ) / (2.0 * np.sqrt(2.0))
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(verts, faces)


def warped_blob(level, variant):
    """Genus-0 test surface: icosphere warped by a smooth radial field."""
    base = icosphere(level)
    u = base.vertices
    x, y, z = u[:, 0], u[:, 1], u[:, 2]
    if variant == 0:
        r = 1.0 + 0.45 * np.sin(2.2 * x) * np.cos(1.7 * y) + 0.3 * z * z * np.sin(3 * y)
    elif variant == 1:
        r = (
            1.0
            + 0.5 * np.exp(-3 * ((x - 0.6) ** 2 + (y - 0.4) ** 2))
            + 0.35 * np.sin(2.5 * z) * np.cos(2 * x)
        )
    else:
        r = 1.2 + 0.4 * np.tanh(2 * x * y) + 0.3 * np.cos(3 * z) * np.sin(1.5 * (x + y))
    return TriMesh(u * r[:, None], base.faces)


@pytest.fixture
def tetra():
    return regular_tetrahedron()


@pytest.fixture(scope="session")
def ico2():
    return icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return icosphere(3)


@pytest.fixture(scope="session")
def ico4():
    return icosphere(4)


@pytest.fixture(scope="session")
def ico3_conformal(ico3):
    return initial_conformal_map(ico3)


@pytest.fixture(scope="session")
def blob3():
    return warped_blob(3, 0)


@pytest.fixture(scope="session")
def blob3_conformal(blob3):
    return initial_conformal_map(blob3)
