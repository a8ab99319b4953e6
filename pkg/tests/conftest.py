import pytest

from walshembed.measure import polar_decompose

M1_SPEC = {
    "rays": [
        {"id": "A", "weight": 0.5, "atoms": [[1.0, 0.5], [3.0, 0.5]]},
        {"id": "B", "weight": 0.5, "atoms": [[2.0, 1.0]]},
    ],
    "origin_mass": 0.0,
}

M2_SPEC = {
    "rays": [
        {"id": "1", "weight": 1.0, "atoms": [[1.0, 1.0]]},
        {"id": "2", "weight": 1.0, "atoms": [[2.0, 1.0]]},
        {"id": "3", "weight": 1.0, "atoms": [[4.0, 1.0]]},
    ],
}

MIXED_SPEC = {
    "rays": [
        {"id": "U", "weight": 0.5, "pieces": [[0.0, 2.0, 0.5]]},
        {"id": "P", "weight": 0.5, "atoms": [[0.5, 0.5], [1.5, 0.5]]},
    ],
}


@pytest.fixture
def m1():
    return polar_decompose(M1_SPEC)


@pytest.fixture
def m2():
    return polar_decompose(M2_SPEC)


@pytest.fixture
def mixed():
    return polar_decompose(MIXED_SPEC)
