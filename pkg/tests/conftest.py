import numpy as np
import pytest

from nmfattack.matrixcore import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def random_positive(rng: np.random.Generator, rows: int, cols: int,
                    lo: float = 0.1, hi: float = 1.0) -> np.ndarray:
    """Strictly positive random matrix, bounded away from zero."""
    return lo + (hi - lo) * rng.random((rows, cols))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    return float(np.sum(a * b)) / (na * nb)
