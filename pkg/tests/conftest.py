import numpy as np
import pytest

from ccgp.complex import ComplexBuilder, cubical_grid, path, triangulated_grid


def single_triangle():
    b = ComplexBuilder(3, coords=[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    for e in [(0, 1), (0, 2), (1, 2)]:
        b.add_simplex(e)
    b.add_simplex((0, 1, 2))
    return b.build()


def small_complexes():
    return {
        "path3": path(3),
        "path6": path(6),
        "triangle": single_triangle(),
        "tri2x2": triangulated_grid(2, 2),
        "tri3x2": triangulated_grid(3, 2),
        "cube1x1": cubical_grid(1, 1),
        "cube2x3": cubical_grid(2, 3),
    }


def random_weights(X, seed=0):
    rng = np.random.default_rng(seed)
    return tuple(rng.uniform(0.5, 2.0, n) for n in X.counts)


@pytest.fixture(params=list(small_complexes()))
def any_complex(request):
    return small_complexes()[request.param]
