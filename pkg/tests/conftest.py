import functools

import numpy as np
import pytest

from stabfem.assembly import assemble_stokes_blocks
from stabfem.fe_space import build_spaces
from stabfem.mesh import build_unit_square_mesh


@functools.lru_cache(maxsize=None)
def unit_mesh(n, macro=False):
    return build_unit_square_mesh(n, with_macro=macro)


@functools.lru_cache(maxsize=None)
def spaces(n, k=1, macro=False):
    return build_spaces(unit_mesh(n, macro), k)


@functools.lru_cache(maxsize=None)
def blocks(n, k=1, macro=False, mu=1.0):
    V, Q = spaces(n, k, macro)
    return assemble_stokes_blocks(V, Q, mu)


def random_interior_velocity(rng, V, scale=1.0):
    return V.extend(scale * rng.standard_normal(len(V.interior_dofs)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
