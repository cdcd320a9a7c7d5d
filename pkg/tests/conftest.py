import numpy as np
import pytest
from hypothesis import settings, strategies as st

from sirgcn.graph import NodeGraph

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_graph(rng, num_nodes=6, num_edges=12, width=3, self_loops=True):
    src = rng.integers(0, num_nodes, size=num_edges)
    dst = rng.integers(0, num_nodes, size=num_edges)
    if not self_loops:
        keep = src != dst
        src, dst = src[keep], dst[keep]
    return NodeGraph(num_nodes, src, dst, rng.uniform(-2.0, 2.0, size=(num_nodes, width)))


@pytest.fixture
def graph(rng):
    return make_graph(rng)


@pytest.fixture
def graph_factory(rng):
    return lambda **kw: make_graph(rng, **kw)


@st.composite
def graphs(draw, max_nodes=7, max_edges=16, width=2):
    n = draw(st.integers(1, max_nodes))
    m = draw(st.integers(0, max_edges))
    src = draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m))
    dst = draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m))
    vals = draw(st.lists(st.floats(-2, 2, allow_nan=False), min_size=n * width,
                         max_size=n * width))
    return NodeGraph(n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                     np.array(vals).reshape(n, width))
