"""Shared fixtures: benchmark vertex datasets generated the way the runner does.

Both fixtures draw the two vertex experiments from one sequential rng so the
data matches what run_single produces for the same seed.
"""
import numpy as np
import pytest

from ddlmi import benchmark_vertices, generate_offline_data


def make_vertex_datasets(seed, lengths, x0=(0.95, 0.0)):
    rng = np.random.default_rng(seed)
    out = []
    for i, (vertex, t) in enumerate(zip(benchmark_vertices(), lengths)):
        out.append(generate_offline_data(vertex, t, x0, (-1.0, 1.0), rng, label=f"v{i}"))
    return out


@pytest.fixture(scope="session")
def datasets_33():
    # seed 0, lengths (3, 3): identifiable at both vertices
    return make_vertex_datasets(0, (3, 3))


@pytest.fixture(scope="session")
def datasets_nominal():
    # seed 7, lengths (3, 2): the default assignment; seed chosen feasible
    return make_vertex_datasets(7, (3, 2))
