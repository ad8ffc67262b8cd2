import functools

import numpy as np
import pytest
from hypothesis import settings

from tdbem.contour import build_contour, quadrature_count
from tdbem.mesh import unit_cube
from tdbem.rk import radau_iia_2

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cube(level):
    return unit_cube(level)


@functools.lru_cache(maxsize=None)
def uniform_contour(n_steps, T=3.0):
    tab = radau_iia_2()
    steps = np.full(n_steps, T / n_steps)
    return steps, build_contour(steps, tab, quadrature_count(n_steps, tab.stages))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def radau():
    return radau_iia_2()


@functools.lru_cache(maxsize=None)
def slp_layout(level):
    from tdbem.assemble import ColumnBlock, Layout, centroid_collocation
    m = cube(level)
    return Layout(m, centroid_collocation(m), [ColumnBlock("slp", np.arange(m.n_triangles))])


@functools.lru_cache(maxsize=None)
def dlp_layout(level):
    from tdbem.assemble import ColumnBlock, Layout, vertex_collocation
    m = cube(level)
    return Layout(m, vertex_collocation(m), [ColumnBlock("dlp", np.arange(m.n_vertices))])


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line; returns the verdict for asserting.

    ``ok=None`` marks a criterion excluded by declaration.
    """

    def report(number, ok, detail):
        status = "EXCLUDED" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number:>2}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
