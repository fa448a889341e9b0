import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdeim.fem import assemble_stiffness
from msdeim.grid import build_grids
from msdeim.metrics import ErrorTable, error_energy, error_l2


def test_l2_examples(rng):
    F = rng.standard_normal(30)
    assert error_l2(F, F) == 0.0
    assert error_l2(F, 2 * F) == pytest.approx(0.5, rel=1e-15)
    G = rng.standard_normal(30)
    oracle = np.sqrt(np.sum((F - G) ** 2)) / np.sqrt(np.sum(G**2))
    assert abs(error_l2(F, G) - oracle) <= 1e-14 * oracle


def test_l2_errors():
    with pytest.raises(ValueError):
        error_l2(np.ones(3), np.ones(4))
    with pytest.raises(ZeroDivisionError):
        error_l2(np.ones(3), np.zeros(3))


def test_energy_examples(rng):
    mesh, _ = build_grids(2, 2)
    A = assemble_stiffness(mesh, 1.0)
    U = rng.standard_normal(mesh.n_f)
    assert error_energy(U, U, A) == 0.0
    assert error_energy(U, np.zeros_like(U), A) == pytest.approx(1.0, rel=1e-15)
    V = rng.standard_normal(mesh.n_f)
    D = A.toarray()
    oracle = np.sqrt((U - V) @ D @ (U - V) / (U @ D @ U))
    assert abs(error_energy(U, V, A) - oracle) <= 1e-12 * oracle


def test_energy_errors():
    mesh, _ = build_grids(2, 2)
    A = assemble_stiffness(mesh, 1.0)
    with pytest.raises(ZeroDivisionError):
        error_energy(np.ones(mesh.n_f), np.zeros(mesh.n_f), A)  # constants have zero energy
    with pytest.raises(ValueError):
        error_energy(np.ones(3), np.ones(3), A)


def test_table_rows():
    t = ErrorTable("x")
    t.add(1, 0.1, 0.2)
    t.add(3, 0.01, 0.02)
    assert t.m.tolist() == [1, 3]
    assert t.column("l2").tolist() == [0.1, 0.01]
    assert len(t) == 2
    with pytest.raises(ValueError):
        t.add(3, 0.0, 0.0)


def test_monotone_tolerance():
    t = ErrorTable("x")
    for m, e in enumerate([1e-2, 1e-3, 1.05e-3, 1e-5, 1e-12, 3e-11], 1):
        t.add(m, e, e)
    assert t.is_monotone()  # 5% bump and a rise below the 1e-10 floor are noise
    t.add(7, 1e-3, 1e-3)
    assert not t.is_monotone()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-8, 1.0), min_size=1, max_size=8))
def test_sorted_errors_are_monotone(errs):
    t = ErrorTable("p")
    for m, e in enumerate(sorted(errs, reverse=True), 1):
        t.add(m, e, e)
    assert t.is_monotone("l2") and t.is_monotone("energy")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_l2_scale_invariant(seed, c):
    r = np.random.default_rng(seed)
    F, G = r.standard_normal((2, 10))
    assert error_l2(c * F, c * G) == pytest.approx(error_l2(F, G), rel=1e-12)
