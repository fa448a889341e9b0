import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdeim.coeff import (
    PRESETS,
    NonlinearEvalError,
    b_exp,
    constant,
    eval_nonlinear,
    f1,
    f2,
    forcing,
    generate_permeability,
    identity,
    make_nonlinear,
    parse_channels,
    save_field_grid,
)
from msdeim.grid import build_grids


@pytest.fixture(scope="module")
def mesh():
    return build_grids(10, 10)[0]


def test_empty_spec_is_homogeneous(mesh):
    field = generate_permeability("", 4.0, mesh)
    assert np.all(field.kappa == 1.0)
    assert field.contrast == 1.0


def test_horizontal_channel_fraction(mesh):
    field = generate_permeability("0 1 0.45 0.55", 4.0, mesh)
    frac = np.mean(field.kappa == 1e4)
    # area oracle: count element rows whose centroid height falls in the band
    rows = np.arange(mesh.n_side)
    lower = (rows + 1 / 3) * mesh.h
    upper = (rows + 2 / 3) * mesh.h
    hit = ((lower >= 0.45) & (lower <= 0.55)).sum() + ((upper >= 0.45) & (upper <= 0.55)).sum()
    assert frac == pytest.approx(hit / (2 * mesh.n_side))
    assert abs(frac - 0.10) <= 1.0 / mesh.n_side


def test_eta_doubles_log_contrast(mesh):
    a = generate_permeability("case1", 4.0, mesh)
    b = generate_permeability("case1", 6.0, mesh)
    assert np.array_equal(a.kappa > 1, b.kappa > 1)
    assert np.allclose(np.log10(b.kappa[b.kappa > 1]), 1.5 * np.log10(a.kappa[a.kappa > 1]))
    assert set(np.unique(b.kappa)) == {1.0, 1e6}


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_have_channels(mesh, name):
    field = generate_permeability(name, 4.0, mesh)
    frac = np.mean(field.kappa > 1)
    assert 0.02 < frac < 0.4


def test_determinism(mesh):
    a = generate_permeability("case2", 4.0, mesh, seed=3)
    b = generate_permeability("case2", 4.0, mesh, seed=3)
    assert a.kappa.tobytes() == b.kappa.tobytes()
    assert a.digest() == b.digest()
    assert a.digest() != generate_permeability("case2", 6.0, mesh, seed=3).digest()


def test_channel_language():
    chans = parse_channels("""
        # an L shape at half contrast
        0 0.5 0.1 0.2 + 0.4 0.5 0.1 0.9 @ 50
        0.7 0.8 0 1
    """)
    assert len(chans) == 2
    assert chans[0].value == 50.0 and len(chans[0].rects) == 2
    assert chans[1].value is None


@pytest.mark.parametrize("bad", ["0 1 0.2", "0.5 0.4 0 1", "0 1.5 0 1"])
def test_channel_language_errors(bad):
    with pytest.raises(ValueError):
        parse_channels(bad)


def test_per_channel_value(mesh):
    field = generate_permeability("0 1 0.45 0.55 @ 30", 4.0, mesh)
    assert set(np.unique(field.kappa)) == {1.0, 30.0}


def test_field_grid_file(tmp_path, mesh):
    field = generate_permeability("case1", 4.0, mesh)
    save_field_grid(tmp_path / "k.txt", field, mesh)
    back = np.loadtxt(tmp_path / "k.txt")
    assert back.shape == (mesh.n_side, 2 * mesh.n_side)
    assert np.array_equal(back.ravel(), field.kappa)


def test_values_at_zero():
    for mu in (0.0, 0.3, 1.0):
        assert f1(mu).value(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]
        assert f2(mu).value(np.zeros(2)).tolist() == [1.0, 1.0]


def test_b_exp_value_and_derivative():
    v, d = eval_nonlinear(b_exp(10.0), np.array([0.1]))
    assert v[0] == pytest.approx(np.e, rel=1e-15)
    assert d[0] == pytest.approx(10 * np.e, rel=1e-15)
    h = 1e-6
    fd = (np.exp(10 * (0.1 + h)) - np.exp(10 * (0.1 - h))) / (2 * h)
    assert abs(d[0] - fd) <= 1e-8 * abs(fd)


def test_forcing_formula():
    u = np.linspace(-0.2, 0.3, 7)
    g = forcing(0.4).value(u)
    a = 2 * np.pi * 0.4 * u
    assert np.allclose(g, (1 + np.sin(a)) * np.exp(-a), rtol=1e-15)


def test_f2_singularity_reported():
    # 1 + sin(2 pi u) = 0 at u = 3/4
    u = np.array([0.1, 0.75, 0.2])
    with pytest.raises(NonlinearEvalError) as exc:
        f2(1.0).value(u)
    assert exc.value.index == 1


@pytest.mark.parametrize("factory,mu", [(f1, 1.5), (f2, -0.1), (forcing, 2.0), (b_exp, 4.0), (b_exp, 11.0)])
def test_mu_domains(factory, mu):
    with pytest.raises(ValueError):
        factory(mu)


def test_catalog():
    assert make_nonlinear("f1", 0.5).name == "F1"
    assert make_nonlinear("B_EXP", 7).mu == 7.0
    with pytest.raises(ValueError):
        make_nonlinear("F3", 0.5)


def test_constant_identity():
    u = np.array([0.3, -2.0])
    assert constant(2.5).value(u).tolist() == [2.5, 2.5]
    assert np.all(constant(2.5).derivative(u) == 0)
    assert identity().value(u).tolist() == u.tolist()
    assert np.all(identity().derivative(u) == 1)


def _fd_ok(fn, u, h=1e-6, rel=1e-6):
    d = fn.derivative(u)
    fd = (fn.value(u + h) - fn.value(u - h)) / (2 * h)
    scale = np.maximum(np.abs(d), 1.0)
    return np.all(np.abs(d - fd) <= rel * scale)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["F1", "F2", "G_FORCE"]), st.floats(0.05, 1.0), st.integers(0, 2**31 - 1))
def test_derivatives_match_fd(name, mu, seed):
    u = np.random.default_rng(seed).uniform(-1, 1, 100)
    fn = make_nonlinear(name, mu)
    if name == "F2":
        # stay away from the poles of 1/(1 + sin)
        u = u[np.abs(1 + np.sin(2 * np.pi * mu * u)) > 0.05]
    assert _fd_ok(fn, u)


@settings(max_examples=15, deadline=None)
@given(st.floats(5.0, 10.0), st.integers(0, 2**31 - 1))
def test_b_exp_derivative_fd(mu, seed):
    u = np.random.default_rng(seed).uniform(-1, 1, 100)
    fn = b_exp(mu)
    d = fn.derivative(u)
    fd = (fn.value(u + 1e-6) - fn.value(u - 1e-6)) / 2e-6
    assert np.all(np.abs(d - fd) <= 1e-6 * np.abs(d))
