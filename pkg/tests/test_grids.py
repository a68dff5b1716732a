"""Grid, field, nonlinearity and assumption-validation checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.grids import (ComplexField, PolynomialNonlinearity, PotentialSpec,
                          eval_nonlinearity, make_grid, validate_assumptions,
                          weighted_norm)


def test_make_grid_spacing():
    g = make_grid(40.0, 2048)
    assert g.dx == pytest.approx(0.0390625, abs=0)
    assert g.nodes[0] == -40.0


def test_make_grid_small():
    g = make_grid(1.0, 16)
    assert g.dx == pytest.approx(0.125)
    assert g.nodes[0] == -1.0
    assert g.nodes[-1] == pytest.approx(1.0 - 0.125)


def test_make_grid_rejects_odd():
    with pytest.raises(ValueError, match="odd point count"):
        make_grid(40.0, 15)


def test_make_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        make_grid(-1.0, 32)
    with pytest.raises(ValueError):
        make_grid(1.0, 8)


def test_grid_nodes_symmetric():
    g = make_grid(7.0, 64)
    # every node except the -L endpoint has a mirror node
    for x in g.nodes[1:]:
        assert np.min(np.abs(g.nodes + x)) < 1e-12


def test_weighted_norm_zero_field():
    g = make_grid(5.0, 64)
    u = ComplexField(g, np.zeros(g.N, dtype=complex))
    assert weighted_norm(u, 3.0) == 0.0


def test_weighted_norm_constant():
    g = make_grid(1.0, 512)
    u = ComplexField(g, np.ones(g.N, dtype=complex))
    assert weighted_norm(u, 0.0) == pytest.approx(np.sqrt(2.0), abs=1e-3)


def test_weighted_norm_gaussian_against_fine_quadrature():
    # the weight has a kink at 0, so the quadrature is second order;
    # resolve enough that the refined oracle agrees to 1e-6
    g = make_grid(12.0, 32768)
    u = ComplexField(g, np.exp(-g.nodes**2).astype(complex))
    val = weighted_norm(u, 2.0)
    xf = np.linspace(-12.0, 12.0, 8 * 32768 + 1)
    integrand = ((1 + np.abs(xf)) ** (-2.0) * np.exp(-(xf**2))) ** 2
    oracle = np.sqrt(np.trapezoid(integrand, xf))
    assert val == pytest.approx(oracle, abs=1e-6)


def test_weighted_norm_matches_plain_l2():
    g = make_grid(9.0, 256)
    u = ComplexField(g, (np.exp(-g.nodes**2) * (1 + 2j)).astype(complex))
    assert weighted_norm(u, 0.0) == pytest.approx(u.norm2(), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-50, 50, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-6),
       nu=st.floats(-3, 6))
def test_weighted_norm_homogeneous(c, nu):
    g = make_grid(6.0, 128)
    base = np.exp(-g.nodes**2) * (1 + 0.5j)
    u = ComplexField(g, base)
    cu = ComplexField(g, c * base)
    assert weighted_norm(cu, nu) == pytest.approx(abs(c) * weighted_norm(u, nu), rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(nu1=st.floats(-2, 6), nu2=st.floats(-2, 6))
def test_weighted_norm_monotone(nu1, nu2):
    if nu1 < nu2:
        nu1, nu2 = nu2, nu1
    g = make_grid(6.0, 128)
    u = ComplexField(g, np.cos(g.nodes) * np.exp(-np.abs(g.nodes)) + 0j)
    assert weighted_norm(u, nu1) <= weighted_norm(u, nu2) * (1 + 1e-12)


def test_parity_tag_validation():
    g = make_grid(5.0, 64)
    even = np.exp(-g.nodes**2)
    ComplexField(g, even, parity="even")
    odd = g.nodes * even
    ComplexField(g, odd, parity="odd")
    with pytest.raises(ValueError):
        ComplexField(g, even + 0.1 * odd, parity="even")


def test_field_length_mismatch():
    g = make_grid(5.0, 64)
    with pytest.raises(ValueError):
        ComplexField(g, np.zeros(12))


def test_eval_nonlinearity_values():
    f = PolynomialNonlinearity((1.0,))
    assert eval_nonlinearity(f, 2.0) == (pytest.approx(2.0), pytest.approx(1.0))
    f2 = PolynomialNonlinearity((0.0, 1.0))
    assert eval_nonlinearity(f2, 3.0) == (pytest.approx(9.0), pytest.approx(6.0))
    f4 = PolynomialNonlinearity((0.0, 0.0, 0.0, 1.0))
    assert eval_nonlinearity(f4, 0.0) == (pytest.approx(0.0), pytest.approx(0.0))


def test_eval_nonlinearity_rejects_negative():
    f = PolynomialNonlinearity((1.0,))
    with pytest.raises(ValueError):
        eval_nonlinearity(f, -1.0)


@settings(max_examples=30, deadline=None)
@given(coeffs=st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=5),
       s=st.floats(0, 4))
def test_nonlinearity_matches_polyval(coeffs, s):
    f = PolynomialNonlinearity(tuple(coeffs))
    direct = sum(c * s ** (m + 1) for m, c in enumerate(coeffs))
    val, _ = eval_nonlinearity(f, s)
    assert val == pytest.approx(direct, rel=1e-12, abs=1e-12)
    assert f.f(0.0) == 0.0


def test_validate_assumptions_cubic_free():
    f = PolynomialNonlinearity((1.0,))
    rep = validate_assumptions(f, PotentialSpec("zero", 0.0), 1.0)
    assert rep.root == pytest.approx(np.sqrt(2.0), rel=1e-12)
    assert rep.root_slope_positive
    assert rep.lambda_admissible


def test_validate_assumptions_no_root():
    f = PolynomialNonlinearity((1.0,))
    with pytest.raises(ValueError, match="no positive root"):
        validate_assumptions(f, PotentialSpec("zero", 0.0), -1.0)


def test_validate_assumptions_degenerate_minimum():
    f = PolynomialNonlinearity((1.0,))
    # negative amplitude turns the origin into a local maximum
    V = PotentialSpec("quad_gauss", 0.1, {"amp": -1.0, "offset": 1.0})
    with pytest.raises(ValueError, match="degenerate minimum"):
        validate_assumptions(f, V, 1.0)


def test_quad_gauss_curvature():
    V = PotentialSpec("quad_gauss", 0.1, {"amp": 1.0, "offset": 1.0})
    assert V.second_derivative_at_zero() == pytest.approx(4.0, abs=1e-5)
    f = PolynomialNonlinearity((1.0,))
    rep = validate_assumptions(f, V, 2.0)
    assert rep.nondegenerate_minimum
    assert rep.decay_rate > 0


def test_default_model_passes_gates(cfg):
    rep = validate_assumptions(cfg.nonlinearity(), cfg.potential(), cfg.lam, cfg.grid())
    assert rep.passes()
    # well-posedness growth condition reported separately from degree >= 4
    th = validate_assumptions(cfg.nonlinearity(True), cfg.potential(), cfg.lam, cfg.grid())
    assert th.passes()
    assert not th.subquadratic and th.growth_bound_ok
    assert cfg.nonlinearity(True).degree >= 4


def test_reflect_convention():
    g = make_grid(4.0, 32)
    u = np.sin(g.nodes) + np.cos(2 * g.nodes)
    refl = g.reflect(u)
    # compare against direct evaluation at -x for mirrored nodes
    for j in range(1, g.N):
        xm = -g.nodes[j]
        jm = int(np.argmin(np.abs(g.nodes - xm)))
        assert refl[j] == pytest.approx(u[jm], abs=1e-12)
