from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from nsasym.coeffs import (
    Coefficient,
    CoefficientError,
    MomentTable,
    Subtrahend,
    renormalized_constant,
    initial_moments,
    log_coefficient,
    log_time_constant,
    log_time_integral,
    log_time_polynomial,
    orders_of,
    profile_moment,
    raw_orders,
    renormalization_subtrahends,
    spacetime_moment,
    tail_integral_closed_form,
)
from nsasym.field_core import Field, MultiIndex, make_grid
from nsasym.solver import InitialDataSpec, make_initial_vorticity, simulate


# --- logarithmic time integrals ---------------------------------------------

def test_log_time_integral_l0():
    assert log_time_integral(0, 10.0) == pytest.approx(math.log(11), abs=1e-15)
    assert log_time_integral(0, 10.0) == pytest.approx(2.397895, abs=1e-6)


def test_log_time_integral_l1():
    assert log_time_integral(1, 10.0) == pytest.approx(math.log(11) + 1 / 11 - 1, abs=1e-14)
    assert log_time_integral(1, 10.0) == pytest.approx(1.488804, abs=1e-6)


@pytest.mark.parametrize("l", range(5))
@pytest.mark.parametrize("t", [0.1, 1.0, 10.0, 250.0])
def test_log_time_integral_matches_quadrature(l, t):
    ref, _ = integrate.quad(lambda s: s**l * (1 + s) ** (-l - 1), 0, t, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert abs(log_time_integral(l, t) - ref) <= 1e-10


def log_polynomial_residual(l: int) -> float:
    """Fit value - log(1+t) by a degree-l polynomial in (1+t)^-1 at 5 times."""
    ts = np.array([0.5, 2.0, 7.0, 30.0, 400.0])
    x = 1.0 / (1.0 + ts)
    y = np.array([log_time_integral(l, t) for t in ts]) - np.log1p(ts)
    coef = np.polynomial.polynomial.polyfit(x, y, l)
    return float(np.abs(np.polynomial.polynomial.polyval(x, coef) - y).max())


@pytest.mark.parametrize("l", range(4))
def test_log_time_integral_is_log_plus_polynomial(l):
    assert log_polynomial_residual(l) <= 1e-10


def _log_drift(l: int) -> float:
    return abs((log_time_integral(l, 1e8) - math.log(1e8)) - (log_time_integral(l, 1e6) - math.log(1e6)))


@pytest.mark.parametrize("l", range(4))
def test_log_time_integral_constant_term(l):
    assert _log_drift(l) <= 1e-6


@pytest.mark.parametrize("l", range(4))
def test_log_time_integral_approaches_constant_like_inverse_t(l):
    # value - log t = c_0 + (1 + c_1)/t + O(t^-2)
    c = log_time_polynomial(l)
    slope = 1.0 + (c[1] if l >= 1 else 0.0)
    assert _log_drift(l) == pytest.approx(abs(slope) * (1e-6 - 1e-8), rel=1e-4, abs=1e-14)
    assert log_time_integral(l, 1e8) - math.log(1e8) == pytest.approx(log_time_constant(l), abs=1e-7)


def test_log_time_polynomial_low_orders():
    assert np.allclose(log_time_polynomial(0), [0.0])
    assert np.allclose(log_time_polynomial(1), [-1.0, 1.0])


def test_log_time_integral_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        log_time_integral(0, 0.0)
    with pytest.raises(ValueError):
        log_time_polynomial(-1)


# --- initial and profile moments -----------------------------------------------

def test_initial_moments_are_antisymmetric_tensors():
    g = make_grid(2, 16, 128)
    table = initial_moments(make_initial_vorticity(InitialDataSpec(1.0, 1.0), g), 3)
    assert len(table) == 10
    m11 = table[MultiIndex((1, 1))]
    assert m11[0, 1] == pytest.approx(math.pi, rel=1e-8)     # (-1)^2 int y1 y2 w
    assert np.array_equal(m11, -m11.T)
    for a in [(0, 0), (1, 0), (0, 1)]:
        assert np.abs(table[MultiIndex(a)]).max() <= 1e-10


def _odd_field(grid, t=1.0):
    x1, x2 = [np.broadcast_to(c, grid.shape) for c in grid.coords]
    gauss = np.exp(-(x1**2 + x2**2))
    # both components odd in y1
    return Field(grid, "vector", np.stack([x1 * gauss, x1 * x2 * gauss]), t)


def test_profile_moment_parity():
    g = make_grid(2, 8, 64)
    f = _odd_field(g)
    # beta_1 even: integrand stays odd in y1
    for beta in [(0, 1), (2, 1), (0, 3)]:
        assert np.abs(log_coefficient(5, (3 - sum(beta)) // 2, beta, f)).max() <= 1e-12
    # beta_1 odd picks up the even part
    nu = profile_moment(5, 0, (1, 0), f)
    assert nu[0] == pytest.approx(-math.pi / 2, rel=1e-8)    # int (-y1) y1 e^{-|y|^2}


def test_profile_moment_requires_unit_time():
    g = make_grid(2, 8, 32)
    with pytest.raises(ValueError):
        profile_moment(5, 0, (1, 0), _odd_field(g, 2.0))


def test_log_coefficient_index_rules():
    g = make_grid(2, 8, 32)
    f = _odd_field(g)
    with pytest.raises(CoefficientError):
        log_coefficient(5, 0, (1, 0), f)           # 2l+|beta| != p-2
    with pytest.raises(CoefficientError):
        log_coefficient(4, 1, (0, 0), f)           # p below n+3


# --- space-time moments ------------------------------------------------------

def test_synthetic_inverse_square_integrand():
    """I-moment = s^-2 P on [1, T]: result must be int_1^inf s^-2 ds * P = P."""
    P = np.array([0.7, -1.3])
    s = np.linspace(1.0, 100.0, 3961)
    hist = np.outer(s**-2, P)
    res = spacetime_moment(s, hist, 0, (1, 0), head=False)
    assert np.allclose(res.value, P, rtol=1e-2)
    # the error bar is a Richardson estimate: right size, not a strict bound
    assert 0.5 * res.error <= np.abs(res.value - P).max() <= 1.5 * res.error


def test_spacetime_moment_is_linear():
    s = np.linspace(0.5, 50.0, 400)
    a = np.stack([np.sin(s) / s**3, s**-2.5], axis=1)
    b = np.stack([s**-2.2, np.cos(s) / s**2], axis=1)
    ra = spacetime_moment(s, a, 0, (0, 1)).value
    rb = spacetime_moment(s, b, 0, (0, 1)).value
    rab = spacetime_moment(s, 2 * a - 3 * b, 0, (0, 1)).value
    assert np.allclose(rab, 2 * ra - 3 * rb, rtol=1e-12, atol=1e-14)


def test_non_integrable_order_rejected():
    s = np.linspace(1.0, 10.0, 20)
    with pytest.raises(CoefficientError, match="not integrable"):
        spacetime_moment(s, np.ones((20, 2)), 0, (3, 0))


def test_zeroth_moment_of_nonlinearity_vanishes():
    g = make_grid(2, 16, 64)
    w0 = make_initial_vorticity(InitialDataSpec(1.0, 1.0), g)
    traj = simulate(w0, 4.0, [0.0, 4.0], 1 / 32)
    col = traj.beta_column((0, 0))
    res = spacetime_moment(traj.history_t, traj.history_I[:, col], 0, (0, 0))
    first = spacetime_moment(traj.history_t, traj.history_I[:, traj.beta_column((1, 0))], 0, (1, 0))
    assert np.abs(res.value).max() <= 1e-10 * np.abs(first.value).max()


def test_shifted_subtrahend_integrates_in_closed_form():
    # integrand exactly equal to the subtrahend: nothing is left
    nu = np.array([0.4, -0.2])
    s = np.linspace(0.0, 50.0, 2001)
    l, beta, p = 1, MultiIndex((1, 0)), 5
    hist = np.outer((s + 1.0) ** ((beta.order - p) / 2.0), nu) * (-1) ** l
    res = spacetime_moment(s, hist, l, beta, subtrahends=[Subtrahend(p, 1)], nus={p: nu})
    # what remains is the trapezoid error of the measured part, which the error bar estimates
    assert 0.5 * res.error <= np.abs(res.value).max() <= 1.5 * res.error <= 1e-4


def test_tail_integral_closed_form_against_quadrature():
    nu = np.array([1.7, -0.4])
    for p, l, beta in [(5, 0, (1, 0)), (6, 1, (0, 1)), (6, 0, (1, 1))]:
        k = 2 * l + sum(beta)
        e = (k - p) / 2.0
        ref, _ = integrate.quad(lambda s: s**e, 4.0, np.inf, epsabs=1e-14, epsrel=1e-13)
        got = tail_integral_closed_form(p, l, beta, 4.0, nu)
        assert np.allclose(got, ref * nu, rtol=1e-6)
    with pytest.raises(CoefficientError):
        tail_integral_closed_form(5, 0, (3, 0), 4.0, nu)


def test_renormalized_constant_reduces_without_profiles():
    table = MomentTable(2)
    for p in range(5, 7):
        for l, beta in orders_of(2, 3) + orders_of(2, 4):
            table.profile_moments[(p, l, beta)] = np.zeros(2)
    s = np.linspace(0.25, 100.0, 800)
    l, beta = 0, MultiIndex((2, 1))
    hist = np.stack([np.exp(-s) * s**-0.5, s**-3.0], axis=1)
    coef, poly, res = renormalized_constant(s, hist, l, beta, 2, table)
    plain = spacetime_moment(s, hist, l, beta, 2, renormalization_subtrahends(2, 3),
                             {p: np.zeros(2) for p in (5,)})
    assert np.array_equal(coef.value, plain.value)
    assert all(not np.any(v) for _, v in poly)


def test_renormalization_subtrahends():
    assert renormalization_subtrahends(2, 2) == []
    assert renormalization_subtrahends(2, 3) == [Subtrahend(5, 1)]
    assert renormalization_subtrahends(2, 4) == [Subtrahend(5, 0), Subtrahend(6, 1)]


def test_order_enumeration():
    assert orders_of(2, 1) == [(0, (1, 0)), (0, (0, 1))]
    assert len(orders_of(2, 2)) == 4
    assert len(raw_orders(2)) == 6


# --- persistence -------------------------------------------------------------

def test_moment_table_json_roundtrip(tmp_path):
    t = MomentTable(2, provenance={"run_id": "abc"})
    t.initial[MultiIndex((1, 1))] = np.array([[0.0, 1.5], [-1.5, 0.0]])
    t.put(0, (1, 0), "raw_I", Coefficient(np.array([0.1, -0.2]), 1e-6, "c*s^-2"))
    t.put(1, (1, 0), "renormalized", Coefficient(np.array([0.3, 0.4]), 2e-6, "c*s^-1.5"))
    t.profile_moments[(5, 0, MultiIndex((1, 0)))] = np.array([1.0, 2.0])
    t.write(tmp_path / "c.json")
    back = MomentTable.read(tmp_path / "c.json")
    assert np.array_equal(back.get(0, (1, 0), "raw_I"), [0.1, -0.2])
    assert back.spacetime[(1, MultiIndex((1, 0)), "renormalized")].error == 2e-6
    assert np.array_equal(back.initial_moment((1, 1)), t.initial_moment((1, 1)))
    assert np.array_equal(back.profile_moment(5, 0, (1, 0)), [1.0, 2.0])
    assert back.provenance["run_id"] == "abc"
    with pytest.raises(CoefficientError):
        back.get(0, (0, 1), "raw_I")
    with pytest.raises(CoefficientError):
        back.initial_moment((2, 0))


def test_scaled_table_only_touches_selected_kinds():
    t = MomentTable(2)
    t.put(0, (1, 0), "raw_I", Coefficient(np.array([1.0, 2.0])))
    t.put(1, (1, 0), "renormalized", Coefficient(np.array([1.0, 2.0])))
    s = t.scaled(1.1)
    assert np.allclose(s.get(0, (1, 0), "raw_I"), [1.1, 2.2])
    assert np.array_equal(s.get(1, (1, 0), "renormalized"), [1.0, 2.0])
    assert np.array_equal(t.get(0, (1, 0), "raw_I"), [1.0, 2.0])
