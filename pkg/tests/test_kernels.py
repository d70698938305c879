from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest

from nsasym.field_core import make_grid, multi_indices
from nsasym.kernels import (
    FreeSpaceConvolver,
    KernelSpec,
    grad_inv_laplace,
    heat,
    heat_kernel,
    heat_kernel_derivative,
    kernel_decay_envelope,
    kernel_multiplier,
    riesz_pair,
    sample_kernel,
)


def test_heat_kernel_at_origin():
    assert heat_kernel(1.0, (0.0, 0.0), 2) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert heat_kernel(1.0, (0.0, 0.0), 2) == pytest.approx(0.07957747, abs=1e-8)


def test_heat_kernel_off_origin():
    assert heat_kernel(1.0, (2.0, 0.0), 2) == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-15)


def test_heat_kernel_parabolic_scaling():
    lam = 3.0
    x = np.array([1.0, 1.0])
    lhs = lam**2 * heat_kernel(lam**2, lam * x, 2)
    assert abs(lhs - heat_kernel(1.0, x, 2)) <= 1e-14


def test_first_derivative_closed_form():
    x = (0.7, -1.3)
    val = heat_kernel_derivative(heat(0, (1, 0), 2), 1.0, x)
    assert val == pytest.approx(-(x[0] / 2) * heat_kernel(1.0, x, 2), rel=1e-14)


def test_second_derivative_at_origin():
    val = heat_kernel_derivative(heat(0, (2, 0), 2), 1.0, (0.0, 0.0))
    assert val == pytest.approx(-1 / (8 * math.pi), rel=1e-14)
    h = 1e-3
    fd = (heat_kernel(1.0, (h, 0.0), 2) - 2 * heat_kernel(1.0, (0.0, 0.0), 2) + heat_kernel(1.0, (-h, 0.0), 2)) / h**2
    assert abs(fd - val) / abs(val) <= 1e-6


def test_time_derivative_is_laplacian():
    x = (1.0, 0.0)
    val = heat_kernel_derivative(heat(1, (0, 0), 2), 1.0, x)
    h = 1e-4
    fd = (heat_kernel(1.0 + h, x, 2) - heat_kernel(1.0 - h, x, 2)) / (2 * h)
    assert abs(fd - val) / abs(val) <= 1e-7


def _mp_gauss(t, x1, x2):
    return mpmath.exp(-(x1**2 + x2**2) / (4 * t)) / (4 * mpmath.pi * t)


def test_hermite_matches_finite_differences_all_low_orders():
    """Every d_t^l grad^beta with l + |beta| <= 4 at 20 random points."""
    rng = np.random.default_rng(7)
    pts = [(rng.uniform(0.5, 2.0), rng.uniform(-3, 3), rng.uniform(-3, 3)) for _ in range(20)]
    worst = 0.0
    mpmath.mp.dps = 30
    for total in range(5):
        for l in range(total + 1):
            for beta in multi_indices(2, total - l):
                spec = heat(l, beta, 2)
                for t, a, b in pts:
                    val = float(heat_kernel_derivative(spec, t, (a, b)))
                    ref = float(mpmath.diff(_mp_gauss, (t, a, b), (l, beta[0], beta[1])))
                    scale = max(abs(ref), 1e-8 * float(_mp_gauss(t, 0, 0)))
                    worst = max(worst, abs(val - ref) / scale)
    assert worst <= 1e-6


def test_heat_derivatives_scale_exactly():
    # lam^{n + 2l + |beta|} d_t^l grad^beta G(lam^2 t, lam x) = same at (t, x)
    x = (0.3, -0.8)
    for l in range(3):
        for beta in multi_indices(2, 2):
            spec = heat(l, beta, 2)
            lam = 2.0
            lhs = lam ** (2 + spec.order) * heat_kernel_derivative(spec, lam**2, (lam * x[0], lam * x[1]))
            rhs = heat_kernel_derivative(spec, 1.0, x)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_grad_inv_laplace_parity():
    g = make_grid(2, 8, 64)
    vals = sample_kernel(grad_inv_laplace(0, (0, 0), 2), 1.0, g)
    # node i mirrors to N - i (node 0 at -L has no partner)
    inner = vals[1:, 1:]
    odd = np.abs(inner + inner[::-1, :]).max()
    even = np.abs(inner - inner[:, ::-1]).max()
    assert odd <= 1e-10 and even <= 1e-10


def test_riesz_diagonal_sum_is_minus_heat():
    g = make_grid(2, 16, 128)
    total = sample_kernel(riesz_pair(0, 0, 0, (0, 0), 2), 1.0, g) + sample_kernel(riesz_pair(1, 1, 0, (0, 0), 2), 1.0, g)
    gauss = heat_kernel(1.0, g.coords, 2) * np.ones(g.shape)
    # the zero mode is dropped, so the periodic kernel is -(G - box mean)
    expected = -(gauss - gauss.sum() * g.cell_volume / (2 * g.L) ** 2)
    assert np.abs(total - expected)[g.interior].max() <= 1e-8


@pytest.mark.parametrize("spec", [riesz_pair(0, 1, 0, (0, 0), 2), riesz_pair(0, 0, 1, (1, 0), 2),
                                  grad_inv_laplace(1, (1, 1), 2)])
def test_nonlocal_kernels_scale_on_dilated_grids(spec):
    g = make_grid(2, 8, 64)
    ref = sample_kernel(spec, 1.0, g)
    lam = 2.0
    exponent = 2 + spec.order + (1 if spec.family == "grad_inv_laplace" else 0) - (2 if spec.family == "grad_inv_laplace" else 0)
    scaled = sample_kernel(spec, lam**2, g.dilate(lam)) * lam**exponent
    assert np.abs(scaled - ref)[g.interior].max() <= 1e-6 * np.abs(ref).max()


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("heat", 0, (0, 0, 0), 2)
    with pytest.raises(ValueError):
        KernelSpec("riesz_pair", 0, (0, 0), 2, (0,))
    with pytest.raises(ValueError):
        KernelSpec("bogus", 0, (0, 0), 2)
    assert riesz_pair(1, 0, 0, (0, 0), 2).index == (0, 1)
    with pytest.raises(ValueError):
        kernel_multiplier(heat(0, (0, 0), 2), 0.0, make_grid(2, 1, 8))


def test_heat_envelope_finite_for_any_power():
    g = make_grid(2, 16, 128)
    for p in (0, 4, 12):
        assert np.isfinite(kernel_decay_envelope(heat(1, (1, 0), 2), g, p))


@pytest.mark.parametrize("spec,power", [(grad_inv_laplace(0, (0, 0), 2), 1), (riesz_pair(0, 1, 0, (0, 0), 2), 2)])
def test_nonlocal_envelope_stable_under_refinement(spec, power):
    a = kernel_decay_envelope(spec, make_grid(2, 16, 256), power)
    b = kernel_decay_envelope(spec, make_grid(2, 16, 512), power)
    assert abs(a - b) <= 0.1 * abs(b)


def test_free_space_poisson_has_no_images():
    g = make_grid(2, 16, 64)
    x1, x2 = [np.broadcast_to(c, g.shape) for c in g.coords]
    r2 = (x1**2 + x2**2) / 4
    psi = np.exp(-r2)
    source = (1 - r2) * np.exp(-r2)     # -Lap psi
    out = FreeSpaceConvolver(g)(source)[0]
    assert np.abs(out - psi).max() <= 1e-12


def test_free_space_velocity_of_a_gaussian_vortex():
    # nonzero circulation: the far field ~ 1/r is the part a periodic solve cannot represent
    g = make_grid(2, 16, 64)
    x1, x2 = [np.broadcast_to(c, g.shape) for c in g.coords]
    r2 = x1**2 + x2**2
    w = np.exp(-r2 / 4)
    conv = FreeSpaceConvolver(g, (lambda k: 1j * k[1], lambda k: -1j * k[0]))
    u = conv(w)
    r = np.sqrt(np.where(r2 > 0, r2, 1.0))
    ut = np.where(r2 > 0, 2.0 * (1 - np.exp(-r2 / 4)) / r, 0.0)
    exact = np.stack([-ut * x2 / r, ut * x1 / r])
    assert np.abs(u - exact).max() <= 1e-12 * np.abs(exact).max()
