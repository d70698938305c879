"""Heat-kernel derivatives and the nonlocal kernels grad(-Lap)^{-1} G, R^j R^k G.

Heat derivatives are exact: d_t^l is rewritten as Lap^l and every spatial
derivative of the Gaussian is a product of physicists' Hermite polynomials,

    grad^a G(t, x) = (-1)^{|a|} (4t)^{-|a|/2} prod_i H_{a_i}(x_i / sqrt(4t)) G(t, x).

The nonlocal kernels have no elementary closed form in general and are sampled
through their Fourier multipliers on the periodic grid; the multiplier at
xi = 0 is zero, which picks the mean-zero periodic representative. Where the
whole-space kernel is needed instead, FreeSpaceConvolver applies (-Lap)^{-1}
(optionally composed with derivatives) to a localized source without images.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .field_core import Field, Grid, MultiIndex, multi_indices

FAMILIES = ("heat", "grad_inv_laplace", "riesz_pair")


@dataclass(frozen=True)
class KernelSpec:
    """d_t^l grad^beta applied to one kernel family.

    index is () for heat, (i,) for component i of grad(-Lap)^{-1} G and
    (j, k) for R^j R^k G; indices are zero based and riesz pairs are stored
    sorted since the kernel is symmetric in them.
    """

    family: str
    l: int
    beta: MultiIndex
    n: int
    index: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        beta = MultiIndex(self.beta)
        if len(beta) != self.n:
            raise ValueError("beta length must equal n")
        if self.l < 0 or self.l > 2 * self.n + 2 or beta.order > 2 * self.n + 2:
            raise ValueError("derivative orders are bounded by 2n+2")
        want = {"heat": 0, "grad_inv_laplace": 1, "riesz_pair": 2}[self.family]
        index = tuple(int(i) for i in self.index)
        if len(index) != want or any(not 0 <= i < self.n for i in index):
            raise ValueError(f"{self.family} needs {want} component indices in [0, n)")
        if self.family == "riesz_pair":
            index = tuple(sorted(index))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "index", index)

    @property
    def order(self) -> int:
        return 2 * self.l + self.beta.order


def heat(l: int, beta, n: int) -> KernelSpec:
    return KernelSpec("heat", l, MultiIndex(beta), n)


def grad_inv_laplace(i: int, beta, n: int, l: int = 0) -> KernelSpec:
    return KernelSpec("grad_inv_laplace", l, MultiIndex(beta), n, (i,))


def riesz_pair(j: int, k: int, l: int, beta, n: int) -> KernelSpec:
    return KernelSpec("riesz_pair", l, MultiIndex(beta), n, (j, k))


def heat_kernel(t: float, x, n: int):
    """G(t, x) = (4 pi t)^{-n/2} exp(-|x|^2 / 4t); x is a point or coordinate arrays."""
    if not t > 0:
        raise ValueError("heat kernel needs t > 0")
    r2 = sum(np.asarray(xi, dtype=float) ** 2 for xi in x)
    return (4.0 * math.pi * t) ** (-n / 2.0) * np.exp(-r2 / (4.0 * t))


@lru_cache(maxsize=None)
def hermite_coefficients(k: int) -> tuple[float, ...]:
    """Power-basis coefficients of the physicists' H_k, lowest degree first."""
    prev, cur = np.array([1.0]), np.array([0.0, 2.0])
    if k == 0:
        return tuple(prev)
    for j in range(1, k):
        nxt = np.zeros(j + 2)
        nxt[1:] += 2.0 * cur
        nxt[: j] -= 2.0 * j * prev
        prev, cur = cur, nxt
    return tuple(cur)


def hermite(k: int, z):
    return np.polynomial.polynomial.polyval(z, hermite_coefficients(k))


@lru_cache(maxsize=None)
def laplacian_power_terms(l: int, beta: MultiIndex) -> tuple[tuple[MultiIndex, int], ...]:
    """Lap^l grad^beta = sum_gamma (l! / gamma!) grad^{beta + 2 gamma}, |gamma| = l."""
    terms = []
    for gamma in multi_indices(len(beta), l):
        coef = math.factorial(l) // gamma.factorial()
        terms.append((beta + gamma + gamma, coef))
    return tuple(terms)


def heat_kernel_derivative(spec: KernelSpec, t: float, x):
    if spec.family != "heat":
        raise ValueError("heat_kernel_derivative handles the heat family only")
    if not t > 0:
        raise ValueError("heat kernel needs t > 0")
    x = [np.asarray(xi, dtype=float) for xi in x]
    scale = math.sqrt(4.0 * t)
    z = [xi / scale for xi in x]
    g = heat_kernel(t, x, spec.n)
    total = 0.0
    for alpha, coef in laplacian_power_terms(spec.l, spec.beta):
        prod = 1.0
        for zi, a in zip(z, alpha):
            if a:
                prod = prod * hermite(a, zi)
        total = total + coef * (-1.0) ** alpha.order * scale ** (-alpha.order) * prod
    return total * g


@lru_cache(maxsize=512)
def _multiplier(spec: KernelSpec, t: float, grid: Grid) -> np.ndarray:
    k = grid.wavenumbers
    ksq = grid.ksq
    m = np.exp(-t * ksq) * (-ksq) ** spec.l
    for ki, b in zip(k, spec.beta):
        if b:
            m = m * (1j * ki) ** b
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)
    if spec.family == "grad_inv_laplace":
        m = m * 1j * k[spec.index[0]] * inv
    elif spec.family == "riesz_pair":
        j, kk = spec.index
        m = m * (-(k[j] * k[kk])) * inv
    m = np.broadcast_to(m, grid.shape).astype(complex)
    m.flags.writeable = False
    return m


def kernel_multiplier(spec: KernelSpec, t: float, grid: Grid) -> np.ndarray:
    """Fourier multiplier of the kernel at time t on the grid's wavenumbers."""
    if not t > 0:
        raise ValueError("kernels need t > 0")
    if spec.n != grid.n:
        raise ValueError("kernel and grid dimensions differ")
    return _multiplier(spec, float(t), grid)


def sample_kernel(spec: KernelSpec, t: float, grid: Grid) -> np.ndarray:
    """Kernel values at the grid nodes, periodized onto the box."""
    m = kernel_multiplier(spec, t, grid)
    vals = np.fft.ifftn(m).real / grid.cell_volume
    return np.fft.fftshift(vals)


def sample_nonlocal_kernel(spec: KernelSpec, t: float, grid: Grid) -> Field:
    if spec.family == "heat":
        raise ValueError("use heat_kernel_derivative for the heat family")
    return Field(grid, "scalar", sample_kernel(spec, t, grid), t)


def apply_multiplier(values: np.ndarray, multiplier: np.ndarray, n: int) -> np.ndarray:
    """Periodic convolution with the kernel whose multiplier is given."""
    axes = tuple(range(-n, 0))
    return np.fft.ifftn(multiplier * np.fft.fftn(values, axes=axes), axes=axes).real


def decay_power(spec: KernelSpec) -> int:
    if spec.family == "grad_inv_laplace":
        return spec.n - 1 + spec.beta.order
    return spec.n + 2 * spec.l + spec.beta.order


def kernel_decay_envelope(spec: KernelSpec, grid: Grid, power: float | None = None) -> float:
    """sup over the half box of (1+|x|)^power |K(1, x)|."""
    p = decay_power(spec) if power is None else power
    if spec.family == "heat":
        vals = heat_kernel_derivative(spec, 1.0, grid.coords)
    else:
        vals = sample_kernel(spec, 1.0, grid)
    weighted = (1.0 + grid.radius) ** p * np.abs(vals)
    return float(np.max(weighted[grid.interior]))


def _truncated_green_hat(k: np.ndarray, radius: float, n: int) -> np.ndarray:
    """Transform of the fundamental solution of -Lap cut off at |x| = radius."""
    safe = np.where(k > 0, k, 1.0)
    if n == 2:
        val = (1.0 - special.j0(radius * safe)) / safe**2 - radius * math.log(radius) * special.j1(radius * safe) / safe
        zero = radius**2 / 4.0 - radius**2 * math.log(radius) / 2.0
    elif n == 3:
        val = 2.0 * (np.sin(radius * safe / 2.0) / safe) ** 2
        zero = radius**2 / 2.0
    else:
        raise ValueError("free-space convolution is implemented for n = 2, 3")
    return np.where(k > 0, val, zero)


class FreeSpaceConvolver:
    """Whole-space convolution with D (-Lap)^{-1} for sources supported in the box.

    Each entry of `derivatives` maps the wavenumber arrays to a multiplier D
    (None is the identity). The source is zero padded to twice the box and
    convolved with the Green's function truncated beyond the box diameter;
    the truncated kernel is tabulated through a four-fold oversampled
    transform, so the result is spectrally accurate and free of images.
    """

    def __init__(self, grid: Grid, derivatives=(None,)):
        n, N, h = grid.n, grid.N, grid.h
        M = 4 * N
        radius = 2.0 * grid.L * math.sqrt(n)
        k1d = 2.0 * np.pi * np.fft.fftfreq(M, d=h)
        ks = np.meshgrid(*([k1d] * n), indexing="ij")
        g_hat = _truncated_green_hat(np.sqrt(sum(k**2 for k in ks)), radius, n)
        idx = np.r_[0:N, M - N:M]
        block = np.ix_(*([idx] * n))
        self.grid, self.n, self.N, self.P = grid, n, N, 2 * N
        self.kernels = []
        for d in derivatives:
            mult = g_hat if d is None else d(ks) * g_hat
            ker = np.fft.ifftn(mult).real[block]
            self.kernels.append(np.fft.rfftn(ker))
        self._crop = tuple(slice(N // 2, N // 2 + N) for _ in range(n))

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Output shape (len(derivatives),) + values.shape."""
        n, P = self.n, self.P
        lead = values.shape[:-n]
        pad = np.zeros(lead + (P,) * n)
        pad[(Ellipsis,) + self._crop] = values
        axes = tuple(range(-n, 0))
        src = np.fft.rfftn(pad, axes=axes)
        out = [np.fft.irfftn(K * src, s=(P,) * n, axes=axes)[(Ellipsis,) + self._crop] for K in self.kernels]
        return np.stack(out)


@lru_cache(maxsize=8)
def free_space_poisson(grid: Grid) -> FreeSpaceConvolver:
    return FreeSpaceConvolver(grid)


def source_multiplier(spec: KernelSpec, t: float, grid: Grid) -> np.ndarray:
    """|xi|^2 times the multiplier of a nonlocal kernel: the localized source it inverts."""
    if spec.family == "heat":
        raise ValueError("heat kernels are local")
    k = grid.wavenumbers
    ksq = grid.ksq
    m = np.exp(-t * ksq) * (-ksq) ** spec.l
    for ki, b in zip(k, spec.beta):
        if b:
            m = m * (1j * ki) ** b
    if spec.family == "grad_inv_laplace":
        m = m * 1j * k[spec.index[0]]
    else:
        j, kk = spec.index
        m = m * (-(k[j] * k[kk]))
    return np.broadcast_to(m, grid.shape).astype(complex)
