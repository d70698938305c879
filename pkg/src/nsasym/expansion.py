"""Expansion profiles U_m, K_m, Omega_m, I_p and J_m built from kernels and a MomentTable.

Profiles are assembled from kernel sums with coefficient vectors taken from
the table.  Heat-family terms are evaluated either in closed form
(``heat="hermite"``, exact on the whole space) or through their Fourier
multipliers (``heat="spectral"``, the periodic image that a torus solver
actually sees).  Nonlocal terms are periodized spectral kernels, except
where a profile is requested with ``free=True``: then they are whole-space
kernels, obtained by a free-space Poisson solve of their localized sources.
I_p(1) on the profile grid, and with it every profile moment and J_m, is
always built that way.

Index conventions: vorticity is an (n, n) tensor Omega^{ij}, velocity and
I are vectors, and I^j = sum_h Omega^{hj} U^h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientError, MomentTable, falling, log_time_constant, orders_of
from .field_core import Field, Grid, MultiIndex, make_grid, moment, multi_indices, unit
from .kernels import (
    KernelSpec,
    grad_inv_laplace,
    heat,
    heat_kernel_derivative,
    free_space_poisson,
    kernel_multiplier,
    riesz_pair,
    source_multiplier,
)


class QuadratureError(RuntimeError):
    pass


@dataclass
class ExpansionProfile:
    kind: str
    order: int
    n: int
    terms: list = field(default_factory=list)

    @property
    def exponent(self) -> int:
        return self.n + self.order

    def add(self, spec: KernelSpec, coefficient, target=None) -> None:
        self.terms.append({
            "kernel": spec.family,
            "l": spec.l,
            "beta": list(spec.beta),
            "index": list(spec.index),
            "target": target,
            "coefficient": float(coefficient),
        })

    def as_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order, "exponent": self.exponent, "terms": self.terms}


class _Accumulator:
    """Collects kernel terms per output component; heat terms may go to real space."""

    def __init__(self, grid: Grid, shape: tuple, t: float, heat_mode: str, record: ExpansionProfile | None,
                 free: bool = False):
        self.grid, self.t, self.heat_mode, self.record, self.free = grid, t, heat_mode, record, free
        self.hat = np.zeros(shape + grid.shape, dtype=complex)
        self.real = np.zeros(shape + grid.shape)
        self.used_hat = False
        # whole-space mode: nonlocal kernels are (-Lap)^{-1} of these sources
        self.src_hat = np.zeros(shape + grid.shape, dtype=complex) if free else None

    def add(self, spec: KernelSpec, target: tuple, coef: float) -> None:
        if coef == 0.0:
            return
        if self.record is not None:
            self.record.add(spec, coef, list(target))
        if spec.family == "heat" and self.heat_mode == "hermite":
            vals = heat_kernel_derivative(spec, self.t, self.grid.coords)
            self.real[target] += coef * vals
        elif spec.family != "heat" and self.free:
            self.src_hat[target] += coef * source_multiplier(spec, self.t, self.grid)
        else:
            self.hat[target] += coef * kernel_multiplier(spec, self.t, self.grid)
            self.used_hat = True

    def values(self) -> np.ndarray:
        out = self.real.copy()
        if self.used_hat:
            axes = tuple(range(-self.grid.n, 0))
            vals = np.fft.ifftn(self.hat, axes=axes).real / self.grid.cell_volume
            out += np.fft.fftshift(vals, axes=axes)
        if self.free and np.any(self.src_hat):
            axes = tuple(range(-self.grid.n, 0))
            src = np.fft.fftshift(np.fft.ifftn(self.src_hat, axes=axes).real, axes=axes) / self.grid.cell_volume
            out += free_space_poisson(self.grid)(src)[0]
        return out


def _fact(l: int, beta: MultiIndex) -> float:
    return float(math.factorial(l) * beta.factorial())


class ProfileBuilder:
    """Evaluates all profiles for one MomentTable.

    profile_grid is where I_p(1, .) is sampled for J_m and profile moments.
    """

    def __init__(self, table: MomentTable, heat_mode: str = "hermite",
                 profile_grid: Grid | None = None, j_nodes: int = 48, j_tol: float = 1e-4):
        if heat_mode not in ("hermite", "spectral"):
            raise ValueError("heat_mode must be 'hermite' or 'spectral'")
        self.table = table
        self.n = table.n
        self.heat_mode = heat_mode
        self.profile_grid = profile_grid or make_grid(self.n, 16.0, 128)
        self.j_nodes = j_nodes
        self.j_tol = j_tol
        self.manifest: dict[str, dict] = {}
        self._ip1: dict[int, Field] = {}
        self._memo: dict[tuple, Field] = {}

    def _memoized(self, key: tuple, build) -> Field:
        """Profiles are pure functions of (kind, order, t, grid) for a fixed table."""
        if key not in self._memo:
            f = build()
            f.values.flags.writeable = False
            self._memo[key] = f
        return self._memo[key]

    def clear_cache(self) -> None:
        self._memo.clear()
        self._ip1.clear()

    def _start(self, kind: str, order: int, grid: Grid, shape: tuple, t: float, free: bool = False):
        if grid.n != self.n:
            raise ValueError("grid dimension differs from the table's")
        if not t > 0:
            raise ValueError("profiles need t > 0")
        rec = ExpansionProfile(kind, order, self.n)
        self.manifest[f"{kind}{order}"] = rec.as_dict()
        acc = _Accumulator(grid, shape, t, self.heat_mode, rec, free)
        return rec, acc

    def _finish(self, kind, order, rec, acc, rank, t, grid, extra=None) -> Field:
        vals = acc.values()
        if extra is not None:
            vals = vals + extra
        self.manifest[f"{kind}{order}"] = rec.as_dict()
        return Field(grid, rank, vals, t, meta={"kind": kind, "order": order})

    # -- building blocks ------------------------------------------------
    def _initial_velocity_terms(self, acc: _Accumulator, m: int) -> None:
        """-sum_{|a|=m+1} grad^a d_h (-Lap)^{-1} G / a! * nu_a^{hj}."""
        n = self.n
        for alpha in multi_indices(n, m + 1):
            nu = self.table.initial_moment(alpha)
            for j in range(n):
                for h in range(n):
                    acc.add(grad_inv_laplace(h, alpha, n), (j,), -nu[h, j] / alpha.factorial())

    def _duhamel_terms(self, acc: _Accumulator, l: int, beta: MultiIndex, coef) -> None:
        """-sum_k d_t^l grad^beta R^j R^k G C^k/(l! b!) - d_t^l grad^beta G C^j/(l! b!)."""
        n = self.n
        f = _fact(l, beta)
        for j in range(n):
            for k in range(n):
                acc.add(riesz_pair(j, k, l, beta, n), (j,), -coef[k] / f)
            acc.add(heat(l, beta, n), (j,), -coef[j] / f)

    # -- profiles --------------------------------------------------------
    def omega(self, m: int, t: float, grid: Grid) -> Field:
        n = self.n
        if not 2 <= m <= n + 1:
            raise ValueError(f"Omega_m defined for 2 <= m <= n+1, got {m}")
        rec, acc = self._start("Omega", m, grid, (n, n), t)
        for alpha in multi_indices(n, m):
            nu = self.table.initial_moment(alpha)
            for i in range(n):
                for j in range(n):
                    acc.add(heat(0, alpha, n), (i, j), nu[i, j] / alpha.factorial())
        for l, beta in orders_of(n, m - 1):
            M = self.table.get(l, beta, "raw_I")
            f = _fact(l, beta)
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    acc.add(heat(l, beta + unit(n, j), n), (i, j), M[i] / f)
                    acc.add(heat(l, beta + unit(n, i), n), (i, j), -M[j] / f)
        return self._finish("Omega", m, rec, acc, "tensor", t, grid)

    def u_low(self, m: int, t: float, grid: Grid, free: bool = False) -> Field:
        """Low-order velocity profile; `free` uses whole-plane nonlocal kernels
        instead of their periodizations on the grid."""
        n = self.n
        if not 1 <= m <= n:
            raise ValueError(f"low-order U_m defined for 1 <= m <= n, got {m}")
        rec, acc = self._start("U", m, grid, (n,), t, free)
        self._initial_velocity_terms(acc, m)
        for l, beta in orders_of(n, m):
            self._duhamel_terms(acc, l, beta, self.table.get(l, beta, "raw_I"))
        return self._finish("U", m, rec, acc, "vector", t, grid)

    def i_p(self, p: int, t: float, grid: Grid, free: bool = False) -> Field:
        n = self.n
        if not n + 3 <= p <= 2 * n + 2:
            raise ValueError(f"I_p defined for n+3 <= p <= 2n+2, got {p}")
        out = np.zeros((n,) + grid.shape)
        for m in range(1, p - n - 1):
            om = self.omega(p - n - m, t, grid).values
            u = self.u_low(m, t, grid, free).values
            out += np.einsum("hj...,h...->j...", om, u)
        return Field(grid, "vector", out, t, meta={"kind": "I_p", "order": p})

    def ip_at_one(self, p: int) -> Field:
        if p not in self._ip1:
            self._ip1[p] = self.i_p(p, 1.0, self.profile_grid, free=True)
        return self._ip1[p]

    def k_profile(self, m: int, t: float, grid: Grid) -> Field:
        n = self.n
        if not n + 1 <= m <= 2 * n:
            raise ValueError(f"K_m defined for n+1 <= m <= 2n, got {m}")
        rec, acc = self._start("K", m, grid, (n,), t)
        for l, beta in orders_of(n, m):
            self._duhamel_terms(acc, l, beta, self.table.profile_moment(m + 2, l, beta))
        return self._finish("K", m, rec, acc, "vector", t, grid)

    def high_coefficients(self, m: int, t: float) -> list[tuple[int, MultiIndex, np.ndarray]]:
        """(l, beta, C) attached to d_t^l grad^beta kernels in U_m for n+1 <= m <= 2n."""
        n = self.n
        p = m + 2
        out = []
        missing = []
        for k in range(1, m + 1):
            for l, beta in orders_of(n, k):
                try:
                    if k == m:
                        c = self.table.get(l, beta, "renormalized") + \
                            log_time_constant(l) * self.table.profile_moment(p, l, beta)
                    else:
                        c = -2.0 / (m - k) * t ** (-(m - k) / 2.0) * self.table.profile_moment(p, l, beta)
                        if k >= n + 1 and (m - k) % 2 == 0:
                            j = (m - k) // 2
                            nu = self.table.profile_moment(k + 2, l, beta)
                            c = c + falling(-l - 1, j) / (j * math.factorial(j)) * t ** (-j) * nu
                except CoefficientError as exc:
                    missing.append(str(exc))
                    continue
                out.append((l, beta, np.asarray(c, float)))
        if missing:
            raise CoefficientError("U_%d is missing constituents: %s" % (m, "; ".join(missing)))
        return out

    def u_high(self, m: int, t: float, grid: Grid, with_j: bool = True) -> Field:
        n = self.n
        if not n + 1 <= m <= 2 * n:
            raise ValueError(f"high-order U_m defined for n+1 <= m <= 2n, got {m}")
        coefs = self.high_coefficients(m, t)
        rec, acc = self._start("U", m, grid, (n,), t)
        self._initial_velocity_terms(acc, m)
        for l, beta, c in coefs:
            self._duhamel_terms(acc, l, beta, c)
        extra = -self.j_profile(m, t, grid).values if with_j else None
        return self._finish("U", m, rec, acc, "vector", t, grid, extra)

    def u(self, m: int, t: float, grid: Grid) -> Field:
        build = (lambda: self.u_low(m, t, grid)) if m <= self.n else (lambda: self.u_high(m, t, grid))
        return self._memoized(("U", m, float(t), grid), build)

    def expansion_sum(self, t: float, grid: Grid, order: int, with_logs: bool = True) -> Field:
        n = self.n
        if not 0 <= order <= 2 * n:
            raise ValueError(f"expansion order must lie in [0, 2n], got {order}")
        out = np.zeros((n,) + grid.shape)
        for m in range(1, order + 1):
            out += self.u(m, t, grid).values
            if with_logs and m >= n + 1 and t != 1.0:
                k = self._memoized(("K", m, float(t), grid), lambda: self.k_profile(m, t, grid))
                out += math.log(t) * k.values
        return Field(grid, "vector", out, t)

    # -- J_m ---------------------------------------------------------------
    def j_profile(self, m: int, t: float, grid: Grid, eps: float = 0.0,
                  ip1: Field | None = None, nodes: int | None = None,
                  split: float | None = None) -> Field:
        """J_m(t) = int_eps^t P e^{-(t-s)|xi|^2} [I_{m+2}(s)^ - Taylor_m] ds, Fourier side.

        With s = sigma^2 the bracket times ds is smooth in sigma, so a
        Gauss-Legendre rule in sigma converges fast; a half-size rule is the
        refinement check.  eps truncates the time integral at s = eps;
        split is the s below which the series is used instead of quadrature
        (default SERIES_FRACTION^2 t) and does not change the result.
        """
        n = self.n
        if not n + 1 <= m <= 2 * n:
            raise ValueError(f"J_m defined for n+1 <= m <= 2n, got {m}")
        if not 0 <= eps < t:
            raise ValueError("need 0 <= eps < t")
        p = m + 2
        ip1 = self.ip_at_one(p) if ip1 is None else ip1
        nodes = nodes or self.j_nodes
        if split is not None and not 0 < split < t:
            raise ValueError("split must lie in (0, t)")
        full = _j_hat(ip1, p, m, t, grid, eps, nodes, split)
        half = _j_hat(ip1, p, m, t, grid, eps, nodes // 2, split)
        scale = float(np.max(np.abs(full)))
        if scale > 0:
            diff = float(np.max(np.abs(full - half))) / scale
            if diff > self.j_tol:
                raise QuadratureError(f"J_{m} quadrature did not converge (refinement gap {diff:.2e})")
        xi = grid.wavenumbers
        ksq = np.broadcast_to(grid.ksq, grid.shape)
        inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)
        proj = np.zeros((n,) + grid.shape, dtype=complex)
        for j in range(n):
            proj[j] += full[j]
            for k in range(n):
                proj[j] -= xi[j] * xi[k] * inv * full[k]
        axes = tuple(range(-n, 0))
        vals = np.fft.ifftn(proj, axes=axes).real / grid.cell_volume
        rec = ExpansionProfile("J", m, n)
        self.manifest[f"J{m}"] = dict(rec.as_dict(), nodes=nodes, eps=eps,
                                      profile_grid=[self.profile_grid.L, self.profile_grid.N])
        return Field(grid, "vector", np.fft.fftshift(vals, axes=axes), t, meta={"kind": "J", "order": m})

    def populate_profile_moments(self) -> None:
        """Fill table.profile_moments nu(l, beta, p) for every p and 2l+|beta| <= 2n."""
        n = self.n
        self._memo.clear()
        for p in range(n + 3, 2 * n + 3):
            ip = self.ip_at_one(p)
            for k in range(0, 2 * n + 1):
                for l, beta in orders_of(n, k):
                    self.table.profile_moments[(p, l, beta)] = (
                        (-1) ** (l + beta.order) * np.asarray(moment(ip, beta))
                    )


def _fourier_transform_at(values: np.ndarray, grid: Grid, eta_axes: list[np.ndarray]) -> np.ndarray:
    """Continuous Fourier transform int e^{-i eta y} f(y) dy on a tensor grid of eta.

    Frequencies beyond the sampling grid's Nyquist limit would alias; f is
    assumed resolved there, so its transform is taken as zero.
    """
    out = values.astype(complex)
    n = grid.n
    y = grid.axis
    lead = out.ndim - n
    nyq = math.pi / grid.h
    for ax in range(n):
        A = np.exp(-1j * np.outer(eta_axes[ax], y))
        A[np.abs(eta_axes[ax]) > nyq] = 0.0
        out = np.moveaxis(np.tensordot(out, A, axes=([lead + ax], [1])), -1, lead + ax)
    return out * grid.cell_volume


def _raw_moment(f: Field, beta: MultiIndex) -> np.ndarray:
    """int (-y)^beta f dy with no order cap (only used on Gaussian-localized fields)."""
    neg = [-x for x in f.grid.coords]
    w = np.broadcast_to(beta.power(neg), f.grid.shape)
    axes = tuple(range(-f.grid.n, 0))
    return f.grid.cell_volume * np.sum(f.values * w, axis=axes)


def _homogeneous_parts(ip1: Field, grid: Grid, max_degree: int) -> list[np.ndarray]:
    """E_d(xi): degree-d part of the Taylor series of exp(|xi|^2) F(xi), F the transform of ip1."""
    n = grid.n
    xi = grid.wavenumbers
    ksq = np.broadcast_to(grid.ksq, grid.shape)
    parts = [np.zeros((n,) + grid.shape, dtype=complex)]
    for d in range(1, max_degree + 1):
        acc = np.zeros((n,) + grid.shape, dtype=complex)
        for l, beta in orders_of(n, d):
            mu = _raw_moment(ip1, beta)
            mono = np.ones(grid.shape, dtype=complex)
            for xi_i, b in zip(xi, beta):
                if b:
                    mono = mono * (1j * xi_i) ** b
            mono = mono * ksq**l / _fact(l, beta)
            acc += mono[None] * mu.reshape((n,) + (1,) * n)
        parts.append(acc)
    return parts


SERIES_FRACTION = 0.05
SERIES_TERMS = 6


def _j_hat(ip1: Field, p: int, m: int, t: float, grid: Grid, eps: float, nodes: int,
           split: float | None = None) -> np.ndarray:
    """Fourier transform of J_m before the Leray projection.

    With s = sigma^2 and E the Taylor series of exp(|eta|^2) F(eta), the
    integrand is exp(-t|xi|^2) sigma^{-p} (E - E_{<=m})(sigma xi) 2 sigma.
    Below sigma_0 = SERIES_FRACTION sqrt(t) that is integrated term by term
    (avoids cancellation); above it Gauss-Legendre is used.  sigma_0 scales
    with sqrt(t) so the construction keeps the parabolic scaling exactly.
    """
    n = grid.n
    k1d = 2.0 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
    ksq = np.broadcast_to(grid.ksq, grid.shape)
    parts = _homogeneous_parts(ip1, grid, m + SERIES_TERMS)
    decay_t = np.exp(-t * ksq)
    acc = np.zeros((n,) + grid.shape, dtype=complex)
    lo, hi = math.sqrt(eps), math.sqrt(t)
    s0 = SERIES_FRACTION * hi if split is None else math.sqrt(split)
    if lo < s0:
        for d in range(m + 1, m + SERIES_TERMS + 1):
            e = d - p + 2
            acc += 2.0 * (s0**e - lo**e) / e * decay_t * parts[d]
        lo = s0
    x, w = np.polynomial.legendre.leggauss(nodes)
    sig = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w
    for sg, wt in zip(sig, w):
        s = sg * sg
        F = _fourier_transform_at(ip1.values, ip1.grid, [sg * k1d] * n)
        val = np.exp(-(t - s) * ksq) * F
        poly = np.zeros_like(val)
        for d in range(m, 0, -1):
            poly = (poly + parts[d]) * sg
        val -= decay_t * poly
        acc += (2.0 * sg ** (1 - p) * wt) * val
    acc[(slice(None),) + (0,) * n] = 0.0
    return acc


_BUILDERS: dict[int, ProfileBuilder] = {}


def _builder(table: MomentTable, heat_mode: str = "hermite") -> ProfileBuilder:
    key = (id(table), heat_mode)
    b = _BUILDERS.get(key)
    if b is None or b.table is not table:
        b = ProfileBuilder(table, heat_mode)
        _BUILDERS[key] = b
    return b


def omega_profile(m: int, t: float, grid: Grid, table: MomentTable) -> Field:
    return _builder(table).omega(m, t, grid)


def u_profile_low(m: int, t: float, grid: Grid, table: MomentTable) -> Field:
    return _builder(table).u_low(m, t, grid)


def i_p_profile(p: int, t: float, grid: Grid, table: MomentTable) -> Field:
    return _builder(table).i_p(p, t, grid)


def j_profile(m: int, t: float, grid: Grid, table: MomentTable, eps: float = 0.0,
              split: float | None = None) -> Field:
    return _builder(table).j_profile(m, t, grid, eps, split=split)


def k_profile(m: int, t: float, grid: Grid, table: MomentTable) -> Field:
    return _builder(table).k_profile(m, t, grid)


def u_profile_high(m: int, t: float, grid: Grid, table: MomentTable) -> Field:
    return _builder(table).u_high(m, t, grid)


def expansion_sum(t: float, grid: Grid, order: int, with_logs: bool, table: MomentTable) -> Field:
    return _builder(table).expansion_sum(t, grid, order, with_logs)
