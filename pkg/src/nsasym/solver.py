"""Pseudo-spectral solver for the planar vorticity equation

    d_t w + div(u w) = Lap w,    u = (d_2, -d_1)(-Lap)^{-1} w,

on a periodic box standing in for R^2.  Diffusion is integrated exactly with
an integrating factor, advection with classical RK4, and the quadratic term
is dealiased with the 2/3 rule at every stage.

Besides field snapshots the solver records, after every step, the spatial
moments int (-y)^beta I^j[u](s, y) dy of the nonlinearity.  Time integrals of
those moments are the expansion coefficients, and integrating the dense step
history is far more accurate than integrating a handful of snapshots.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .field_core import Field, Grid, MultiIndex, moment, multi_indices, lq_norm, divergence
from .kernels import FreeSpaceConvolver

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class ContainmentError(SolverError):
    pass


@dataclass(frozen=True)
class InitialDataSpec:
    """w0 = d1 d2 phi with phi = A exp(-|x - c|^2 / sigma^2)."""

    amplitude: float = 1.0
    sigma: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)


def make_initial_vorticity(spec: InitialDataSpec, grid: Grid) -> Field:
    if grid.n != 2:
        raise ValueError("the vorticity solver is planar")
    A, s = spec.amplitude, spec.sigma
    x1 = grid.coords[0] - spec.center[0]
    x2 = grid.coords[1] - spec.center[1]
    env = np.exp(-(x1**2 + x2**2) / s**2)
    w = A * 4.0 * x1 * x2 / s**4 * env
    edge = max(np.abs(w[0, :]).max(), np.abs(w[:, 0]).max())
    if edge >= 1e-14 * max(abs(A), 1e-300):
        raise ValueError(
            f"initial vorticity is not localized in the box (edge value {edge:.3e})"
        )
    return Field(grid, "scalar", w, 0.0)


def _inverse_laplacian_symbol(grid: Grid) -> np.ndarray:
    ksq = grid.ksq
    return np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)


def velocity_hat(w_hat: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Full-spectrum (fft2) Biot-Savart multipliers applied to w_hat."""
    k1, k2 = grid.wavenumbers
    inv = _inverse_laplacian_symbol(grid)
    return 1j * k2 * inv * w_hat, -1j * k1 * inv * w_hat


class _HalfSpectrum:
    """Wavenumber tables for rfft2 storage (last axis halved)."""

    def __init__(self, grid: Grid):
        k = 2.0 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
        kr = 2.0 * np.pi * np.fft.rfftfreq(grid.N, d=grid.h)
        self.k1, self.k2 = np.meshgrid(k, kr, indexing="ij")
        self.ksq = self.k1**2 + self.k2**2
        self.inv = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
        # odd derivatives lose the unpaired Nyquist mode
        nyq = np.pi / grid.h
        self.d1 = np.where(np.isclose(np.abs(self.k1), nyq), 0.0, self.k1)
        self.d2 = np.where(np.isclose(self.k2, nyq), 0.0, self.k2)


def biot_savart(w: Field, tol: float = 1e-8) -> Field:
    """u = (i xi_2, -i xi_1) |xi|^{-2} w_hat, zero mode dropped."""
    if w.rank != "scalar" or w.grid.n != 2:
        raise ValueError("biot_savart expects a planar scalar vorticity")
    grid = w.grid
    scale = np.abs(w.values).sum()
    if scale > 0 and abs(w.values.sum()) > tol * scale:
        raise ValueError("vorticity must have zero mean")
    u1, u2 = velocity_hat(np.fft.fft2(w.values), grid)
    return Field(grid, "vector", np.stack([np.fft.ifft2(u1).real, np.fft.ifft2(u2).real]), w.t)


def nonlinearity_I(u: Field, w: Field) -> Field:
    """I^j = w^{*j} . u; in the plane I = w (-u^2, u^1)."""
    if u.grid != w.grid:
        raise ValueError("velocity and vorticity live on different grids")
    if abs(u.t - w.t) > 1e-12 * max(1.0, abs(w.t)):
        raise ValueError("velocity and vorticity carry different times")
    vals = np.stack([-w.values * u.values[1], w.values * u.values[0]])
    return Field(w.grid, "vector", vals, w.t)


def moment_indices(n: int, max_order: int) -> list[MultiIndex]:
    return [b for k in range(max_order + 1) for b in multi_indices(n, k)]


@dataclass
class SolverState:
    """Vorticity held as rfft2 coefficients."""

    grid: Grid
    w_hat: np.ndarray
    t: float = 0.0
    advection: bool = True

    @classmethod
    def from_field(cls, w: Field, advection: bool = True) -> "SolverState":
        w_hat = np.fft.rfft2(w.values)
        w_hat[0, 0] = 0.0
        return cls(w.grid, w_hat, w.t, advection)

    @property
    def omega(self) -> Field:
        return Field(self.grid, "scalar", np.fft.irfft2(self.w_hat, s=self.grid.shape), self.t)

    def velocity(self) -> Field:
        return Field(self.grid, "vector", integrator_for(self.grid).velocity(self.w_hat), self.t)


class Integrator:
    """IF-RK4 stepping for one grid; caches the spectral operators."""

    def __init__(self, grid: Grid):
        if grid.n != 2:
            raise ValueError("the vorticity solver is planar")
        self.grid = grid
        sp = _HalfSpectrum(grid)
        self.k1, self.k2, self.ksq, self.inv = sp.k1, sp.k2, sp.ksq, sp.inv
        self.d1, self.d2 = sp.d1, sp.d2
        kmax = np.pi / grid.h
        self.dealias = (np.abs(self.k1) < 2.0 / 3.0 * kmax) & (np.abs(self.k2) < 2.0 / 3.0 * kmax)
        self.shape = grid.shape

    def stability_bound(self, umax: float) -> float:
        h = self.grid.h
        bound = h**2 / 4.0
        if umax > 0:
            bound = min(bound, h / (2.0 * umax))
        return 0.5 * bound

    def velocity(self, w_hat: np.ndarray) -> np.ndarray:
        u1 = np.fft.irfft2(1j * self.d2 * self.inv * w_hat, s=self.shape)
        u2 = np.fft.irfft2(-1j * self.d1 * self.inv * w_hat, s=self.shape)
        return np.stack([u1, u2])

    def rhs(self, w_hat: np.ndarray) -> np.ndarray:
        """Transform of -div(u w), dealiased."""
        return self.rhs_fields(w_hat)[0]

    def rhs_fields(self, w_hat: np.ndarray):
        """rhs together with the physical-space u and w it was built from."""
        u = self.velocity(w_hat)
        w = np.fft.irfft2(w_hat, s=self.shape)
        f1 = np.fft.rfft2(u[0] * w)
        f2 = np.fft.rfft2(u[1] * w)
        out = -1j * (self.d1 * f1 + self.d2 * f2)
        out *= self.dealias
        out[0, 0] = 0.0
        return out, u, w

    def _factor(self, dt: float) -> np.ndarray:
        if getattr(self, "_dt", None) != dt:
            self._dt = dt
            self._e_half = np.exp(-self.ksq * dt / 2.0)
        return self._e_half

    def umax(self, w_hat: np.ndarray) -> float:
        u = self.velocity(w_hat)
        return float(np.sqrt(u[0] ** 2 + u[1] ** 2).max())

    def step(self, state: SolverState, dt: float, check_cfl: bool = True, first=None) -> SolverState:
        """One IF-RK4 step; `first` may carry a precomputed rhs_fields(w_hat)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        w = state.w_hat
        if state.advection and first is None:
            first = self.rhs_fields(w)
        if check_cfl:
            umax = float(np.sqrt(first[1][0] ** 2 + first[1][1] ** 2).max()) if state.advection else 0.0
            limit = self.stability_bound(umax)
            if dt > limit * (1 + 1e-12):
                raise SolverError(f"dt={dt:g} violates the stability bound {limit:g}")
        e_half = self._factor(dt)
        e_full = e_half * e_half
        if not state.advection:
            new = e_full * w
        else:
            k1 = first[0]
            k2 = self.rhs(e_half * (w + 0.5 * dt * k1))
            k3 = self.rhs(e_half * w + 0.5 * dt * k2)
            k4 = self.rhs(e_full * w + dt * e_half * k3)
            new = e_full * w + dt / 6.0 * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
        new[0, 0] = 0.0
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite vorticity at t={state.t + dt:g}")
        return SolverState(self.grid, new, state.t + dt, state.advection)


_INTEGRATORS: dict[Grid, Integrator] = {}


def integrator_for(grid: Grid) -> Integrator:
    if grid not in _INTEGRATORS:
        _INTEGRATORS[grid] = Integrator(grid)
    return _INTEGRATORS[grid]


def step(state: SolverState, dt: float) -> SolverState:
    return integrator_for(state.grid).step(state, dt)


def free_space_biot_savart(grid: Grid) -> FreeSpaceConvolver:
    """Whole-plane Biot-Savart law u = (d_2, -d_1)(-Lap)^{-1} w for a box-supported w.

    Periodic images do not contribute, unlike biot_savart.
    """
    if grid.n != 2:
        raise ValueError("free-space velocity is planar")
    return FreeSpaceConvolver(grid, (lambda k: 1j * k[1], lambda k: -1j * k[0]))


_FREE: dict[Grid, FreeSpaceConvolver] = {}


def free_space_velocity(grid: Grid) -> FreeSpaceConvolver:
    if grid not in _FREE:
        _FREE[grid] = free_space_biot_savart(grid)
    return _FREE[grid]


@dataclass
class Snapshot:
    t: float
    omega: Field
    _u: Field | None = field(default=None, repr=False)
    _I: Field | None = field(default=None, repr=False)

    @property
    def u(self) -> Field:
        if self._u is None:
            self._u = biot_savart(self.omega, tol=1e-6)
        return self._u

    @property
    def I(self) -> Field:
        if self._I is None:
            self._I = nonlinearity_I(self.u, self.omega)
        return self._I


@dataclass
class Trajectory:
    grid: Grid
    dt: float
    snapshots: list[Snapshot]
    history_t: np.ndarray
    history_I: np.ndarray          # (steps+1, len(betas), 2): int (-y)^beta I^j dy
    betas: list[MultiIndex]
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def snapshot_at(self, t: float, tol: float = 1e-9) -> Snapshot:
        for s in self.snapshots:
            if abs(s.t - t) <= tol * max(1.0, t):
                return s
        raise KeyError(f"no snapshot at t={t}")

    def beta_column(self, beta) -> int:
        return self.betas.index(MultiIndex(beta))

    @property
    def omega0(self) -> Field:
        return self.snapshots[0].omega


def moment_weights(grid: Grid, betas: list[MultiIndex]) -> np.ndarray:
    neg = [-x for x in grid.coords]
    return np.stack([np.broadcast_to(b.power(neg), grid.shape) for b in betas]).reshape(len(betas), -1)


def I_moments(I_values: np.ndarray, grid: Grid, betas: list[MultiIndex], weights=None) -> np.ndarray:
    """int (-y)^beta I^j dy for every beta; result shape (len(betas), 2)."""
    if weights is None:
        weights = moment_weights(grid, betas)
    flat = I_values.reshape(I_values.shape[0], -1)
    return grid.cell_volume * (weights @ flat.T)


def _I_from_hat(integ: Integrator, w_hat: np.ndarray) -> np.ndarray:
    u1, u2 = integ.velocity(w_hat)
    w = np.fft.irfft2(w_hat, s=integ.shape)
    return np.stack([-w * u2, w * u1])


def simulate(
    omega0: Field,
    t_end: float,
    snapshot_times,
    dt: float,
    moment_order: int = 5,
    advection: bool = True,
    check_containment: bool = True,
    moment_stride: int = 1,
    free_space: bool = True,
) -> Trajectory:
    """Run from omega0 to t_end, keeping snapshots at the requested times.

    Snapshot times must be integer multiples of dt (up to rounding); the step
    grid is fixed so that repeated runs are bitwise reproducible.

    The moments of I are recorded every `moment_stride` steps. With
    `free_space` they use the whole-plane velocity of the current vorticity,
    which removes the strain induced by periodic images; that strain would
    otherwise leave a non-decaying offset in the low moments of I.
    """
    grid = omega0.grid
    if check_containment and math.sqrt(t_end) > grid.L / 6.0 * (1 + 1e-12):
        raise ContainmentError(
            f"sqrt(t_end)={math.sqrt(t_end):.3f} exceeds L/6={grid.L / 6:.3f}; "
            "diffused vorticity would wrap around the periodic box"
        )
    integ = integrator_for(grid)
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a multiple of dt")
    wanted = {}
    for ts in snapshot_times:
        k = int(round(ts / dt))
        if abs(k * dt - ts) > 1e-9 * max(1.0, ts) or not 0 <= k <= nsteps:
            raise ValueError(f"snapshot time {ts} is not on the step grid within [0, t_end]")
        wanted[k] = float(ts)
    if moment_stride < 1 or nsteps % moment_stride:
        raise ValueError("moment_stride must divide the number of steps")
    betas = moment_indices(2, moment_order)
    weights = moment_weights(grid, betas)
    velocity = free_space_velocity(grid) if free_space else None
    state = SolverState.from_field(omega0, advection)
    nrec = nsteps // moment_stride + 1
    hist_t = np.empty(nrec)
    hist = np.empty((nrec, len(betas), 2))
    snaps = []

    def record(k: int, st: SolverState, u: np.ndarray, w: np.ndarray) -> None:
        if k % moment_stride == 0:
            r = k // moment_stride
            hist_t[r] = k * dt
            if velocity is not None:
                u = velocity(w)
            hist[r] = I_moments(np.stack([-w * u[1], w * u[0]]), grid, betas, weights)
        if k in wanted:
            snaps.append(Snapshot(wanted[k], Field(grid, "scalar", w, wanted[k])))

    for k in range(nsteps + 1):
        first = integ.rhs_fields(state.w_hat)
        record(k, state, first[1], first[2])
        if k == nsteps:
            break
        state = integ.step(state, dt, first=first if advection else None)
        state.t = (k + 1) * dt
        if (k + 1) % 1000 == 0:
            log.info("t=%.3f", state.t)
    return Trajectory(grid, dt, snaps, hist_t, hist, betas,
                      meta={"moment_stride": moment_stride, "free_space": free_space})


def geometric_times(t0: float, t1: float, count: int, dt: float) -> list[float]:
    """Geometric schedule t0 * r^k rounded onto the step grid (empty if t0 >= t1)."""
    if t0 >= t1:
        return []
    raw = np.geomspace(t0, t1, count)
    return sorted({round(round(t / dt) * dt, 12) for t in raw})


def norms_table(traj: Trajectory, qs=(1.0, 2.0, math.inf)) -> list[dict]:
    rows = []
    for s in traj.snapshots:
        for q in qs:
            rows.append({
                "t": s.t,
                "q": q,
                "u": lq_norm(s.u, q),
                "omega": lq_norm(s.omega, q),
                "u_interior": lq_norm(s.u, q, "interior"),
                "omega_interior": lq_norm(s.omega, q, "interior"),
            })
    return rows


def weighted_norm(w: Field, k: int, q: float) -> float:
    """|| |x|^k w ||_q."""
    return lq_norm(w.with_values(w.grid.radius**k * w.values), q)


def divergence_ratio(u: Field) -> float:
    from .field_core import spectral_gradient

    grad = spectral_gradient(u.values, u.grid)
    ref = np.sqrt(np.sum(grad**2, axis=(0, 1))).max()
    return float(np.abs(divergence(u).values).max() / ref) if ref > 0 else 0.0


def first_moments(w: Field) -> tuple[float, float, float]:
    return moment(w, (0, 0)), moment(w, (1, 0)), moment(w, (0, 1))
