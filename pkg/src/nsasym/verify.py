"""Decay-rate regressions, rescaled limits, mild-solution cross checks and
profile invariants, all computed from a trajectory plus a ProfileBuilder."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coeffs import MomentTable, orders_of
from .expansion import ProfileBuilder
from .field_core import Field, Grid, MultiIndex, curl2d, divergence, lq_norm, moment, multi_indices
from .solver import Trajectory, biot_savart, nonlinearity_I


class VerificationError(ValueError):
    pass


@dataclass
class DecayFit:
    label: str
    q: float
    window: tuple
    a: float
    b: int
    c: float
    rms: float
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)
    best_b: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["q"] = "inf" if math.isinf(self.q) else self.q
        return d


def fit_decay(times, values, window=(10.0, 100.0), b: int | None = 0, label: str = "", q: float = 2.0) -> DecayFit:
    """Least squares for log v = log c - a log t + b log log t.

    With b=None every b in {0, 1, 2} is tried and the smallest residual wins.
    """
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    sel = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
    if np.count_nonzero(sel) < 6:
        raise VerificationError(f"fit window {window} holds {np.count_nonzero(sel)} snapshots, need >= 6")
    if np.any(v[sel] <= 0):
        raise VerificationError("decay fit needs positive values")
    lt, lv = np.log(t[sel]), np.log(v[sel])
    fits = {}
    for bb in (0, 1, 2):
        if bb and np.any(t[sel] <= 1.0):
            continue
        y = lv - bb * np.log(np.log(t[sel])) if bb else lv
        A = np.stack([np.ones_like(lt), -lt], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        rms = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
        fits[bb] = (float(coef[1]), float(math.exp(coef[0])), rms)
    best = min(fits, key=lambda k: fits[k][2])
    use = best if b is None else b
    a, c, rms = fits[use]
    return DecayFit(label, q, tuple(window), a, use, c, rms, list(map(float, t[sel])), list(map(float, v[sel])), best)


def _norm(values: np.ndarray, grid: Grid, q: float, rank: str = "vector") -> float:
    return lq_norm(Field(grid, rank, values), q)


def remainder_norms(traj: Trajectory, builder: ProfileBuilder, order: int, with_logs: bool, q: float,
                    times) -> list[float]:
    out = []
    for t in times:
        snap = traj.snapshot_at(t)
        rem = snap.u.values
        if order > 0:
            rem = rem - builder.expansion_sum(t, traj.grid, order, with_logs).values
        out.append(_norm(rem, traj.grid, q))
    return out


def window_times(traj: Trajectory, window=(10.0, 100.0)) -> list[float]:
    return [float(t) for t in traj.times if window[0] * (1 - 1e-12) <= t <= window[1] * (1 + 1e-12)]


def remainder_decay(traj: Trajectory, builder: ProfileBuilder, order: int, with_logs: bool = True,
                    q: float = 2.0, window=(10.0, 100.0), b: int | None = 0) -> DecayFit:
    """Decay fit of ||u(t) - sum_{m<=order} U_m(t) [- K_m(t) log t]||_q."""
    times = window_times(traj, window)
    vals = remainder_norms(traj, builder, order, with_logs, q, times)
    return fit_decay(times, vals, window, b, label=f"u-U[1..{order}]", q=q)


def vorticity_remainder(traj: Trajectory, builder: ProfileBuilder, orders, t: float) -> np.ndarray:
    snap = traj.snapshot_at(t)
    w = snap.omega.values
    for m in orders:
        w = w - builder.omega(m, t, traj.grid).values[0, 1]
    return w


def vorticity_remainder_decay(traj: Trajectory, builder: ProfileBuilder, q: float = 2.0, orders=(2, 3),
                              window=(10.0, 100.0), b: int | None = 0) -> DecayFit:
    if traj.grid.n != 2:
        raise VerificationError("vorticity remainders are implemented for planar runs")
    times = window_times(traj, window)
    vals = [_norm(vorticity_remainder(traj, builder, orders, t), traj.grid, q, "scalar") for t in times]
    label = "w-" + "-".join(f"O{m}" for m in orders) if orders else "w"
    return fit_decay(times, vals, window, b, label=label, q=q)


def perturbed_table(table: MomentTable, m: int, factor: float) -> MomentTable:
    """Copy with every coefficient feeding the low-order U_m multiplied by factor."""
    out = copy.deepcopy(table)
    for alpha in multi_indices(table.n, m + 1):
        out.initial[alpha] = out.initial[alpha] * factor
    for l, beta in orders_of(table.n, m):
        key = (l, MultiIndex(beta), "raw_I")
        c = out.spacetime[key]
        c.value = c.value * factor
    return out


@dataclass
class RescaledLimit:
    m: int
    times: list
    distances: list
    reference_norm: float
    control: list = field(default_factory=list)

    @property
    def relative(self) -> list:
        return [d / self.reference_norm if self.reference_norm else 0.0 for d in self.distances]

    @property
    def control_relative(self) -> list:
        return [d / self.reference_norm if self.reference_norm else 0.0 for d in self.control]

    def monotone_tail(self, count: int = 4, slack: float = 0.1) -> bool:
        d = self.distances[-count:]
        return all(d[i + 1] <= d[i] * (1 + slack) for i in range(len(d) - 1))

    def as_dict(self) -> dict:
        return {"m": self.m, "times": self.times, "distances": self.distances, "relative": self.relative,
                "reference_norm": self.reference_norm, "control_relative": self.control_relative,
                "monotone_tail": self.monotone_tail()}


def _rescaled_distance(traj, builder, m, t) -> float:
    """L^2 distance of xi -> t^{(n+m)/2}(u - sum_{k<m} U_k)(t, sqrt(t) xi) from U_m(1, xi).

    The dilation is applied analytically: in L^2 it multiplies norms by
    t^{-n/4}, and U_m(1, xi) rescaled the same way is U_m(t), so no
    interpolation is needed.
    """
    n = traj.grid.n
    rem = traj.snapshot_at(t).u.values
    for k in range(1, m + 1):
        rem = rem - builder.u(k, t, traj.grid).values
    return t ** ((n + m) / 2.0 - n / 4.0) * _norm(rem, traj.grid, 2.0)


def rescaled_limit(traj: Trajectory, builder: ProfileBuilder, m: int = 1, times=None,
                   control_factor: float | None = 1.1) -> RescaledLimit:
    n = traj.grid.n
    if not 1 <= m <= n:
        raise VerificationError("rescaled limits are checked for m <= n")
    times = window_times(traj) if times is None else list(times)
    ref = builder.u(m, 1.0, traj.grid)
    ref_norm = lq_norm(ref, 2.0)
    dist = [_rescaled_distance(traj, builder, m, t) for t in times]
    control = []
    if control_factor is not None:
        alt = ProfileBuilder(perturbed_table(builder.table, m, control_factor), builder.heat_mode,
                             builder.profile_grid)
        control = [_rescaled_distance(traj, alt, m, t) for t in times]
    return RescaledLimit(m, [float(t) for t in times], dist, ref_norm, control)


# --- mild solutions ---------------------------------------------------------

def _product_weights(ksq: np.ndarray, t: float, a: float, b: float):
    """Weights (wa, wb) with int_a^b e^{-(t-s)k^2} f(s) ds = wa f(a) + wb f(b) for linear f."""
    tau = b - a
    z = tau * ksq
    eb = np.exp(-(t - b) * ksq)
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    # phi1 = (1 - e^{-z})/z, phi2 = (z - 1 + e^{-z})/z^2
    phi1 = np.where(small, 1 - z / 2 + z * z / 6, -np.expm1(-zs) / zs)
    phi2 = np.where(small, 0.5 - z / 6 + z * z / 24, (zs + np.expm1(-zs)) / (zs * zs))
    # int_0^tau e^{-(tau-r)k^2} (r/tau) dr = tau phi2
    w_lin = tau * phi2
    w_const = tau * phi1
    return eb * (w_const - w_lin), eb * w_lin


def mild_solution_rhs(traj: Trajectory, t: float, form: str = "vorticity") -> np.ndarray:
    """Right-hand side of the velocity mild formulation at time t from snapshots.

    form='vorticity': e^{tLap} u0 - int e^{(t-s)Lap} P I(s) ds
    form='divergence': e^{tLap} u0 - int e^{(t-s)Lap} P div(u (x) u)(s) ds
    The integrand is linear between consecutive snapshots and the heat
    factor is integrated exactly.
    """
    grid = traj.grid
    times = traj.times
    if not times[0] <= t <= times[-1] or t <= 0:
        raise VerificationError(f"t={t} outside the snapshot range [{times[0]}, {times[-1]}]")
    idx = [i for i, s in enumerate(times) if s <= t * (1 + 1e-12)]
    if abs(times[idx[-1]] - t) > 1e-9 * max(1, t):
        raise VerificationError("t must coincide with a snapshot")
    if len(idx) < 3:
        raise VerificationError("insufficient snapshots for the Duhamel quadrature")
    n = grid.n
    axes = tuple(range(-n, 0))
    xi = grid.wavenumbers
    ksq = np.broadcast_to(grid.ksq, grid.shape)
    inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)

    def source(snap) -> np.ndarray:
        if form == "vorticity":
            return np.fft.fftn(snap.I.values, axes=axes)
        if form == "divergence":
            u = snap.u.values
            out = np.zeros((n,) + grid.shape, dtype=complex)
            for k in range(n):
                for h in range(n):
                    out[k] += 1j * xi[h] * np.fft.fftn(u[h] * u[k])
            return out
        raise ValueError(f"unknown form {form!r}")

    def project(f: np.ndarray) -> np.ndarray:
        out = f.copy()
        for j in range(n):
            for k in range(n):
                out[j] -= xi[j] * xi[k] * inv * f[k]
        return out

    snaps = [traj.snapshots[i] for i in idx]
    u0 = np.fft.fftn(snaps[0].u.values, axes=axes)
    total = np.exp(-t * ksq) * u0
    duh = np.zeros_like(total)
    prev = source(snaps[0])
    for sa, sb in zip(snaps[:-1], snaps[1:]):
        cur = source(sb)
        wa, wb = _product_weights(ksq, t, sa.t, sb.t)
        duh += wa * prev + wb * cur
        prev = cur
    total -= project(duh)
    return np.fft.ifftn(total, axes=axes).real


def mild_solution_crosscheck(traj: Trajectory, t: float) -> tuple[float, float]:
    rhs1 = mild_solution_rhs(traj, t, "vorticity")
    rhs2 = mild_solution_rhs(traj, t, "divergence")
    u = traj.snapshot_at(t).u.values
    norm = float(np.sqrt(np.sum(u**2)))
    r1 = float(np.sqrt(np.sum((u - rhs1) ** 2))) / norm
    r2 = float(np.sqrt(np.sum((u - rhs2) ** 2))) / norm
    return r1, r2


def multiplier_identity_error(grid: Grid, width: float = 1.0) -> float:
    """max_j |(sum_k R^j R^k d_k + d_j) g| / max |d_j g| for a Gaussian g."""
    n = grid.n
    g = np.exp(-grid.radius**2 / width)
    gh = np.fft.fftn(g)
    xi = grid.wavenumbers
    ksq = np.broadcast_to(grid.ksq, grid.shape)
    inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1.0), 0.0)
    worst = 0.0
    for j in range(n):
        acc = 1j * xi[j] * gh
        for k in range(n):
            acc = acc + (-(xi[j] * xi[k]) * inv) * (1j * xi[k]) * gh
        ref = np.abs(np.fft.ifftn(1j * xi[j] * gh).real).max()
        worst = max(worst, float(np.abs(np.fft.ifftn(acc).real).max() / ref))
    return worst


# --- profile invariants -------------------------------------------------------

def scaling_error(evaluate, exponent: int, grid: Grid, times=(1.0, 4.0, 16.0)) -> float:
    """max_t |t^{exponent/2} P(t, sqrt(t) x) - P(1, x)| / max|P(1)|, on the half box.

    P(t, sqrt(t) x) is evaluated on the dilated grid so nodes correspond exactly.
    """
    ref = evaluate(1.0, grid).values
    scale = float(np.max(np.abs(ref))) or 1.0
    mask = grid.interior
    worst = 0.0
    for t in times:
        lam = math.sqrt(t)
        vals = evaluate(t, grid.dilate(lam)).values * lam**exponent
        worst = max(worst, float(np.max(np.abs(vals - ref)[..., mask])) / scale)
    return worst


def profile_catalog(builder: ProfileBuilder) -> list[tuple[str, int, object, float]]:
    """(name, exponent, evaluator, tolerance) for every profile of the expansion."""
    n = builder.n
    out = []
    for m in range(2, n + 2):
        out.append((f"Omega{m}", n + m, lambda t, g, m=m: builder.omega(m, t, g), 1e-6))
    for m in range(1, n + 1):
        out.append((f"U{m}", n + m, lambda t, g, m=m: builder.u_low(m, t, g), 1e-6))
    for p in range(n + 3, 2 * n + 3):
        out.append((f"I{p}", n + p, lambda t, g, p=p: builder.i_p(p, t, g), 1e-6))
    for m in range(n + 1, 2 * n + 1):
        out.append((f"K{m}", n + m, lambda t, g, m=m: builder.k_profile(m, t, g), 1e-6))
        out.append((f"J{m}", n + m, lambda t, g, m=m: builder.j_profile(m, t, g), 1e-4))
        out.append((f"U{m}", n + m, lambda t, g, m=m: builder.u_high(m, t, g), 1e-4))
    return out


def scaling_report(builder: ProfileBuilder, grid: Grid, times=(1.0, 4.0, 16.0), names=None) -> list[dict]:
    rows = []
    for name, exponent, ev, tol in profile_catalog(builder):
        if names is not None and name not in names:
            continue
        err = scaling_error(ev, exponent, grid, times)
        rows.append({"profile": name, "exponent": exponent, "error": err, "tol": tol, "pass": err <= tol})
    return rows


def structural_report(builder: ProfileBuilder, grid: Grid, t: float = 1.0) -> list[dict]:
    """Divergence, Biot-Savart, vanishing-moment and zero-mean identities of the profiles."""
    n = builder.n
    rows = []

    def row(name, err, tol):
        rows.append({"check": name, "error": float(err), "tol": tol, "pass": bool(err <= tol)})

    mask = grid.interior
    for m in range(1, 2 * n + 1):
        for kind, f in (("U", builder.u(m, t, grid)),) + ((("K", builder.k_profile(m, t, grid)),) if m > n else ()):
            scale = float(np.max(np.abs(f.values))) or 1.0
            # relative to the size of the gradient, the natural scale for a divergence
            gscale = scale / grid.h
            row(f"div {kind}{m}", float(np.max(np.abs(divergence(f).values))) / max(gscale, scale), 1e-8)
    if n == 2:
        for m in range(1, n + 1):
            u = builder.u_low(m, t, grid)
            om = builder.omega(m + 1, t, grid).values[0, 1]
            c = curl2d(u).values
            row(f"curl U{m} = Omega{m + 1}", float(np.max(np.abs(c - om)[mask])) / float(np.max(np.abs(om))), 1e-6)
            back = biot_savart(Field(grid, "scalar", om - om.mean()), tol=1e-6).values
            row(f"BiotSavart Omega{m + 1} = U{m}",
                float(np.max(np.abs(back - u.values)[..., mask])) / float(np.max(np.abs(u.values))), 1e-6)
    for m in range(2, n + 2):
        om = builder.omega(m, t, grid)
        scale = max(float(np.max(np.abs(om.values))), 1e-300)
        worst = 0.0
        for k in range(2):
            for alpha in multi_indices(n, k):
                worst = max(worst, float(np.max(np.abs(moment(om, alpha)))))
        row(f"moments Omega{m} |a|<=1", worst / scale, 1e-8)
    for p in range(n + 3, 2 * n + 3):
        ip = builder.i_p(p, 1.0, grid)
        scale = max(float(np.max(np.abs(ip.values))), 1e-300)
        row(f"int I{p}(1)", float(np.max(np.abs(moment(ip, (0,) * n)))) / scale, 1e-8)
    return rows


def injected_error_check(traj: Trajectory, builder: ProfileBuilder, order: int, factor: float = 1.1,
                         window=(10.0, 100.0)) -> dict:
    """Perturb the order-`order` coefficients and measure how much the remainder grows.

    degradation = mean log(perturbed / unperturbed remainder) over the window,
    compared with the baseline fit residual.
    """
    times = window_times(traj, window)
    base = remainder_norms(traj, builder, order, False, 2.0, times)
    fit = fit_decay(times, base, window)
    alt = ProfileBuilder(perturbed_table(builder.table, order, factor), builder.heat_mode, builder.profile_grid)
    pert = remainder_norms(traj, alt, order, False, 2.0, times)
    deg = float(np.mean(np.log(np.asarray(pert) / np.asarray(base))))
    return {"order": order, "factor": factor, "degradation": deg, "baseline_rms": fit.rms,
            "detectable": bool(deg >= 2 * fit.rms)}
