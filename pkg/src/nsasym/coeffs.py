"""Expansion coefficients: vorticity moments, space-time moments of I[u],
renormalized constants and logarithmic coefficients.

Conventions.  For a multi-index beta and l >= 0 the space-time moment of a
vector field f is

    int_0^inf int (-s)^l (-y)^beta f(s, y) dy ds,

a vector over the component index j.  Self-similar approximants I_p obey
I_p(s, y) = s^{-(n+p)/2} I_p(1, y / sqrt s), so every time dependence of
their moments is an explicit power law:

    int (-s)^l (-y)^beta I_p(s, y) dy = s^{(2l+|beta|-p)/2} nu(l, beta, p),
    nu(l, beta, p) = int (-1)^l (-y)^beta I_p(1, y) dy.

Subtracted approximants are therefore integrated in closed form and only the
measured part of an integrand goes through quadrature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .field_core import Field, MultiIndex, moment, multi_indices


class CoefficientError(ValueError):
    pass


@dataclass
class Coefficient:
    value: np.ndarray
    error: float = 0.0
    tail_model: str = ""

    def as_dict(self) -> dict:
        return {
            "value": [float(v) for v in np.atleast_1d(self.value)],
            "error": float(self.error),
            "tail_model": self.tail_model,
        }


def key_str(l: int, beta: Sequence[int], kind: str) -> str:
    return f"{kind}|l={l}|beta={','.join(str(b) for b in beta)}"


@dataclass
class MomentTable:
    n: int
    initial: dict = field(default_factory=dict)       # alpha -> (n, n) tensor moments
    spacetime: dict = field(default_factory=dict)     # (l, beta, kind) -> Coefficient
    profile_moments: dict = field(default_factory=dict)  # (p, l, beta) -> (n,) array
    polynomials: dict = field(default_factory=dict)   # (l, beta) -> [(power, vector)]
    provenance: dict = field(default_factory=dict)

    def initial_moment(self, alpha) -> np.ndarray:
        alpha = MultiIndex(alpha)
        if alpha not in self.initial:
            raise CoefficientError(f"missing initial moment {tuple(alpha)}")
        return self.initial[alpha]

    def get(self, l: int, beta, kind: str) -> np.ndarray:
        key = (l, MultiIndex(beta), kind)
        if key not in self.spacetime:
            raise CoefficientError(f"missing coefficient {key_str(l, beta, kind)}")
        return self.spacetime[key].value

    def put(self, l: int, beta, kind: str, coef: Coefficient) -> None:
        self.spacetime[(l, MultiIndex(beta), kind)] = coef

    def profile_moment(self, p: int, l: int, beta) -> np.ndarray:
        key = (p, l, MultiIndex(beta))
        if key not in self.profile_moments:
            raise CoefficientError(f"missing profile moment p={p} l={l} beta={tuple(beta)}")
        return self.profile_moments[key]

    def scaled(self, factor: float, kinds=("raw_I",)) -> "MomentTable":
        """Copy with the selected coefficient kinds multiplied by factor."""
        out = MomentTable(self.n, dict(self.initial), dict(self.spacetime),
                          dict(self.profile_moments), dict(self.polynomials), dict(self.provenance))
        for key, c in self.spacetime.items():
            if key[2] in kinds:
                out.spacetime[key] = Coefficient(c.value * factor, c.error, c.tail_model)
        return out

    def to_json(self) -> dict:
        entries = {}
        for (l, beta, kind), c in sorted(self.spacetime.items(), key=_sort_key):
            entries[key_str(l, beta, kind)] = dict(c.as_dict(), run_id=self.provenance.get("run_id", ""))
        init = {",".join(map(str, a)): np.asarray(v).tolist() for a, v in sorted(self.initial.items())}
        prof = {
            f"p={p}|l={l}|beta={','.join(map(str, b))}": [float(x) for x in v]
            for (p, l, b), v in sorted(self.profile_moments.items())
        }
        return {"n": self.n, "initial_moments": init, "coefficients": entries,
                "profile_moments": prof, "provenance": self.provenance}

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def read(cls, path) -> "MomentTable":
        with open(path) as fh:
            raw = json.load(fh)
        n = raw["n"]
        table = cls(n, provenance=raw.get("provenance", {}))
        for a, v in raw["initial_moments"].items():
            table.initial[MultiIndex(int(x) for x in a.split(","))] = np.array(v)
        for k, v in raw["coefficients"].items():
            kind, l, beta = _parse_key(k)
            table.put(l, beta, kind, Coefficient(np.array(v["value"]), v["error"], v["tail_model"]))
        for k, v in raw.get("profile_moments", {}).items():
            parts = dict(x.split("=") for x in k.split("|"))
            beta = MultiIndex(int(x) for x in parts["beta"].split(","))
            table.profile_moments[(int(parts["p"]), int(parts["l"]), beta)] = np.array(v)
        return table


def _sort_key(item):
    (l, beta, kind), _ = item
    return (2 * l + beta.order, l, tuple(beta), kind)


def _parse_key(k: str):
    kind, l, beta = k.split("|")
    return kind, int(l.split("=")[1]), MultiIndex(int(x) for x in beta.split("=")[1].split(","))


def initial_moments(omega0: Field, max_order: int) -> dict:
    """alpha -> int (-y)^alpha omega0^{ij} dy as an (n, n) tensor.

    A planar scalar vorticity w is read as the tensor w^{12} = w, w^{21} = -w.
    """
    n = omega0.grid.n
    out = {}
    for k in range(max_order + 1):
        for alpha in multi_indices(n, k):
            m = (-1) ** k * np.asarray(moment(omega0, alpha))
            if omega0.rank == "scalar":
                if n != 2:
                    raise ValueError("scalar vorticity only makes sense in the plane")
                out[alpha] = np.array([[0.0, m], [-m, 0.0]])
            elif omega0.rank == "tensor":
                out[alpha] = m
            else:
                raise ValueError("vorticity must be scalar (n=2) or tensor")
    return out


# --- time integrals --------------------------------------------------------

def _log_poly(l: int, m: int) -> tuple[float, np.ndarray]:
    """int_0^t s^l (1+s)^{-m} ds = a log(1+t) + sum_i c_i (1+t)^{-i}.

    Recursion s^l = (1+s) s^{l-1} - s^{l-1} lowers l until only powers of
    (1+s) remain.
    """
    if l == 0:
        c = np.zeros(max(m, 1))
        if m == 1:
            return 1.0, c
        c[0] = 1.0 / (m - 1)
        c[m - 1] = -1.0 / (m - 1)
        return 0.0, c
    a1, c1 = _log_poly(l - 1, m - 1)
    a2, c2 = _log_poly(l - 1, m)
    size = max(len(c1), len(c2))
    c = np.zeros(size)
    c[: len(c1)] += c1
    c[: len(c2)] -= c2
    return a1 - a2, c


def log_time_polynomial(l: int) -> np.ndarray:
    """Coefficients c_0..c_l with int_0^t s^l (1+s)^{-l-1} ds = log(1+t) + sum c_i (1+t)^{-i}."""
    if l < 0:
        raise ValueError("l must be nonnegative")
    a, c = _log_poly(l, l + 1)
    assert a == 1.0
    out = np.zeros(l + 1)
    out[: len(c)] = c[: l + 1]
    return out


def log_time_integral(l: int, t: float) -> float:
    if not t > 0:
        raise ValueError("t must be positive")
    c = log_time_polynomial(l)
    x = 1.0 / (1.0 + t)
    return math.log1p(t) + float(np.polynomial.polynomial.polyval(x, c))


def log_time_constant(l: int) -> float:
    """lim_{t->inf} (int_0^t s^l (1+s)^{-l-1} ds - log t)."""
    return float(log_time_polynomial(l)[0])


def falling(a: float, j: int) -> float:
    out = 1.0
    for i in range(j):
        out *= a - i
    return out


# --- profile moments ---------------------------------------------------------

def profile_moment(p: int, l: int, beta, I_p: Field) -> np.ndarray:
    """nu(l, beta, p) = int (-1)^l (-y)^beta I_p(1, y) dy; I_p must be sampled at t = 1."""
    beta = MultiIndex(beta)
    if abs(I_p.t - 1.0) > 1e-12:
        raise ValueError("profile moments are taken at t = 1")
    return (-1) ** (l + beta.order) * np.asarray(moment(I_p, beta))


def log_coefficient(p: int, l: int, beta, I_p: Field) -> np.ndarray:
    beta = MultiIndex(beta)
    n = I_p.grid.n
    if 2 * l + beta.order != p - 2:
        raise CoefficientError(f"log coefficients need 2l+|beta| = p-2 (p={p}, l={l}, beta={tuple(beta)})")
    if not n + 3 <= p <= 2 * n + 2:
        raise CoefficientError(f"p={p} outside [n+3, 2n+2]")
    return profile_moment(p, l, beta, I_p)


# --- space-time moments ---------------------------------------------------

@dataclass(frozen=True)
class Subtrahend:
    """I_p(s + shift) removed from the integrand."""

    p: int
    shift: int = 0


def _subtrahend_value(sub: Subtrahend, l: int, beta: MultiIndex, s, nu):
    a = (beta.order - sub.p) / 2.0
    s = np.asarray(s, float)
    base = s + sub.shift
    safe = np.where(base > 0, base, 1.0)
    vals = np.where(base > 0, s**l * safe**a, 0.0)
    return np.multiply.outer(vals, nu)


def _subtrahend_integral(sub: Subtrahend, l: int, beta: MultiIndex, T: float, nu) -> np.ndarray:
    """int_0^T s^l (s+shift)^{(|beta|-p)/2} ds * nu (nu already carries (-1)^l)."""
    a = (beta.order - sub.p) / 2.0
    if sub.shift == 0:
        e = l + a
        if e <= -1:
            raise CoefficientError(f"subtrahend I_{sub.p}(s) diverges at s=0 (exponent {e})")
        return nu * T ** (e + 1) / (e + 1)
    if a == -l - 1:
        return nu * log_time_integral(l, T)
    val, _ = integrate.quad(lambda s: s**l * (s + sub.shift) ** a, 0.0, T, limit=200)
    return nu * val


def tail_exponent(n: int, k: int, subtrahends: Sequence[Subtrahend]) -> float:
    """Large-s decay exponent of the (renormalized) integrand from scaling counts."""
    ps = [s.p for s in subtrahends]
    p_next = max([n + 3] + [p + 1 for p in ps])
    gamma = (p_next - k) / 2.0
    if any(s.shift for s in subtrahends):
        # I_p(1+s) - I_p(s) is one power of s smaller than I_p itself
        shifted = [s.p for s in subtrahends if s.shift]
        gamma = min(gamma, min((p - k) / 2.0 + 1.0 for p in shifted))
    return gamma


def _trapezoid(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.trapezoid(y, x, axis=0) if hasattr(np, "trapezoid") else np.trapz(y, x, axis=0)


@dataclass
class SpacetimeResult:
    value: np.ndarray
    error: float
    tail_model: str
    quadrature: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    integrand_t: np.ndarray
    integrand: np.ndarray


def spacetime_moment(
    history_t: np.ndarray,
    history_moment: np.ndarray,
    l: int,
    beta,
    n: int = 2,
    subtrahends: Sequence[Subtrahend] = (),
    nus: dict | None = None,
    head: bool = True,
    tail_window: float = 0.5,
) -> SpacetimeResult:
    """int_0^inf int (-s)^l (-y)^beta (I[u] - subtrahends) dy ds.

    history_moment[i] = int (-y)^beta I[u](history_t[i], y) dy (shape (T, n)).
    nus maps subtrahend p to nu(l, beta, p).
    """
    beta = MultiIndex(beta)
    k = 2 * l + beta.order
    gamma = tail_exponent(n, k, subtrahends)
    if gamma <= 1.0:
        raise CoefficientError(
            f"(l={l}, beta={tuple(beta)}) is not integrable at s -> inf: integrand ~ s^-{gamma:g}"
        )
    nus = nus or {}
    s = np.asarray(history_t, float)
    g_u = ((-s) ** l)[:, None] * np.asarray(history_moment, float)
    sub_vals = np.zeros_like(g_u)
    sub_int = np.zeros(g_u.shape[1])
    for sub in subtrahends:
        nu = np.asarray(nus[sub.p], float)
        T0, T1 = s[0], s[-1]
        sub_int = sub_int + _subtrahend_integral(sub, l, beta, T1, nu)
        if T0 > 0:
            sub_int = sub_int - _subtrahend_integral(sub, l, beta, T0, nu)
        sub_vals = sub_vals + _subtrahend_value(sub, l, beta, s, nu)
    quad = _trapezoid(g_u, s) - sub_int
    coarse = _trapezoid(g_u[::2], s[::2]) if len(s) % 2 == 1 else _trapezoid(g_u[:-1:2], s[:-1:2]) + _trapezoid(g_u[-2:], s[-2:])
    trap_err = float(np.max(np.abs(_trapezoid(g_u, s) - coarse)) / 3.0)

    g = g_u - sub_vals
    head_val = np.zeros(g.shape[1])
    if head and s[0] > 0:
        # integrand ~ c s^{-1/2} near the origin
        c = g[0] * math.sqrt(s[0])
        head_val = 2.0 * c * math.sqrt(s[0])
    T = s[-1]
    sel = s >= T * tail_window
    if np.count_nonzero(sel) < 3:
        raise CoefficientError("too few samples in the tail window")
    basis = s[sel] ** (-gamma)
    c_tail = basis @ g[sel] / (basis @ basis)
    tail_val = c_tail * T ** (1.0 - gamma) / (gamma - 1.0)
    sel2 = s >= T * (1 + tail_window) / 2
    basis2 = s[sel2] ** (-gamma)
    c2 = basis2 @ g[sel2] / (basis2 @ basis2)
    tail_err = float(np.max(np.abs(c2 - c_tail)) * T ** (1.0 - gamma) / (gamma - 1.0))
    value = quad + head_val + tail_val
    return SpacetimeResult(
        value=value,
        error=trap_err + tail_err + float(np.max(np.abs(head_val))) * 0.5,
        tail_model=f"c*s^-{gamma:g}",
        quadrature=quad,
        head=head_val,
        tail=tail_val,
        integrand_t=s,
        integrand=g,
    )


def renormalization_subtrahends(n: int, k: int) -> list[Subtrahend]:
    """I_p(s) for n+3 <= p <= k+1 and I_{k+2}(1+s) when k+2 >= n+3."""
    subs = [Subtrahend(p, 0) for p in range(n + 3, k + 2)]
    if k + 2 >= n + 3:
        subs.append(Subtrahend(k + 2, 1))
    return subs


def renormalized_constant(history_t, history_moment, l: int, beta, n: int, table: MomentTable,
                     head: bool = True) -> tuple[Coefficient, list, SpacetimeResult]:
    """Constant term of the renormalized integral over (0, t), plus the
    t-dependent polynomial terms [(power of t^{-1/2}, vector)].

    int_0^t (...) = A - sum_p int_t^inf I_p-moment + sum_j (1/j!) int_t^inf d_s^j I_{k+2}-moment + o(1),
    with the tail integrals in closed form via scaling.
    """
    beta = MultiIndex(beta)
    k = 2 * l + beta.order
    if not 1 <= k <= 2 * n:
        raise CoefficientError(f"2l+|beta| = {k} outside [1, 2n]")
    subs = renormalization_subtrahends(n, k)
    nus = {s.p: table.profile_moment(s.p, l, beta) for s in subs}
    res = spacetime_moment(history_t, history_moment, l, beta, n, subs, nus, head=head)
    poly = []
    for p in range(max(k + 3, n + 3), 2 * n + 3):
        nu = table.profile_moment(p, l, beta)
        poly.append((p - k - 2, -2.0 / (p - k - 2) * nu))
    if k + 2 >= n + 3:
        nu = table.profile_moment(k + 2, l, beta)
        for j in range(1, int(math.floor(n - k / 2.0)) + 1):
            poly.append((2 * j, falling(-l - 1, j) / (j * math.factorial(j)) * nu))
    coef = Coefficient(res.value, res.error, res.tail_model)
    return coef, poly, res


def tail_integral_closed_form(p: int, l: int, beta, t: float, nu) -> np.ndarray:
    """int_t^inf int (-s)^l (-y)^beta I_p(s, y) dy ds for p > 2l+|beta|+2."""
    beta = MultiIndex(beta)
    k = 2 * l + beta.order
    if p <= k + 2:
        raise CoefficientError("tail integral diverges unless p > 2l+|beta|+2")
    return 2.0 * t ** (-(p - k - 2) / 2.0) / (p - k - 2) * np.asarray(nu)


def raw_orders(n: int) -> list[tuple[int, MultiIndex]]:
    """(l, beta) with 1 <= 2l+|beta| <= n: plain convergent space-time moments."""
    out = []
    for k in range(1, n + 1):
        out += orders_of(n, k)
    return out


def orders_of(n: int, k: int) -> list[tuple[int, MultiIndex]]:
    """All (l, beta) with 2l + |beta| = k."""
    out = []
    for l in range(k // 2 + 1):
        for beta in multi_indices(n, k - 2 * l):
            out.append((l, beta))
    return out
