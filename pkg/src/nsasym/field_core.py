"""Sampled fields on a truncated periodic box standing in for R^n.

Quadrature is the rectangle rule h^n * sum over nodes.  For smooth data that
decays like a Gaussian this is spectrally accurate; the error is dominated by
truncation, roughly exp(-L^2 / (4 t)) for a heat profile of age t.  Fields with
algebraic tails (velocities, nonlocal kernels) carry a periodization error of
order (width / 2L)^decay instead.
"""
from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

RANKS = ("scalar", "vector", "tensor")
MAGIC = b"NSAF1\x00\x00\x00"


class MultiIndex(tuple):
    """Multi-index alpha in Z_+^n; hashable, so it doubles as a dict key."""

    def __new__(cls, entries: Iterable[int]):
        entries = tuple(int(a) for a in entries)
        if any(a < 0 for a in entries):
            raise ValueError(f"multi-index entries must be nonnegative: {entries}")
        return super().__new__(cls, entries)

    @property
    def order(self) -> int:
        return sum(self)

    def factorial(self) -> int:
        out = 1
        for a in self:
            out *= math.factorial(a)
        if out > 2**53:
            raise OverflowError(f"{self}! is not exactly representable as a float")
        return out

    def power(self, x: Sequence[np.ndarray] | np.ndarray) -> np.ndarray | float:
        """x^alpha for a point or for per-axis coordinate arrays."""
        out = 1.0
        for xi, a in zip(x, self):
            if a:
                out = out * xi**a
        return out

    def __add__(self, other):  # componentwise, not tuple concatenation
        return MultiIndex(a + b for a, b in zip(self, other))

    def __repr__(self) -> str:
        return f"MultiIndex{tuple(self)}"


def multi_indices(n: int, order: int) -> list[MultiIndex]:
    """All alpha with |alpha| == order, in lexicographically descending order."""
    if n == 1:
        return [MultiIndex((order,))]
    out = []
    for first in range(order, -1, -1):
        for rest in multi_indices(n - 1, order - first):
            out.append(MultiIndex((first, *rest)))
    return out


def unit(n: int, i: int) -> MultiIndex:
    return MultiIndex(1 if k == i else 0 for k in range(n))


@dataclass(frozen=True)
class Grid:
    n: int
    L: float
    N: int

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable per-axis coordinate arrays (sparse mesh)."""
        return tuple(np.meshgrid(*([self.axis] * self.n), indexing="ij", sparse=True))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.coords))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers matching np.fft.fftn ordering, sparse mesh."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        return tuple(np.meshgrid(*([k] * self.n), indexing="ij", sparse=True))

    @cached_property
    def ksq(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def interior(self) -> np.ndarray:
        """Mask of the half-box |x_i| < L/2."""
        mask = np.ones((self.N,) * self.n, dtype=bool)
        for x in self.coords:
            mask = mask & (np.abs(x) < self.L / 2)
        return mask

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def dilate(self, lam: float) -> "Grid":
        """Same node count on the box scaled by lam."""
        return Grid(self.n, self.L * lam, self.N)


def make_grid(n: int, L: float, N: int) -> Grid:
    if n not in (1, 2, 3):
        raise ValueError(f"unsupported dimension n={n}")
    if not L > 0:
        raise ValueError(f"half extent must be positive, got {L}")
    if N % 2 or N < 2:
        raise ValueError(f"points per dimension must be even, got {N}")
    return Grid(int(n), float(L), int(N))


def _component_shape(rank: str, n: int) -> tuple[int, ...]:
    return {"scalar": (), "vector": (n,), "tensor": (n, n)}[rank]


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    rank: str
    values: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.rank not in RANKS:
            raise ValueError(f"rank must be one of {RANKS}")
        expected = _component_shape(self.rank, self.grid.n) + self.grid.shape
        values = np.asarray(self.values, dtype=float)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} != {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if self.t < 0:
            raise ValueError("time stamp must be nonnegative")
        values = values.copy() if values is self.values and values.flags.writeable else values
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def components(self) -> tuple[int, ...]:
        return _component_shape(self.rank, self.grid.n)

    def magnitude(self) -> np.ndarray:
        if self.rank == "scalar":
            return np.abs(self.values)
        axes = tuple(range(len(self.components)))
        return np.sqrt(np.sum(self.values**2, axis=axes))

    def with_values(self, values: np.ndarray, t: float | None = None) -> "Field":
        return Field(self.grid, self.rank, values, self.t if t is None else t)

    def __add__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return self.with_values(-self.values)


def _check_compatible(a: Field, b: Field) -> None:
    if a.grid != b.grid or a.rank != b.rank:
        raise ValueError("fields live on different grids or have different ranks")


def scalar(grid: Grid, values, t: float = 0.0) -> Field:
    return Field(grid, "scalar", values, t)


def vector(grid: Grid, values, t: float = 0.0) -> Field:
    return Field(grid, "vector", values, t)


def zeros(grid: Grid, rank: str = "scalar", t: float = 0.0) -> Field:
    return Field(grid, rank, np.zeros(_component_shape(rank, grid.n) + grid.shape), t)


def lq_norm(f: Field, q: float, region: str = "full") -> float:
    """Rectangle-rule L^q norm; region='interior' restricts to the half box."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    mag = f.magnitude()
    if region == "interior":
        mag = mag[f.grid.interior]
    elif region != "full":
        raise ValueError(f"unknown region {region!r}")
    if math.isinf(q):
        return float(mag.max()) if mag.size else 0.0
    return float((f.grid.cell_volume * np.sum(mag**q)) ** (1.0 / q))


def moment(f: Field, alpha: Sequence[int]) -> float | np.ndarray:
    """Rectangle-rule value of int x^alpha f dx (componentwise for non-scalars)."""
    alpha = MultiIndex(alpha)
    n = f.grid.n
    if len(alpha) != n:
        raise ValueError("multi-index length must match the grid dimension")
    if alpha.order > 2 * n + 1:
        raise ValueError(f"moment order {alpha.order} exceeds 2n+1 = {2 * n + 1}")
    weight = np.broadcast_to(alpha.power(f.grid.coords), f.grid.shape)
    axes = tuple(range(-n, 0))
    out = f.grid.cell_volume * np.sum(f.values * weight, axis=axes)
    return float(out) if f.rank == "scalar" else out


def rescale_field(f: Field, m: int, reference: Grid) -> tuple[Field, bool]:
    """Return xi -> t^{(n+m)/2} f(t, sqrt(t) xi) sampled on the reference grid.

    Cubic-spline interpolation; points that fall outside f's box are set to
    zero and the returned flag is True.
    """
    t = f.t
    if not t > 0:
        raise ValueError("rescaling needs a positive time stamp")
    src = f.grid
    if reference.n != src.n:
        raise ValueError("reference grid dimension differs from the field's")
    st = math.sqrt(t)
    idx = [(st * x + src.L) / src.h for x in np.meshgrid(*([reference.axis] * src.n), indexing="ij")]
    upper = src.N - 1
    truncated = any(bool(np.any((i < 0) | (i > upper))) for i in idx)
    if truncated:
        warnings.warn("rescaled sample points leave the source box; filled with zero", stacklevel=2)
    coords = np.stack(idx)
    factor = t ** ((src.n + m) / 2.0)
    flat = f.values.reshape((-1,) + src.shape)
    out = np.stack([
        ndimage.map_coordinates(c, coords, order=3, mode="constant", cval=0.0) for c in flat
    ])
    out = out.reshape(f.components + reference.shape) * factor
    return Field(reference, f.rank, out, 1.0), truncated


def spectral_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Fourier derivative along every axis; values has spatial axes last."""
    axes = tuple(range(-grid.n, 0))
    vh = np.fft.fftn(values, axes=axes)
    return np.stack([np.fft.ifftn(1j * k * vh, axes=axes).real for k in grid.wavenumbers])


def divergence(f: Field) -> Field:
    if f.rank != "vector":
        raise ValueError("divergence needs a vector field")
    grid = f.grid
    axes = tuple(range(-grid.n, 0))
    acc = np.zeros(grid.shape, dtype=complex)
    for j, k in enumerate(grid.wavenumbers):
        acc += 1j * k * np.fft.fftn(f.values[j], axes=axes)
    return Field(grid, "scalar", np.fft.ifftn(acc, axes=axes).real, f.t)


def curl2d(f: Field) -> Field:
    """Scalar vorticity d1 f^2 - d2 f^1 of a planar vector field."""
    if f.rank != "vector" or f.grid.n != 2:
        raise ValueError("curl2d needs a 2-D vector field")
    k1, k2 = f.grid.wavenumbers
    f1 = np.fft.fft2(f.values[0])
    f2 = np.fft.fft2(f.values[1])
    return Field(f.grid, "scalar", np.fft.ifft2(1j * k1 * f2 - 1j * k2 * f1).real, f.t)


# --- persistence -----------------------------------------------------------

def save_field(f: Field, path: str | Path) -> None:
    header = MAGIC + struct.pack(
        "<qqdqd", f.grid.n, f.grid.N, f.grid.L, RANKS.index(f.rank), float(f.t)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(len(MAGIC) + 40)
    if len(raw) < len(MAGIC) + 40 or raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a field snapshot")
    n, N, L, rank, t = struct.unpack("<qqdqd", raw[len(MAGIC):])
    return {"n": n, "N": N, "L": L, "rank": RANKS[rank], "t": t}


def load_field(path: str | Path) -> Field:
    head = read_header(path)
    grid = make_grid(head["n"], head["L"], head["N"])
    shape = _component_shape(head["rank"], grid.n) + grid.shape
    data = np.fromfile(path, dtype="<f8", offset=len(MAGIC) + 40)
    if data.size != math.prod(shape):
        raise ValueError(f"{path}: expected {math.prod(shape)} values, found {data.size}")
    return Field(grid, head["rank"], data.reshape(shape).astype(float), head["t"])


def export_csv(f: Field, path: str | Path) -> None:
    grid = f.grid
    pts = np.meshgrid(*([grid.axis] * grid.n), indexing="ij")
    cols = [p.ravel() for p in pts]
    comp = f.values.reshape((-1,) + grid.shape)
    cols += [c.ravel() for c in comp]
    names = [f"x{i + 1}" for i in range(grid.n)]
    if f.rank == "scalar":
        names.append("f")
    elif f.rank == "vector":
        names += [f"f{j + 1}" for j in range(grid.n)]
    else:
        names += [f"f{i + 1}{j + 1}" for i in range(grid.n) for j in range(grid.n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows(zip(*(c.tolist() for c in cols)))
