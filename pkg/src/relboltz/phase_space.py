"""Phase-space grids, distribution fields, initial data and moments.

Momentum space is a node-centred uniform lattice symmetric about the
origin; physical space is either a single homogeneous cell of unit volume
or a periodic box of side ``2 * x_max`` sampled at cell centres.  All
integrals are midpoint sums times cell volumes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CorruptedField, InvalidArgument
from .kernels import TruncationParams

CHECKPOINT_MAGIC = b"RBEF1"
CSV_COLUMNS = ["t", "mass", "px", "py", "pz", "energy", "inertia", "H", "absLogMass", "D"]


@dataclass(frozen=True)
class MomentumLattice:
    p_max: float = 6.0
    n_axis: int = 16

    def __post_init__(self):
        if self.n_axis < 2:
            raise InvalidArgument("momentum lattice needs n_axis >= 2")
        if not self.p_max > 0:
            raise InvalidArgument("p_max must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.p_max / (self.n_axis - 1)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.p_max, self.p_max, self.n_axis)

    @property
    def size(self) -> int:
        return self.n_axis**3

    @property
    def shape(self) -> tuple:
        return (self.n_axis,) * 3

    def points(self) -> np.ndarray:
        """Lattice nodes as an ``(n_axis**3, 3)`` array in C order."""
        a = self.axis
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)

    def energies(self) -> np.ndarray:
        pts = self.points()
        return np.sqrt(1.0 + np.einsum("ij,ij->i", pts, pts))

    def describe(self) -> str:
        return f"p_max={self.p_max!r} n_axis={self.n_axis}"


@dataclass(frozen=True)
class SpatialGrid:
    mode: str = "homogeneous"
    x_max: float = 1.0
    n_axis: int = 1

    def __post_init__(self):
        if self.mode not in ("homogeneous", "periodic"):
            raise InvalidArgument(f"unknown spatial mode {self.mode!r}")
        if self.mode == "homogeneous" and self.n_axis != 1:
            object.__setattr__(self, "n_axis", 1)
        if self.mode == "periodic" and (self.n_axis < 2 or not self.x_max > 0):
            raise InvalidArgument("periodic box needs n_axis >= 2 and x_max > 0")

    @property
    def homogeneous(self) -> bool:
        return self.mode == "homogeneous"

    @property
    def spacing(self) -> float:
        return 2.0 * self.x_max / self.n_axis if not self.homogeneous else 1.0

    @property
    def cell_volume(self) -> float:
        return 1.0 if self.homogeneous else self.spacing**3

    @property
    def n_cells(self) -> int:
        return self.n_axis**3

    @property
    def axis(self) -> np.ndarray:
        if self.homogeneous:
            return np.zeros(1)
        return -self.x_max + (np.arange(self.n_axis) + 0.5) * self.spacing

    def points(self) -> np.ndarray:
        """Cell centres in the fundamental domain, ``(n_cells, 3)`` in C order."""
        a = self.axis
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)

    def wrap(self, x):
        """Map coordinates into the fundamental domain ``[-x_max, x_max)``."""
        if self.homogeneous:
            return np.zeros_like(x)
        L = 2.0 * self.x_max
        return (np.asarray(x) + self.x_max) % L - self.x_max

    def describe(self) -> str:
        return f"mode={self.mode} x_max={self.x_max!r} nx={self.n_axis}"


@dataclass(frozen=True)
class JuttnerMixture:
    """Closed-form sum of drifting Juttner bumps times an optional spatial Gaussian.

    ``f(x, p) = S(x) * sum_i a_i exp(-beta_i gamma_i (p0 - u_i . p))`` with
    ``gamma_i = 1/sqrt(1 - |u_i|^2)`` and
    ``S(x) = exp(-|x - c|^2 / (2 w^2))`` (``S = 1`` when ``width`` is None).
    Each bump is an exact collisional equilibrium since its exponent is
    affine in the collision invariants.
    """

    components: np.ndarray
    width: float | None = None
    center: tuple = (0.0, 0.0, 0.0)
    x_max: float | None = None

    def __post_init__(self):
        comp = np.ascontiguousarray(self.components, dtype=float).reshape(-1, 5)
        object.__setattr__(self, "components", comp)

    def momentum_part(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        p0 = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
        out = np.zeros(p.shape[:-1])
        for a, beta, ux, uy, uz in self.components:
            gam = 1.0 / math.sqrt(1.0 - (ux * ux + uy * uy + uz * uz))
            out = out + a * np.exp(-beta * gam * (p0 - (p[..., 0] * ux + p[..., 1] * uy + p[..., 2] * uz)))
        return out

    def spatial_part(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.width is None:
            return np.ones(x.shape[:-1])
        d = x - np.asarray(self.center)
        if self.x_max is not None:
            d = (d + self.x_max) % (2.0 * self.x_max) - self.x_max
        return np.exp(-np.einsum("...i,...i->...", d, d) / (2.0 * self.width**2))

    def __call__(self, x, p):
        return self.spatial_part(x) * self.momentum_part(p)


@dataclass(frozen=True)
class TransportedForm:
    """Closed form ``f(x - t p/p0, p)`` of another closed form (free streaming)."""

    base: Callable
    t: float
    grid: SpatialGrid

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        p0 = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
        y = self.grid.wrap(x - self.t * p / p0[..., None])
        return self.base(y, p)


@dataclass(frozen=True)
class TruncatedForm:
    """Closed form of ``min(f0 1_{|x|^2+|p|^2 <= n}, n) + exp(-(|x|^2 + p0)) / n``."""

    base: Callable
    n: int

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        x2 = np.einsum("...i,...i->...", x, x)
        p2 = np.einsum("...i,...i->...", p, p)
        p0 = np.sqrt(1.0 + p2)
        inside = (x2 + p2) <= self.n
        core = np.minimum(np.where(inside, self.base(x, p), 0.0), self.n)
        return core + np.exp(-(x2 + p0)) / self.n


@dataclass(frozen=True)
class DistributionField:
    """Non-negative phase-space density on ``SpatialGrid x MomentumLattice``.

    ``values`` has shape ``(n_cells, n_axis, n_axis, n_axis)``.  A field may
    also carry ``closed_form``, a vectorised callable ``f(x, p)``; when
    present, ``values`` holds its samples at the nodes and operators that
    can evaluate off-lattice use the callable instead of interpolation.
    """

    lattice: MomentumLattice
    grid: SpatialGrid
    values: np.ndarray
    closed_form: Callable | None = None
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (self.grid.n_cells,) + self.lattice.shape
        if vals.shape != expected:
            raise InvalidArgument(f"field values have shape {vals.shape}, expected {expected}")
        if not np.all(np.isfinite(vals)):
            raise CorruptedField("distribution field contains NaN or infinite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def representation(self) -> str:
        return "closed-form" if self.closed_form is not None else "gridded"

    @classmethod
    def from_callable(cls, func, lattice, grid, time=0.0) -> "DistributionField":
        vals = sample(func, lattice, grid)
        return cls(lattice, grid, vals, closed_form=func, time=time)

    def gridded(self) -> "DistributionField":
        return replace(self, closed_form=None)

    def with_values(self, values, time=None) -> "DistributionField":
        return DistributionField(self.lattice, self.grid, values, None,
                                 self.time if time is None else time)

    def same_grid(self, other) -> bool:
        return self.lattice == other.lattice and self.grid == other.grid


def sample(func, lattice: MomentumLattice, grid: SpatialGrid) -> np.ndarray:
    xs = grid.points()
    ps = lattice.points()
    vals = func(xs[:, None, :], ps[None, :, :])
    return np.asarray(vals, dtype=float).reshape((grid.n_cells,) + lattice.shape)


def _drift_vec(u):
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.array([0.0, 0.0, float(u)])
    if u.shape != (3,) or not float(u @ u) < 1.0:
        raise InvalidArgument(f"drift must be a 3-vector with |u| < 1, got {u}")
    return u


def make_initial(kind: str, lattice: MomentumLattice, grid: SpatialGrid | None = None,
                 representation: str = "gridded", **params) -> DistributionField:
    """Build one of the fixture families.

    kinds
        ``juttner(beta, amplitude=1, drift=0)``,
        ``double_juttner(beta, drift, amplitude=1)`` (bumps at ``+drift`` and ``-drift``),
        ``gaussian_x_juttner_p(beta, width, amplitude=1, center=0)``,
        ``indicator_box(p_low, p_high, value=1, x_low=None, x_high=None)``.

    ``drift`` is a velocity 3-vector (a scalar means along z).  The closed
    form is attached when ``representation='closed-form'``.
    """
    grid = grid or SpatialGrid()
    if representation not in ("gridded", "closed-form"):
        raise InvalidArgument(f"unknown representation {representation!r}")
    if kind in ("juttner", "double_juttner", "gaussian_x_juttner_p"):
        beta = float(params.pop("beta", 1.0))
        if beta <= 0:
            raise InvalidArgument("beta must be positive")
        amp = float(params.pop("amplitude", 1.0))
        if amp < 0:
            raise InvalidArgument("amplitude must be non-negative")
        width, center = None, (0.0, 0.0, 0.0)
        if kind == "juttner":
            u = _drift_vec(params.pop("drift", 0.0))
            comps = [[amp, beta, *u]]
        elif kind == "double_juttner":
            u = _drift_vec(params.pop("drift", 0.5))
            comps = [[amp, beta, *u], [amp, beta, *(-u)]]
        else:
            if grid.homogeneous:
                raise InvalidArgument("gaussian_x_juttner_p needs a periodic spatial grid")
            width = float(params.pop("width", 0.5))
            if width <= 0:
                raise InvalidArgument("width must be positive")
            center = tuple(float(c) for c in np.broadcast_to(params.pop("center", 0.0), (3,)))
            u = _drift_vec(params.pop("drift", 0.0))
            comps = [[amp, beta, *u]]
        if params:
            raise InvalidArgument(f"unexpected parameters for {kind}: {sorted(params)}")
        form = JuttnerMixture(np.array(comps), width=width, center=center,
                              x_max=None if grid.homogeneous else grid.x_max)
        fld = DistributionField.from_callable(form, lattice, grid)
        return fld if representation == "closed-form" else fld.gridded()
    if kind == "indicator_box":
        lo = np.broadcast_to(np.asarray(params.pop("p_low", -1.0), float), (3,))
        hi = np.broadcast_to(np.asarray(params.pop("p_high", 1.0), float), (3,))
        value = float(params.pop("value", 1.0))
        x_lo = params.pop("x_low", None)
        x_hi = params.pop("x_high", None)
        if params:
            raise InvalidArgument(f"unexpected parameters for indicator_box: {sorted(params)}")
        if value < 0:
            raise InvalidArgument("indicator value must be non-negative")
        ps = lattice.points()
        pin = np.all((ps >= lo) & (ps <= hi), axis=1)
        xs = grid.points()
        if x_lo is None or grid.homogeneous:
            xin = np.ones(len(xs), bool)
        else:
            xlo = np.broadcast_to(np.asarray(x_lo, float), (3,))
            xhi = np.broadcast_to(np.asarray(x_hi, float), (3,))
            xin = np.all((xs >= xlo) & (xs <= xhi), axis=1)
        vals = value * (xin[:, None] & pin[None, :]).astype(float)
        return DistributionField(lattice, grid, vals.reshape((grid.n_cells,) + lattice.shape))
    raise InvalidArgument(f"unknown initial-data kind {kind!r}")


def truncate_initial(f0: DistributionField, trunc: TruncationParams) -> DistributionField:
    """Truncated data ``min(f0 1_{|x|^2+|p|^2<=n}, n) + exp(-(|x|^2+p0))/n``.

    The floor term makes the result strictly positive everywhere.  Closed
    forms stay closed forms so that they can be transported exactly.
    """
    n = trunc.n
    if np.any(f0.values < 0):
        raise InvalidArgument("truncate_initial expects a non-negative field")
    xs = f0.grid.points()
    ps = f0.lattice.points()
    x2 = np.einsum("ij,ij->i", xs, xs)[:, None]
    p2 = np.einsum("ij,ij->i", ps, ps)[None, :]
    p0 = np.sqrt(1.0 + p2)
    flat = f0.values.reshape(f0.grid.n_cells, -1)
    core = np.minimum(np.where(x2 + p2 <= n, flat, 0.0), n)
    vals = (core + np.exp(-(x2 + p0)) / n).reshape(f0.values.shape)
    form = TruncatedForm(f0.closed_form, n) if f0.closed_form is not None else None
    return DistributionField(f0.lattice, f0.grid, vals, closed_form=form, time=f0.time)


@dataclass
class MomentRecord:
    time: float
    mass: float
    momentum: np.ndarray
    energy: float
    inertia: float
    h_value: float
    abs_log_mass: float
    entropy_production: float = 0.0

    def row(self) -> list:
        return [self.time, self.mass, *map(float, self.momentum), self.energy, self.inertia,
                self.h_value, self.abs_log_mass, self.entropy_production]


def _flog(v):
    """``v ln v`` and ``v |ln v|`` with ``0 ln 0 = 0``; non-positive entries give 0."""
    pos = v > 0
    lg = np.zeros_like(v)
    lg[pos] = np.log(v[pos])
    return v * lg, v * np.abs(lg)


def moments(f: DistributionField, entropy_production: float = 0.0) -> MomentRecord:
    """Mass, momentum, energy, inertia, H-function and ``int f |ln f|`` of a field."""
    vals = f.values.reshape(f.grid.n_cells, -1)
    if not np.all(np.isfinite(vals)):
        raise CorruptedField("moments of a field containing NaN")
    dv = f.grid.cell_volume * f.lattice.cell_volume
    ps = f.lattice.points()
    p0 = np.sqrt(1.0 + np.einsum("ij,ij->i", ps, ps))
    xs = f.grid.points()
    x2 = np.einsum("ij,ij->i", xs, xs)
    flnf, fabs = _flog(vals)
    return MomentRecord(
        time=float(f.time),
        mass=float(np.sum(vals) * dv),
        momentum=np.array([np.sum(vals * ps[None, :, k]) * dv for k in range(3)]),
        energy=float(np.sum(vals * p0[None, :]) * dv),
        inertia=float(np.sum(vals * x2[:, None]) * dv),
        h_value=float(np.sum(flnf) * dv),
        abs_log_mass=float(np.sum(fabs) * dv),
        entropy_production=float(entropy_production),
    )


def moment_weight(f: DistributionField) -> np.ndarray:
    """The weight ``1 + |x|^2 + p0`` at every node, shaped like ``f.values``."""
    ps = f.lattice.points()
    xs = f.grid.points()
    w = (1.0 + np.einsum("ij,ij->i", xs, xs)[:, None]
         + np.sqrt(1.0 + np.einsum("ij,ij->i", ps, ps))[None, :])
    return w.reshape(f.values.shape)


def weighted_l1_distance(f: DistributionField, h: DistributionField, weight: str = "1") -> float:
    """``sum |f - h| w`` times the phase-space cell volume, ``w`` in {1, 1+|x|^2+p0}."""
    if not f.same_grid(h):
        raise InvalidArgument("weighted_l1_distance needs fields on the same grids")
    diff = np.abs(f.values - h.values)
    if weight == "moment":
        diff = diff * moment_weight(f)
    elif weight != "1":
        raise InvalidArgument(f"unknown weight {weight!r}; use '1' or 'moment'")
    return float(np.sum(diff) * f.grid.cell_volume * f.lattice.cell_volume)


def write_checkpoint(path, f: DistributionField) -> None:
    """Write ``RBEF1`` header, one decimal descriptor line, then little-endian float64 values."""
    desc = (f"mode={f.grid.mode} x_max={f.grid.x_max!r} nx={f.grid.n_axis} "
            f"p_max={f.lattice.p_max!r} n_axis={f.lattice.n_axis} time={f.time!r}\n")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(desc.encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_checkpoint(path) -> DistributionField:
    raw = Path(path).read_bytes()
    magic, rest = raw.split(b"\n", 1)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidArgument(f"{path}: not an RBEF1 checkpoint")
    desc, payload = rest.split(b"\n", 1)
    kv = dict(item.split("=", 1) for item in desc.decode("ascii").split())
    grid = SpatialGrid(kv["mode"], float(kv["x_max"]), int(kv["nx"]))
    lattice = MomentumLattice(float(kv["p_max"]), int(kv["n_axis"]))
    vals = np.frombuffer(payload, dtype="<f8").astype(float)
    expected = grid.n_cells * lattice.size
    if vals.size != expected:
        raise InvalidArgument(f"{path}: payload has {vals.size} values, expected {expected}")
    return DistributionField(lattice, grid, vals.reshape((grid.n_cells,) + lattice.shape),
                             time=float(kv["time"]))


def moments_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([repr(float(v)) for v in rec.row()])
    return buf.getvalue()


def write_moments_csv(path, records) -> None:
    Path(path).write_text(moments_csv(records))


def read_moments_csv(path) -> list:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    return [MomentRecord(float(r["t"]), float(r["mass"]),
                         np.array([float(r["px"]), float(r["py"]), float(r["pz"])]),
                         float(r["energy"]), float(r["inertia"]), float(r["H"]),
                         float(r["absLogMass"]), float(r["D"])) for r in rows]
