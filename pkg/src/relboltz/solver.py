"""Transport along characteristics, the Picard map and time marching.

The truncated problem is solved in mild form,

    f(t, x, p) = f0n(x - t p/p0, p) + int_0^t Q~_n(f, f)(s, x - (t - s) p/p0, p) ds,

either by iterating the map above on a time window (``picard_window``) or
by explicit second-order marching (``march``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .collision import (AngularQuadrature, collision_field, conservative_projection,
                        entropy_production)
from .errors import (CorruptedField, CorruptedIteration, InvalidArgument, NonConvergence,
                     StepSizeError)
from .kernels import CrossSectionModel, TruncationParams
from .phase_space import (DistributionField, MomentumLattice, MomentRecord,
                          TransportedForm, moments, write_checkpoint)

log = logging.getLogger(__name__)

# Increments below this fraction of max |f| leave a closed-form field untouched.
CLOSED_FORM_RTOL = 1e-12
# Negative mass (relative to total) that marching may clamp away silently.
CLAMP_FRACTION = 1e-6
# Distances below this fraction of ||f0n||_1 are rounding noise; ratios are not audited there.
RATIO_FLOOR = 1e-13


@dataclass(frozen=True)
class CharacteristicMap:
    """``(x, p) -> (x + direction * t p/p0, p)``."""

    t: float
    direction: int = 1

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise InvalidArgument("direction must be +1 or -1")

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        p0 = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
        return x + self.direction * self.t * p / p0[..., None], p

    def inverse(self) -> "CharacteristicMap":
        return CharacteristicMap(self.t, -self.direction)


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "march"
    T: float = 1.0
    dt: float = 0.1
    tol: float = 1e-8
    max_iter: int = 30
    c_n: float | None = None
    checkpoint_every: int = 0
    record_entropy: bool = True
    conservative: bool = False

    def __post_init__(self):
        if self.mode not in ("picard_window", "march"):
            raise InvalidArgument(f"unknown solver mode {self.mode!r}")
        if not self.dt > 0 or not self.T >= 0:
            raise InvalidArgument("need dt > 0 and T >= 0")
        if not self.tol > 0 or self.max_iter < 1:
            raise InvalidArgument("need tol > 0 and max_iter >= 1")
        if self.c_n is not None and self.c_n < 0:
            raise InvalidArgument("c_n must be non-negative")

    @property
    def n_steps(self) -> int:
        k = int(round(self.T / self.dt))
        if not math.isclose(k * self.dt, self.T, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidArgument(f"T = {self.T} is not a multiple of dt = {self.dt}")
        return k

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class Trajectory:
    """Time-indexed fields on a uniform mesh."""

    times: np.ndarray
    fields: list

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, k) -> DistributionField:
        return self.fields[k]

    def min_value(self) -> float:
        return min(float(f.values.min()) for f in self.fields)

    def max_value(self) -> float:
        return max(float(f.values.max()) for f in self.fields)

    def l1_distances(self, other: "Trajectory") -> np.ndarray:
        out = []
        for a, b in zip(self.fields, other.fields):
            dv = a.grid.cell_volume * a.lattice.cell_volume
            out.append(float(np.sum(np.abs(a.values - b.values)) * dv))
        return np.array(out)


@dataclass
class IterationTrace:
    """Per-iteration distances between successive Picard iterates.

    ``log_weighted`` is ``ln sup_t e^{-2 C_n t} d(t)``; it is kept in log
    form because ``C_n t`` is routinely in the hundreds of thousands.
    ``distances`` reports the same quantity rescaled by ``e^{2 C_n dt}``
    (a constant factor) and divided by ``||f0n||_1``.
    """

    c_n: float
    dt: float
    log_weighted: list = field(default_factory=list)
    unweighted: list = field(default_factory=list)
    resolved: list = field(default_factory=list)

    @property
    def distances(self) -> list:
        return [math.exp(lw + 2.0 * self.c_n * self.dt) if math.isfinite(lw) else 0.0
                for lw in self.log_weighted]

    @property
    def ratios(self) -> list:
        """Successive weighted-distance ratios; NaN where the previous distance was rounding noise."""
        out = []
        for k in range(1, len(self.log_weighted)):
            a, b = self.log_weighted[k - 1], self.log_weighted[k]
            if not self.resolved[k - 1] or not math.isfinite(a):
                out.append(float("nan"))
            elif not math.isfinite(b):
                out.append(0.0)
            else:
                out.append(math.exp(b - a))
        return out

    @property
    def iterations(self) -> int:
        return len(self.log_weighted)

    def rows(self):
        ratios = [float("nan")] + self.ratios
        return [(k + 1, d, r) for k, (d, r) in enumerate(zip(self.distances, ratios))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "distance", "ratio"])
            for row in self.rows():
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])


# ---------------------------------------------------------------------------
# transport

@njit(cache=True)
def _shift_periodic(vals, shifts, out):
    """``out[x, p] = vals(x - shift_p)`` with periodic trilinear interpolation in x."""
    nx = vals.shape[0]
    for m in range(vals.shape[3]):
        sx, sy, sz = shifts[m, 0], shifts[m, 1], shifts[m, 2]
        ix, iy, iz = math.floor(sx), math.floor(sy), math.floor(sz)
        ax, ay, az = sx - ix, sy - iy, sz - iz
        for i in range(nx):
            i0 = (i - ix) % nx
            i1 = (i0 - 1) % nx
            for j in range(nx):
                j0 = (j - iy) % nx
                j1 = (j0 - 1) % nx
                for k in range(nx):
                    k0 = (k - iz) % nx
                    k1 = (k0 - 1) % nx
                    c0 = (vals[i0, j0, k0, m] * (1 - az) + vals[i0, j0, k1, m] * az) * (1 - ay) \
                        + (vals[i0, j1, k0, m] * (1 - az) + vals[i0, j1, k1, m] * az) * ay
                    c1 = (vals[i1, j0, k0, m] * (1 - az) + vals[i1, j0, k1, m] * az) * (1 - ay) \
                        + (vals[i1, j1, k0, m] * (1 - az) + vals[i1, j1, k1, m] * az) * ay
                    out[i, j, k, m] = c0 * (1 - ax) + c1 * ax


def _shift_values(values, lattice: MomentumLattice, grid, t: float) -> np.ndarray:
    ps = lattice.points()
    p0 = np.sqrt(1.0 + np.einsum("ij,ij->i", ps, ps))
    shifts = t * ps / p0[:, None] / grid.spacing
    near = np.round(shifts)
    snap = np.abs(shifts - near) < 1e-12
    shifts = np.where(snap, near, shifts)
    nx = grid.n_axis
    vals = np.ascontiguousarray(values.reshape(nx, nx, nx, -1))
    out = np.empty_like(vals)
    _shift_periodic(vals, np.ascontiguousarray(shifts), out)
    return out.reshape(values.shape)


def characteristic_shift(f: DistributionField, t: float, direction: int = 1) -> DistributionField:
    """Free streaming: ``f(x - direction * t p/p0, p)``.

    Closed forms are transported exactly; gridded fields use periodic
    trilinear interpolation in ``x`` (exact when every shift is a whole
    number of cells).  The homogeneous mode is left unchanged.
    """
    if direction not in (1, -1):
        raise InvalidArgument("direction must be +1 or -1")
    s = direction * float(t)
    if s == 0.0 or f.grid.homogeneous:
        return DistributionField(f.lattice, f.grid, f.values, f.closed_form, f.time + float(t))
    if f.closed_form is not None:
        form = TransportedForm(f.closed_form, s, f.grid)
        return DistributionField.from_callable(form, f.lattice, f.grid, time=f.time + float(t))
    vals = _shift_values(f.values, f.lattice, f.grid, s)
    return DistributionField(f.lattice, f.grid, vals, None, f.time + float(t))


def _shift_array(values, f: DistributionField, t: float) -> np.ndarray:
    if t == 0.0 or f.grid.homogeneous:
        return values
    return _shift_values(values, f.lattice, f.grid, t)


# ---------------------------------------------------------------------------
# collision evaluation along a trajectory

def _q_values(f: DistributionField, model, trunc, quad, time_index=None,
              conservative=False) -> np.ndarray:
    if model.is_zero:
        return np.zeros_like(f.values)
    q = collision_field(f, model, trunc, quad).q
    if conservative:
        q = conservative_projection(q, f)
    if not np.all(np.isfinite(q)):
        raise CorruptedIteration("collision evaluation produced NaN", time_index=time_index)
    return q


def _keep_closed(base: DistributionField, increment: np.ndarray, time: float):
    """Closed-form ``base`` survives when the increment is rounding-level."""
    if base.closed_form is None:
        return None
    scale = float(np.max(np.abs(base.values))) or 1.0
    if float(np.max(np.abs(increment))) <= CLOSED_FORM_RTOL * scale:
        return DistributionField(base.lattice, base.grid, base.values, base.closed_form, time)
    return None


def transported_initial(f0n: DistributionField, times) -> Trajectory:
    """The image of ``phi = 0`` under the Picard map: ``f0n`` carried along characteristics."""
    return Trajectory(np.asarray(times, float),
                      [characteristic_shift(f0n, float(t)) for t in times])


def picard_map(phi: Trajectory, f0n: DistributionField, model: CrossSectionModel,
               trunc: TruncationParams, quad: AngularQuadrature, cfg: SolverConfig) -> Trajectory:
    """One application of the Picard map with a trapezoid time integral.

    ``Q~_n(phi(s))`` is evaluated once per stored slice and carried along the
    characteristic from time ``s`` to ``t``.
    """
    if phi.min_value() < 0:
        raise InvalidArgument("picard_map needs a non-negative phi")
    if np.any(f0n.values <= 0):
        raise InvalidArgument("picard_map needs a strictly positive f0n")
    times = phi.times
    q = [_q_values(fs, model, trunc, quad, time_index=j, conservative=cfg.conservative)
         for j, fs in enumerate(phi.fields)]
    base = transported_initial(f0n, times)
    out = []
    for k, t in enumerate(times):
        acc = np.zeros_like(f0n.values)
        for j in range(k + 1 if k else 0):
            w = 0.5 if j in (0, k) else 1.0
            acc = acc + w * (times[1] - times[0]) * _shift_array(q[j], f0n, float(t - times[j]))
        kept = _keep_closed(base[k], acc, float(t))
        if kept is not None:
            out.append(kept)
            continue
        vals = base[k].values + acc
        if not np.all(np.isfinite(vals)):
            raise CorruptedIteration("non-finite Picard iterate", time_index=k)
        out.append(DistributionField(f0n.lattice, f0n.grid, vals, None, float(t)))
    return Trajectory(times, out)


def positive_picard_map(phi, f0n, model, trunc, quad, cfg) -> Trajectory:
    """``max(0, J_n(phi))`` pointwise."""
    return _clamp(picard_map(phi, f0n, model, trunc, quad, cfg))


def _clamp(traj: Trajectory) -> Trajectory:
    out = []
    for f in traj.fields:
        if f.values.min() >= 0:
            out.append(f)
        else:
            out.append(DistributionField(f.lattice, f.grid, np.maximum(f.values, 0.0), None, f.time))
    return Trajectory(traj.times, out)


def compute_lipschitz_cn(model: CrossSectionModel, trunc: TruncationParams,
                         lattice: MomentumLattice | None = None) -> float:
    """Overestimate of the Lipschitz constant of ``Q~_n`` from the support of ``B_n``.

    ``3 sup(B_n) V(n) sup(1/(p0 p10))`` with ``sup B_n <= n^2 sqrt(1 + n^2)``
    and ``V(n) = (4 pi/3)(n^2 - 1)^{3/2}`` the volume of ``{p1 : p10 <= n}``.
    """
    n = float(trunc.n)
    if model.is_zero or n <= 1.0:
        return 0.0
    sup_b = n * n * math.sqrt(1.0 + n * n)
    vol = 4.0 * math.pi / 3.0 * (n * n - 1.0) ** 1.5
    return 3.0 * sup_b * vol * 1.0


def _log_weighted(d: np.ndarray, times: np.ndarray, c_n: float) -> float:
    pos = d > 0
    if not np.any(pos):
        return -math.inf
    return float(np.max(np.log(d[pos]) - 2.0 * c_n * times[pos]))


def solve_fixed_point(f0n: DistributionField, model: CrossSectionModel, trunc: TruncationParams,
                      quad: AngularQuadrature, cfg: SolverConfig):
    """Iterate ``J_n^+`` from the transported initial data until successive iterates agree.

    Stops once both the weighted distance (rescaled as in
    :class:`IterationTrace`) and the unweighted ``sup_t`` L1 distance,
    each relative to ``||f0n||_1``, fall below ``cfg.tol``.
    """
    if cfg.mode != "picard_window":
        raise InvalidArgument("solve_fixed_point needs mode = picard_window")
    c_n = cfg.c_n if cfg.c_n is not None else compute_lipschitz_cn(model, trunc, f0n.lattice)
    times = cfg.times
    norm0 = float(np.sum(np.abs(f0n.values)) * f0n.grid.cell_volume * f0n.lattice.cell_volume)
    trace = IterationTrace(c_n=c_n, dt=cfg.dt)
    phi = transported_initial(f0n, times)
    for _ in range(cfg.max_iter):
        new = positive_picard_map(phi, f0n, model, trunc, quad, cfg)
        d = new.l1_distances(phi) / norm0
        lw = _log_weighted(d, times, c_n)
        trace.log_weighted.append(lw)
        trace.unweighted.append(float(d.max()))
        # the weighted sup sits at the earliest time with d > 0; ratios are meaningful
        # only while that distance is above rounding noise
        pos = np.flatnonzero(d > 0)
        trace.resolved.append(bool(pos.size) and float(d[pos[0]]) > RATIO_FLOOR)
        phi = new
        scaled = trace.distances[-1]
        if scaled < cfg.tol and trace.unweighted[-1] < cfg.tol:
            return phi, trace
    raise NonConvergence(f"Picard iteration did not converge in {cfg.max_iter} iterations",
                         trace=trace)


# ---------------------------------------------------------------------------
# marching

def _clamp_step(values: np.ndarray, dv: float, step: int) -> np.ndarray:
    neg = values < 0
    if not np.any(neg):
        return values
    total = float(np.sum(np.abs(values)))
    frac = float(-np.sum(values[neg])) / total if total > 0 else 1.0
    if frac > CLAMP_FRACTION:
        raise StepSizeError(f"step {step}: negative mass fraction {frac:.3e} exceeds "
                            f"{CLAMP_FRACTION:g}; reduce dt")
    log.info("step %d: clamped negative mass fraction %.3e", step, frac)
    return np.maximum(values, 0.0)


def _record(f, model, trunc, quad, cfg) -> MomentRecord:
    d = 0.0
    if cfg.record_entropy and not model.is_zero and np.all(f.values > 0):
        d = entropy_production(f, model, trunc, quad)
    return moments(f, entropy_production=d)


def solve_march(f0n: DistributionField, model: CrossSectionModel, trunc: TruncationParams,
                quad: AngularQuadrature, cfg: SolverConfig, checkpoint_dir=None):
    """Strang-split marching: half transport, midpoint collision step, half transport.

    Returns ``(fields, records)``: the field and its :class:`MomentRecord`
    at every mesh time.
    """
    if cfg.mode != "march":
        raise InvalidArgument("solve_march needs mode = march")
    dt = cfg.dt
    f = DistributionField(f0n.lattice, f0n.grid, f0n.values, f0n.closed_form, 0.0)
    fields = [f]
    records = [_record(f, model, trunc, quad, cfg)]
    dv = f.grid.cell_volume * f.lattice.cell_volume
    for step in range(1, cfg.n_steps + 1):
        t_new = step * dt
        half = characteristic_shift(f, 0.5 * dt)
        q1 = _q_values(half, model, trunc, quad, time_index=step, conservative=cfg.conservative)
        kept = _keep_closed(half, dt * q1, half.time)
        if kept is not None:
            f = characteristic_shift(kept, 0.5 * dt)
        else:
            mid = half.with_values(half.values + 0.5 * dt * q1)
            q2 = _q_values(mid, model, trunc, quad, time_index=step, conservative=cfg.conservative)
            vals = _clamp_step(half.values + dt * q2, dv, step)
            f = characteristic_shift(half.with_values(vals), 0.5 * dt)
        f = DistributionField(f.lattice, f.grid, f.values, f.closed_form, t_new)
        if not np.all(np.isfinite(f.values)):
            raise CorruptedField(f"non-finite field at step {step}")
        fields.append(f)
        records.append(_record(f, model, trunc, quad, cfg))
        if checkpoint_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            write_checkpoint(Path(checkpoint_dir) / f"checkpoint_{step:05d}.rbef", f)
    return fields, records


def trajectory_records(traj: Trajectory, model, trunc, quad, entropy=True) -> list:
    cfg = SolverConfig(record_entropy=entropy)
    return [_record(f, model, trunc, quad, cfg) for f in traj.fields]


__all__ = [
    "CharacteristicMap", "SolverConfig", "Trajectory", "IterationTrace", "characteristic_shift",
    "picard_map", "positive_picard_map", "compute_lipschitz_cn", "solve_fixed_point",
    "solve_march", "transported_initial", "trajectory_records",
]
