"""Cross sections, collision kernels and admissibility checks.

The collision kernel is ``B(g, theta) = g sqrt(s) sigma(g, theta) / 2`` with
``s = 4 + 4 g^2``, so ``B = g sqrt(1 + g^2) sigma``.  The truncated kernel
``B_n`` multiplies the same expression by four indicators (sigma <= n,
g >= 1/n, sin(theta) >= 1/n, p0 + p10 <= n) and therefore has compact
support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import integrate

from .errors import InvalidArgument, InvalidModel, QuadratureFailure
from .kinematics import _g_core

CONSTANT, POWER_LAW, TABULATED = 0, 1, 2
_FAMILIES = {"constant": CONSTANT, "power_law": POWER_LAW, "tabulated": TABULATED}


@dataclass(frozen=True)
class TruncationParams:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidArgument(f"truncation n must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class CrossSectionModel:
    """Scattering cross section ``sigma(g, theta)``.

    Families
    --------
    constant
        ``sigma = c0``.
    power_law
        ``sigma = c0 * g**a * sin(theta)**b`` with ``a, b >= 0``.
    tabulated
        Bilinear interpolation of ``values[i, j]`` on ``(g_grid[i], theta_grid[j])``,
        clamped at the table edges (g beyond the last row reuses that row).
    """

    family: str = "constant"
    c0: float = 1.0
    a: float = 0.0
    b: float = 0.0
    g_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    source: str | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise InvalidArgument(f"unknown cross-section family {self.family!r}")
        for name in ("g_grid", "theta_grid", "values"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        if self.family == "power_law" and (self.a < 0 or self.b < 0):
            raise InvalidArgument("power-law exponents a, b must be >= 0")
        if self.family in ("constant", "power_law") and self.c0 < 0:
            raise InvalidModel(f"negative cross-section scale c0 = {self.c0}")
        if self.family == "tabulated":
            ng, nt = len(self.g_grid), len(self.theta_grid)
            if self.values.shape != (ng, nt) or ng < 1 or nt < 1:
                raise InvalidArgument("table values must have shape (len(g_grid), len(theta_grid))")
            if np.any(np.diff(self.g_grid) <= 0) or np.any(np.diff(self.theta_grid) <= 0):
                raise InvalidArgument("table grids must be strictly increasing")
            if not np.all(np.isfinite(self.values)):
                raise InvalidModel("table contains non-finite cross sections")

    @classmethod
    def constant(cls, c0: float = 1.0) -> "CrossSectionModel":
        return cls("constant", c0=c0)

    @classmethod
    def power_law(cls, c0: float = 1.0, a: float = 0.0, b: float = 0.0) -> "CrossSectionModel":
        return cls("power_law", c0=c0, a=a, b=b)

    @classmethod
    def tabulated(cls, g_grid, theta_grid, values, source=None) -> "CrossSectionModel":
        return cls("tabulated", g_grid=g_grid, theta_grid=theta_grid, values=values, source=source)

    @property
    def kind(self) -> int:
        return _FAMILIES[self.family]

    @property
    def is_zero(self) -> bool:
        if self.family == "tabulated":
            return not np.any(self.values)
        return self.c0 == 0.0

    def packed(self):
        """Arguments consumed by the compiled kernels."""
        return (self.kind, float(self.c0), float(self.a), float(self.b),
                self.g_grid, self.theta_grid, self.values)

    def sigma(self, g, theta):
        """Vectorised ``sigma(g, theta)``; raises :class:`InvalidModel` on negative values."""
        g = np.asarray(g, dtype=float)
        theta = np.asarray(theta, dtype=float)
        gb, tb = np.broadcast_arrays(g, theta)
        out = np.empty(gb.shape)
        _sigma_array(*self.packed(), gb.ravel(), tb.ravel(), out.reshape(-1))
        if np.any(out < 0):
            raise InvalidModel("cross section evaluated to a negative value")
        return float(out) if out.ndim == 0 else out

    def describe(self) -> str:
        if self.family == "constant":
            return f"constant(c0={self.c0:g})"
        if self.family == "power_law":
            return f"power_law(c0={self.c0:g}, a={self.a:g}, b={self.b:g})"
        return f"tabulated({len(self.g_grid)}x{len(self.theta_grid)}, source={self.source})"


def load_table(path) -> CrossSectionModel:
    """Read a tabulated cross section.

    Format: whitespace-separated decimals; ``g_count theta_count``, then the
    g grid, the theta grid, and the row-major (g-major) sigma values.
    """
    path = Path(path)
    tokens = path.read_text().split()
    try:
        ng, nt = int(tokens[0]), int(tokens[1])
        nums = np.array([float(t) for t in tokens[2:]])
    except (IndexError, ValueError) as exc:
        raise InvalidArgument(f"{path}: malformed cross-section table ({exc})") from None
    if ng < 1 or nt < 1 or nums.size != ng + nt + ng * nt:
        raise InvalidArgument(f"{path}: expected {ng + nt + ng * nt} numbers after header, got {nums.size}")
    values = nums[ng + nt:].reshape(ng, nt)
    if np.any(values < 0):
        raise InvalidModel(f"{path}: table contains negative cross sections")
    return CrossSectionModel.tabulated(nums[:ng], nums[ng:ng + nt], values, source=str(path))


def write_table(path, g_grid, theta_grid, values) -> None:
    g_grid, theta_grid = np.asarray(g_grid, float), np.asarray(theta_grid, float)
    values = np.asarray(values, float)
    with open(path, "w") as fh:
        fh.write(f"{len(g_grid)} {len(theta_grid)}\n")
        fh.write(" ".join(repr(float(v)) for v in g_grid) + "\n")
        fh.write(" ".join(repr(float(v)) for v in theta_grid) + "\n")
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@njit(cache=True)
def _bracket(grid, x):
    n = grid.shape[0]
    if n == 1 or x <= grid[0]:
        return 0, 0.0
    if x >= grid[n - 1]:
        return n - 2, 1.0
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if grid[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo, (x - grid[lo]) / (grid[lo + 1] - grid[lo])


@njit(cache=True)
def _sigma(kind, c0, a, b, gg, tg, tab, g, theta, sin_t):
    if kind == 0:
        return c0
    if kind == 1:
        v = c0
        if a != 0.0:
            v *= g ** a
        if b != 0.0:
            v *= sin_t ** b
        return v
    i, wg = _bracket(gg, g)
    j, wt = _bracket(tg, theta)
    if gg.shape[0] == 1:
        if tg.shape[0] == 1:
            return tab[0, 0]
        return (1.0 - wt) * tab[0, j] + wt * tab[0, j + 1]
    if tg.shape[0] == 1:
        return (1.0 - wg) * tab[i, 0] + wg * tab[i + 1, 0]
    return ((1.0 - wg) * ((1.0 - wt) * tab[i, j] + wt * tab[i, j + 1])
            + wg * ((1.0 - wt) * tab[i + 1, j] + wt * tab[i + 1, j + 1]))


@njit(cache=True)
def _sigma_array(kind, c0, a, b, gg, tg, tab, g, theta, out):
    for k in range(g.shape[0]):
        out[k] = _sigma(kind, c0, a, b, gg, tg, tab, g[k], theta[k], math.sin(theta[k]))


@njit(cache=True)
def _bn_value(kind, c0, a, b, gg, tg, tab, n, g, theta, sin_t, e_sum):
    """Truncated kernel B_n; ``n <= 0`` means no truncation."""
    if g <= 0.0:
        return 0.0
    sig = _sigma(kind, c0, a, b, gg, tg, tab, g, theta, sin_t)
    if n > 0:
        if sig > n or g < 1.0 / n or sin_t < 1.0 / n or e_sum > n:
            return 0.0
    return g * math.sqrt(1.0 + g * g) * sig


def _check_angle(theta):
    if not (0.0 <= theta <= math.pi):
        raise InvalidArgument(f"theta must lie in [0, pi], got {theta}")


def kernel_B(g: float, theta: float, model: CrossSectionModel) -> float:
    """Collision kernel ``g * sqrt(4 + 4 g^2) * sigma(g, theta) / 2``."""
    if g < 0:
        raise InvalidArgument(f"g must be >= 0, got {g}")
    _check_angle(theta)
    sig = model.sigma(g, theta)
    return float(g * math.sqrt(4.0 + 4.0 * g * g) * sig / 2.0)


def truncated_sigma(g, theta, p0, p10, model: CrossSectionModel, trunc: TruncationParams) -> float:
    """``sigma`` times the four truncation indicators; never exceeds ``n``."""
    if g < 0:
        raise InvalidArgument(f"g must be >= 0, got {g}")
    _check_angle(theta)
    if p0 < 1 or p10 < 1:
        raise InvalidArgument("energies p0, p10 must be >= 1")
    n = trunc.n
    sig = model.sigma(g, theta)
    keep = sig <= n and g >= 1.0 / n and math.sin(theta) >= 1.0 / n and p0 + p10 <= n
    return float(sig) if keep else 0.0


def truncated_kernel_Bn(g, theta, p0, p10, model: CrossSectionModel, trunc: TruncationParams) -> float:
    """Compactly supported kernel ``g * sqrt(4 + 4 g^2) * sigma_n / 2``.

    The factor 1/2 is kept so that ``B_n -> B`` as ``n`` grows.
    """
    sig_n = truncated_sigma(g, theta, p0, p10, model, trunc)
    return float(g * math.sqrt(4.0 + 4.0 * g * g) * sig_n / 2.0)


def _angular_gl(g, model, n_nodes):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = np.arccos(x)
    gg, tt = np.meshgrid(np.atleast_1d(g), theta, indexing="ij")
    sig = np.asarray(model.sigma(gg, tt)).reshape(gg.shape)
    bvals = gg * np.sqrt(1.0 + gg * gg) * sig
    # sigma does not depend on psi, so the psi integral is a factor 2 pi
    return 2.0 * np.pi * (bvals @ w)


def angular_integral_A(g, model: CrossSectionModel, n_nodes: int = 64, rtol: float = 1e-8,
                       return_error: bool = False):
    """Angular integral ``A(g) = int_{S^2} B(g, theta) dOmega``.

    Gauss-Legendre in ``cos(theta)`` with ``n_nodes`` and ``2 n_nodes`` nodes;
    their difference is the error estimate.  Values whose estimate exceeds
    ``rtol`` fall back to adaptive quadrature with the table's theta nodes
    as breakpoints, and :class:`QuadratureFailure` is raised if that also
    misses the tolerance.
    """
    g_arr = np.atleast_1d(np.asarray(g, dtype=float))
    if np.any(g_arr < 0):
        raise InvalidArgument("g must be >= 0")
    coarse = _angular_gl(g_arr, model, n_nodes)
    fine = _angular_gl(g_arr, model, 2 * n_nodes)
    err = np.abs(fine - coarse)
    bad = err > rtol * np.abs(fine) + 1e-300
    for k in np.flatnonzero(bad):
        gk = g_arr[k]
        pts = model.theta_grid[(model.theta_grid > 0) & (model.theta_grid < np.pi)] if model.family == "tabulated" else None

        def integrand(t, gk=gk):
            return gk * math.sqrt(1.0 + gk * gk) * model.sigma(gk, t) * math.sin(t)

        val, est = integrate.quad(integrand, 0.0, math.pi, points=pts, epsabs=0.0,
                                  epsrel=rtol, limit=500)
        val, est = 2.0 * math.pi * val, 2.0 * math.pi * est
        if est > rtol * abs(val) * 10 + 1e-300:
            raise QuadratureFailure(f"A(g={gk:g}) did not converge", error_estimate=est)
        fine[k], err[k] = val, est
    if np.ndim(g) == 0:
        return (float(fine[0]), float(err[0])) if return_error else float(fine[0])
    return (fine, err) if return_error else fine


@dataclass
class ConditionReport:
    """Jiang (``1/p0^2``) and Dudynski-Ekiel (``1/p0``) ball integrals at probe momenta."""

    radius: float
    probes: list
    jiang_values: list
    de_values: list
    hard_bound_constant: float
    error_estimates: list = field(default_factory=list)

    def rows(self):
        return [
            {"p": p, "jiang": j, "de": d, "error": e}
            for p, j, d, e in zip(self.probes, self.jiang_values, self.de_values, self.error_estimates)
        ]


def _ball_nodes(R, nodes):
    """Spherical-coordinate nodes and weights for the ball ``|q| <= R``."""
    nr, nc, nphi = nodes
    xr, wr = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * R * (xr + 1.0)
    wr = 0.5 * R * wr * r * r
    c, wc = np.polynomial.legendre.leggauss(nc)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2.0 * np.pi / nphi)
    rr, cc, pp = np.meshgrid(r, c, phi, indexing="ij")
    ss = np.sqrt(1.0 - cc * cc)
    pts = np.stack([rr * ss * np.cos(pp), rr * ss * np.sin(pp), rr * cc], axis=-1).reshape(-1, 3)
    w = (wr[:, None, None] * wc[None, :, None] * wphi[None, None, :]).reshape(-1)
    return pts, w


def _g_many(p, q):
    """``g`` between one momentum ``p`` and many ``q`` (vectorised, stable form)."""
    p0 = math.sqrt(1.0 + float(p @ p))
    q0 = np.sqrt(1.0 + np.einsum("ij,ij->i", q, q))
    d = q - p
    s = q + p
    de = np.einsum("ij,ij->i", d, s) / (p0 + q0)
    rad = np.maximum(np.einsum("ij,ij->i", d, d) - de * de, 0.0)
    return 0.5 * np.sqrt(rad), q0


def _jiang_integral(model, R, probe, nodes, n_ang):
    nr, nc, nphi = nodes
    p = np.array([0.0, 0.0, float(probe)])
    p0 = math.sqrt(1.0 + probe * probe)
    # with p along z the integrand ignores the azimuth of p1, so the uniform
    # azimuth rule sums to exactly 2 pi; evaluate on a single azimuth plane
    pts, w = _ball_nodes(R, (nr, nc, 1))
    g, q0 = _g_many(p, pts)
    A = angular_integral_A(g, model, n_nodes=n_ang)
    return float(np.sum(w * A / q0)), p0


def check_jiang_condition(model: CrossSectionModel, R: float, probes, nodes=(64, 32, 32),
                          n_ang: int = 64) -> ConditionReport:
    """Evaluate ``(1/p0^2) int_{|p1|<=R} A(g)/p10 d^3p1`` at each probe ``|p|``.

    The probe momentum points along z; the ball integral is rotation
    invariant so one direction suffices.  ``de_values`` carry the
    ``1/p0``-weighted variant.  Each value's error estimate is the change
    under doubling all ball node counts.
    """
    if R <= 0:
        raise InvalidArgument("R must be positive")
    probes = [float(p) for p in probes]
    if any(b <= a for a, b in zip(probes, probes[1:])):
        raise InvalidArgument("probes must be strictly increasing")
    doubled = tuple(2 * k for k in nodes)
    jiang, de, errs = [], [], []
    for probe in probes:
        val, p0 = _jiang_integral(model, R, probe, nodes, n_ang)
        val2, _ = _jiang_integral(model, R, probe, doubled, n_ang)
        jiang.append(val2 / p0**2)
        de.append(val2 / p0)
        errs.append(abs(val2 - val) / p0**2)
    # g of each probe against a particle at rest
    g_probes = [float(_g_core(0.0, 0.0, pr, 0.0, 0.0, 0.0)) for pr in probes]
    g_probes = [g for g in g_probes if g > 0]
    hard = check_hard_lower_bound(model, g_probes) if g_probes else 0.0
    return ConditionReport(radius=float(R), probes=probes, jiang_values=jiang, de_values=de,
                           hard_bound_constant=hard, error_estimates=errs)


def check_hard_lower_bound(model: CrossSectionModel, g_probes) -> float:
    """``inf A(g)/g^2`` over the probes; positive means ``A(g) >= C g^2`` there."""
    g = np.asarray(list(g_probes), dtype=float)
    if g.size == 0 or np.any(g <= 0):
        raise InvalidArgument("g probes must be positive")
    A = angular_integral_A(g, model)
    return float(np.min(A / g**2))


def truncation_convergence(model: CrossSectionModel, R: float, ball_k: float, n_list,
                           nodes=(32, 16, 16), n_theta: int = 16, n_psi: int = 16,
                           n_p1: int = 9) -> list:
    """``max_{|p1| <= ball_k} int_{|p|<=R} int_{S^2} |B_n - B| dOmega d^3p`` for each n.

    Only ``|p1|`` matters by isotropy, so ``p1`` is sampled at ``n_p1``
    evenly spaced radii along z.  The angular rule is Gauss-Legendre in
    ``cos(theta)`` times a uniform psi rule; ``|B_n - B|`` does not depend on
    psi, so the psi sum collapses to a factor ``2 pi``.
    """
    if R <= 0 or ball_k < 0:
        raise InvalidArgument("R must be positive and ball_k non-negative")
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidArgument("n_list must be strictly increasing")
    pts, w = _ball_nodes(R, nodes)
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(ct)
    st = np.sqrt(1.0 - ct * ct)
    wt = wt * 2.0 * np.pi  # psi integral
    p0 = np.sqrt(1.0 + np.einsum("ij,ij->i", pts, pts))
    out = []
    radii = np.linspace(0.0, ball_k, n_p1)
    for n in n_list:
        worst = 0.0
        for r1 in radii:
            p1 = np.array([0.0, 0.0, r1])
            g, _ = _g_many(p1, pts)
            p10 = math.sqrt(1.0 + r1 * r1)
            gg = g[:, None]
            sig = np.asarray(model.sigma(np.broadcast_to(gg, (g.size, n_theta)),
                                         np.broadcast_to(theta, (g.size, n_theta))))
            full = gg * np.sqrt(1.0 + gg * gg) * sig
            keep = ((sig <= n) & (gg >= 1.0 / n) & (st[None, :] >= 1.0 / n)
                    & ((p0 + p10)[:, None] <= n))
            diff = np.where(keep, 0.0, full)
            worst = max(worst, float(w @ (diff @ wt)))
        out.append(worst)
    return out
