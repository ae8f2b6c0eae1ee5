"""Two-body relativistic collision kinematics.

Momenta are dimensionless (unit mass, c = 1) so the energy of a particle
with 3-momentum ``p`` is ``p0 = sqrt(1 + |p|^2)``.  Post-collision momenta
are built by boosting the pair to its zero-momentum frame, rotating the
relative direction by the scattering angles ``(theta, psi)`` and boosting
back; total momentum and energy are conserved by construction.

The scalar cores (``_frame``, ``_collide``) are numba-compiled and shared
with the collision quadrature kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateCollision, InvalidArgument

# Tolerance for "e3 parallel to the lab z axis" when choosing the psi frame.
PARALLEL_TOL = 1e-9
# s <= 4 + EPS_G is treated as a degenerate (g = 0) collision.
EPS_G = 1e-12


@dataclass(frozen=True)
class Momentum:
    """A dimensionless 3-momentum on the unit mass shell."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=float).reshape(3)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument(f"momentum components must be finite, got {arr}")
        object.__setattr__(self, "p", arr)

    @property
    def p0(self) -> float:
        return float(math.sqrt(1.0 + float(self.p @ self.p)))


@dataclass(frozen=True)
class CollisionGeometry:
    g: float
    s: float
    theta: float
    psi: float


@dataclass(frozen=True)
class CollisionOutcome:
    p_prime: Momentum
    p1_prime: Momentum


def _vec(p) -> np.ndarray:
    if isinstance(p, Momentum):
        return p.p
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise InvalidArgument(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"momentum components must be finite, got {arr}")
    return arr


def energy(p) -> float | np.ndarray:
    """Mass-shell energy ``sqrt(1 + |p|^2)``.

    Accepts a single 3-vector or an array of shape ``(..., 3)``.
    """
    arr = np.asarray(p.p if isinstance(p, Momentum) else p, dtype=float)
    if arr.shape[-1:] != (3,):
        raise InvalidArgument(f"expected trailing dimension 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("momentum components must be finite")
    e = np.sqrt(1.0 + np.einsum("...i,...i->...", arr, arr))
    return float(e) if e.ndim == 0 else e


@njit(cache=True)
def _g_core(px, py, pz, p1x, p1y, p1z):
    p0 = math.sqrt(1.0 + px * px + py * py + pz * pz)
    p10 = math.sqrt(1.0 + p1x * p1x + p1y * p1y + p1z * p1z)
    dx, dy, dz = p1x - px, p1y - py, p1z - pz
    sx, sy, sz = p1x + px, p1y + py, p1z + pz
    # p10 - p0 = (d . S) / (p0 + p10) avoids cancelling two large energies
    de = (dx * sx + dy * sy + dz * sz) / (p0 + p10)
    rad = dx * dx + dy * dy + dz * dz - de * de
    if rad < 0.0:
        rad = 0.0
    return 0.5 * math.sqrt(rad)


@njit(cache=True)
def _frame(px, py, pz, p1x, p1y, p1z):
    """Centre-of-momentum frame of a pair.

    Returns total momentum/energy, sqrt(s), g, boost velocity, the factor
    gamma^2/(gamma+1), gamma, and the orthonormal frame (e1, e2, e3) whose
    third axis is the CM direction of ``p``.
    """
    p0 = math.sqrt(1.0 + px * px + py * py + pz * pz)
    p10 = math.sqrt(1.0 + p1x * p1x + p1y * p1y + p1z * p1z)
    Px, Py, Pz = px + p1x, py + p1y, pz + p1z
    E = p0 + p10
    g = _g_core(px, py, pz, p1x, p1y, p1z)
    rs = 2.0 * math.sqrt(1.0 + g * g)
    bx, by, bz = Px / E, Py / E, Pz / E
    gam = E / rs
    kk = gam * gam / (gam + 1.0)
    bp = bx * px + by * py + bz * pz
    c = kk * bp - gam * p0
    kx, ky, kz = px + c * bx, py + c * by, pz + c * bz
    kn = math.sqrt(kx * kx + ky * ky + kz * kz)
    if kn > 0.0:
        e3x, e3y, e3z = kx / kn, ky / kn, kz / kn
    else:
        e3x, e3y, e3z = 0.0, 0.0, 1.0
    if abs(e3z) > 1.0 - PARALLEL_TOL:
        ax, ay, az = 1.0, 0.0, 0.0
    else:
        ax, ay, az = 0.0, 0.0, 1.0
    dot = ax * e3x + ay * e3y + az * e3z
    e1x, e1y, e1z = ax - dot * e3x, ay - dot * e3y, az - dot * e3z
    n1 = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x, e1y, e1z = e1x / n1, e1y / n1, e1z / n1
    e2x = e3y * e1z - e3z * e1y
    e2y = e3z * e1x - e3x * e1z
    e2z = e3x * e1y - e3y * e1x
    return (Px, Py, Pz, E, rs, g, bx, by, bz, kk, gam,
            e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z)


@njit(cache=True)
def _collide(fr, ct, st, cp, sp):
    """Post-collision momenta for one frame ``fr`` and one angle node.

    ``ct, st`` are cos/sin of theta and ``cp, sp`` cos/sin of psi.
    Returns the six components of p' and p1' (p1' = P - p').
    """
    (Px, Py, Pz, E, rs, g, bx, by, bz, kk, gam,
     e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z) = fr
    a1 = st * cp
    a2 = st * sp
    kx = g * (a1 * e1x + a2 * e2x + ct * e3x)
    ky = g * (a1 * e1y + a2 * e2y + ct * e3y)
    kz = g * (a1 * e1z + a2 * e2z + ct * e3z)
    c = kk * (bx * kx + by * ky + bz * kz) + gam * 0.5 * rs
    qx, qy, qz = kx + c * bx, ky + c * by, kz + c * bz
    return qx, qy, qz, Px - qx, Py - qy, Pz - qz


@njit(cache=True)
def _collide_batch(p, p1, theta, psi, out_p, out_p1):
    for i in range(p.shape[0]):
        fr = _frame(p[i, 0], p[i, 1], p[i, 2], p1[i, 0], p1[i, 1], p1[i, 2])
        r = _collide(fr, math.cos(theta[i]), math.sin(theta[i]),
                     math.cos(psi[i]), math.sin(psi[i]))
        out_p[i, 0], out_p[i, 1], out_p[i, 2] = r[0], r[1], r[2]
        out_p1[i, 0], out_p1[i, 1], out_p1[i, 2] = r[3], r[4], r[5]


def collide_batch(p, p1, theta, psi):
    """Vectorised :func:`post_collision` over arrays of shape ``(m, 3)`` / ``(m,)``.

    No degeneracy checks are made; pairs with g = 0 return (p, p1) rotated
    about an arbitrary axis of zero length, i.e. unchanged.
    """
    p = np.ascontiguousarray(p, dtype=float).reshape(-1, 3)
    p1 = np.ascontiguousarray(p1, dtype=float).reshape(-1, 3)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (p.shape[0],)).copy()
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (p.shape[0],)).copy()
    out_p = np.empty_like(p)
    out_p1 = np.empty_like(p1)
    _collide_batch(p, p1, theta, psi, out_p, out_p1)
    return out_p, out_p1


def invariant_g(p, p1) -> float:
    """Invariant relative momentum ``g = sqrt(|p1-p|^2 - (p10-p0)^2) / 2``."""
    a, b = _vec(p), _vec(p1)
    return float(_g_core(a[0], a[1], a[2], b[0], b[1], b[2]))


def invariant_s(p, p1) -> float:
    """Total invariant ``s = (p0+p10)^2 - |p+p1|^2``."""
    a, b = _vec(p), _vec(p1)
    e = energy(a) + energy(b)
    tot = np.linalg.norm(a + b)
    return float((e - tot) * (e + tot))


def post_collision(p, p1, theta: float, psi: float) -> CollisionOutcome:
    """Momenta after an elastic collision with scattering angles ``(theta, psi)``."""
    a, b = _vec(p), _vec(p1)
    if not (0.0 <= theta <= math.pi):
        raise InvalidArgument(f"theta must lie in [0, pi], got {theta}")
    if not (0.0 <= psi < 2.0 * math.pi):
        raise InvalidArgument(f"psi must lie in [0, 2pi), got {psi}")
    g = invariant_g(a, b)
    if g == 0.0:
        if theta == 0.0:
            return CollisionOutcome(Momentum(a), Momentum(b))
        raise DegenerateCollision("post_collision needs distinct momenta (g > 0)")
    fr = _frame(a[0], a[1], a[2], b[0], b[1], b[2])
    r = _collide(fr, math.cos(theta), math.sin(theta), math.cos(psi), math.sin(psi))
    return CollisionOutcome(Momentum(np.array(r[:3])), Momentum(np.array(r[3:])))


def scattering_angle(p, p1, p_prime) -> float:
    """Scattering angle from the invariant formula

    ``cos(theta) = 1 - 2[(p0-p10)(p0-p0') - (p-p1).(p-p')] / (4 - s)``.
    """
    a, b, c = _vec(p), _vec(p1), _vec(p_prime)
    g = invariant_g(a, b)
    s = 4.0 + 4.0 * g * g  # same value as invariant_s, without its rounding
    if s <= 4.0 + EPS_G:
        raise DegenerateCollision("scattering angle undefined for s <= 4 (g = 0)")
    p0, p10, p0p = energy(a), energy(b), energy(c)
    num = (p0 - p10) * (p0 - p0p) - float((a - b) @ (a - c))
    cos_t = 1.0 - 2.0 * num / (4.0 - s)
    return float(math.acos(min(1.0, max(-1.0, cos_t))))


def _rel_close(x, y, rtol):
    return abs(x - y) <= rtol * max(abs(x), abs(y), 1.0)


def transition_symmetry_check(p, p1, theta: float, psi: float, rtol: float = 1e-10) -> bool:
    """Check the pair symmetries of the collision map.

    ``g`` and ``s`` must be unchanged by swapping the colliding particles and
    by exchanging the incoming pair with the outgoing one.
    """
    a, b = _vec(p), _vec(p1)
    out = post_collision(a, b, theta, psi)
    ap, bp = out.p_prime.p, out.p1_prime.p
    g, g_swap, g_out, g_out_swap = (invariant_g(a, b), invariant_g(b, a),
                                    invariant_g(ap, bp), invariant_g(bp, ap))
    s, s_swap, s_out = invariant_s(a, b), invariant_s(b, a), invariant_s(ap, bp)
    return all((
        _rel_close(g, g_swap, rtol),
        _rel_close(g, g_out, rtol),
        _rel_close(g, g_out_swap, rtol),
        _rel_close(s, s_swap, rtol),
        _rel_close(s, s_out, rtol),
    ))
