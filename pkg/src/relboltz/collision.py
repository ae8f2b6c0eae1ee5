"""Quadrature evaluation of the collision operator and its functionals.

For an output node ``p`` the gain and loss integrals are

    Q+(p) = (1/p0) sum_{p1} (dV/p10) sum_Omega w_Omega B f(p') f(p1')
    L(p)  = (1/p0) sum_{p1} (dV/p10) sum_Omega w_Omega B f(p1)

with ``p1`` running over the momentum lattice and ``Omega`` over a
Gauss-Legendre (cos theta) x uniform (psi) rule.  Gridded fields are
interpolated trilinearly at ``p'``, ``p1'`` with zero extension outside the
lattice; closed-form Juttner mixtures are evaluated exactly, which removes
interpolation error in verification runs.

The truncated operator ``Q~_n = (1 + m/n)^(-1) (Q+_n - f L_n)`` uses ``B_n``
and the local momentum mass ``m = sum_p |f| dV``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit, prange

from .errors import InvalidArgument, PositivityViolation
from .kernels import CrossSectionModel, TruncationParams, _bn_value
from .kinematics import _collide, _frame, collide_batch
from .phase_space import DistributionField, JuttnerMixture, MomentumLattice


@dataclass(frozen=True)
class AngularQuadrature:
    """Product rule on the sphere: Gauss-Legendre in cos(theta), uniform in psi."""

    n_theta: int = 16
    n_psi: int = 16

    def __post_init__(self):
        if self.n_theta < 1 or self.n_psi < 1:
            raise InvalidArgument("angular quadrature needs at least one node per direction")

    @property
    def cos_theta(self) -> np.ndarray:
        return np.polynomial.legendre.leggauss(self.n_theta)[0]

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self.cos_theta)

    @property
    def sin_theta(self) -> np.ndarray:
        c = self.cos_theta
        return np.sqrt(1.0 - c * c)

    @property
    def theta_weights(self) -> np.ndarray:
        return np.polynomial.legendre.leggauss(self.n_theta)[1]

    @property
    def psi(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_psi) / self.n_psi

    @property
    def psi_weights(self) -> np.ndarray:
        return np.full(self.n_psi, 2.0 * np.pi / self.n_psi)

    def weights(self) -> np.ndarray:
        """Weights of the ``(theta, psi)`` product nodes; they sum to 4 pi."""
        return np.outer(self.theta_weights, self.psi_weights)

    def packed(self):
        return (self.cos_theta, self.sin_theta, self.theta, self.theta_weights,
                np.cos(self.psi), np.sin(self.psi), self.psi_weights)


@dataclass(frozen=True)
class CollisionInvariant:
    """``psi(p) = b0 + b . p + c0 p0``, optionally replaced by an arbitrary ``test_function``."""

    b0_bar: float = 0.0
    b: tuple = (0.0, 0.0, 0.0)
    c0: float = 0.0
    test_function: Callable | None = None

    @property
    def affine(self) -> bool:
        return self.test_function is None

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.test_function is not None:
            return np.asarray(self.test_function(p), dtype=float)
        p0 = np.sqrt(1.0 + np.einsum("...i,...i->...", p, p))
        return self.b0_bar + p @ np.asarray(self.b, dtype=float) + self.c0 * p0


# Off-lattice values of gridded fields: "exponential" interpolates f / J trilinearly
# and multiplies back by J = exp(a - beta p0 + w.p), fitted to ln f per cell, so any
# Juttner is reproduced exactly; "linear" is plain trilinear interpolation of f.
INTERP_MODES = ("exponential", "linear")
DEFAULT_INTERP = "exponential"


# ---------------------------------------------------------------------------
# compiled core

@njit(cache=True)
def _interp(fv, pmin, h, N, qx, qy, qz):
    ux = (qx - pmin) / h
    uy = (qy - pmin) / h
    uz = (qz - pmin) / h
    top = N - 1
    if ux < 0.0 or uy < 0.0 or uz < 0.0 or ux > top or uy > top or uz > top:
        return 0.0
    i = min(int(ux), N - 2)
    j = min(int(uy), N - 2)
    k = min(int(uz), N - 2)
    wx, wy, wz = ux - i, uy - j, uz - k
    c00 = fv[i, j, k] * (1.0 - wx) + fv[i + 1, j, k] * wx
    c01 = fv[i, j, k + 1] * (1.0 - wx) + fv[i + 1, j, k + 1] * wx
    c10 = fv[i, j + 1, k] * (1.0 - wx) + fv[i + 1, j + 1, k] * wx
    c11 = fv[i, j + 1, k + 1] * (1.0 - wx) + fv[i + 1, j + 1, k + 1] * wx
    c0 = c00 * (1.0 - wy) + c10 * wy
    c1 = c01 * (1.0 - wy) + c11 * wy
    return c0 * (1.0 - wz) + c1 * wz


@njit(cache=True)
def _mixture(comps, qx, qy, qz):
    q0 = math.sqrt(1.0 + qx * qx + qy * qy + qz * qz)
    s = 0.0
    for c in range(comps.shape[0]):
        s += comps[c, 0] * math.exp(-comps[c, 1] * (q0 - comps[c, 2] * qx - comps[c, 3] * qy
                                                   - comps[c, 4] * qz))
    return s


@njit(cache=True)
def _fval(closed, hv, comps, pmin, h, N, wc, qx, qy, qz):
    if closed:
        return _mixture(comps, qx, qy, qz)
    v = _interp(hv, pmin, h, N, qx, qy, qz)
    if wc[5] != 0.0 and v != 0.0:
        v *= math.exp(wc[0] - wc[1] * math.sqrt(1.0 + qx * qx + qy * qy + qz * qz)
                      + wc[2] * qx + wc[3] * qy + wc[4] * qz)
    return v


@njit(parallel=True, cache=True)
def _collision_sums(axis, fv, hv, wc, closed, comps, kind, c0, a, b, gg, tg, tab, n,
                    ct, st, th, wt, cp, sp, wp, out_idx, want_gain, want_entropy,
                    want_weak, wf_coef, gain_out, loss_out, ent_out, bad_out,
                    wf_out, wf_abs_out):
    """Per output node sums over ``p1`` nodes and angular nodes.

    Results are *not* divided by ``p0`` or multiplied by the cell volume;
    the Python wrapper applies those factors.
    """
    N = axis.shape[0]
    pmin = axis[0]
    h = axis[1] - axis[0]
    nt = ct.shape[0]
    npsi = cp.shape[0]
    for k in prange(out_idx.shape[0]):
        flat = out_idx[k]
        i0 = flat // (N * N)
        j0 = (flat // N) % N
        l0 = flat % N
        px, py, pz = axis[i0], axis[j0], axis[l0]
        p0 = math.sqrt(1.0 + px * px + py * py + pz * pz)
        if closed:
            fp = _mixture(comps, px, py, pz)
        else:
            fp = fv[i0, j0, l0]
        bk = np.empty(nt)
        gsum = 0.0
        lsum = 0.0
        esum = 0.0
        wsum = 0.0
        wabs = 0.0
        nbad = 0
        for i1 in range(N):
            for j1 in range(N):
                for l1 in range(N):
                    qx, qy, qz = axis[i1], axis[j1], axis[l1]
                    q0 = math.sqrt(1.0 + qx * qx + qy * qy + qz * qz)
                    e_sum = p0 + q0
                    if n > 0 and e_sum > n:
                        continue
                    fr = _frame(px, py, pz, qx, qy, qz)
                    g = fr[5]
                    if g <= 0.0 or (n > 0 and g < 1.0 / n):
                        continue
                    bw = 0.0
                    for t in range(nt):
                        bk[t] = _bn_value(kind, c0, a, b, gg, tg, tab, n, g, th[t], st[t], e_sum) * wt[t]
                        bw += bk[t]
                    if bw == 0.0:
                        continue
                    if closed:
                        fq = _mixture(comps, qx, qy, qz)
                    else:
                        fq = fv[i1, j1, l1]
                    wpsum = 0.0
                    for u in range(npsi):
                        wpsum += wp[u]
                    lsum += fq * bw * wpsum / q0
                    if not (want_gain or want_entropy or want_weak):
                        continue
                    F = fp * fq
                    inner_g = 0.0
                    inner_e = 0.0
                    inner_w = 0.0
                    inner_a = 0.0
                    for t in range(nt):
                        if bk[t] == 0.0:
                            continue
                        for u in range(npsi):
                            r = _collide(fr, ct[t], st[t], cp[u], sp[u])
                            f1 = _fval(closed, hv, comps, pmin, h, N, wc, r[0], r[1], r[2])
                            if f1 == 0.0 and not (want_entropy or want_weak):
                                continue
                            f2 = _fval(closed, hv, comps, pmin, h, N, wc, r[3], r[4], r[5])
                            Fp = f1 * f2
                            wgt = bk[t] * wp[u]
                            inner_g += wgt * Fp
                            if want_entropy:
                                if Fp <= 0.0 or F <= 0.0:
                                    nbad += 1
                                elif Fp != F:
                                    inner_e += wgt * (Fp - F) * math.log(Fp / F)
                            if want_weak:
                                pp0 = math.sqrt(1.0 + r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
                                pq0 = math.sqrt(1.0 + r[3] * r[3] + r[4] * r[4] + r[5] * r[5])
                                psi_in = (2.0 * wf_coef[0] + wf_coef[1] * (px + qx)
                                          + wf_coef[2] * (py + qy) + wf_coef[3] * (pz + qz)
                                          + wf_coef[4] * (p0 + q0))
                                psi_out = (2.0 * wf_coef[0] + wf_coef[1] * (r[0] + r[3])
                                           + wf_coef[2] * (r[1] + r[4]) + wf_coef[3] * (r[2] + r[5])
                                           + wf_coef[4] * (pp0 + pq0))
                                mag = (abs(wf_coef[0]) * 4.0
                                       + abs(wf_coef[1]) * (abs(px) + abs(qx) + abs(r[0]) + abs(r[3]))
                                       + abs(wf_coef[2]) * (abs(py) + abs(qy) + abs(r[1]) + abs(r[4]))
                                       + abs(wf_coef[3]) * (abs(pz) + abs(qz) + abs(r[2]) + abs(r[5]))
                                       + abs(wf_coef[4]) * (p0 + q0 + pp0 + pq0))
                                inner_w += wgt * (Fp - F) * (psi_in - psi_out)
                                inner_a += wgt * abs(Fp - F) * mag
                    gsum += inner_g / q0
                    esum += inner_e / q0
                    wsum += inner_w / q0
                    wabs += inner_a / q0
        gain_out[k] = gsum
        loss_out[k] = lsum
        ent_out[k] = esum
        bad_out[k] = nbad
        wf_out[k] = wsum
        wf_abs_out[k] = wabs


@njit(cache=True)
def _geometry_block(px, py, pz, axis, kind, c0, a, b, gg, tg, tab, n,
                    ct, st, th, wt, cp, sp, wp, p_out, p1_out, w_out, q_idx):
    """All post-collision pairs for one output node (used by the generic path)."""
    N = axis.shape[0]
    p0 = math.sqrt(1.0 + px * px + py * py + pz * pz)
    m = 0
    for i1 in range(N):
        for j1 in range(N):
            for l1 in range(N):
                qx, qy, qz = axis[i1], axis[j1], axis[l1]
                q0 = math.sqrt(1.0 + qx * qx + qy * qy + qz * qz)
                e_sum = p0 + q0
                if n > 0 and e_sum > n:
                    continue
                fr = _frame(px, py, pz, qx, qy, qz)
                g = fr[5]
                if g <= 0.0 or (n > 0 and g < 1.0 / n):
                    continue
                for t in range(ct.shape[0]):
                    bt = _bn_value(kind, c0, a, b, gg, tg, tab, n, g, th[t], st[t], e_sum)
                    if bt == 0.0:
                        continue
                    for u in range(cp.shape[0]):
                        r = _collide(fr, ct[t], st[t], cp[u], sp[u])
                        p_out[m, 0], p_out[m, 1], p_out[m, 2] = r[0], r[1], r[2]
                        p1_out[m, 0], p1_out[m, 1], p1_out[m, 2] = r[3], r[4], r[5]
                        w_out[m] = bt * wt[t] * wp[u] / q0
                        q_idx[m] = (i1 * N + j1) * N + l1
                        m += 1
    return m


# ---------------------------------------------------------------------------
# Python-level evaluation

def _closed_components(form):
    """Effective compiled parameters ``(a, beta*gamma, u)`` of a Juttner mixture."""
    comps = []
    for a, beta, ux, uy, uz in form.components:
        gam = 1.0 / math.sqrt(1.0 - (ux * ux + uy * uy + uz * uz))
        comps.append([a, beta * gam, ux, uy, uz])
    return np.array(comps, dtype=float).reshape(-1, 5)


def _cell_source(f: DistributionField, x_cell: int):
    """Decide how the kernels see ``f`` at one spatial cell."""
    fv = np.ascontiguousarray(f.values[x_cell])
    form = f.closed_form
    if isinstance(form, JuttnerMixture):
        scale = float(form.spatial_part(f.grid.points()[x_cell]))
        comps = _closed_components(form)
        comps[:, 0] *= scale
        return fv, True, comps, None
    if form is not None:
        x = f.grid.points()[x_cell]
        return fv, False, np.zeros((0, 5)), (lambda q: form(np.broadcast_to(x, q.shape), q))
    return fv, False, np.zeros((0, 5)), None


def exponential_fit(values, lattice: MomentumLattice) -> np.ndarray:
    """Least-squares fit ``ln f ~ a - beta p0 + w.p`` weighted by ``f``; returns ``(a, beta, w)``.

    Nodes with ``f <= 0`` are ignored; a field with fewer than five positive
    nodes gets the zero fit.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    pos = v > 0
    if np.count_nonzero(pos) < 5:
        return np.zeros(5)
    ps = lattice.points()[pos]
    p0 = np.sqrt(1.0 + np.einsum("ij,ij->i", ps, ps))
    design = np.column_stack([np.ones(len(ps)), -p0, ps])
    sw = np.sqrt(v[pos] / v[pos].max())
    coef, *_ = np.linalg.lstsq(design * sw[:, None], np.log(v[pos]) * sw, rcond=None)
    return coef


def interpolation_data(fv, lattice: MomentumLattice, interp: str | None = None):
    """Lattice array handed to the trilinear interpolator and its exponential factor.

    Returns ``(hv, wc)``: ``wc[:5]`` are the fitted ``(a, beta, w)`` and
    ``wc[5]`` flags whether the factor is active.
    """
    mode = DEFAULT_INTERP if interp is None else interp
    if mode not in INTERP_MODES:
        raise InvalidArgument(f"unknown interpolation mode {mode!r}; use one of {INTERP_MODES}")
    wc = np.zeros(6)
    if mode == "linear" or not np.all(np.asarray(fv) > 0):
        return np.ascontiguousarray(fv), wc
    coef = exponential_fit(fv, lattice)
    ps = lattice.points()
    expo = coef[0] - coef[1] * lattice.energies() + ps @ coef[2:5]
    wc[:5] = coef
    wc[5] = 1.0
    return np.ascontiguousarray(fv / np.exp(expo).reshape(lattice.shape)), wc


def _node_indices(lattice: MomentumLattice, p_node):
    N = lattice.n_axis
    if p_node is None:
        return np.arange(lattice.size, dtype=np.int64)
    arr = np.atleast_1d(np.asarray(p_node, dtype=np.int64))
    if arr.ndim == 1 and arr.size == 3 and np.ndim(p_node) == 1 and isinstance(p_node, tuple):
        arr = np.array([(arr[0] * N + arr[1]) * N + arr[2]], dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= lattice.size):
        raise InvalidArgument("momentum node index out of range")
    return arr


@dataclass
class CellSums:
    """Raw per-node quadrature sums at one spatial cell (already divided by p0, times dV)."""

    gain: np.ndarray
    loss: np.ndarray
    entropy: np.ndarray
    bad: int
    weak: np.ndarray
    weak_abs: np.ndarray
    f_at_nodes: np.ndarray


def cell_sums(f: DistributionField, x_cell: int, model: CrossSectionModel,
              trunc: TruncationParams | None, quad: AngularQuadrature, p_nodes=None,
              want_gain=True, want_entropy=False, weak_coef=None,
              interp: str | None = None) -> CellSums:
    lat = f.lattice
    idx = _node_indices(lat, p_nodes)
    fv, closed, comps, generic = _cell_source(f, x_cell)
    n = 0 if trunc is None else int(trunc.n)
    k = idx.size
    outs = [np.zeros(k) for _ in range(2)]
    ent, wfo, wfa = np.zeros(k), np.zeros(k), np.zeros(k)
    bad = np.zeros(k, dtype=np.int64)
    ps = lat.points()[idx]
    p0 = np.sqrt(1.0 + np.einsum("ij,ij->i", ps, ps))
    dv = lat.cell_volume
    if generic is not None:
        g_, l_, e_, nb, fat = _generic_sums(generic, lat, model, n, quad, idx, want_gain, want_entropy)
        if weak_coef is not None:
            raise InvalidArgument("affine weak form needs a gridded or Juttner-mixture field")
        return CellSums(g_ * dv / p0, l_ * dv / p0, e_ * dv / p0, nb, wfo, wfa, fat)
    coef = np.zeros(5) if weak_coef is None else np.asarray(weak_coef, dtype=float)
    hv, wc = interpolation_data(fv, lat, interp)
    _collision_sums(lat.axis, fv, hv, wc, closed, comps, *model.packed(), n, *quad.packed(), idx,
                    bool(want_gain), bool(want_entropy), weak_coef is not None, coef,
                    outs[0], outs[1], ent, bad, wfo, wfa)
    if closed:
        fat = np.array([_mixture_np(comps, q) for q in ps])
    else:
        fat = fv.reshape(-1)[idx]
    return CellSums(outs[0] * dv / p0, outs[1] * dv / p0, ent * dv / p0, int(bad.sum()),
                    wfo * dv / p0, wfa * dv / p0, fat)


def _mixture_np(comps, q):
    return float(_mixture(comps, float(q[0]), float(q[1]), float(q[2])))


def _generic_sums(func, lat, model, n, quad, idx, want_gain, want_entropy):
    """Numpy path for arbitrary closed-form callables."""
    axis = lat.axis
    pts = lat.points()
    f_nodes = np.asarray(func(pts), dtype=float)
    packed_q = quad.packed()
    cap = lat.size * quad.n_theta * quad.n_psi
    p_out, p1_out = np.empty((cap, 3)), np.empty((cap, 3))
    w_out, q_idx = np.empty(cap), np.empty(cap, dtype=np.int64)
    gains, losses, ents = np.zeros(idx.size), np.zeros(idx.size), np.zeros(idx.size)
    nbad = 0
    for k, flat in enumerate(idx):
        px, py, pz = pts[flat]
        m = _geometry_block(px, py, pz, axis, *model.packed(), n, *packed_q,
                            p_out, p1_out, w_out, q_idx)
        w = w_out[:m]
        fq = f_nodes[q_idx[:m]]
        losses[k] = float(np.sum(w * fq))
        if want_gain or want_entropy:
            Fp = np.asarray(func(p_out[:m]), float) * np.asarray(func(p1_out[:m]), float)
            gains[k] = float(np.sum(w * Fp))
            if want_entropy:
                F = f_nodes[flat] * fq
                bad = (Fp <= 0) | (F <= 0)
                nbad += int(bad.sum())
                ok = ~bad & (Fp != F)
                ents[k] = float(np.sum(w[ok] * (Fp[ok] - F[ok]) * np.log(Fp[ok] / F[ok])))
    return gains, losses, ents, nbad, f_nodes[idx]


def local_mass(f: DistributionField, x_cell: int) -> float:
    """``int |f| d^3p`` at one spatial cell."""
    return float(np.sum(np.abs(f.values[x_cell])) * f.lattice.cell_volume)


def normalization(f: DistributionField, x_cell: int, trunc: TruncationParams) -> float:
    return 1.0 / (1.0 + local_mass(f, x_cell) / trunc.n)


def gain(f, x_cell, p_node, model, trunc=None, quad=None) -> float:
    """Gain term ``Q+`` (with ``B_n`` when ``trunc`` is given) at one node."""
    quad = quad or AngularQuadrature()
    s = cell_sums(f, x_cell, model, trunc, quad, p_nodes=[_flat(f.lattice, p_node)])
    return float(s.gain[0])


def loss_operator(f, x_cell, p_node, model, trunc=None, quad=None) -> float:
    """Loss frequency ``L(f)`` at one node; ``Q- = f(p) L(f)``."""
    quad = quad or AngularQuadrature()
    s = cell_sums(f, x_cell, model, trunc, quad, p_nodes=[_flat(f.lattice, p_node)],
                  want_gain=False)
    return float(s.loss[0])


def q_tilde(f, x_cell, p_node, model, trunc: TruncationParams, quad=None) -> float:
    """Normalised truncated operator ``(1 + m/n)^(-1) (Q+_n - f L_n)`` at one node."""
    if trunc is None:
        raise InvalidArgument("q_tilde needs truncation parameters")
    quad = quad or AngularQuadrature()
    s = cell_sums(f, x_cell, model, trunc, quad, p_nodes=[_flat(f.lattice, p_node)])
    return float(normalization(f, x_cell, trunc) * (s.gain[0] - s.f_at_nodes[0] * s.loss[0]))


def _flat(lattice, p_node) -> int:
    if isinstance(p_node, (tuple, list, np.ndarray)) and len(p_node) == 3:
        i, j, k = (int(v) for v in p_node)
        N = lattice.n_axis
        if not all(0 <= v < N for v in (i, j, k)):
            raise InvalidArgument("momentum node index out of range")
        return (i * N + j) * N + k
    flat = int(p_node)
    if not 0 <= flat < lattice.size:
        raise InvalidArgument("momentum node index out of range")
    return flat


@dataclass
class CollisionField:
    """Field-level evaluation: arrays shaped like ``f.values``."""

    gain: np.ndarray
    loss: np.ndarray
    norm: np.ndarray
    q: np.ndarray

    @property
    def gain_scale(self) -> float:
        return float(np.max(np.abs(self.gain * self.norm[:, None, None, None])))


def collision_field(f: DistributionField, model: CrossSectionModel, trunc: TruncationParams | None,
                    quad: AngularQuadrature) -> CollisionField:
    """Evaluate ``Q~_n`` (or plain ``Q`` when ``trunc`` is None) at every node."""
    shape = f.values.shape
    gain_all = np.zeros(shape)
    loss_all = np.zeros(shape)
    norms = np.ones(shape[0])
    if model.is_zero:
        return CollisionField(gain_all, loss_all, norms, np.zeros(shape))
    for x in range(shape[0]):
        s = cell_sums(f, x, model, trunc, quad)
        gain_all[x] = s.gain.reshape(shape[1:])
        loss_all[x] = s.loss.reshape(shape[1:])
        if trunc is not None:
            norms[x] = normalization(f, x, trunc)
    fvals = f.values
    if isinstance(f.closed_form, JuttnerMixture):
        fvals = np.stack([cell_sums_fvals(f, x) for x in range(shape[0])])
    q = norms[:, None, None, None] * (gain_all - fvals * loss_all)
    return CollisionField(gain_all, loss_all, norms, q)


def conservative_projection(q, f: DistributionField) -> np.ndarray:
    """Remove the part of ``q`` that changes mass, momentum or energy, cell by cell.

    ``q_c = q - f * (C^T lam)`` with ``C`` the rows ``(1, px, py, pz, p0)``
    and ``lam`` chosen so that ``C q_c = 0``; the ``f`` weighting keeps the
    correction where the distribution lives and of the size of the
    quadrature error in ``q``.
    """
    lat = f.lattice
    ps = lat.points()
    C = np.vstack([np.ones(lat.size), ps.T, lat.energies()])
    out = np.empty_like(q)
    for x in range(q.shape[0]):
        fv = np.abs(f.values[x].reshape(-1))
        qv = q[x].reshape(-1)
        A = (C * fv) @ C.T
        if not np.any(fv > 0):
            out[x] = q[x]
            continue
        lam = np.linalg.lstsq(A, C @ qv, rcond=None)[0]
        out[x] = (qv - fv * (C.T @ lam)).reshape(lat.shape)
    return out


def cell_sums_fvals(f: DistributionField, x_cell: int) -> np.ndarray:
    """Closed-form values at the lattice nodes as the compiled kernels evaluate them."""
    _, _, comps, _ = _cell_source(f, x_cell)
    return np.array([_mixture_np(comps, q) for q in f.lattice.points()]).reshape(f.lattice.shape)


def weak_form(f: DistributionField, psi, model: CrossSectionModel, trunc: TruncationParams | None = None,
              quad: AngularQuadrature | None = None, return_scale: bool = False):
    """Symmetrised weak form of the collision operator tested against ``psi``.

    ``(1/4) sum B/(p0 p10) [f'f1' - f f1] [psi + psi1 - psi' - psi1'] w dV^2``,
    summed over spatial cells with their volumes.  For an affine
    :class:`CollisionInvariant` the bracket is evaluated from the same
    post-collision momenta, so it cancels pointwise.  With
    ``return_scale`` the L1 magnitude of the summand is returned as well.
    """
    quad = quad or AngularQuadrature()
    if not isinstance(psi, CollisionInvariant):
        psi = CollisionInvariant(test_function=psi)
    dvx = f.grid.cell_volume
    total, scale = 0.0, 0.0
    for x in range(f.grid.n_cells):
        norm = normalization(f, x, trunc) if trunc is not None else 1.0
        if psi.affine:
            coef = [psi.b0_bar, *psi.b, psi.c0]
            s = cell_sums(f, x, model, trunc, quad, weak_coef=coef)
            total += 0.25 * norm * dvx * float(np.sum(s.weak)) * f.lattice.cell_volume
            scale += 0.25 * norm * dvx * float(np.sum(s.weak_abs)) * f.lattice.cell_volume
        else:
            v, a = _weak_generic(f, x, psi, model, trunc, quad)
            total += 0.25 * norm * dvx * v
            scale += 0.25 * norm * dvx * a
    return (total, scale) if return_scale else total


def _weak_generic(f, x_cell, psi, model, trunc, quad):
    lat = f.lattice
    fv, closed, comps, generic = _cell_source(f, x_cell)
    pts = lat.points()
    if closed:
        fnode = np.array([_mixture_np(comps, q) for q in pts])

        def fval(q):
            return np.array([_mixture_np(comps, r) for r in q]) if len(q) else np.zeros(0)
    elif generic is not None:
        fnode = np.asarray(generic(pts), float)
        fval = generic
    else:
        fnode = fv.reshape(-1)

        def fval(q):
            return interpolate(fv, lat, q)
    n = 0 if trunc is None else int(trunc.n)
    cap = lat.size * quad.n_theta * quad.n_psi
    p_out, p1_out = np.empty((cap, 3)), np.empty((cap, 3))
    w_out, q_idx = np.empty(cap), np.empty(cap, dtype=np.int64)
    psi_nodes = psi(pts)
    dv = lat.cell_volume
    total, mag = 0.0, 0.0
    for flat in range(lat.size):
        px, py, pz = pts[flat]
        m = _geometry_block(px, py, pz, lat.axis, *model.packed(), n, *quad.packed(),
                            p_out, p1_out, w_out, q_idx)
        if m == 0:
            continue
        p0 = math.sqrt(1.0 + px * px + py * py + pz * pz)
        w = w_out[:m] / p0
        diff = fval(p_out[:m]) * fval(p1_out[:m]) - fnode[flat] * fnode[q_idx[:m]]
        a, b_, c, d = psi_nodes[flat], psi_nodes[q_idx[:m]], psi(p_out[:m]), psi(p1_out[:m])
        total += float(np.sum(w * diff * (a + b_ - c - d)))
        mag += float(np.sum(w * np.abs(diff) * (abs(a) + np.abs(b_) + np.abs(c) + np.abs(d))))
    return total * dv * dv, mag * dv * dv


def interpolate(values, lattice: MomentumLattice, q) -> np.ndarray:
    """Trilinear interpolation of lattice values at points ``q`` (zero outside)."""
    q = np.asarray(q, dtype=float).reshape(-1, 3)
    fv = np.ascontiguousarray(values, dtype=float).reshape(lattice.shape)
    out = np.empty(len(q))
    _interp_many(fv, lattice.axis[0], lattice.spacing, lattice.n_axis, q, out)
    return out


@njit(cache=True)
def _interp_many(fv, pmin, h, N, q, out):
    for m in range(q.shape[0]):
        out[m] = _interp(fv, pmin, h, N, q[m, 0], q[m, 1], q[m, 2])


def entropy_production(f: DistributionField, model: CrossSectionModel,
                       trunc: TruncationParams | None = None,
                       quad: AngularQuadrature | None = None) -> float:
    """Entropy production ``D`` (non-negative summand by summand).

    ``(1/4) sum B/(p0 p10) (f'f1' - f f1) ln(f'f1' / (f f1)) w dV^2`` per
    spatial cell, scaled by the ``Q~_n`` normalisation when ``trunc`` is set.
    Raises :class:`PositivityViolation` when ``f`` is not strictly positive
    at a lattice node or a post-collision momentum leaves the lattice (where
    the zero extension makes the logarithm infinite).
    """
    quad = quad or AngularQuadrature()
    if np.any(f.values <= 0):
        raise PositivityViolation("entropy production needs a strictly positive field")
    if model.is_zero:
        return 0.0
    total = 0.0
    for x in range(f.grid.n_cells):
        s = cell_sums(f, x, model, trunc, quad, want_gain=False, want_entropy=True)
        if s.bad:
            raise PositivityViolation(
                f"{s.bad} post-collision evaluations hit f = 0 (momenta leaving the lattice); "
                "use a smaller truncation n or a larger p_max")
        norm = normalization(f, x, trunc) if trunc is not None else 1.0
        total += 0.25 * norm * f.grid.cell_volume * float(np.sum(s.entropy)) * f.lattice.cell_volume
    return total


def collision_geometry(p, lattice: MomentumLattice, model, trunc, quad):
    """Post-collision momenta and weights ``B w / p10`` for one output momentum ``p``.

    Returned as ``(p_prime, p1_prime, weight, p1_index)``; useful for
    building independent oracles.
    """
    quad = quad or AngularQuadrature()
    n = 0 if trunc is None else int(trunc.n)
    cap = lattice.size * quad.n_theta * quad.n_psi
    p_out, p1_out = np.empty((cap, 3)), np.empty((cap, 3))
    w_out, q_idx = np.empty(cap), np.empty(cap, dtype=np.int64)
    px, py, pz = (float(v) for v in p)
    m = _geometry_block(px, py, pz, lattice.axis, *model.packed(), n, *quad.packed(),
                        p_out, p1_out, w_out, q_idx)
    return p_out[:m].copy(), p1_out[:m].copy(), w_out[:m].copy(), q_idx[:m].copy()


__all__ = [
    "AngularQuadrature", "CollisionInvariant", "CollisionField", "gain", "loss_operator",
    "q_tilde", "weak_form", "entropy_production", "collision_field", "interpolate",
    "collide_batch", "collision_geometry", "local_mass", "normalization",
    "conservative_projection", "exponential_fit", "interpolation_data",
]
