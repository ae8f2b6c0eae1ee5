"""Derive the entropy-bound constants frozen in ``relboltz.diagnostics``.

C1 = 2 * int int (|x|^2 + p0) exp(-(|x|^2 + p0)) d^3x d^3p over R^3 x R^3.

The x integrals are Gaussian moments: int exp(-|x|^2) = pi^{3/2} and
int |x|^2 exp(-|x|^2) = (3/2) pi^{3/2}.  The p integrals are radial:
I0 = int exp(-p0) d^3p and I1 = int p0 exp(-p0) d^3p, done here by adaptive
quadrature.  For the spatially homogeneous problem (unit volume, x = 0) the
constant reduces to 2 * I1.

Run: python tools/derive_c1.py
"""

import math

from scipy import integrate


def radial(fn):
    val, err = integrate.quad(lambda r: 4 * math.pi * r * r * fn(math.sqrt(1 + r * r)),
                              0, math.inf, epsabs=0, epsrel=1e-13, limit=200)
    return val


if __name__ == "__main__":
    i0 = radial(lambda e: math.exp(-e))
    i1 = radial(lambda e: e * math.exp(-e))
    pi32 = math.pi ** 1.5
    print(f"I0 = {i0!r}")
    print(f"I1 = {i1!r}")
    print(f"C1 (phase space)  = {2 * (1.5 * pi32 * i0 + pi32 * i1)!r}")
    print(f"C1 (homogeneous)  = {2 * i1!r}")
