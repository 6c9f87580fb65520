"""Double-double (about 32 significant digits) arrays for transport algebra.

The conjugated residual of a truncated hierarchy is a sum of terms that
cancel across twenty-odd orders of magnitude, so float64 cannot resolve it.
A real dd array is a pair (hi, lo) of float64 arrays with |lo| <= ulp(hi)/2;
``DDC`` bundles two of them into a complex field.

Kernels follow the classical Dekker / Knuth error-free transformations.
"""
from __future__ import annotations

import mpmath
import numpy as np
from numba import njit

from .stencils import stencil_table, _axis_tables

_SPLIT = 134217729.0  # 2**27 + 1


@njit(inline="always", cache=True)
def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(inline="always", cache=True)
def quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


@njit(inline="always", cache=True)
def split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


@njit(inline="always", cache=True)
def two_prod(a, b):
    p = a * b
    ah, al = split(a)
    bh, bl = split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(inline="always", cache=True)
def dd_add(ah, al, bh, bl):
    s1, s2 = two_sum(ah, bh)
    t1, t2 = two_sum(al, bl)
    s2 += t1
    s1, s2 = quick_two_sum(s1, s2)
    s2 += t2
    return quick_two_sum(s1, s2)


@njit(inline="always", cache=True)
def dd_mul(ah, al, bh, bl):
    p, e = two_prod(ah, bh)
    e += ah * bl + al * bh
    return quick_two_sum(p, e)


@njit(inline="always", cache=True)
def dd_mul_d(ah, al, b):
    p, e = two_prod(ah, b)
    e += al * b
    return quick_two_sum(p, e)


# ----------------------------------------------------------------------------
# elementwise kernels on flat arrays; a coefficient of length 1 broadcasts

@njit(cache=True)
def _k_add(ah, al, bh, bl, oh, ol, sign):
    for i in range(ah.size):
        oh[i], ol[i] = dd_add(ah[i], al[i], sign * bh[i], sign * bl[i])


@njit(cache=True)
def _k_acc_mul_d(acch, accl, xh, xl, c):
    """acc += x * c (c float array, broadcast if size 1)."""
    one = c.size == 1
    for i in range(acch.size):
        ci = c[0] if one else c[i]
        if ci == 0.0:
            continue
        ph, pl = dd_mul_d(xh[i], xl[i], ci)
        acch[i], accl[i] = dd_add(acch[i], accl[i], ph, pl)


@njit(cache=True)
def _k_mul_d(xh, xl, c, oh, ol):
    one = c.size == 1
    for i in range(xh.size):
        ci = c[0] if one else c[i]
        oh[i], ol[i] = dd_mul_d(xh[i], xl[i], ci)


@njit(cache=True)
def _k_mul_dd_scalar(xh, xl, sh, sl, oh, ol):
    for i in range(xh.size):
        oh[i], ol[i] = dd_mul(xh[i], xl[i], sh, sl)


@njit(cache=True)
def _k_mul_dd(xh, xl, yh, yl, oh, ol):
    for i in range(xh.size):
        oh[i], ol[i] = dd_mul(xh[i], xl[i], yh[i], yl[i])


@njit(cache=True)
def _k_stencil(xh, xl, start, rowid, W, sh, sl, oh, ol):
    """Apply integer-weight stencil rows along axis 1 of (pre, n, post) views."""
    pre, n, post = xh.shape
    K = W.shape[1]
    for a in range(pre):
        for i in range(n):
            r = rowid[i]
            st = start[i]
            for b in range(post):
                acch = 0.0
                accl = 0.0
                for k in range(K):
                    w = W[r, k]
                    if w != 0.0:
                        ph, pl = two_prod(w, xh[a, st + k, b])
                        pl += w * xl[a, st + k, b]
                        acch, accl = dd_add(acch, accl, ph, pl)
                oh[a, i, b], ol[a, i, b] = dd_mul(acch, accl, sh, sl)


@njit(cache=True)
def _rk4_march(Sr_h, Sr_l, Si_h, Si_l, q, has_q, y0r_h, y0r_l, y0i_h, y0i_l,
               i0, hh, hl, Yr_h, Yr_l, Yi_h, Yi_l):
    """March y' = -q y + S along axis 1 of (M, Ns) arrays from plane i0.

    Values between grid planes come from cubic interpolation with weights
    (-1, 9, 9, -1)/16 in the interior and (5, 15, -5, 1)/16 next to an edge.
    """
    M, Ns = Sr_h.shape
    h2h, h2l = dd_mul_d(hh, hl, 0.5)
    # h/6 in dd: h * (1/6)
    s6h = 0.16666666666666666
    s6l = 9.25185853854297e-18
    h6h, h6l = dd_mul(hh, hl, s6h, s6l)
    mh2h, mh2l = -h2h, -h2l
    mhh, mhl = -hh, -hl
    mh6h, mh6l = -h6h, -h6l
    for m in range(M):
        for direction in range(2):
            if direction == 0:
                sg = 1
                ah, al, bh, bl, ch, cl = h2h, h2l, hh, hl, h6h, h6l
            else:
                sg = -1
                ah, al, bh, bl, ch, cl = mh2h, mh2l, mhh, mhl, mh6h, mh6l
            yrh, yrl, yih, yil = y0r_h[m], y0r_l[m], y0i_h[m], y0i_l[m]
            Yr_h[m, i0], Yr_l[m, i0], Yi_h[m, i0], Yi_l[m, i0] = yrh, yrl, yih, yil
            i = i0
            while True:
                j = i + sg
                if j < 0 or j >= Ns:
                    break
                # cubic midpoint stencil between i and j
                lo = min(i, j)
                if lo - 1 >= 0 and lo + 2 < Ns:
                    k0 = lo - 1
                    w0, w1, w2, w3 = -1.0, 9.0, 9.0, -1.0
                elif lo - 1 < 0:
                    k0 = lo
                    w0, w1, w2, w3 = 5.0, 15.0, -5.0, 1.0
                else:
                    k0 = lo - 2
                    w0, w1, w2, w3 = 1.0, -5.0, 15.0, 5.0
                smrh = 0.0
                smrl = 0.0
                smih = 0.0
                smil = 0.0
                qm = 0.0
                for kk in range(4):
                    w = (w0, w1, w2, w3)[kk] * 0.0625
                    idx = k0 + kk
                    ph, pl = dd_mul_d(Sr_h[m, idx], Sr_l[m, idx], w)
                    smrh, smrl = dd_add(smrh, smrl, ph, pl)
                    ph, pl = dd_mul_d(Si_h[m, idx], Si_l[m, idx], w)
                    smih, smil = dd_add(smih, smil, ph, pl)
                    if has_q:
                        qm += w * q[m, idx]
                qi = q[m, i] if has_q else 0.0
                qj = q[m, j] if has_q else 0.0
                # stage 1
                k1rh, k1rl = dd_mul_d(yrh, yrl, -qi)
                k1rh, k1rl = dd_add(k1rh, k1rl, Sr_h[m, i], Sr_l[m, i])
                k1ih, k1il = dd_mul_d(yih, yil, -qi)
                k1ih, k1il = dd_add(k1ih, k1il, Si_h[m, i], Si_l[m, i])
                # stage 2
                th, tl = dd_mul(k1rh, k1rl, ah, al)
                trh, trl = dd_add(yrh, yrl, th, tl)
                th, tl = dd_mul(k1ih, k1il, ah, al)
                tih, til = dd_add(yih, yil, th, tl)
                k2rh, k2rl = dd_mul_d(trh, trl, -qm)
                k2rh, k2rl = dd_add(k2rh, k2rl, smrh, smrl)
                k2ih, k2il = dd_mul_d(tih, til, -qm)
                k2ih, k2il = dd_add(k2ih, k2il, smih, smil)
                # stage 3
                th, tl = dd_mul(k2rh, k2rl, ah, al)
                trh, trl = dd_add(yrh, yrl, th, tl)
                th, tl = dd_mul(k2ih, k2il, ah, al)
                tih, til = dd_add(yih, yil, th, tl)
                k3rh, k3rl = dd_mul_d(trh, trl, -qm)
                k3rh, k3rl = dd_add(k3rh, k3rl, smrh, smrl)
                k3ih, k3il = dd_mul_d(tih, til, -qm)
                k3ih, k3il = dd_add(k3ih, k3il, smih, smil)
                # stage 4
                th, tl = dd_mul(k3rh, k3rl, bh, bl)
                trh, trl = dd_add(yrh, yrl, th, tl)
                th, tl = dd_mul(k3ih, k3il, bh, bl)
                tih, til = dd_add(yih, yil, th, tl)
                k4rh, k4rl = dd_mul_d(trh, trl, -qj)
                k4rh, k4rl = dd_add(k4rh, k4rl, Sr_h[m, j], Sr_l[m, j])
                k4ih, k4il = dd_mul_d(tih, til, -qj)
                k4ih, k4il = dd_add(k4ih, k4il, Si_h[m, j], Si_l[m, j])
                # combine k1 + 2 k2 + 2 k3 + k4
                srh, srl = dd_add(k2rh, k2rl, k3rh, k3rl)
                srh, srl = srh * 2.0, srl * 2.0
                srh, srl = dd_add(srh, srl, k1rh, k1rl)
                srh, srl = dd_add(srh, srl, k4rh, k4rl)
                sih, sil = dd_add(k2ih, k2il, k3ih, k3il)
                sih, sil = sih * 2.0, sil * 2.0
                sih, sil = dd_add(sih, sil, k1ih, k1il)
                sih, sil = dd_add(sih, sil, k4ih, k4il)
                th, tl = dd_mul(srh, srl, ch, cl)
                yrh, yrl = dd_add(yrh, yrl, th, tl)
                th, tl = dd_mul(sih, sil, ch, cl)
                yih, yil = dd_add(yih, yil, th, tl)
                Yr_h[m, j], Yr_l[m, j], Yi_h[m, j], Yi_l[m, j] = yrh, yrl, yih, yil
                i = j


# ----------------------------------------------------------------------------
# scalars

def dd_scalar(x):
    """Split an mpmath (or exact) number into a (hi, lo) float pair."""
    with mpmath.workprec(240):
        v = mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else x
        hi = float(v)
        lo = float(v - mpmath.mpf(hi))
    return hi, lo


def dd_pow(base, expo):
    """base**expo as a dd scalar (exact rational base, real exponent)."""
    with mpmath.workprec(240):
        return dd_scalar(mpmath.power(mpmath.mpf(base), mpmath.mpf(expo)))


def dd_recip(x):
    with mpmath.workprec(240):
        return dd_scalar(1 / mpmath.mpf(x))


# ----------------------------------------------------------------------------

class DDReal:
    """A real double-double array."""

    __slots__ = ("hi", "lo")

    def __init__(self, hi, lo=None):
        self.hi = np.ascontiguousarray(hi, dtype=np.float64)
        self.lo = np.zeros_like(self.hi) if lo is None else np.ascontiguousarray(lo, dtype=np.float64)

    @property
    def shape(self):
        return self.hi.shape

    def copy(self):
        return DDReal(self.hi.copy(), self.lo.copy())

    def _binary(self, other, sign):
        oh = np.empty_like(self.hi)
        ol = np.empty_like(self.hi)
        _k_add(self.hi.ravel(), self.lo.ravel(), other.hi.ravel(), other.lo.ravel(),
               oh.ravel(), ol.ravel(), float(sign))
        return DDReal(oh, ol)

    def __add__(self, other):
        return self._binary(other, 1)

    def __sub__(self, other):
        return self._binary(other, -1)

    def __neg__(self):
        return DDReal(-self.hi, -self.lo)

    def mul_f(self, c):
        c = _coef(c, self.shape)
        oh = np.empty_like(self.hi)
        ol = np.empty_like(self.hi)
        _k_mul_d(self.hi.ravel(), self.lo.ravel(), c, oh.ravel(), ol.ravel())
        return DDReal(oh, ol)

    def mul_dd(self, s):
        """Multiply by a dd scalar (hi, lo) or by another DDReal."""
        oh = np.empty_like(self.hi)
        ol = np.empty_like(self.hi)
        if isinstance(s, DDReal):
            _k_mul_dd(self.hi.ravel(), self.lo.ravel(), s.hi.ravel(), s.lo.ravel(),
                      oh.ravel(), ol.ravel())
        else:
            _k_mul_dd_scalar(self.hi.ravel(), self.lo.ravel(), float(s[0]), float(s[1]),
                             oh.ravel(), ol.ravel())
        return DDReal(oh, ol)

    def acc_mul_f(self, x, c):
        """In place: self += x * c."""
        c = _coef(c, self.shape)
        _k_acc_mul_d(self.hi.ravel(), self.lo.ravel(), x.hi.ravel(), x.lo.ravel(), c)
        return self

    def deriv(self, axis, m, h, order=4):
        """m-th derivative along ``axis``; h is the spacing as a dd scalar."""
        shape = self.shape
        n = shape[axis]
        pre = int(np.prod(shape[:axis]))
        post = int(np.prod(shape[axis + 1:]))
        start, rowid, W = _axis_tables(m, order, n)
        table = stencil_table(m, order)
        with mpmath.workprec(240):
            hm = mpmath.mpf(h[0]) + mpmath.mpf(h[1])
            sh, sl = dd_scalar(1 / (table.denom * hm**m))
        oh = np.empty_like(self.hi)
        ol = np.empty_like(self.hi)
        _k_stencil(self.hi.reshape(pre, n, post), self.lo.reshape(pre, n, post),
                   start, rowid, W, sh, sl, oh.reshape(pre, n, post), ol.reshape(pre, n, post))
        return DDReal(oh, ol)

    def to_float(self):
        return self.hi + self.lo


def _coef(c, shape):
    c = np.asarray(c, dtype=np.float64)
    if c.size == 1:
        return c.reshape(1)
    if c.shape != shape:
        c = np.broadcast_to(c, shape)
    return np.ascontiguousarray(c).ravel()


class DDC:
    """Complex double-double field: re and im are ``DDReal``."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        self.re = re
        self.im = im if im is not None else DDReal(np.zeros(re.shape))

    @classmethod
    def zeros(cls, shape):
        return cls(DDReal(np.zeros(shape)), DDReal(np.zeros(shape)))

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(DDReal(z.real.copy()), DDReal(z.imag.copy()))

    @property
    def shape(self):
        return self.re.shape

    def copy(self):
        return DDC(self.re.copy(), self.im.copy())

    def __add__(self, other):
        return DDC(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return DDC(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return DDC(-self.re, -self.im)

    def times_i(self):
        return DDC(-self.im, self.re.copy())

    def mul_f(self, c):
        """Multiply by a real float array (broadcastable)."""
        return DDC(self.re.mul_f(c), self.im.mul_f(c))

    def mul_c(self, c):
        """Multiply by a complex float array (broadcastable)."""
        c = np.asarray(c)
        if not np.iscomplexobj(c):
            return self.mul_f(c)
        cr = np.ascontiguousarray(c.real)
        ci = np.ascontiguousarray(c.imag)
        re = self.re.mul_f(cr)
        re.acc_mul_f(self.im, -ci)
        im = self.im.mul_f(cr)
        im.acc_mul_f(self.re, ci)
        return DDC(re, im)

    def mul_dd(self, s):
        """Multiply by a real dd scalar (hi, lo)."""
        return DDC(self.re.mul_dd(s), self.im.mul_dd(s))

    def mul_ddreal(self, x):
        """Multiply by a real dd array."""
        return DDC(self.re.mul_dd(x), self.im.mul_dd(x))

    def acc_mul_c(self, x, c):
        """In place: self += x * c with c a float (real or complex) array."""
        c = np.asarray(c)
        if np.iscomplexobj(c):
            cr = np.ascontiguousarray(c.real)
            ci = np.ascontiguousarray(c.imag)
            self.re.acc_mul_f(x.re, cr)
            self.re.acc_mul_f(x.im, -ci)
            self.im.acc_mul_f(x.im, cr)
            self.im.acc_mul_f(x.re, ci)
        else:
            self.re.acc_mul_f(x.re, c)
            self.im.acc_mul_f(x.im, c)
        return self

    def deriv(self, axis, m, h, order=4):
        return DDC(self.re.deriv(axis, m, h, order), self.im.deriv(axis, m, h, order))

    def to_complex(self):
        return self.re.to_float() + 1j * self.im.to_float()

    def abs_float(self):
        return np.abs(self.to_complex())


def rk4_march(source, q, y0, i0, h):
    """Solve y' = -q y + S along the last axis, starting at plane i0.

    ``source`` is a DDC of shape (..., Ns), ``q`` a float array broadcastable
    to it or None, ``y0`` a DDC of shape (...,), ``h`` the step as dd scalar.
    """
    shape = source.shape
    Ns = shape[-1]
    M = int(np.prod(shape[:-1]))

    def flat(a):
        return np.ascontiguousarray(a).reshape(M, Ns)

    if q is None:
        qa = np.zeros((1, 1))
        has_q = False
    else:
        qa = np.ascontiguousarray(np.broadcast_to(q, shape)).reshape(M, Ns)
        has_q = True
    out = [np.empty((M, Ns)) for _ in range(4)]
    _rk4_march(flat(source.re.hi), flat(source.re.lo), flat(source.im.hi), flat(source.im.lo),
               qa, has_q,
               np.ascontiguousarray(y0.re.hi).reshape(M), np.ascontiguousarray(y0.re.lo).reshape(M),
               np.ascontiguousarray(y0.im.hi).reshape(M), np.ascontiguousarray(y0.im.lo).reshape(M),
               int(i0), float(h[0]), float(h[1]), *out)
    return DDC(DDReal(out[0].reshape(shape), out[1].reshape(shape)),
               DDReal(out[2].reshape(shape), out[3].reshape(shape)))


_TWO_PI_HI = 6.283185307179586
_TWO_PI_LO = 2.4492935982947064e-16


@njit(cache=True)
def _k_phase(lam, phi, out):
    for i in range(phi.size):
        ph, pl = two_prod(lam, phi[i])
        k = np.floor(ph / _TWO_PI_HI + 0.5)
        a, b = two_prod(k, _TWO_PI_HI)
        rh, rl = two_sum(ph, -a)
        rl += pl - b - k * _TWO_PI_LO
        out[i] = rh + rl


def phase_mod_2pi(lam, phi):
    """lam * phi reduced to [-pi, pi] with an exact product (lam an integer-valued float)."""
    phi = np.asarray(phi, float)
    out = np.empty(phi.size)
    _k_phase(float(lam), np.ascontiguousarray(phi.reshape(-1)), out)
    return out.reshape(phi.shape)
