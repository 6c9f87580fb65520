"""Truncated Taylor jets and the exp(-1/x) family of smooth steps.

A jet of order K at a point stores Taylor coefficients c_k = f^(k)/k! for
k = 0..K, vectorised over arbitrary leading sample shapes (axis 0 is the
order axis). Arithmetic on jets gives exact derivatives of compositions
without finite differences.
"""
from __future__ import annotations

from math import factorial

import numpy as np


class Jet:
    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    @property
    def order(self):
        return self.c.shape[0] - 1

    @classmethod
    def variable(cls, x, order, scale=1.0):
        """Jet of t -> x + scale*t."""
        x = np.asarray(x, dtype=float)
        c = np.zeros((order + 1,) + x.shape)
        c[0] = x
        if order >= 1:
            c[1] = scale
        return cls(c)

    @classmethod
    def const(cls, v, order, shape=()):
        c = np.zeros((order + 1,) + np.shape(v) if np.ndim(v) else (order + 1,) + shape)
        c[0] = v
        return cls(c)

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.c + o.c)
        c = self.c.copy()
        c[0] = c[0] + o
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Jet):
            return Jet(self.c * o)
        K = self.order
        out = np.zeros(np.broadcast_shapes(self.c.shape, o.c.shape))
        for k in range(K + 1):
            for j in range(k + 1):
                out[k] += self.c[j] * o.c[k - j]
        return Jet(out)

    __rmul__ = __mul__

    def recip(self):
        K = self.order
        out = np.zeros_like(self.c)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[0] = 1.0 / self.c[0]
            for k in range(1, K + 1):
                acc = np.zeros_like(self.c[0])
                for j in range(1, k + 1):
                    acc = acc + self.c[j] * out[k - j]
                out[k] = -acc * out[0]
        return Jet(out)

    def __truediv__(self, o):
        if isinstance(o, Jet):
            return self * o.recip()
        return Jet(self.c / o)

    def exp(self):
        K = self.order
        out = np.zeros_like(self.c)
        out[0] = np.exp(self.c[0])
        for k in range(1, K + 1):
            acc = np.zeros_like(self.c[0])
            for j in range(1, k + 1):
                acc = acc + j * self.c[j] * out[k - j]
            out[k] = acc / k
        return Jet(out)

    def derivs(self):
        """Array of derivatives f^(k), k = 0..K."""
        fac = np.array([factorial(k) for k in range(self.order + 1)], float)
        return self.c * fac.reshape((-1,) + (1,) * (self.c.ndim - 1))


def _edge(x: Jet) -> Jet:
    """Jet of e(x) = exp(-1/x) for x > 0, identically 0 for x <= 0."""
    x0 = x.c[0]
    # below 1/700 the value and its low derivatives are under 1e-250
    pos = x0 > 1.0 / 700.0
    safe = Jet(np.where(pos, x.c, 1.0))
    e = (-(safe.recip())).exp()
    return Jet(np.where(pos, e.c, 0.0))


def smoothstep_jet(x: Jet) -> Jet:
    """Jet of the step  e(x) / (e(x) + e(1 - x)): 0 for x <= 0, 1 for x >= 1."""
    a = _edge(x)
    b = _edge(1.0 - x)
    return a * (a + b).recip()


def smoothstep(x, nderiv=0):
    """Values (nderiv = 0) or an array of derivatives 0..nderiv of the step."""
    j = smoothstep_jet(Jet.variable(x, nderiv))
    d = j.derivs()
    return d[0] if nderiv == 0 else d


def ramp_jet(x, lo, hi, order):
    """Jet in x of the step rising from 0 at ``lo`` to 1 at ``hi``."""
    return smoothstep_jet(Jet.variable((np.asarray(x, float) - lo) / (hi - lo), order,
                                       1.0 / (hi - lo)))


def fall_jet(x, hi, lo, order):
    """Jet in x of the step equal to 1 below ``hi`` and 0 above ``lo`` (hi < lo)."""
    return smoothstep_jet(Jet.variable((lo - np.asarray(x, float)) / (lo - hi), order,
                                       -1.0 / (lo - hi)))


def bump_plateau_jet(x, inner, outer, order):
    """1 on [inner], 0 outside (outer), smooth in between; returns a Jet."""
    (ilo, ihi), (olo, ohi) = inner, outer
    return ramp_jet(x, olo, ilo, order) * fall_jet(x, ihi, ohi, order)


def cutoff_zeta_jet(x, eps, order):
    """Symmetric cutoff: 1 for |x| <= eps/2, 0 for |x| >= eps."""
    ax = np.asarray(x, float)
    return bump_plateau_jet(ax, (-eps / 2, eps / 2), (-eps, eps), order)
