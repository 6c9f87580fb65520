"""Finite-difference weights and interpolation helpers.

Weights come from Fornberg's recursion evaluated in exact rational
arithmetic, so every stencil row can be stored as integer numerators over a
common denominator. The double-double kernels rely on that: integer weights
multiply exactly and polynomial exactness survives to the last bit.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import lcm

import numpy as np


def fornberg(nodes, x0, m):
    """Exact weights for the m-th derivative at x0 on the given nodes."""
    nodes = [Fraction(x) for x in nodes]
    x0 = Fraction(x0)
    n = len(nodes)
    c = [[Fraction(0)] * (m + 1) for _ in range(n)]
    c[0][0] = Fraction(1)
    c1 = Fraction(1)
    c4 = nodes[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = Fraction(1)
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2
            for k in range(mn, 0, -1):
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3
            c[j][0] = c4 * c[j][0] / c3
        c1 = c2
    return [c[j][m] for j in range(n)]


class StencilTable:
    """Integer stencil rows for one derivative order on a uniform axis.

    ``rows[r]`` holds integer numerators, ``denom`` the common denominator.
    Row 0 is the centered row; rows 1.. are the left-edge rows (offset 0,1,..).
    Right-edge rows are obtained by mirroring.
    """

    def __init__(self, m, order):
        if order % 2:
            raise ValueError("stencil order must be even")
        self.m = m
        self.order = order
        half = (m + 1) // 2 + order // 2 - 1
        self.half = half
        center = fornberg(range(-half, half + 1), 0, m)
        width_edge = m + order
        self.nedge = half
        edge = [fornberg(range(width_edge), i, m) for i in range(half)]
        den = 1
        for row in [center] + edge:
            for w in row:
                den = lcm(den, w.denominator)
        self.denom = den
        self.center = [int(w * den) for w in center]
        self.edge = [[int(w * den) for w in row] for row in edge]
        self.width_center = 2 * half + 1
        self.width_edge = width_edge

    def tables(self, n):
        """Return (start, rowid, W) arrays for an axis of length n.

        W has the rows: centered, left edges, right edges (mirrored).
        """
        K = max(self.width_center, self.width_edge)
        if n < K:
            raise ValueError(f"axis of length {n} too short for stencil width {K}")
        nrow = 1 + 2 * self.nedge
        W = np.zeros((nrow, K))
        W[0, : self.width_center] = self.center
        sign = -1 if self.m % 2 else 1
        for i, row in enumerate(self.edge):
            W[1 + i, : self.width_edge] = row
            W[1 + self.nedge + i, : self.width_edge] = [sign * w for w in row[::-1]]
        start = np.empty(n, dtype=np.int64)
        rowid = np.empty(n, dtype=np.int64)
        for i in range(n):
            if i < self.nedge:
                start[i], rowid[i] = 0, 1 + i
            elif i >= n - self.nedge:
                k = n - 1 - i
                start[i], rowid[i] = n - self.width_edge, 1 + self.nedge + k
            else:
                start[i], rowid[i] = i - self.half, 0
        return start, rowid, W


@lru_cache(maxsize=None)
def stencil_table(m, order=4):
    return StencilTable(m, order)


@lru_cache(maxsize=None)
def _axis_tables(m, order, n):
    return stencil_table(m, order).tables(n)


def fd_axis(a, axis, m, h, order=4):
    """Float finite difference of order m along one axis (any dtype)."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    n = a.shape[0]
    start, rowid, W = _axis_tables(m, order, n)
    table = stencil_table(m, order)
    out = np.zeros(a.shape, dtype=np.result_type(a.dtype, np.float64))
    K = W.shape[1]
    idx = np.minimum(start[:, None] + np.arange(K)[None, :], n - 1)  # padded weights are zero
    w = W[rowid]
    for k in range(K):
        out += w[:, k].reshape((n,) + (1,) * (a.ndim - 1)) * a[idx[:, k]]
    out /= table.denom * h**m
    return np.moveaxis(out, 0, axis)


@lru_cache(maxsize=None)
def central_weights(m, order):
    """Float weights and offsets of the centered stencil."""
    t = stencil_table(m, order)
    return np.arange(-t.half, t.half + 1), np.array(t.center, float) / t.denom


def lagrange_weights(x_nodes_start, h, x, npts=8):
    """Weights for degree npts-1 interpolation on a uniform grid.

    ``x_nodes_start`` are the abscissae of the first stencil node (array),
    ``h`` the spacing, ``x`` the targets. Returns (npts, ...) weights.
    """
    t = (np.asarray(x) - np.asarray(x_nodes_start)) / h
    k = np.arange(npts).reshape((npts,) + (1,) * np.ndim(t))
    w = np.ones((npts,) + np.shape(t))
    for j in range(npts):
        mask = k != j
        w = np.where(mask, w * (t - j) / np.where(mask, k - j, 1), w)
    return w


def lagrange_deriv_weights(x_nodes_start, h, x, npts=8, deriv=1):
    """Weights of the derivative of the interpolating polynomial."""
    t = np.atleast_1d((np.asarray(x) - np.asarray(x_nodes_start)) / h)
    out = np.zeros((npts,) + t.shape)
    for j in range(npts):
        others = [i for i in range(npts) if i != j]
        denom = np.prod([j - i for i in others], dtype=float)
        poly = np.poly1d(np.poly(others)) / denom
        out[j] = np.polyder(poly, deriv)(t)
    return out.reshape((npts,) + np.shape(x)) / h**deriv


def stencil_start(x0, h, x, n, npts=8):
    """Index of the first node of a centered npts-stencil, clipped to the grid."""
    idx = np.floor((np.asarray(x) - x0) / h).astype(np.int64) - (npts // 2 - 1)
    return np.clip(idx, 0, n - npts)


def cubic_grid_interpolator(axes, values, **kw):
    """Tensor cubic spline through grid values.

    scipy's default iterative spline fit only reaches ~1e-6 relative
    accuracy, so node values would not be reproduced; a direct sparse
    solve makes the fit exact.
    """
    from scipy.interpolate import RegularGridInterpolator
    from scipy.sparse.linalg import spsolve

    return RegularGridInterpolator(tuple(axes), values, method="cubic", solver=spsolve, **kw)
