"""Hot-loop kernels for the bilinear field query and its adjoint.

Compiled with numba when available, with numpy fallbacks. Each path is
deterministic run to run; across paths, values agree up to float64
accumulation order. Accumulation stays float64 throughout.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # numba is optional; numpy paths cover everything
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _gather_bilinear(plane, ii, jj, fi, fj, out):
    """out += bilinear(plane) at fractional cells given by (ii+fi, jj+fj)."""
    n, c = out.shape
    for k in range(n):
        i = ii[k]
        j = jj[k]
        w00 = (1.0 - fi[k]) * (1.0 - fj[k])
        w01 = (1.0 - fi[k]) * fj[k]
        w10 = fi[k] * (1.0 - fj[k])
        w11 = fi[k] * fj[k]
        for ch in range(c):
            out[k, ch] += (
                w00 * np.float64(plane[i, j, ch])
                + w01 * np.float64(plane[i, j + 1, ch])
                + w10 * np.float64(plane[i + 1, j, ch])
                + w11 * np.float64(plane[i + 1, j + 1, ch])
            )


@njit(cache=True)
def _scatter_bilinear(grad, ii, jj, fi, fj, upstream):
    """Adjoint of _gather_bilinear: splat upstream rows onto grad corners."""
    n, c = upstream.shape
    for k in range(n):
        i = ii[k]
        j = jj[k]
        w00 = (1.0 - fi[k]) * (1.0 - fj[k])
        w01 = (1.0 - fi[k]) * fj[k]
        w10 = fi[k] * (1.0 - fj[k])
        w11 = fi[k] * fj[k]
        for ch in range(c):
            u = upstream[k, ch]
            grad[i, j, ch] += w00 * u
            grad[i, j + 1, ch] += w01 * u
            grad[i + 1, j, ch] += w10 * u
            grad[i + 1, j + 1, ch] += w11 * u


@njit(cache=True)
def _scatter_rows(out, idx, rows):
    """out[idx[k]] += rows[k], sequential like np.add.at."""
    n, c = rows.shape
    for k in range(n):
        r = idx[k]
        for ch in range(c):
            out[r, ch] += rows[k, ch]


def gather_bilinear(plane, ii, jj, fi, fj, out):
    if HAVE_NUMBA:
        _gather_bilinear(plane, ii, jj, fi, fj, out)
    else:
        acc = ((1 - fi) * (1 - fj))[:, None] * plane[ii, jj]
        acc += ((1 - fi) * fj)[:, None] * plane[ii, jj + 1]
        acc += (fi * (1 - fj))[:, None] * plane[ii + 1, jj]
        acc += (fi * fj)[:, None] * plane[ii + 1, jj + 1]
        out += acc


def scatter_bilinear(grad, ii, jj, fi, fj, upstream):
    if HAVE_NUMBA:
        _scatter_bilinear(grad, ii, jj, fi, fj, upstream)
    else:
        np.add.at(grad, (ii, jj), ((1 - fi) * (1 - fj))[:, None] * upstream)
        np.add.at(grad, (ii, jj + 1), ((1 - fi) * fj)[:, None] * upstream)
        np.add.at(grad, (ii + 1, jj), (fi * (1 - fj))[:, None] * upstream)
        np.add.at(grad, (ii + 1, jj + 1), (fi * fj)[:, None] * upstream)


def scatter_rows(out, idx, rows):
    if HAVE_NUMBA:
        _scatter_rows(out, np.ascontiguousarray(idx), np.ascontiguousarray(rows))
    else:
        np.add.at(out, idx, rows)
