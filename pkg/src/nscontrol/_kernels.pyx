# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernel for the spectral advection term.

The hot loop of the whole package: for every pair of modes (p, q) of the
two input fields it accumulates i (u_p . q) v_q into the output mode p + q.
Mirrors the pure-numpy implementation in ``kernels.py`` exactly, including
the order of accumulation.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def advection_convolve(
    cnp.int64_t[:, ::1] ku,
    cnp.complex128_t[:, ::1] cu,
    cnp.int64_t[:, ::1] kv,
    cnp.complex128_t[:, ::1] cv,
    cnp.int64_t[:, :, ::1] table,
    int bound,
    int n_out,
):
    """Return the (n_out, 3) complex coefficient array of (u . grad) v."""
    cdef Py_ssize_t pu = ku.shape[0]
    cdef Py_ssize_t pv = kv.shape[0]
    cdef Py_ssize_t p, q, idx
    cdef long k0, k1, k2
    cdef double complex dot, fac

    out_arr = np.zeros((n_out, 3), dtype=np.complex128)
    cdef cnp.complex128_t[:, ::1] out = out_arr

    for p in range(pu):
        for q in range(pv):
            k0 = ku[p, 0] + kv[q, 0]
            k1 = ku[p, 1] + kv[q, 1]
            k2 = ku[p, 2] + kv[q, 2]
            if k0 < -bound or k0 > bound:
                continue
            if k1 < -bound or k1 > bound:
                continue
            if k2 < -bound or k2 > bound:
                continue
            idx = table[k0 + bound, k1 + bound, k2 + bound]
            if idx < 0:
                continue
            dot = (
                cu[p, 0] * kv[q, 0]
                + cu[p, 1] * kv[q, 1]
                + cu[p, 2] * kv[q, 2]
            )
            fac = 1j * dot
            out[idx, 0] = out[idx, 0] + fac * cv[q, 0]
            out[idx, 1] = out[idx, 1] + fac * cv[q, 1]
            out[idx, 2] = out[idx, 2] + fac * cv[q, 2]

    return out_arr
