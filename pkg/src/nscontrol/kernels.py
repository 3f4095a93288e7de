"""Backend selection for the spectral convolution kernel.

The advection term is an exact convolution over all mode pairs, O(#modes^2),
and dominates the runtime of every integration.  A compiled Cython kernel is
used when available; otherwise a vectorised numpy fallback with identical
semantics (and identical accumulation order) is selected at import time.
Set ``NSCONTROL_FORCE_NUMPY=1`` to force the fallback.
"""

import os

import numpy as np


def advection_convolve_numpy(ku, cu, kv, cv, table, bound, n_out):
    """Accumulate i (u_p . q) v_q into output mode p + q.

    Parameters
    ----------
    ku, cu : (Pu, 3) int64 wavevectors and complex coefficients of u
        (full mode lists, both signs present).
    kv, cv : same for v.
    table : dense (2*bound+1,)**3 int64 lookup, wavevector + bound -> output
        row index, or -1 for modes outside the output set.
    bound : max |k_i| representable in the table.
    n_out : number of output rows.
    """
    out = np.zeros((n_out, 3), dtype=np.complex128)
    for p in range(ku.shape[0]):
        k = ku[p] + kv
        inside = np.all(np.abs(k) <= bound, axis=1)
        if not inside.any():
            continue
        ks = k[inside] + bound
        idx = table[ks[:, 0], ks[:, 1], ks[:, 2]]
        valid = idx >= 0
        if not valid.any():
            continue
        fac = 1j * (kv[inside][valid] @ cu[p])
        np.add.at(out, idx[valid], fac[:, None] * cv[inside][valid])
    return out


_forced = os.environ.get("NSCONTROL_FORCE_NUMPY", "") not in ("", "0")
if not _forced:
    try:
        from nscontrol._kernels import advection_convolve  # type: ignore

        BACKEND = "cython"
    except ImportError:
        advection_convolve = advection_convolve_numpy
        BACKEND = "numpy"
else:
    advection_convolve = advection_convolve_numpy
    BACKEND = "numpy"
