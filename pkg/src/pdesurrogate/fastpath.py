"""Compiled latent-stepping kernels.

Optional acceleration for the sequential inner loop of inference
rollouts, which is small-matrix work dominated by per-call dispatch
overhead in plain numpy. Both evolution kinds get the same treatment:
hand-written loops over pre-transposed weight rows, compiled with numba
when it is importable. Callers fall back to the numpy path otherwise and
must tolerance-check either path against the exact graph forward.

The kernels take pre-folded operands (biases absorbed, token projection
fused, residuals folded into the output matrix); that algebra lives in
`model.InferenceEngine`, not here.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, fastmath=True)
def ssm_steps(z0, zp, m, h0, w1t, b1, w2t, b2, abar, bbar, m1aug):
    """m gated-SSM latent steps.

    w1t: [2*dz, dz+dzp] rows of the fused input/gate projection,
    w2t: [dz, 2*dz+dzp] rows of the fused output map over [gated, z, zp]
    with both residuals folded in, m1aug: [dz, ds+1] with the state
    readout in the first ds columns and the direct-feedthrough gain last.
    Returns (z_final, h_final).
    """
    dz = z0.shape[0]
    dzp = zp.shape[0]
    ds = abar.shape[1]
    s = dz + dzp
    c = np.empty(s)
    ug = np.empty(2 * dz)
    gated = np.empty(dz)
    z = z0.copy()
    znew = np.empty(dz)
    h = h0.copy()
    for i in range(dzp):
        c[dz + i] = zp[i]
    for _ in range(m):
        for i in range(dz):
            c[i] = z[i]
        for j in range(2 * dz):
            acc = b1[j]
            for i in range(s):
                acc += w1t[j, i] * c[i]
            ug[j] = acc
        for j in range(dz):
            u = ug[j]
            g = ug[dz + j]
            if g >= 0.0:
                sg = 1.0 / (1.0 + math.exp(-g))
            else:
                eg = math.exp(g)
                sg = eg / (1.0 + eg)
            acc = m1aug[j, ds] * u
            for k in range(ds):
                acc += m1aug[j, k] * h[j, k]
            for k in range(ds):
                h[j, k] = abar[j, k] * h[j, k] + bbar[j, k] * u
            gated[j] = acc * (g * sg)
        for j in range(dz):
            acc = b2[j]
            for i in range(dz):
                acc += w2t[j, i] * gated[i]
            for i in range(s):
                acc += w2t[j, dz + i] * c[i]
            znew[j] = acc
        for j in range(dz):
            z[j] = znew[j]
    return z, h


@njit(cache=True, fastmath=True)
def mlp_steps(z0, zp, m, w1t, b1, w2t, b2, w3t, b3):
    """m residual-MLP latent steps; weights pre-transposed to row-major rows."""
    dz = z0.shape[0]
    dzp = zp.shape[0]
    hid = b1.shape[0]
    s = dz + dzp
    c = np.empty(s)
    a = np.empty(hid)
    b = np.empty(hid)
    z = z0.copy()
    for i in range(dzp):
        c[dz + i] = zp[i]
    for _ in range(m):
        for i in range(dz):
            c[i] = z[i]
        for j in range(hid):
            acc = b1[j]
            for i in range(s):
                acc += w1t[j, i] * c[i]
            a[j] = acc if acc > 0.0 else math.expm1(acc)
        for j in range(hid):
            acc = b2[j]
            for i in range(hid):
                acc += w2t[j, i] * a[i]
            b[j] = acc if acc > 0.0 else math.expm1(acc)
        for j in range(dz):
            acc = b3[j]
            for i in range(hid):
                acc += w3t[j, i] * b[i]
            z[j] += acc
    return z


def warmup() -> bool:
    """Trigger compilation on tiny inputs; returns availability."""
    if not HAVE_NUMBA:
        return False
    dz, dzp, ds, hid = 4, 2, 2, 8
    z = np.zeros(dz)
    zp = np.zeros(dzp)
    ssm_steps(z, zp, 1, np.zeros((dz, ds)), np.zeros((2 * dz, dz + dzp)),
              np.zeros(2 * dz), np.zeros((dz, 2 * dz + dzp)), np.zeros(dz),
              np.zeros((dz, ds)), np.zeros((dz, ds)), np.zeros((dz, ds + 1)))
    mlp_steps(z, zp, 1, np.zeros((hid, dz + dzp)), np.zeros(hid),
              np.zeros((hid, hid)), np.zeros(hid), np.zeros((dz, hid)), np.zeros(dz))
    return True
