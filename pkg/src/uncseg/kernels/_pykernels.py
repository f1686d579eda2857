"""Pure-numpy kernels. Reference semantics for the compiled core.

Every accumulation visits the 27 neighbourhood offsets in the same order
(dz, dy, dx each running -1, 0, 1, x fastest) as the compiled version, so
both backends produce bit-identical results.
"""
import numpy as np

OFFSETS = [(a, b, c) for a in range(3) for b in range(3) for c in range(3)]


def im2col3(x):
    """(C, B, X, Y, Z) -> (C, 27, B, X, Y, Z) with one voxel of zero padding."""
    C, B, X, Y, Z = x.shape
    xp = np.zeros((C, B, X + 2, Y + 2, Z + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1, 1:-1] = x
    cols = np.empty((C, 27, B, X, Y, Z), dtype=x.dtype)
    for k, (a, b, c) in enumerate(OFFSETS):
        cols[:, k] = xp[:, :, a:a + X, b:b + Y, c:c + Z]
    return cols


def col2im3(cols):
    """Adjoint of :func:`im2col3`: (C, 27, B, X, Y, Z) -> (C, B, X, Y, Z)."""
    C, K, B, X, Y, Z = cols.shape
    dxp = np.zeros((C, B, X + 2, Y + 2, Z + 2), dtype=cols.dtype)
    for k, (a, b, c) in enumerate(OFFSETS):
        dxp[:, :, a:a + X, b:b + Y, c:c + Z] += cols[:, k]
    return np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1, 1:-1])


def box_sum3(x):
    """Zero-padded 3x3x3 neighbourhood sum over the last three axes."""
    lead = x.shape[:-3]
    X, Y, Z = x.shape[-3:]
    v = x.reshape((-1, X, Y, Z))
    vp = np.zeros((v.shape[0], X + 2, Y + 2, Z + 2), dtype=x.dtype)
    vp[:, 1:-1, 1:-1, 1:-1] = v
    out = np.zeros_like(v)
    for a, b, c in OFFSETS:
        out += vp[:, a:a + X, b:b + Y, c:c + Z]
    return out.reshape(lead + (X, Y, Z))
