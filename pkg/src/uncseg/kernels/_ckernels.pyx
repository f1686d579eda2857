# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter kernels for 3x3x3 convolution and box filtering.

Same offset order and accumulation order as ``_pykernels`` so results are
bit-identical. No fast-math: reordering would break that.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col3(floating[:, :, :, :, ::1] x):
    cdef Py_ssize_t C = x.shape[0], B = x.shape[1]
    cdef Py_ssize_t X = x.shape[2], Y = x.shape[3], Z = x.shape[4]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((C, 27, B, X, Y, Z), dtype=dtype)
    cdef floating[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t c, k, b, p, q, r, sp, sq, r0, r1
    cdef int a, bb, cc
    with nogil:
        for c in range(C):
            for k in range(27):
                a = k // 9 - 1
                bb = (k // 3) % 3 - 1
                cc = k % 3 - 1
                r0 = 1 if cc < 0 else 0
                r1 = Z - 1 if cc > 0 else Z
                for b in range(B):
                    for p in range(X):
                        sp = p + a
                        for q in range(Y):
                            sq = q + bb
                            if sp < 0 or sp >= X or sq < 0 or sq >= Y:
                                for r in range(Z):
                                    cols[c, k, b, p, q, r] = 0
                                continue
                            if r0 == 1:
                                cols[c, k, b, p, q, 0] = 0
                            if r1 < Z:
                                cols[c, k, b, p, q, Z - 1] = 0
                            for r in range(r0, r1):
                                cols[c, k, b, p, q, r] = x[c, b, sp, sq, r + cc]
    return out


def col2im3(floating[:, :, :, :, :, ::1] cols):
    cdef Py_ssize_t C = cols.shape[0], B = cols.shape[2]
    cdef Py_ssize_t X = cols.shape[3], Y = cols.shape[4], Z = cols.shape[5]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((C, B, X, Y, Z), dtype=dtype)
    cdef floating[:, :, :, :, ::1] dx = out
    cdef Py_ssize_t c, k, b, p, q, r, dp, dq, r0, r1
    cdef int a, bb, cc
    with nogil:
        for c in range(C):
            for k in range(27):
                # cols[k] at voxel v feeds input voxel v + offset(k)
                a = k // 9 - 1
                bb = (k // 3) % 3 - 1
                cc = k % 3 - 1
                r0 = 1 if cc < 0 else 0
                r1 = Z - 1 if cc > 0 else Z
                for b in range(B):
                    for p in range(X):
                        dp = p + a
                        if dp < 0 or dp >= X:
                            continue
                        for q in range(Y):
                            dq = q + bb
                            if dq < 0 or dq >= Y:
                                continue
                            for r in range(r0, r1):
                                dx[c, b, dp, dq, r + cc] += cols[c, k, b, p, q, r]
    return out


def box_sum3(x_in):
    shape = tuple(x_in.shape)
    cdef Py_ssize_t nd = len(shape)
    cdef Py_ssize_t X = shape[nd - 3], Y = shape[nd - 2], Z = shape[nd - 1]
    arr = np.ascontiguousarray(x_in).reshape((-1, X, Y, Z))
    if arr.dtype != np.float32:
        arr = arr.astype(np.float64, copy=False)
    return _box_sum3(arr).reshape(shape)


def _box_sum3(floating[:, :, :, ::1] v):
    cdef Py_ssize_t N = v.shape[0], X = v.shape[1], Y = v.shape[2], Z = v.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((N, X, Y, Z), dtype=dtype)
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t n, k, p, q, r, sp, sq, r0, r1
    cdef int a, bb, cc
    with nogil:
        for n in range(N):
            for k in range(27):
                a = k // 9 - 1
                bb = (k // 3) % 3 - 1
                cc = k % 3 - 1
                r0 = 1 if cc < 0 else 0
                r1 = Z - 1 if cc > 0 else Z
                for p in range(X):
                    sp = p + a
                    if sp < 0 or sp >= X:
                        continue
                    for q in range(Y):
                        sq = q + bb
                        if sq < 0 or sq >= Y:
                            continue
                        for r in range(r0, r1):
                            o[n, p, q, r] += v[n, sp, sq, r + cc]
    return out
