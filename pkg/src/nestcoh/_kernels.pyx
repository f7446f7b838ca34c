"""Compiled hot loops: split-step propagation and adaptive Simpson convolution.

Both functions mirror ``_kernels_py`` exactly; see there for the contracts.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()

DEF MAX_STACK = 256


def propagate_split(double complex[:, :, ::1] X,
                    double complex[:, :, ::1] left,
                    double complex[:, :, ::1] right,
                    double[:, :, :, ::1] damp,
                    double[:, ::1] shift,
                    Py_ssize_t[::1] ops,
                    Py_ssize_t n_sub,
                    Py_ssize_t n_out):
    cdef Py_ssize_t k = X.shape[0]
    cdef int n = <int>X.shape[1]
    cdef Py_ssize_t nops = ops.shape[0]
    cdef Py_ssize_t out, s, o, q, a, b, j, c
    cdef double complex one = 1.0, zero = 0.0, tr
    cdef double acc
    cdef char transn = b'N'
    tmp_arr = np.empty((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] tmp = tmp_arr
    traces_arr = np.empty((k, n_out), dtype=np.complex128)
    fro_arr = np.empty((k, n_out), dtype=np.float64)
    cdef double complex[:, ::1] traces = traces_arr
    cdef double[:, ::1] fro = fro_arr

    with nogil:
        for out in range(n_out):
            for s in range(n_sub):
                for o in range(nops):
                    c = ops[o]
                    if c >= 0:
                        for q in range(k):
                            # row-major T = L X  <=>  column-major T^T = X^T L^T
                            zgemm(&transn, &transn, &n, &n, &n, &one, &X[q, 0, 0], &n,
                                  &left[c, 0, 0], &n, &zero, &tmp[0, 0], &n)
                            zgemm(&transn, &transn, &n, &n, &n, &one, &right[c, 0, 0], &n,
                                  &tmp[0, 0], &n, &zero, &X[q, 0, 0], &n)
                    else:
                        j = -c - 1
                        for q in range(k):
                            if shift[q, j] != 0.0:
                                tr = 0.0
                                for a in range(n):
                                    tr = tr + X[q, a, a]
                            for a in range(n):
                                for b in range(n):
                                    X[q, a, b] = X[q, a, b] * damp[q, j, a, b]
                            if shift[q, j] != 0.0:
                                for a in range(n):
                                    X[q, a, a] = X[q, a, a] + shift[q, j] * tr
            for q in range(k):
                tr = 0.0
                acc = 0.0
                for a in range(n):
                    tr = tr + X[q, a, a]
                    for b in range(n):
                        acc = acc + X[q, a, b].real * X[q, a, b].real + X[q, a, b].imag * X[q, a, b].imag
                traces[q, out] = tr
                fro[q, out] = sqrt(acc)
    return traces_arr, fro_arr


cdef inline double complex _spline(double x, const double[::1] knots,
                                   const double complex[:, ::1] c) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = knots.shape[0] - 2, mid
    cdef double dx
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if knots[mid] <= x:
            lo = mid
        else:
            hi = mid - 1
    dx = x - knots[lo]
    return ((c[0, lo] * dx + c[1, lo]) * dx + c[2, lo]) * dx + c[3, lo]


cdef inline double complex _g(double tau, double t, const double[::1] knots,
                              const double complex[:, ::1] c) noexcept nogil:
    return _spline(tau, knots, c) * _spline(t - tau, knots, c)


def conv_simpson(const double[::1] knots, const double complex[:, ::1] coeffs,
                 const double[::1] times, double tol, int max_depth):
    cdef Py_ssize_t m = times.shape[0], nk = knots.shape[0]
    cdef Py_ssize_t i, p, top, n_panels
    cdef double t, half, pa, pb, a, b, mid, lm, rm, ptol, err
    cdef double complex fa, fm, fb, flm, frm, whole, left_s, right_s, total, s2
    cdef int depth
    cdef double st_a[MAX_STACK]
    cdef double st_b[MAX_STACK]
    cdef double st_tol[MAX_STACK]
    cdef double complex st_fa[MAX_STACK]
    cdef double complex st_fm[MAX_STACK]
    cdef double complex st_fb[MAX_STACK]
    cdef double complex st_s[MAX_STACK]
    cdef int st_d[MAX_STACK]
    out_arr = np.zeros(m, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    cdef Py_ssize_t fail = -1
    cdef double fail_a = 0.0, fail_b = 0.0, fail_err = 0.0
    cdef double h_knot = (knots[nk - 1] - knots[0]) / (nk - 1)

    with nogil:
        for i in range(m):
            t = times[i]
            if t <= 0.0:
                out[i] = 0.0
                continue
            half = 0.5 * t
            n_panels = <Py_ssize_t>(half / h_knot) + 1
            total = 0.0
            for p in range(n_panels):
                pa = half * p / n_panels
                pb = half * (p + 1) / n_panels
                ptol = tol * (pb - pa) / half
                fa = _g(pa, t, knots, coeffs)
                fb = _g(pb, t, knots, coeffs)
                mid = 0.5 * (pa + pb)
                fm = _g(mid, t, knots, coeffs)
                top = 0
                st_a[0] = pa; st_b[0] = pb; st_tol[0] = ptol
                st_fa[0] = fa; st_fm[0] = fm; st_fb[0] = fb
                st_s[0] = (pb - pa) / 6.0 * (fa + 4.0 * fm + fb)
                st_d[0] = 0
                while top >= 0:
                    a = st_a[top]; b = st_b[top]; ptol = st_tol[top]
                    fa = st_fa[top]; fm = st_fm[top]; fb = st_fb[top]
                    whole = st_s[top]; depth = st_d[top]
                    top -= 1
                    mid = 0.5 * (a + b)
                    lm = 0.5 * (a + mid)
                    rm = 0.5 * (mid + b)
                    flm = _g(lm, t, knots, coeffs)
                    frm = _g(rm, t, knots, coeffs)
                    left_s = (mid - a) / 6.0 * (fa + 4.0 * flm + fm)
                    right_s = (b - mid) / 6.0 * (fm + 4.0 * frm + fb)
                    s2 = left_s + right_s
                    err = sqrt((s2 - whole).real ** 2 + (s2 - whole).imag ** 2)
                    if err <= 15.0 * ptol or depth >= max_depth or top + 2 >= MAX_STACK:
                        if err > 15.0 * ptol and fail < 0:
                            fail = i
                            fail_a = a
                            fail_b = b
                            fail_err = err / 15.0
                        total = total + s2 + (s2 - whole) / 15.0
                    else:
                        top += 1
                        st_a[top] = a; st_b[top] = mid; st_tol[top] = 0.5 * ptol
                        st_fa[top] = fa; st_fm[top] = flm; st_fb[top] = fm
                        st_s[top] = left_s; st_d[top] = depth + 1
                        top += 1
                        st_a[top] = mid; st_b[top] = b; st_tol[top] = 0.5 * ptol
                        st_fa[top] = fm; st_fm[top] = frm; st_fb[top] = fb
                        st_s[top] = right_s; st_d[top] = depth + 1
            out[i] = 2.0 * total
    return out_arr, (fail, fail_a, fail_b, fail_err)
