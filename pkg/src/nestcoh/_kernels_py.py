"""Pure-Python/NumPy reference versions of the compiled kernels.

propagate_split
    Advance a stack of ``k`` coherence operators through ``n_out`` output
    intervals of ``n_sub`` splitting steps each.  ``ops`` lists one step:
    a code ``c >= 0`` applies the unitary flow ``X <- left[c] @ X @ right[c]``;
    ``c < 0`` applies damping flow ``j = -c - 1``,
    ``X <- damp[q, j] * X + shift[q, j] * tr(X) * I``.
    Returns ``tr X`` and ``||X||_F`` after each output interval.

conv_simpson
    ``K(t) = int_0^t s(tau) s(t - tau) dtau`` for a cubic spline ``s`` given by
    ``knots`` and ``coeffs`` (SciPy ``PPoly`` layout, highest power first).
    The integrand is symmetric about ``t/2``; panels of roughly one knot
    spacing on ``[0, t/2]`` are refined by adaptive Simpson with Richardson
    correction.  The second return value is ``(index, a, b, err)`` of the
    first unconverged interval, or index ``-1``.
"""
import numpy as np

MAX_STACK = 256


def propagate_split(X, left, right, damp, shift, ops, n_sub, n_out):
    k, n, _ = X.shape
    traces = np.empty((k, n_out), dtype=complex)
    fro = np.empty((k, n_out))
    diag = np.arange(n)
    ops = [int(c) for c in ops]
    for out in range(n_out):
        for _ in range(n_sub):
            for c in ops:
                if c >= 0:
                    X[:] = np.matmul(np.matmul(left[c], X), right[c])
                else:
                    j = -c - 1
                    sh = shift[:, j]
                    tr = np.trace(X, axis1=1, axis2=2)
                    X *= damp[:, j]
                    if np.any(sh != 0.0):
                        X[:, diag, diag] += (sh * tr)[:, None]
        traces[:, out] = np.trace(X, axis1=1, axis2=2)
        fro[:, out] = np.sqrt(np.sum(X.real**2 + X.imag**2, axis=(1, 2)))
    return traces, fro


def _spline(x, knots, c):
    i = int(np.searchsorted(knots, x, side="right")) - 1
    i = min(max(i, 0), knots.size - 2)
    dx = x - knots[i]
    return ((c[0, i] * dx + c[1, i]) * dx + c[2, i]) * dx + c[3, i]


def conv_simpson(knots, coeffs, times, tol, max_depth):
    knots = np.asarray(knots, dtype=float)
    coeffs = np.asarray(coeffs, dtype=complex)
    h_knot = (knots[-1] - knots[0]) / (knots.size - 1)
    out = np.zeros(len(times), dtype=complex)
    fail = (-1, 0.0, 0.0, 0.0)
    for i, t in enumerate(times):
        t = float(t)
        if t <= 0.0:
            continue

        def g(tau):
            return _spline(tau, knots, coeffs) * _spline(t - tau, knots, coeffs)

        half = 0.5 * t
        n_panels = int(half / h_knot) + 1
        total = 0j
        for p in range(n_panels):
            pa = half * p / n_panels
            pb = half * (p + 1) / n_panels
            fa, fb, fm = g(pa), g(pb), g(0.5 * (pa + pb))
            stack = [(pa, pb, tol * (pb - pa) / half, fa, fm, fb,
                      (pb - pa) / 6.0 * (fa + 4.0 * fm + fb), 0)]
            while stack:
                a, b, ptol, fa, fm, fb, whole, depth = stack.pop()
                mid = 0.5 * (a + b)
                flm = g(0.5 * (a + mid))
                frm = g(0.5 * (mid + b))
                left_s = (mid - a) / 6.0 * (fa + 4.0 * flm + fm)
                right_s = (b - mid) / 6.0 * (fm + 4.0 * frm + fb)
                s2 = left_s + right_s
                err = abs(s2 - whole)
                if err <= 15.0 * ptol or depth >= max_depth or len(stack) + 2 >= MAX_STACK:
                    if err > 15.0 * ptol and fail[0] < 0:
                        fail = (i, a, b, err / 15.0)
                    total += s2 + (s2 - whole) / 15.0
                else:
                    stack.append((a, mid, 0.5 * ptol, fa, flm, fm, left_s, depth + 1))
                    stack.append((mid, b, 0.5 * ptol, fm, frm, fb, right_s, depth + 1))
        out[i] = 2.0 * total
    return out, fail
