"""Least-squares extraction of the effective rate and of the saturation scale."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .echo import CoherenceTrace
from .errors import FitError, ParameterError
from .theory import SplineModel, convolution_integral

OBJECTIVES = ("complex", "real", "abs", "elr_subtracted")
MAXITER = 200


@dataclass
class FitResult:
    """Outcome of a one-parameter fit.

    ``parameter`` is ``Gamma_fit`` for :func:`fit_gamma` and ``b`` for
    :func:`fit_saturation` (``inf`` when the data lie on the identity line).
    ``residual`` is the root-mean-square misfit over the ``n_points`` used.
    """

    parameter: float
    residual: float
    window: tuple
    n_points: int
    stderr_param: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.residual >= 0:
            raise FitError(f"residual must be >= 0, got {self.residual}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _minimize(fun, hi: float, xatol: float, expand: int = 6):
    """Brent search on ``[0, hi]``, widening the bracket while the optimum sits at its edge."""
    for _ in range(expand + 1):
        res = minimize_scalar(fun, bounds=(0.0, hi), method="bounded",
                              options={"xatol": xatol, "maxiter": MAXITER})
        if not res.success:
            raise FitError(f"minimizer did not converge in {MAXITER} iterations "
                           f"on bracket [0, {hi:.6g}]; last x={res.x:.6g}, f={res.fun:.6g}")
        if res.x < hi * (1 - 1e-3):
            break
        hi *= 4.0
    else:
        raise FitError(f"optimum still on the upper bracket edge {hi:.6g}")
    x, fx = float(res.x), float(res.fun)
    # ties go to the smaller parameter; the boundary itself is never sampled by Brent
    if fun(0.0) <= fx:
        x, fx = 0.0, fun(0.0)
    return x, fx, hi, int(res.nfev)


def _curvature(S, x: float, Sx: float, h: float) -> float:
    """Second derivative by central differences, one-sided at the boundary."""
    if x >= h:
        return (S(x + h) - 2 * Sx + S(x - h)) / h**2
    return (S(x + 2 * h) - 2 * S(x + h) + Sx) / h**2


def gamma_objective(sim: CoherenceTrace, f_base: SplineModel, window=(0.0, 15.0),
                    objective: str = "complex", weighted: bool = False, K=None):
    """Sum of squared residuals ``S(Gamma)`` between data and theory in ``window``.

    Returns ``(S, n_points, n_residuals, parts)`` where ``parts = (f, d, y)``
    describe the linear theory ``f + Gamma d`` and the data ``y`` on the window.
    The theory is linear in ``Gamma``, so the convolution is evaluated once.
    """
    if objective not in OBJECTIVES:
        raise ParameterError(f"objective must be one of {OBJECTIVES}")
    t_min, t_max = window
    if t_max > sim.t[-1] + 1e-12 or t_min < 0 or t_max <= t_min:
        raise ParameterError(f"window {window} must lie inside the data grid [0, {sim.t[-1]}]")
    mask = sim.window(t_min, t_max)
    n = int(mask.sum())
    if n == 0:
        raise FitError(f"window {window} contains no data points")
    if t_max > f_base.t_max + 1e-12:
        raise ParameterError("base spline does not cover the fit window")
    t = sim.t[mask]
    f = f_base(t)
    if K is None:
        K = convolution_integral(f_base, t)
    else:
        K = np.asarray(K)[mask] if np.size(K) == len(sim.t) else np.asarray(K)
    d = K - t * f
    y = sim.values[mask]
    se_re, se_im = sim.stderr_re[mask], sim.stderr_im[mask]
    if weighted:
        if np.any(se_re <= 0) or (objective == "complex" and np.any(se_im <= 0)):
            raise FitError("weighted fit needs positive standard errors in the window")
        w_re, w_im = 1.0 / se_re, 1.0 / np.where(se_im > 0, se_im, 1.0)
        w_abs = 1.0 / np.maximum(sim.stderr_abs[mask], 1e-300)
    else:
        w_re = w_im = w_abs = np.ones(n)

    if objective == "complex":
        def S(G):
            r = y - f - G * d
            return float(np.sum((w_re * r.real) ** 2 + (w_im * r.imag) ** 2))
        m = 2 * n
    elif objective in ("real", "elr_subtracted"):
        # subtracting the same ELR curve from data and theory leaves Re-residuals unchanged
        def S(G):
            return float(np.sum((w_re * (y - f - G * d).real) ** 2))
        m = n
    else:
        def S(G):
            return float(np.sum((w_abs * (np.abs(y) - np.abs(f + G * d))) ** 2))
        m = n
    return S, n, m, (f, d, y)


def fit_gamma(sim: CoherenceTrace, f_base: SplineModel, window=(0.0, 15.0),
              objective: str = "complex", weighted: bool = False, xtol_rel: float = 1e-6,
              K=None, upper: float | None = None) -> FitResult:
    """Best-fit damping rate of the linear-response theory to a simulated trace.

    Parameters
    ----------
    sim : CoherenceTrace
        Ensemble-mean damped coherence.
    f_base : SplineModel
        Spline of the undamped ensemble mean for the same scenario.
    window : (float, float)
        Fit uses grid points with ``t_min < t <= t_max``.
    objective : {'complex', 'real', 'abs', 'elr_subtracted'}
        Residual measure.  ``'elr_subtracted'`` compares ``f - f_ELR`` curves,
        which is the same as the real-part residual.
    weighted : bool
        Divide residuals by the standard errors.
    K : array, optional
        Precomputed convolution on the window points (or on the full grid).
    upper : float, optional
        Initial upper end of the search bracket; by default four times the
        closed-form complex least-squares estimate.

    Returns
    -------
    FitResult
        ``parameter`` is ``Gamma_fit``; ``stderr_param`` is the asymptotic
        standard error from the curvature of the objective.
    """
    S, n, m, (f, d, y) = gamma_objective(sim, f_base, window, objective, weighted, K)
    dd = float(np.sum(np.abs(d) ** 2))
    if dd == 0.0:
        raise FitError("theory does not depend on Gamma inside the window")
    g_lin = max(float(np.sum((np.conj(d) * (y - f)).real)) / dd, 0.0)
    hi = upper if upper is not None else 4.0 * max(g_lin, 1e-4)
    xatol = xtol_rel * max(g_lin, 1e-6)
    G, SG, hi, nfev = _minimize(S, hi, xatol)
    curv = _curvature(S, G, SG, max(1e-3 * G, 1e-6))
    sigma2 = SG / max(m - 1, 1) if not weighted else 1.0
    stderr = float(np.sqrt(2.0 * sigma2 / curv)) if curv > 0 else float("inf")
    return FitResult(G, float(np.sqrt(SG / n)), (float(window[0]), float(window[1])), n, stderr,
                     {"objective": objective, "weighted": weighted, "bracket": [0.0, hi],
                      "nfev": nfev, "linear_estimate": g_lin})


def saturation_model(alpha, b):
    """``g(alpha) = b alpha / (b + alpha)``; ``b = inf`` gives the identity."""
    alpha = np.asarray(alpha, dtype=float)
    if np.isinf(b):
        return alpha
    return b * alpha / (b + alpha)


def fit_saturation(points) -> FitResult:
    """Least-squares saturation scale ``b`` of ``Gamma_fit/lam = b alpha/(b + alpha)``.

    The search runs over ``u = 1/b >= 0`` so that data on the identity line
    give ``u = 0``, reported as ``b = inf``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise FitError(f"saturation fit needs at least 3 (alpha, ratio) points, got {len(pts)}")
    a, r = pts[:, 0], pts[:, 1]
    if np.any(a < 0) or not np.all(np.isfinite(pts)):
        raise ParameterError("alpha values must be finite and >= 0")
    if np.all(a == 0):
        raise FitError("saturation fit is degenerate: all alpha = 0")

    def S(u):
        return float(np.sum((a / (1.0 + u * a) - r) ** 2))

    pos = r[(a > 0) & (r > 0)]
    hi = 10.0 / max(pos.min(), 1e-3) if pos.size else 10.0
    u, Su, hi, nfev = _minimize(S, hi, 1e-12)
    curv = _curvature(S, u, Su, max(1e-4 * u, 1e-7))
    se_u = float(np.sqrt(2.0 * Su / max(len(a) - 1, 1) / curv)) if curv > 0 else float("inf")
    b = 1.0 / u if u > 0 else float("inf")
    se_b = se_u / u**2 if u > 0 else float("inf")
    return FitResult(b, float(np.sqrt(Su / len(a))), (float(a.min()), float(a.max())), len(a),
                     se_b, {"u": u, "stderr_u": se_u, "nfev": nfev})
