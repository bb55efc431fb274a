"""Shape-constrained numeric kernels.

Weighted isotonic regression (PAVA), greatest convex minorant left
derivatives, and monotone cubic Hermite interpolation with Fritsch-Carlson
tangent limiting.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class WeightedSeries:
    """Strictly increasing abscissae with values and positive weights."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if not (len(x) == len(v) == len(w)) or len(x) < 1:
            raise ValueError("x, v, w must have equal length >= 1")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class MonotoneCurve:
    """Nondecreasing step or Hermite-spline curve.

    kind "step-left": piecewise constant, taking on the value attached to
    the smallest knot >= x (the left-derivative convention for GCM
    slopes). kind "hermite": C1 monotone cubic interpolant. Evaluation
    outside the knot range clamps to the boundary value.
    """

    knots: np.ndarray
    values: np.ndarray
    kind: str = "step-left"
    tangents: np.ndarray | None = field(default=None)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if len(knots) != len(values) or len(knots) < 1:
            raise ValueError("knots and values must have equal length >= 1")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(values) < -1e-12):
            raise ValueError("values must be nondecreasing")
        if self.kind not in ("step-left", "hermite"):
            raise ValueError(f"unknown curve kind: {self.kind}")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if self.tangents is not None:
            object.__setattr__(
                self, "tangents", np.asarray(self.tangents, dtype=np.float64))

    def __call__(self, t):
        scalar = np.isscalar(t)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if self.kind == "step-left":
            idx = np.searchsorted(self.knots, t, side="left")
            idx = np.minimum(idx, len(self.knots) - 1)
            out = self.values[idx]
        else:
            out = _hermite_eval(self.knots, self.values, self.tangents, t)
        return float(out[0]) if scalar else out

    def derivative(self, t):
        """Analytic derivative (hermite kind only; 0 outside the domain)."""
        if self.kind != "hermite":
            raise ValueError("analytic derivative requires hermite kind")
        scalar = np.isscalar(t)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = _hermite_eval(self.knots, self.values, self.tangents, t,
                            deriv=True)
        return float(out[0]) if scalar else out


def pava(s: WeightedSeries) -> MonotoneCurve:
    """Weighted isotonic regression via pool adjacent violators.

    Returns the unique minimizer of sum w_i (f_i - v_i)^2 over
    nondecreasing f, as a step curve over the input abscissae.
    """
    fitted = kernels.pava(s.v, s.w)
    return MonotoneCurve(knots=s.x, values=fitted, kind="step-left")


def gcm_left_derivative(x, y) -> MonotoneCurve:
    """Left derivative of the greatest convex minorant of (x, y) points.

    The point set must be anchored at (0, 0) with strictly increasing x.
    Returns a step-left curve over x[1:] whose value at x_i is the left
    derivative of the GCM at x_i.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least one point beyond the anchor")
    if x[0] != 0.0 or y[0] != 0.0:
        raise ValueError("point set must be anchored at (0, 0)")
    dx = np.diff(x)
    if np.any(dx <= 0):
        raise ValueError("x must be strictly increasing (aggregate ties first)")
    slopes = np.diff(y) / dx
    # Left derivative of the GCM of the cumulative diagram equals the
    # isotonic fit of the chord slopes weighted by the x-increments.
    deriv = kernels.pava(slopes, dx)
    return MonotoneCurve(knots=x[1:], values=deriv, kind="step-left")


def monotone_hermite(knots, values) -> MonotoneCurve:
    """Monotone C1 cubic Hermite interpolant (Fritsch-Carlson tangents)."""
    x = np.asarray(knots, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 knots")
    if np.any(np.diff(x) <= 0):
        raise ValueError("knots must be strictly increasing")
    if np.any(np.diff(y) < -1e-12):
        raise ValueError("values must be nondecreasing")
    y = np.maximum.accumulate(y)  # absorb tiny negative noise
    m = _fritsch_carlson_tangents(x, y)
    return MonotoneCurve(knots=x, values=y, kind="hermite", tangents=m)


def numeric_derivative(c: MonotoneCurve, t: float, h: float) -> float:
    """Numerical derivative of a curve by central differences.

    One-sided near the domain boundary; result clipped at 0.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    lo, hi = c.knots[0], c.knots[-1]
    left = max(t - h, lo)
    right = min(t + h, hi)
    if right <= left:
        return 0.0
    d = (c(right) - c(left)) / (right - left)
    return max(float(d), 0.0)


def _fritsch_carlson_tangents(x, y):
    h = np.diff(x)
    d = np.diff(y) / h
    n = len(x)
    m = np.zeros(n)
    m[0] = d[0]
    m[-1] = d[-1]
    for k in range(1, n - 1):
        if d[k - 1] * d[k] > 0:
            m[k] = 0.5 * (d[k - 1] + d[k])
    # Limit tangents so each cubic piece stays monotone.
    for k in range(n - 1):
        if d[k] == 0.0:
            m[k] = 0.0
            m[k + 1] = 0.0
            continue
        a = m[k] / d[k]
        b = m[k + 1] / d[k]
        r2 = a * a + b * b
        if r2 > 9.0:
            t = 3.0 / np.sqrt(r2)
            m[k] = t * a * d[k]
            m[k + 1] = t * b * d[k]
    return m


def _hermite_eval(xk, yk, mk, t, deriv=False):
    t = np.clip(t, xk[0], xk[-1])
    idx = np.searchsorted(xk, t, side="right") - 1
    idx = np.clip(idx, 0, len(xk) - 2)
    h = xk[idx + 1] - xk[idx]
    s = (t - xk[idx]) / h
    y0, y1 = yk[idx], yk[idx + 1]
    m0, m1 = mk[idx], mk[idx + 1]
    if deriv:
        dh00 = (6 * s * s - 6 * s) / h
        dh10 = (3 * s * s - 4 * s + 1)
        dh01 = (-6 * s * s + 6 * s) / h
        dh11 = (3 * s * s - 2 * s)
        return dh00 * y0 + dh10 * m0 + dh01 * y1 + dh11 * m1
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * y0 + h10 * m0 * h + h01 * y1 + h11 * m1 * h
