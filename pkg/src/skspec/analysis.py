"""Covariance kernels, log-asymptotic band checks, distances and rate fits.

Kernels are evaluated as cosine sums over the lattice,

    K(x) = (2 pi)^-2 sum_n w(n) cos(n . x),

which is the real form of sum_n w(n) e_n(x) e_n(0)^* for the orthonormal
basis e_n = exp(i n.x) / (2 pi).  Points x live on the torus [-pi, pi)^2 and
|x| is the periodic distance to the origin.

A band check compares two functions f, g over a probe grid by the spread of
g - f: if c1 <= g - f <= c2 holds with c2 - c1 small, g and f agree up to a
bounded additive constant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .renorm import mode_variance
from .spectral import chi

__all__ = [
    "CovarianceReport",
    "ConvergenceReport",
    "default_probes",
    "torus_abs",
    "covariance_gamma",
    "heat_green",
    "heat_green_projected",
    "bessel_kernel",
    "bessel_fit",
    "potential_J",
    "covariance_band_check",
    "green_band_check",
    "cov_difference_check",
    "path_distance",
    "fit_rate",
]

TWO_PI = 2.0 * np.pi
FOUR_PI = 4.0 * np.pi
DEFAULT_WIDTH = 3.0
DIRECTIONS = ((1.0, 0.0), (0.6, 0.8), (2**-0.5, 2**-0.5))


@dataclass
class CovarianceReport:
    check: str
    params: dict
    points: list = field(default_factory=list)        # (t, x1, x2) probes
    values: list = field(default_factory=list)        # computed kernel
    predictions: list = field(default_factory=list)   # model value at the same probes
    band: tuple = (0.0, 0.0)                          # (c1, c2) of values - predictions, or (0, constant)
    width_limit: float = DEFAULT_WIDTH
    passed: bool = True

    @property
    def width(self) -> float:
        return float(self.band[1] - self.band[0])

    def to_json(self) -> str:
        return json.dumps({"check": self.check, "params": self.params,
                           "constant_or_band": list(self.band), "pass": bool(self.passed)})

    def rows(self):
        return [(t, x1, x2, v, p, v - p) for (t, x1, x2), v, p in zip(self.points, self.values, self.predictions)]


@dataclass
class ConvergenceReport:
    params: list
    distances: list
    label: str = ""

    def __post_init__(self):
        if len(self.params) != len(self.distances):
            raise ValueError("params and distances differ in length")
        if any(d < 0 for d in self.distances):
            raise ValueError("distances must be non-negative")

    @property
    def monotone(self) -> bool:
        """Distances strictly decrease along the listed parameters."""
        d = np.asarray(self.distances, dtype=float)
        return bool(np.all(np.diff(d) < 0))

    @property
    def slope(self) -> float:
        return fit_rate(self)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["monotone"] = self.monotone
        return out


def torus_abs(x) -> np.ndarray:
    """Periodic distance of x (shape (..., 2)) to the origin."""
    x = np.asarray(x, dtype=float)
    r = (x + np.pi) % TWO_PI - np.pi
    return np.hypot(r[..., 0], r[..., 1])


def default_probes(times=(0.01, 0.1, 1.0), levels: int = 6, directions=DIRECTIONS):
    """(t, x) probes: radii 2^-j pi (j < levels) along each direction, for each t."""
    pts = []
    for t in times:
        for j in range(levels):
            r = np.pi * 2.0**-j
            for d in directions:
                pts.append((float(t), r * d[0], r * d[1]))
    return pts


def _lattice_disc(radius: float):
    R = int(np.ceil(radius))
    k = np.arange(-R, R + 1)
    n1, n2 = np.meshgrid(k, k, indexing="ij")
    n1, n2 = n1.ravel(), n2.ravel()
    b2 = 1.0 + n1**2 + n2**2
    keep = b2 < radius**2
    return n1[keep].astype(float), n2[keep].astype(float), b2[keep]


def _cos_sum(weights, n1, n2, x) -> np.ndarray:
    """(2 pi)^-2 sum_n w(n) cos(n . x) for points x (P, 2); weights (P, modes) or (modes,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phase = np.cos(np.outer(x[:, 0], n1) + np.outer(x[:, 1], n2))
    w = np.broadcast_to(weights, phase.shape)
    return np.sum(w * phase, axis=1) / TWO_PI**2


def _mode_var_by_t(eps, b2, times, method):
    """Per-mode variance for each distinct time, as a dict t -> array."""
    ut = np.unique(np.asarray(times, dtype=float))
    u, inv = np.unique(b2, return_inverse=True)
    q = mode_variance(eps, u, ut, method=method)
    return {t: q[inv, i] for i, t in enumerate(ut)}


def covariance_gamma(eps: float, N: float, t, x, method: str = "closed"):
    """Gamma_{eps,N}(t, x) = E[Psi_{eps,N}(t, x) Psi_{eps,N}(t, 0)].

    ``t`` is a scalar or one time per point of ``x`` (shape (..., 2)).
    """
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 2)
    ts = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1])
    n1, n2, b2 = _lattice_disc(2.0 * N)
    w = chi(np.sqrt(b2) / N) ** 2
    qt = _mode_var_by_t(eps, b2, ts, method)
    out = np.empty(len(pts))
    for tv in qt:
        sel = ts == tv
        out[sel] = _cos_sum(w * qt[tv], n1, n2, pts[sel])
    out = out.reshape(x.shape[:-1])
    return out if out.ndim else float(out)


def heat_green(t: float, x, truncation: int = 128):
    """Covariance of the eps = 0 convolution without cutoff, summed over <n> < truncation.

    Normalized as (2 pi)^-2 sum (1 - exp(-2 t <n>^2)) / (2 <n>^2) cos(n . x),
    i.e. exactly the pointwise covariance.
    """
    if truncation < 64:
        raise ValueError("truncation must be at least 64")
    n1, n2, b2 = _lattice_disc(float(truncation))
    w = -np.expm1(-2.0 * t * b2) / (2.0 * b2)
    out = _cos_sum(w, n1, n2, np.asarray(x, dtype=float).reshape(-1, 2)).reshape(np.shape(x)[:-1])
    return out if out.ndim else float(out)


def heat_green_projected(t: float, x, N: float):
    """The same kernel with chi_N^2 applied; equals Gamma_{0,N}."""
    n1, n2, b2 = _lattice_disc(2.0 * N)
    w = chi(np.sqrt(b2) / N) ** 2 * (-np.expm1(-2.0 * t * b2)) / (2.0 * b2)
    out = _cos_sum(w, n1, n2, np.asarray(x, dtype=float).reshape(-1, 2)).reshape(np.shape(x)[:-1])
    return out if out.ndim else float(out)


def bessel_kernel(alpha: float, x, truncation: int = 128):
    """Smoothly truncated kernel of <nabla>^-alpha: (2 pi)^-2 sum chi(<n>/trunc) <n>^-alpha cos(n . x)."""
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    x = np.asarray(x, dtype=float)
    r = torus_abs(x)
    if np.any(r < np.pi / truncation):
        raise ValueError(f"|x| below the resolution pi/{truncation} of the truncation")
    n1, n2, b2 = _lattice_disc(2.0 * truncation)
    w = chi(np.sqrt(b2) / truncation) * b2 ** (-alpha / 2)
    out = _cos_sum(w, n1, n2, x.reshape(-1, 2)).reshape(x.shape[:-1])
    return out if out.ndim else float(out)


def bessel_fit(alpha: float, radii=None, truncation: int = 256, direction=(1.0, 0.0)):
    """Fit J(r) = c r^p + r0 along a ray and the best c for the fixed power alpha - 2.

    Returns (p, c_free, c_fixed, sup |J - c_fixed r^(alpha-2) - mean|) on the radii.
    """
    radii = np.pi * 2.0 ** -np.arange(0, 6) if radii is None else np.asarray(radii, dtype=float)
    d = np.asarray(direction, dtype=float) / np.hypot(*direction)
    pts = np.outer(radii, d)
    J = bessel_kernel(alpha, pts, truncation)
    (c, p, r0), _ = curve_fit(lambda r, c, p, r0: c * r**p + r0, radii, J, p0=(0.1, alpha - 2.0, 0.0), maxfev=20000)
    A = np.column_stack([radii ** (alpha - 2.0), np.ones_like(radii)])
    (c_fix, off), *_ = np.linalg.lstsq(A, J, rcond=None)
    resid = J - c_fix * radii ** (alpha - 2.0)
    return float(p), float(c), float(c_fix), float(np.max(np.abs(resid - resid.mean())))


def potential_J(eps: float, N: float, t, x):
    """The potential whose -(1/4 pi) log tracks the covariance.

    J_0 = (|x| + 1/N) / (|x| + sqrt t + 1/N); for eps > 0 and N > 1/(2 eps)
    J = (|x| + eps)/(|x| + sqrt t + eps) * ((|x| + 1/N)/(|x| + eps))^(1 - exp(-t/eps^2)).
    """
    r = torus_abs(x)
    t = np.asarray(t, dtype=float)
    st = np.sqrt(t)
    j0 = (r + 1.0 / N) / (r + st + 1.0 / N)
    if eps == 0 or N <= 1.0 / (2.0 * eps):
        out = j0
    else:
        expo = -np.expm1(-t / eps**2)
        out = (r + eps) / (r + st + eps) * ((r + 1.0 / N) / (r + eps)) ** expo
    return out if np.ndim(out) else float(out)


def _band_report(check, params, probes, values, preds, width):
    diff = np.asarray(values) - np.asarray(preds)
    band = (float(diff.min()), float(diff.max()))
    return CovarianceReport(check, params, [tuple(p) for p in probes], [float(v) for v in values],
                            [float(p) for p in preds], band, width, bool(np.isfinite(diff).all() and
                                                                          band[1] - band[0] <= width))


def covariance_band_check(eps: float, N: float, probes=None, width: float = DEFAULT_WIDTH) -> CovarianceReport:
    """Band of Gamma_{eps,N} against -(1/4 pi) log J_{eps,N} over the probes."""
    probes = default_probes() if probes is None else probes
    P = np.asarray(probes, dtype=float)
    vals = covariance_gamma(eps, N, P[:, 0], P[:, 1:])
    preds = -np.log(potential_J(eps, N, P[:, 0], P[:, 1:])) / FOUR_PI
    return _band_report("covariance_log_band", {"eps": eps, "N": N}, probes, vals, preds, width)


def green_band_check(N: float, probes=None, width: float = DEFAULT_WIDTH) -> CovarianceReport:
    """Band of the cut-off heat kernel against -(1/4 pi) log((|x| + 1/N)/(|x| + sqrt t + 1/N))."""
    probes = default_probes() if probes is None else probes
    P = np.asarray(probes, dtype=float)
    vals = np.array([heat_green_projected(t, p, N) for t, p in zip(P[:, 0], P[:, 1:])])
    preds = -np.log(potential_J(0.0, N, P[:, 0], P[:, 1:])) / FOUR_PI
    return _band_report("heat_green_log_band", {"N": N}, probes, vals, preds, width)


def cov_difference_check(N1: float, N2: float, eps: float, probes=None, delta: float = 0.1,
                         method: str = "closed") -> CovarianceReport:
    """max over probes and j of |P_{Nj}^2 Gamma - P_{N1} P_{N2} Gamma| N1^delta |x|^(2 delta)."""
    if N1 < 8 or N2 < N1:
        raise ValueError("need 8 <= N1 <= N2")
    probes = default_probes() if probes is None else probes
    P = np.asarray(probes, dtype=float)
    n1, n2, b2 = _lattice_disc(2.0 * N2)
    c1, c2 = chi(np.sqrt(b2) / N1), chi(np.sqrt(b2) / N2)
    qt = _mode_var_by_t(eps, b2, P[:, 0], method)
    worst = np.zeros(len(P))
    for tv, q in qt.items():
        sel = P[:, 0] == tv
        x = P[sel, 1:]
        mixed = _cos_sum(c1 * c2 * q, n1, n2, x)
        d1 = np.abs(_cos_sum(c1 * c1 * q, n1, n2, x) - mixed)
        d2 = np.abs(_cos_sum(c2 * c2 * q, n1, n2, x) - mixed)
        worst[sel] = np.maximum(d1, d2) * N1**delta * torus_abs(x) ** (2 * delta)
    const = float(worst.max())
    return CovarianceReport("cov_difference", {"N1": N1, "N2": N2, "eps": eps, "delta": delta},
                            [tuple(p) for p in probes], worst.tolist(), [0.0] * len(P), (0.0, const),
                            float("inf"), bool(np.isfinite(const)))


def path_distance(traj_a, traj_b, s: float) -> float:
    """max over stored steps of ||u_a - u_b||_{H^s}."""
    from .spectral import sobolev_norm

    if len(traj_a.times) != len(traj_b.times) or not np.allclose(traj_a.times, traj_b.times):
        raise ValueError("trajectories have different time grids")
    ua, ub = traj_a.u, traj_b.u
    if ua and ua[0].lat != ub[0].lat:
        raise ValueError("trajectories live on different lattices")
    return max(sobolev_norm(a - b, s) for a, b in zip(ua, ub))


def fit_rate(report: ConvergenceReport) -> float:
    """Least-squares slope of log(distance) against log(parameter)."""
    p = np.asarray(report.params, dtype=float)
    d = np.asarray(report.distances, dtype=float)
    if len(p) < 3:
        raise ValueError("need at least three points")
    if np.any(d <= 0) or np.any(p <= 0):
        raise ValueError("rate fit needs positive parameters and distances")
    return float(np.polyfit(np.log(p), np.log(d), 1)[0])
