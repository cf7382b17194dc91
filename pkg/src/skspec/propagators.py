"""Mode-wise symbols of the damped-wave and heat propagators.

For a frequency with weight b2 = <n>^2 the damped-wave symbol D(t) solves

    eps^2 D'' + D' + b2 D = 0,    D(0) = 0,  D'(0) = 1,

so that eps^-2 D is the impulse response of eps^2 u'' + u' + b2 u = F.
Everything here is vectorised over ``b2`` and ``t``; ``eps`` is a scalar
and ``eps = 0`` selects the heat semigroup exp(-t b2) wherever that makes
sense.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral import SpectralField

__all__ = [
    "QuadratureError",
    "ModeSymbolQuery",
    "InitialDataPair",
    "phi_series",
    "psi_series",
    "dhat",
    "dhat_dt",
    "heat_symbol",
    "combined_symbol",
    "pr_decomposition",
    "mode_transition",
    "apply_P_eps",
    "duhamel_weight",
    "duhamel_weight_closed",
    "gauss_legendre",
    "multiplier_certificates",
    "heat_smoothing_ratio",
    "symbol_rows",
]

_SERIES_TERMS = 16


class QuadratureError(RuntimeError):
    pass


def _series(x, odd: bool):
    # Horner on sum_j x^j / (2j + odd)!
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for j in range(_SERIES_TERMS - 2, -1, -1):
        k = 2 * j + (1 if odd else 0)
        out = 1.0 + x * out / ((k + 1) * (k + 2))
    return out


def _phi_hybrid(x, odd: bool):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) <= 1.0
    out = _series(np.where(small, x, 0.0), odd)
    r = np.sqrt(np.abs(x))
    pos = ~small & (x > 0)
    neg = ~small & (x < 0)
    rr = np.where(small, 1.0, r)
    if odd:
        out = np.where(pos, np.sinh(np.where(pos, rr, 0.0)) / rr, out)
        out = np.where(neg, np.sin(rr) / rr, out)
    else:
        out = np.where(pos, np.cosh(np.where(pos, rr, 0.0)), out)
        out = np.where(neg, np.cos(rr), out)
    return out if out.ndim else float(out)


def phi_series(x):
    """sum_j x^j/(2j+1)!, i.e. sinh(sqrt x)/sqrt x (x > 0), sin(sqrt -x)/sqrt -x (x < 0)."""
    return _phi_hybrid(x, odd=True)


def psi_series(x):
    """sum_j x^j/(2j)!, i.e. cosh(sqrt x) (x > 0), cos(sqrt -x) (x < 0)."""
    return _phi_hybrid(x, odd=False)


def _require_eps(eps):
    if eps <= 0:
        raise ValueError("the damped-wave symbol needs eps > 0; use heat_symbol for eps = 0")


def _d_and_dt(eps: float, b2, t):
    """(D, dD/dt) by regime: power series near the crossover, closed forms elsewhere."""
    _require_eps(eps)
    b2, t = np.broadcast_arrays(np.asarray(b2, dtype=float), np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    a = 1.0 / (2.0 * eps**2)
    disc = 1.0 - 4.0 * b2 * eps**2          # (2 eps^2 lambda)^2, sign picks the regime
    lam2 = disc / (4.0 * eps**4)
    x = t * t * lam2
    D = np.empty(b2.shape)
    Dt = np.empty(b2.shape)

    ser = np.abs(x) <= 1.0
    if ser.any():
        ts, xs = t[ser], x[ser]
        damp = np.exp(-a * ts)
        D[ser] = damp * ts * phi_series(xs)
        Dt[ser] = -a * D[ser] + damp * psi_series(xs)

    over = ~ser & (x > 0)
    if over.any():
        s = np.sqrt(disc[over])
        tt, bb = t[over], b2[over]
        lam = s / (2.0 * eps**2)
        ep = np.exp(-2.0 * bb / (1.0 + s) * tt)          # exp(Lambda^+ t)
        em = ep * np.exp(-2.0 * lam * tt)                  # exp(Lambda^- t)
        D[over] = ep * (-np.expm1(-2.0 * lam * tt)) / (2.0 * lam)
        one_minus_inv = -4.0 * bb * eps**2 / (s * (1.0 + s))
        Dt[over] = 0.5 * one_minus_inv * ep + 0.5 * (1.0 + 1.0 / s) * em

    under = ~ser & (x < 0)
    if under.any():
        tt = t[under]
        zeta = np.sqrt(-disc[under]) / (2.0 * eps**2)
        damp = np.exp(-a * tt)
        sz = np.sin(zeta * tt) / zeta
        D[under] = damp * sz
        Dt[under] = damp * (np.cos(zeta * tt) - a * sz)
    return D, Dt


def _out(v):
    return v if np.ndim(v) else float(v)


def _unpack(eps, b2, t):
    if isinstance(eps, ModeSymbolQuery):
        return eps.eps, eps.b2, eps.t
    return eps, b2, t


def dhat(eps, b2=None, t=None):
    """Damped-wave symbol D_eps(n, t) for <n>^2 = b2 (or a single ModeSymbolQuery)."""
    eps, b2, t = _unpack(eps, b2, t)
    return _out(_d_and_dt(eps, b2, t)[0])


def dhat_dt(eps, b2=None, t=None):
    """Time derivative of :func:`dhat`."""
    eps, b2, t = _unpack(eps, b2, t)
    return _out(_d_and_dt(eps, b2, t)[1])


def heat_symbol(b2, t):
    """exp(-t b2), the symbol of exp((Delta - 1) t)."""
    return _out(np.exp(-np.asarray(t, dtype=float) * np.asarray(b2, dtype=float)))


def combined_symbol(eps, b2=None, t=None):
    """(eps^-2 + d/dt) D_eps for eps > 0, exp(-t b2) for eps = 0."""
    eps, b2, t = _unpack(eps, b2, t)
    if eps == 0:
        return heat_symbol(b2, t)
    D, Dt = _d_and_dt(eps, b2, t)
    return _out(D / eps**2 + Dt)


def pr_decomposition(eps: float, b2, t):
    """Split (eps^-2 + d/dt) D = P + R in the real-root range 4 b2 eps^2 < 1.

    P = exp(L+ t)/s and R = (1 - 1/s)(exp(L+ t) + exp(L- t))/2 with
    s = sqrt(1 - 4 b2 eps^2) and L+- the characteristic roots.
    """
    _require_eps(eps)
    b2, t = np.broadcast_arrays(np.asarray(b2, dtype=float), np.asarray(t, dtype=float))
    disc = 1.0 - 4.0 * b2 * eps**2
    if np.any(disc <= 0):
        raise ValueError("P + R split needs <n> < 1/(2 eps)")
    s = np.sqrt(disc)
    lp = -2.0 * b2 / (1.0 + s)
    lm = -(1.0 + s) / (2.0 * eps**2)
    P = np.exp(lp * t) / s
    R = 0.5 * (1.0 - 1.0 / s) * (np.exp(lp * t) + np.exp(lm * t))
    return _out(P), _out(R)


@dataclass(frozen=True)
class ModeSymbolQuery:
    eps: float
    n: tuple
    t: float

    def __post_init__(self):
        if self.eps < 0 or self.t < 0:
            raise ValueError("eps and t must be non-negative")

    @property
    def b2(self) -> float:
        return float(1 + self.n[0] ** 2 + self.n[1] ** 2)

    def dhat(self):
        return dhat(self)

    def dhat_dt(self):
        return dhat_dt(self)

    def heat(self):
        return heat_symbol(self.b2, self.t)

    def combined(self):
        return combined_symbol(self)


def mode_transition(eps: float, b2, h):
    """2x2 matrix advancing (u, du/dt) of a free mode by time h.

    Rows: u(h) = (D' + D/eps^2) u0 + D u1 and u'(h) = -(b2/eps^2) D u0 + D' u1,
    the second row using D'' = -(D' + b2 D)/eps^2.
    """
    D, Dt = _d_and_dt(eps, b2, h)
    out = np.empty(D.shape + (2, 2))
    out[..., 0, 0] = Dt + D / eps**2
    out[..., 0, 1] = D
    out[..., 1, 0] = -np.asarray(b2, dtype=float) * D / eps**2
    out[..., 1, 1] = Dt
    return out


@dataclass(frozen=True)
class InitialDataPair:
    phi0: SpectralField
    phi1: SpectralField | None = None

    def __post_init__(self):
        if self.phi1 is not None and self.phi1.lat != self.phi0.lat:
            raise ValueError("initial data on different lattices")
        if not self.phi0.real or (self.phi1 is not None and not self.phi1.real):
            raise ValueError("initial data must be real fields")


def apply_P_eps(data: InitialDataPair, eps: float, t: float) -> SpectralField:
    """Free evolution P_eps(t)(phi0, phi1); at eps = 0 only phi0 is used."""
    lat = data.phi0.lat
    if eps == 0:
        return data.phi0.with_coeffs(heat_symbol(lat.b2, t) * data.phi0.coeffs)
    D, Dt = _d_and_dt(eps, lat.b2, np.full(lat.shape, float(t)))
    c = (D / eps**2 + Dt) * data.phi0.coeffs
    if data.phi1 is not None:
        c = c + D * data.phi1.coeffs
    return data.phi0.with_coeffs(c)


# quadrature -------------------------------------------------------------

@lru_cache(maxsize=8)
def _gl_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def gauss_legendre(integrand, upper, tol: float = 1e-12, order: int = 16, max_level: int = 24,
                   rtol: float = 0.0):
    """Adaptive composite Gauss-Legendre for a batch of integrals over [0, upper_i].

    ``integrand(s, idx)`` receives nodes ``s`` of shape (len(idx), q) and the
    batch indices; it returns one array of that shape or a tuple of them
    (several integrands sharing nodes).  The panel count is doubled per
    batch element until successive estimates agree to
    ``tol + rtol * |estimate|``.
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    x, w = _gl_nodes(order)
    idx_all = np.arange(upper.size)

    def estimate(idx, panels):
        h = upper[idx] / panels
        left = np.arange(panels) * 1.0
        s = (h[:, None, None] * (left[None, :, None] + 0.5 * (x[None, None, :] + 1.0)))
        s = s.reshape(len(idx), panels * order)
        vals = integrand(s, idx)
        single = not isinstance(vals, tuple)
        vals = (vals,) if single else vals
        ww = np.tile(w, panels)[None, :] * (0.5 * h)[:, None]
        return np.stack([np.sum(v * ww, axis=1) for v in vals]), single

    result, single = estimate(idx_all, 1)
    todo = idx_all
    panels = 1
    for _level in range(max_level):
        panels *= 2
        cur, _ = estimate(todo, panels)
        err = np.max(np.abs(cur - result[:, todo]), axis=0)
        result[:, todo] = cur
        ok = err <= tol + rtol * np.max(np.abs(cur), axis=0)
        todo = todo[~ok]
        if todo.size == 0:
            break
    else:
        raise QuadratureError(f"{todo.size} integrals did not converge after {max_level} panel doublings")
    return result[0] if single else tuple(result)


def _unique_b2(b2):
    b2 = np.asarray(b2, dtype=float)
    u, inv = np.unique(b2.ravel(), return_inverse=True)
    return u, inv.reshape(b2.shape)


def duhamel_weight(eps: float, b2, h: float, tol: float = 1e-12):
    """int_0^h of the impulse response: eps^-2 D_eps(s) (eps > 0) or exp(-s b2) (eps = 0).

    The eps > 0 case is computed by adaptive Gauss-Legendre quadrature.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    b2 = np.asarray(b2, dtype=float)
    if eps == 0:
        return _out(-np.expm1(-h * b2) / b2)
    u, inv = _unique_b2(b2)

    def f(s, idx):
        return dhat(eps, u[idx][:, None], s) / eps**2

    vals = gauss_legendre(f, np.full(u.size, float(h)), tol=tol)
    return _out(vals[inv])


def duhamel_weight_closed(eps: float, b2, h: float):
    """Closed form (1 - combined_symbol(h)) / b2 of the same integral.

    Integrating eps^2 D'' + D' + b2 D = 0 over [0, h] gives
    b2 * int_0^h eps^-2 D = 1 - D'(h) - D(h)/eps^2.
    """
    b2 = np.asarray(b2, dtype=float)
    if eps == 0:
        return _out(-np.expm1(-h * b2) / b2)
    return _out((1.0 - combined_symbol(eps, b2, np.full(b2.shape, float(h)))) / b2)


# certificates -------------------------------------------------------------

def _brackets_up_to(nmax: float) -> np.ndarray:
    r = int(np.ceil(nmax))
    k = np.arange(-r, r + 1)
    n1, n2 = np.meshgrid(k, k, indexing="ij")
    b2 = np.unique(1 + n1**2 + n2**2).astype(float)
    return b2[np.sqrt(b2) <= nmax]


def multiplier_certificates(eps_grid=None, nmax: float = 64.0, t_grid=None, theta: float = 0.1) -> dict:
    """Empirical constants for the damped-wave multiplier bounds.

    Over the (eps, n, t) grid returns the suprema of

    * mul1_low   eps^-2 |D| exp(theta t <n>^2),           <n> <= (1+theta)/(2 eps)
    * mul1_high  eps^-2 |D| exp(t/(2 eps^2)) eps <n>,     otherwise
    * mul2_low   |D'| exp(theta t <n>^2),                 <n> <= (1+theta)/(2 eps)
    * mul2_high  |D'| exp(t/(2 eps^2)),                   otherwise
    * mul3       |eps^-2 D - e^{-t<n>^2}| / (e^{-t/(2eps^2)} + eps^{2theta} e^{-t<n>^2/2}),  <n> <= eps^{theta-1}
    * mul4       |(eps^-2 + d/dt) D - e^{-t<n>^2}| / (eps^{2theta} e^{-t<n>^2/2}),           <n> <= eps^{theta-1}
    """
    eps_grid = np.round(np.arange(1, 21) * 0.05, 10) if eps_grid is None else np.asarray(eps_grid, float)
    t_grid = np.unique(np.concatenate([np.geomspace(1e-4, 5.0, 60), np.linspace(0.05, 5.0, 100)])) \
        if t_grid is None else np.asarray(t_grid, float)
    b2 = _brackets_up_to(nmax)
    B, T = np.meshgrid(b2, t_grid, indexing="ij")
    nb = np.sqrt(B)
    out = dict.fromkeys(["mul1_low", "mul1_high", "mul2_low", "mul2_high", "mul3", "mul4"], 0.0)
    for eps in eps_grid:
        D, Dt = _d_and_dt(float(eps), B, T)
        low = nb <= (1.0 + theta) / (2.0 * eps)
        mid = nb <= eps ** (theta - 1.0)
        high = ~low
        vals = {}
        if low.any():
            Bl, Tl = B[low], T[low]
            grow = np.exp(theta * Tl * Bl)
            vals["mul1_low"] = np.abs(D[low]) / eps**2 * grow
            vals["mul2_low"] = np.abs(Dt[low]) * grow
        if high.any():
            Bh, Th = B[high], T[high]
            # exp(t/(2 eps^2)) overflows for small eps; there the damped factor is
            # stripped analytically (the high range is always underdamped)
            with np.errstate(over="ignore"):
                grow = np.exp(Th / (2.0 * eps**2))
            fin = np.isfinite(grow) & (grow < 1e200)
            g = np.where(fin, grow, 0.0)
            vals["mul1_high"] = np.where(fin, np.abs(D[high]) * g / eps * np.sqrt(Bh),
                                         _high_asymptote(eps, Bh, Th, kind=1))
            vals["mul2_high"] = np.where(fin, np.abs(Dt[high]) * g, _high_asymptote(eps, Bh, Th, kind=2))
        if mid.any():
            Bm, Tm = B[mid], T[mid]
            heat = np.exp(-Tm * Bm)
            half = eps ** (2 * theta) * np.exp(-Tm * Bm / 2)
            vals["mul3"] = np.abs(D[mid] / eps**2 - heat) / (np.exp(-Tm / (2 * eps**2)) + half)
            vals["mul4"] = np.abs(D[mid] / eps**2 + Dt[mid] - heat) / half
        for key, arr in vals.items():
            out[key] = max(out[key], float(np.max(arr)))
    return out


def _high_asymptote(eps, b2, t, kind):
    # above the crossover exp(t/(2eps^2)) D = sin(zeta t)/zeta exactly
    disc = np.maximum(4.0 * b2 * eps**2 - 1.0, 1e-300)
    zeta = np.sqrt(disc) / (2.0 * eps**2)
    if kind == 1:
        return np.abs(np.sin(zeta * t) / zeta) / eps**2 * eps * np.sqrt(b2)
    a = 1.0 / (2.0 * eps**2)
    return np.abs(np.cos(zeta * t) - a * np.sin(zeta * t) / zeta)


def heat_smoothing_ratio(f: SpectralField, t: float, alpha: float, beta: float) -> float:
    """t^{(alpha-beta)/2} ||P_0(t) f||_{H^alpha} / ||f||_{H^beta}."""
    from .spectral import sobolev_norm

    pf = f.with_coeffs(heat_symbol(f.lat.b2, t) * f.coeffs)
    return t ** ((alpha - beta) / 2) * sobolev_norm(pf, alpha) / sobolev_norm(f, beta)


def symbol_rows(eps_list, modes, times):
    """Rows (eps, n1, n2, t, dhat, dhat_dt, combined, heat); dhat columns are NaN at eps = 0."""
    rows = []
    for eps in eps_list:
        for n in modes:
            b2 = float(1 + n[0] ** 2 + n[1] ** 2)
            for t in times:
                heat = heat_symbol(b2, t)
                if eps > 0:
                    D, Dt = dhat(eps, b2, t), dhat_dt(eps, b2, t)
                else:
                    D = Dt = float("nan")
                rows.append((float(eps), int(n[0]), int(n[1]), float(t), D, Dt,
                             combined_symbol(eps, b2, t), heat))
    return rows
