"""Hermite polynomials, renormalization constants and renormalized powers.

sigma_{eps,N}(t) is the pointwise variance of the cut-off convolution
Psi_{eps,N} = chi(<n>/N) Psi_eps at time t:

    sigma = sum_n chi(<n>/N)^2 (2 pi)^-2 int_0^t k(n, s)^2 ds,

with k = eps^-2 D_eps (eps > 0) or exp(-s <n>^2) (eps = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np
from scipy.fft import next_fast_len

from .noise import transition_cov_closed
from .propagators import _d_and_dt, gauss_legendre
from .spectral import SpectralField, chi, support_radius

__all__ = [
    "LedgerMiss",
    "RenormOverflow",
    "WickLedger",
    "WickPowerField",
    "GmcField",
    "hermite",
    "hermite_shift_check",
    "mode_variance",
    "sigma_variance",
    "gamma_renorm",
    "wick_power",
    "gmc_theta",
]

TWO_PI = 2.0 * np.pi
_EXP_LIMIT = 700.0


class LedgerMiss(KeyError):
    pass


class RenormOverflow(OverflowError):
    pass


def hermite(ell: int, x, sigma: float):
    """H_ell(x; sigma) by H_{l+1} = x H_l - l sigma H_{l-1}."""
    if ell < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if ell == 0:
        return prev if prev.ndim else float(prev)
    for l in range(1, ell):
        prev, cur = cur, x * cur - l * sigma * prev
    return cur if cur.ndim else float(cur)


def hermite_shift_check(k: int, x, y, sigma: float):
    """H_k(x + y; sigma) - sum_l C(k, l) x^(k-l) H_l(y; sigma); zero up to rounding."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rhs = sum(math.comb(k, l) * x ** (k - l) * hermite(l, y, sigma) for l in range(k + 1))
    r = hermite(k, x + y, sigma) - rhs
    return r if np.ndim(r) else float(r)


# variances ----------------------------------------------------------------

def _cutoff_modes(N: float):
    """(b2 values, multiplicity * chi^2 weights) over all n with <n> < 2N."""
    R = int(np.ceil(2 * N))
    k = np.arange(-R, R + 1)
    n1, n2 = np.meshgrid(k, k, indexing="ij")
    b2 = (1 + n1**2 + n2**2).ravel().astype(float)
    w = chi(np.sqrt(b2) / N) ** 2
    keep = w > 0
    u, inv = np.unique(b2[keep], return_inverse=True)
    weights = np.bincount(inv, weights=w[keep])
    return u, weights


def mode_variance(eps: float, b2, t, method: str = "closed", tol: float = 1e-10):
    """int_0^t k(n, s)^2 ds for each b2 (rows) and each time in ``t`` (columns).

    ``method="quadrature"`` integrates interval by interval between the sorted
    times and accumulates; ``"closed"`` uses the exact Lyapunov solution.
    """
    b2 = np.atleast_1d(np.asarray(b2, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if eps == 0:
        return -np.expm1(-2.0 * np.outer(b2, t)) / (2.0 * b2[:, None])
    if method == "closed":
        B, T = np.meshgrid(b2, t, indexing="ij")
        return transition_cov_closed(eps, B, T)[..., 0, 0]
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(t)
    ts = t[order]
    left = np.concatenate([[0.0], ts[:-1]])
    width = ts - left
    B, L = np.meshgrid(b2, left, indexing="ij")
    W = np.broadcast_to(width, B.shape)
    live = W.ravel() > 0
    flatB, flatL = B.ravel()[live], L.ravel()[live]

    def f(s, idx):
        D, _ = _d_and_dt(eps, flatB[idx][:, None], s + flatL[idx][:, None])
        return (D / eps**2) ** 2

    pieces = np.zeros(B.size)
    if live.any():
        pieces[live] = gauss_legendre(f, W.ravel()[live], tol=tol, rtol=1e-13)
    cum = np.cumsum(pieces.reshape(B.shape), axis=1)
    out = np.empty_like(cum)
    out[:, order] = cum
    return out


def sigma_variance(eps: float, N: float, t, method: str = "quadrature"):
    """sigma_{eps,N}(t); ``t`` may be a scalar or an array of times."""
    if N <= 0:
        raise ValueError("N must be positive")
    b2, w = _cutoff_modes(N)
    q = mode_variance(eps, b2, t, method=method)
    s = w @ q / TWO_PI**2
    return float(s[0]) if np.ndim(t) == 0 else s


def _key(eps, N, t):
    return (float(eps), float(N), round(float(t), 12))


@dataclass(frozen=True)
class WickLedger:
    """Frozen table (eps, N, t) -> sigma, with gamma = exp(beta^2 sigma / 2)."""

    table: MappingProxyType
    beta: float | None = None

    @classmethod
    def build(cls, eps_list, N_list, times, beta: float | None = None, method: str = "closed") -> WickLedger:
        times = np.asarray(times, dtype=float)
        tab = {}
        for eps in eps_list:
            for N in N_list:
                sig = np.atleast_1d(sigma_variance(eps, N, times, method=method))
                for t, s in zip(times, sig):
                    tab[_key(eps, N, t)] = max(float(s), 0.0)
        return cls(MappingProxyType(tab), beta)

    def sigma(self, eps, N, t) -> float:
        try:
            return self.table[_key(eps, N, t)]
        except KeyError:
            raise LedgerMiss(f"no variance recorded for eps={eps}, N={N}, t={t}") from None

    def gamma(self, eps, N, t) -> float:
        return gamma_renorm(self, eps, N, t)

    def rows(self):
        """(eps, N, t, sigma, gamma) sorted; gamma is NaN without beta."""
        out = []
        for (eps, N, t), s in sorted(self.table.items()):
            g = _gamma(self.beta, s) if self.beta is not None else float("nan")
            out.append((eps, N, t, s, g))
        return out


def _gamma(beta: float, sigma: float) -> float:
    expo = 0.5 * beta**2 * sigma
    if expo > _EXP_LIMIT:
        raise RenormOverflow(f"beta^2 sigma / 2 = {expo:.1f} exceeds {_EXP_LIMIT}; reduce N or beta")
    return math.exp(expo)


def gamma_renorm(ledger: WickLedger, eps, N, t) -> float:
    if ledger.beta is None:
        raise ValueError("ledger was built without beta")
    return _gamma(ledger.beta, ledger.sigma(eps, N, t))


# renormalized powers -------------------------------------------------------

def _even_fast(n: int) -> int:
    m = next_fast_len(max(n, 8), real=True)
    while m % 2:
        m = next_fast_len(m + 1, real=True)
    return m


@dataclass(frozen=True)
class WickPowerField:
    ell: int
    sigma: float
    psi: SpectralField
    values: np.ndarray          # H_ell(Psi(x); sigma) on the grid of psi
    spectral: SpectralField     # its Fourier coefficients on psi's lattice, alias-free


def wick_power(psi: SpectralField, ell: int, sigma: float) -> WickPowerField:
    """:Psi^ell: = H_ell(Psi; sigma), evaluated on a padded grid so that kept modes are exact."""
    if not psi.real:
        raise ValueError("Wick powers need a real field")
    if ell < 0 or sigma < 0:
        raise ValueError("need ell >= 0 and sigma >= 0")
    lat = psi.lat
    r = max(support_radius(psi), 0)
    keep = min(ell * r, lat.M // 2 - 1)
    Mp = max(_even_fast(ell * r + keep + 1), lat.M)
    big = psi.resize(Mp)
    h = hermite(ell, big.to_physical(), sigma)
    spec = SpectralField.from_physical(np.asarray(h, dtype=float), big.lat).resize(lat.M)
    spec = spec.with_coeffs(np.where(lat.cheb <= keep, spec.coeffs, 0.0))
    vals = np.asarray(hermite(ell, psi.to_physical(), sigma), dtype=float)
    return WickPowerField(ell, float(sigma), psi, vals, spec)


@dataclass(frozen=True)
class GmcField:
    beta: float
    gamma: float
    values: np.ndarray          # gamma * exp(i beta Psi(x)) on the evaluation grid
    spectral: SpectralField     # complex-tagged coefficients on that grid


def gmc_theta(psi: SpectralField, beta: float, gamma: float, M: int | None = None) -> GmcField:
    """Theta = gamma exp(i beta Psi) pointwise on an M x M grid (default: psi's own)."""
    if not psi.real:
        raise ValueError("Theta needs a real field")
    if beta <= 0 or gamma < 1 or not np.isfinite(gamma):
        raise ValueError("need beta > 0 and finite gamma >= 1")
    f = psi if M is None or M == psi.lat.M else psi.resize(M)
    vals = gamma * np.exp(1j * beta * f.to_physical())
    return GmcField(float(beta), float(gamma), vals, SpectralField.from_physical(vals, f.lat))
