"""Seeded white-noise paths and exact simulation of the stochastic convolutions.

Each Fourier mode of the linear equation

    eps^2 Psi'' + Psi' + <n>^2 Psi = xi_n,        Psi(0) = Psi'(0) = 0

is a two-dimensional Ornstein-Uhlenbeck process, so one step of length h has
an exact Gaussian law: mean ``mode_transition(h) @ state`` and covariance
``transition_cov(h)``.  At eps = 0 the mode is the scalar OU process
Psi' = -<n>^2 Psi + xi_n.

Coupling.  Over one step every member of an eps-family receives a stochastic
integral int_0^h g(s) dW(t_{j+1} - s) of the same Brownian path W, with its
own kernel g.  These integrals, together with the increment dW itself, are
jointly Gaussian with covariance int_0^h g_a g_b ds; one block-triangular
factor of that matrix turns a shared vector of standard normals into the
exact joint innovation.  Components are ordered (dW, heat, then position and
velocity of each eps > 0), so the increment and the eps = 0 chain do not
depend on which eps > 0 values share the run.

Randomness comes from a counter-based generator keyed by (seed, step) with
one stream per component.  Modes are listed in a fixed order of growing
Chebyshev shells, so the normals attached to a given (n, j, component) do
not depend on the lattice size or the simulated radius.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .propagators import duhamel_weight_closed, gauss_legendre, heat_symbol, mode_transition, _d_and_dt
from .spectral import FrequencyLattice, SpectralField, chi

__all__ = [
    "NoisePath",
    "ConvolutionState",
    "CovarianceError",
    "StepMismatch",
    "sample_path",
    "canonical_index",
    "transition_cov",
    "transition_cov_closed",
    "transition_factors",
    "family_components",
    "family_cov",
    "family_factors",
    "new_states",
    "advance_convolutions",
    "simulate_convolutions",
    "sigma_from_state_mc",
    "write_path_csv",
]

TWO_PI = 2.0 * np.pi
_PSD_TOL = 1e-12


class CovarianceError(ValueError):
    pass


class StepMismatch(ValueError):
    pass


def shell_count(radius: int) -> int:
    """Number of half-plane representatives with max(|n1|, |n2|) <= radius (zero mode included)."""
    return 1 + 2 * radius * (radius + 1)


def canonical_index(n1, n2):
    """Position of +-n in the shell enumeration, and whether n is the conjugate partner.

    Representatives have n1 > 0, or n1 = 0 and n2 > 0.  Shell m >= 1 holds
    4m of them: (0, m), then (n1, -m), (n1, m) for n1 = 1..m-1, then (m, n2)
    for n2 = -m..m.
    """
    n1 = np.asarray(n1, dtype=np.int64)
    n2 = np.asarray(n2, dtype=np.int64)
    flip = (n1 < 0) | ((n1 == 0) & (n2 < 0))
    a = np.where(flip, -n1, n1)
    b = np.where(flip, -n2, n2)
    m = np.maximum(np.abs(a), np.abs(b))
    rank = np.where(
        a == 0,
        0,
        np.where(a < m, 1 + 2 * (a - 1) + (b != -m), 1 + 2 * (m - 1) + (b + m)),
    )
    idx = np.where(m == 0, 0, 1 + 2 * m * (m - 1) + rank)
    return idx, flip


@lru_cache(maxsize=32)
def _active_layout(M: int, radius: float):
    """Flat lattice indices of the modes <n> < radius and their shell positions."""
    from .spectral import lattice

    lat = lattice(M)
    mask = lat.disc(radius)
    flat = np.flatnonzero(mask)
    n1 = lat.n1.ravel()[flat]
    n2 = lat.n2.ravel()[flat]
    idx, flip = canonical_index(n1, n2)
    b2 = lat.b2.ravel()[flat]
    cheb = int(np.max(np.maximum(np.abs(n1), np.abs(n2)))) if flat.size else 0
    for arr in (flat, idx, flip, b2):
        arr.setflags(write=False)
    return flat, idx, flip, b2, cheb


@dataclass(frozen=True)
class NoisePath:
    """Increments of a cylindrical Wiener process on a uniform grid of [0, T].

    Nothing is stored: the innovations of step j are regenerated on demand
    from (seed, j), so any step can be replayed in any order.
    """

    seed: int
    T: float
    K: int

    def __post_init__(self):
        if self.K < 1 or not self.T > 0:
            raise ValueError("need K >= 1 and T > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def h(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)

    def normals(self, j: int, count: int, component: int = 0) -> np.ndarray:
        """(count, 2) standard normals of step j and one component; a prefix of any longer draw."""
        if not 0 <= j < self.K:
            raise IndexError(f"step {j} outside 0..{self.K - 1}")
        bg = np.random.Philox(key=(int(self.seed) << 64) | j, counter=[0, 0, 0, int(component)])
        return np.random.Generator(bg).standard_normal((count, 2))

    def innovation(self, j: int, idx: np.ndarray, flip: np.ndarray, count: int, component: int = 0):
        """Standardized complex normal z for the listed modes.

        E|z|^2 = 1, real and imaginary parts independent with variance 1/2 for
        n != 0, real with variance 1 for n = 0, z(-n) = conj z(n).
        """
        g = self.normals(j, count, component)[idx]
        z = (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0)
        zero = idx == 0
        z[zero] = g[zero, 0]
        return np.where(flip, np.conj(z), z)

    def increments(self, j: int, lat: FrequencyLattice, radius: float | None = None) -> np.ndarray:
        """dB_n(j) = sqrt(h) z_0 on the lattice (zero outside <n> < radius)."""
        radius = lat.M // 2 if radius is None else radius
        flat, idx, flip, _, cheb = _active_layout(lat.M, float(radius))
        out = np.zeros(lat.M * lat.M, dtype=complex)
        out[flat] = np.sqrt(self.h) * self.innovation(j, idx, flip, shell_count(cheb), 0)
        return out.reshape(lat.shape)


def sample_path(seed: int, lattice: FrequencyLattice | None = None, T: float = 1.0, K: int = 1) -> NoisePath:
    """A reproducible noise path; the lattice only matters when increments are requested."""
    return NoisePath(int(seed), float(T), int(K))


# transition covariance --------------------------------------------------

def transition_cov(eps: float, b2, h: float, tol: float = 1e-12):
    """Covariance of (Psi, Psi') accumulated over one step from a zero state.

    Entries are the integrals over [0, h] of k1^2, k1 k2, k2^2 with
    k1 = eps^-2 D and k2 = eps^-2 D', by adaptive Gauss-Legendre quadrature.
    """
    if eps <= 0 or h <= 0:
        raise ValueError("transition_cov needs eps > 0 and h > 0")
    b2 = np.asarray(b2, dtype=float)
    u, inv = np.unique(b2.ravel(), return_inverse=True)

    def f(s, idx):
        D, Dt = _d_and_dt(eps, u[idx][:, None], s)
        k1, k2 = D / eps**2, Dt / eps**2
        return k1 * k1, k1 * k2, k2 * k2

    q11, q12, q22 = gauss_legendre(f, np.full(u.size, float(h)), tol=tol, rtol=1e-13)
    out = np.empty(u.shape + (2, 2))
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = q11, q12, q12, q22
    _check_psd(out)
    return out[inv].reshape(b2.shape + (2, 2))


def transition_cov_closed(eps: float, b2, h):
    """Same covariance from the Lyapunov identity A Q + Q A^T = X(h) X(h)^T - b b^T.

    Here A is the drift of (Psi, Psi'), b = (0, eps^-2) and X(s) = (k1, k2)(s);
    the 2x2 system is solved by hand.  ``h`` may be an array (broadcast with b2).
    """
    if eps <= 0:
        raise ValueError("transition_cov_closed needs eps > 0")
    b2, h = np.broadcast_arrays(np.asarray(b2, dtype=float), np.asarray(h, dtype=float))
    D, Dt = _d_and_dt(eps, b2, h)
    e2 = eps**2
    q12 = 0.5 * (D / e2) ** 2
    q22 = 0.5 * (1.0 - Dt) * (1.0 + Dt) / e2 - b2 * q12
    q11 = (q22 - q12 / e2 - D * Dt / e2**2) * e2 / b2
    out = np.empty(b2.shape + (2, 2))
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = q11, q12, q12, q22
    return out


def _check_psd(q: np.ndarray):
    ev = np.linalg.eigvalsh(q)
    scale = np.maximum(1.0, np.abs(ev).max(axis=-1))
    if np.any(ev.min(axis=-1) < -_PSD_TOL * scale):
        raise CovarianceError(f"transition covariance not PSD (min eigenvalue {ev.min():.3e})")


@lru_cache(maxsize=64)
def transition_factors(eps: float, M: int, radius: float, h: float):
    """Per active mode: read-only mean coefficients (m11, m12, m21, m22) of one exact step.

    At eps = 0 only m11 (heat decay) is meaningful.
    """
    _, _, _, b2, _ = _active_layout(M, radius)
    u, inv = np.unique(b2, return_inverse=True)
    if eps == 0:
        z = np.zeros_like(u)
        cols = (heat_symbol(u, h), z, z, z)
    else:
        mt = mode_transition(eps, u, np.full(u.shape, h))
        cols = (mt[:, 0, 0], mt[:, 0, 1], mt[:, 1, 0], mt[:, 1, 1])
    out = []
    for c in cols:
        a = np.ascontiguousarray(c[inv])
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


# joint innovations of an eps-family ---------------------------------------

def family_components(eps_values) -> list[tuple]:
    """Component list (kind, eps): the increment, the heat kernel, then (pos, vel) per eps > 0."""
    comps = [("dW", 0.0)]
    if 0.0 in eps_values:
        comps.append(("heat", 0.0))
    for e in eps_values:
        if e > 0:
            comps += [("pos", e), ("vel", e)]
    return comps


def _kernel_values(comps, b2, s) -> list:
    vals, cache = [], {}
    for kind, e in comps:
        if kind == "dW":
            vals.append(np.ones_like(s))
        elif kind == "heat":
            vals.append(np.exp(-b2 * s))
        else:
            if e not in cache:
                cache[e] = _d_and_dt(e, b2, s)
            D, Dt = cache[e]
            vals.append((D if kind == "pos" else Dt) / e**2)
    return vals


def _closed_diagonal(kind, e, b2, h):
    if kind == "dW":
        return np.full(b2.shape, h)
    if kind == "heat":
        return -np.expm1(-2.0 * h * b2) / (2.0 * b2)
    q = transition_cov_closed(e, b2, h)
    if kind == "vel":
        return q[..., 1, 1]
    return np.where(q[..., 0, 0] > 0, q[..., 0, 0], h**3 / (3.0 * e**4))


def family_cov(eps_values, b2, h: float, tol: float = 1e-13):
    """Joint covariance (..., d, d) of the one-step innovations of ``family_components``.

    A single eps uses closed forms only.  Mixed families integrate every
    entry by adaptive quadrature after scaling each kernel by the closed-form
    standard deviation, so all entries are correlations computed to ``tol``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    b2 = np.asarray(b2, dtype=float)
    u, inv = np.unique(b2.ravel(), return_inverse=True)
    comps = family_components(tuple(float(e) for e in eps_values))
    d = len(comps)
    C = np.empty((u.size, d, d))
    if len(comps) <= 2 or (len(comps) == 3 and comps[1][0] == "pos"):
        C[:, 0, 0] = h
        if comps[1][0] == "heat":
            C[:, 0, 1] = C[:, 1, 0] = -np.expm1(-h * u) / u
            C[:, 1, 1] = -np.expm1(-2.0 * h * u) / (2.0 * u)
        elif d == 3:
            e = comps[1][1]
            C[:, 0, 1] = C[:, 1, 0] = duhamel_weight_closed(e, u, h)
            C[:, 0, 2] = C[:, 2, 0] = _d_and_dt(e, u, np.full(u.shape, h))[0] / e**2
            C[:, 1:, 1:] = transition_cov_closed(e, u, h)
    else:
        scale = np.stack([np.sqrt(_closed_diagonal(k, e, u, h)) for k, e in comps], axis=1)
        pairs = [(a, b) for a in range(d) for b in range(a, d)]

        def f(s, idx):
            g = _kernel_values(comps, u[idx][:, None], s)
            g = [gi / scale[idx, i][:, None] for i, gi in enumerate(g)]
            return tuple(g[a] * g[b] for a, b in pairs)

        vals = gauss_legendre(f, np.full(u.size, float(h)), tol=tol)
        for (a, b), v in zip(pairs, vals):
            C[:, a, b] = C[:, b, a] = v * scale[:, a] * scale[:, b]
    return C[inv].reshape(b2.shape + (d, d))


def _psd_factor(C: np.ndarray, lead: int = 1, tol: float = 1e-12) -> np.ndarray:
    """Block lower-triangular F with F F^T = C for stacks of PSD matrices.

    The first ``lead`` components get a Cholesky factor, so their rows use
    only the first ``lead`` normals.  The Schur complement of the rest is
    nearly singular for short steps (smooth kernels on a short interval are
    close to linearly dependent) and gets a symmetric eigen-factor with
    rounding-level negative eigenvalues clipped.
    """
    sd = np.sqrt(np.maximum(np.diagonal(C, axis1=-2, axis2=-1), 0.0))
    safe = np.where(sd > 0, sd, 1.0)
    R = C / safe[..., :, None] / safe[..., None, :]
    d = R.shape[-1]
    F = np.zeros_like(R)
    for j in range(lead):
        piv = R[..., j, j] - np.sum(F[..., j, :j] ** 2, axis=-1)
        live = piv > tol
        ljj = np.sqrt(np.where(live, piv, 1.0))
        F[..., j, j] = np.where(live, ljj, 0.0)
        for i in range(j + 1, d):
            num = R[..., i, j] - np.sum(F[..., i, :j] * F[..., j, :j], axis=-1)
            F[..., i, j] = np.where(live, num / ljj, 0.0)
    if lead < d:
        B = F[..., lead:, :lead]
        S = R[..., lead:, lead:] - B @ np.swapaxes(B, -1, -2)
        lam, V = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
        if np.any(lam < -1e-8):
            raise CovarianceError(f"joint innovation covariance not PSD (eigenvalue {lam.min():.3e})")
        F[..., lead:, lead:] = V * np.sqrt(np.maximum(lam, 0.0))[..., None, :]
    return F * sd[..., :, None]


@lru_cache(maxsize=32)
def family_factors(eps_values: tuple, M: int, radius: float, h: float):
    """Read-only joint factor (modes, d, d) over the active modes, plus the component list."""
    _, _, _, b2, _ = _active_layout(M, radius)
    u, inv = np.unique(b2, return_inverse=True)
    lead = 2 if 0.0 in eps_values else 1
    L = np.ascontiguousarray(_psd_factor(family_cov(eps_values, u, h), lead)[inv])
    L.setflags(write=False)
    return L, tuple(family_components(eps_values))


# convolution states -----------------------------------------------------

@dataclass
class ConvolutionState:
    """Unprojected stochastic convolution on the modes <n> < radius of one lattice.

    ``psi``/``dpsi`` hold the coefficients of the active modes in lattice
    order; the cutoff chi(<n>/N) is applied on read-out, so one state serves
    every N <= radius/2 with identical noise.
    """

    eps: float
    lat: FrequencyLattice
    radius: float
    step: int = 0
    time: float = 0.0
    psi: np.ndarray = field(default=None, repr=False)
    dpsi: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        flat = _active_layout(self.lat.M, float(self.radius))[0]
        if self.psi is None:
            self.psi = np.zeros(flat.size, dtype=complex)
        if self.dpsi is None and self.eps > 0:
            self.dpsi = np.zeros(flat.size, dtype=complex)

    @property
    def flat(self) -> np.ndarray:
        return _active_layout(self.lat.M, float(self.radius))[0]

    def field(self, N: float | None = None, lat: FrequencyLattice | None = None) -> SpectralField:
        """Psi_{eps,N} = chi(<n>/N) Psi as a real field, optionally on another lattice."""
        c = np.zeros(self.lat.M * self.lat.M, dtype=complex)
        c[self.flat] = self.psi
        c = c.reshape(self.lat.shape)
        if N is not None:
            c = c * chi(self.lat.bracket / N)
        f = SpectralField(c, self.lat, True)
        return f if lat is None or lat == self.lat else f.resize(lat.M)

    def velocity(self) -> SpectralField:
        if self.dpsi is None:
            raise ValueError("the eps = 0 convolution has no velocity component")
        c = np.zeros(self.lat.M * self.lat.M, dtype=complex)
        c[self.flat] = self.dpsi
        return SpectralField(c.reshape(self.lat.shape), self.lat, True)


def new_states(eps_list, lat: FrequencyLattice, radius: float) -> list[ConvolutionState]:
    return [ConvolutionState(float(e), lat, float(radius)) for e in eps_list]


def advance_convolutions(states: list[ConvolutionState], path: NoisePath, j: int,
                         zero_noise: bool = False) -> list[ConvolutionState]:
    """Advance every state from t_j to t_{j+1}, all driven by the same Brownian path."""
    if not states:
        return states
    lat, radius = states[0].lat, states[0].radius
    for s in states:
        if s.lat != lat or s.radius != radius:
            raise ValueError("states must share lattice and radius")
        if s.step != j:
            raise StepMismatch(f"state at step {s.step}, asked to advance step {j}")
    _, idx, flip, _, cheb = _active_layout(lat.M, float(radius))
    h = path.h
    family = tuple(dict.fromkeys(float(s.eps) for s in states))
    L, comps = family_factors(family, lat.M, float(radius), h)
    row = {c: i for i, c in enumerate(comps)}
    if zero_noise:
        X = np.zeros((idx.size, len(comps)), dtype=complex)
    else:
        count = shell_count(cheb)
        Z = np.stack([path.innovation(j, idx, flip, count, c) for c in range(len(comps))], axis=1)
        X = np.einsum("mak,mk->ma", L, Z)
    for s in states:
        m11, m12, m21, m22 = transition_factors(s.eps, lat.M, float(radius), h)
        if s.eps == 0:
            s.psi = m11 * s.psi + X[:, row[("heat", 0.0)]]
        else:
            pos, vel = X[:, row[("pos", s.eps)]], X[:, row[("vel", s.eps)]]
            psi = m11 * s.psi + m12 * s.dpsi + pos
            s.dpsi = m21 * s.psi + m22 * s.dpsi + vel
            s.psi = psi
        s.step = j + 1
        s.time = (j + 1) * h
    return states


def simulate_convolutions(eps_list, lat: FrequencyLattice, radius: float, path: NoisePath,
                          steps: int | None = None) -> list[ConvolutionState]:
    """Run an eps-family through the first ``steps`` steps (all by default)."""
    states = new_states(eps_list, lat, radius)
    for j in range((path.K if steps is None else steps)):
        advance_convolutions(states, path, j)
    return states


def sigma_from_state_mc(eps: float, N: float, t: float, paths: int, seed0: int = 0,
                        return_stderr: bool = False):
    """Monte Carlo estimate of E[Psi_{eps,N}(0, t)^2] from independent exact simulations."""
    if paths < 100:
        raise ValueError("need at least 100 paths")
    if t == 0:
        return (0.0, 0.0) if return_stderr else 0.0
    from .spectral import lattice

    M = _store_size(N)
    lat = lattice(M)
    radius = 2.0 * N
    flat = _active_layout(M, radius)[0]
    w = chi(lat.bracket.ravel()[flat] / N) / TWO_PI
    vals = np.empty(paths)
    for p in range(paths):
        st = simulate_convolutions([eps], lat, radius, NoisePath(seed0 + p, float(t), 1))[0]
        vals[p] = float(np.real(np.sum(w * st.psi))) ** 2
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / np.sqrt(paths))
    return (est, err) if return_stderr else est


def _store_size(N: float) -> int:
    """Smallest even lattice holding the disc <n> < 2N without touching Nyquist."""
    M = 2 * int(np.ceil(2 * N)) + 2
    return max(8, M + (M % 2))


def write_path_csv(path: NoisePath, lat: FrequencyLattice, radius: float, dest) -> None:
    """Debug dump: rows (j, t, n1, n2, dRe, dIm) over half-plane representatives."""
    flat, idx, flip, _, _ = _active_layout(lat.M, float(radius))
    n1 = lat.n1.ravel()[flat]
    n2 = lat.n2.ravel()[flat]
    keep = ~flip
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["j", "t", "n1", "n2", "dRe", "dIm"])
        for j in range(path.K):
            db = path.increments(j, lat, radius).ravel()[flat]
            for a, b, v in zip(n1[keep], n2[keep], db[keep]):
                w.writerow([j, "%.17g" % (j * path.h), int(a), int(b), "%.17g" % v.real, "%.17g" % v.imag])
