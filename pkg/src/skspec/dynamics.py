"""Remainder equations and the assembled solutions u = Psi + v.

With Psi the cut-off stochastic convolution, the remainder v solves the
deterministic equation

    eps^2 v'' + v' + (1 - Delta) v + NL(v) = 0,   (v, v')(0) = (phi0, phi1),

where NL(v) = sum_l C(k, l) :Psi^l: v^(k-l) for the polynomial model and
NL(z) = Im(exp(i beta z) Theta) for sine-Gordon.  v is kept on the Galerkin
space <n> < 2N.  Products are formed on an M x M grid; for the polynomial
model M >= (k+1) 2N makes the projected product alias-free.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .noise import NoisePath, _store_size, advance_convolutions, new_states
from .propagators import (
    InitialDataPair,
    apply_P_eps,
    duhamel_weight,
    gauss_legendre,
    heat_symbol,
    mode_transition,
    _d_and_dt,
)
from .renorm import GmcField, WickLedger, WickPowerField, gmc_theta, hermite, wick_power
from .spectral import FrequencyLattice, SpectralField, lattice, sobolev_norm

__all__ = [
    "BlowUpError",
    "NonContraction",
    "ConfigError",
    "ModelConfig",
    "EnhancedData",
    "Trajectory",
    "RemainderStepper",
    "build_enhanced_data",
    "nonlinearity",
    "step_remainder",
    "solve_model",
    "solve_remainder",
    "picard_solve_local",
]

TWO_PI = 2.0 * np.pi
BLOWUP_LEVEL = 1e8


class BlowUpError(RuntimeError):
    def __init__(self, eps: float, t: float, step: int):
        super().__init__(f"remainder blew up for eps={eps} at t={t:.6g} (step {step})")
        self.eps, self.t, self.step = eps, t, step


class NonContraction(RuntimeError):
    pass


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ModelConfig:
    model: str = "polynomial"
    k: int = 3
    beta: float = math.sqrt(math.pi)
    eps_list: tuple = (0.0,)
    N: float = 8
    M: int = 64
    T: float = 0.1
    K: int = 20
    seed: int = 0
    phi0: SpectralField | None = None
    phi1: SpectralField | None = None

    def problems(self) -> list[str]:
        """Hard violations, one message per offending field."""
        out = []
        if self.model not in ("polynomial", "sine-gordon"):
            out.append(f"model: unknown model {self.model!r}")
        if not self.T > 0:
            out.append(f"T: must be positive, got {self.T}")
        if self.K < 1:
            out.append(f"K: must be >= 1, got {self.K}")
        if not self.N > 0:
            out.append(f"N: must be positive, got {self.N}")
        if self.M % 2 or self.M < 8:
            out.append(f"M: must be an even integer >= 8, got {self.M}")
        if not self.eps_list or any(e < 0 for e in self.eps_list):
            out.append("eps_list: needs at least one value, all >= 0")
        if self.model == "polynomial":
            if self.k < 2:
                out.append(f"k: must be >= 2, got {self.k}")
            elif self.M < (self.k + 1) * 2 * self.N:
                need = int(math.ceil((self.k + 1) * 2 * self.N))
                out.append(f"M: degree-{self.k} products with N={self.N} need M >= {need}, got {self.M}")
        if self.model == "sine-gordon":
            if not 0 < self.beta**2 < 4 * math.pi:
                out.append(f"beta: beta^2 must lie in (0, 4 pi), got {self.beta**2:.6g}")
        return out

    def advisories(self) -> list[str]:
        out = []
        if self.model == "sine-gordon" and self.beta**2 >= 2 * math.pi:
            out.append(f"beta^2 = {self.beta**2:.4g} >= 2 pi: outside the range covered by the theory")
        if self.model == "sine-gordon" and self.M < 3 * 2 * self.N:
            out.append(f"M = {self.M} < 6N: the sine nonlinearity will alias noticeably")
        return out

    def validate(self) -> ModelConfig:
        bad = self.problems()
        if bad:
            raise ConfigError(bad)
        for msg in self.advisories():
            warnings.warn(msg, stacklevel=2)
        return self

    @property
    def radius(self) -> float:
        return 2.0 * self.N

    @property
    def h(self) -> float:
        return self.T / self.K


# enhanced data and the nonlinearity ---------------------------------------

def nonlinearity(model: str, psi_phys: np.ndarray, v_phys: np.ndarray, *, k: int = 3, sigma: float = 0.0,
                 beta: float = 1.0, gamma: float = 1.0) -> np.ndarray:
    """Pointwise renormalized nonlinearity on a grid.

    polynomial: sum_l C(k, l) H_l(Psi; sigma) v^(k-l); sine-gordon: Im(exp(i beta v) gamma exp(i beta Psi));
    free: zero (linear equation, used for consistency checks).
    """
    if model == "free":
        return np.zeros_like(v_phys)
    if model == "polynomial":
        out = np.zeros_like(v_phys)
        vpow = np.ones_like(v_phys)
        # l = k down to 0 so that v^(k-l) is built incrementally
        for l in range(k, -1, -1):
            out += math.comb(k, l) * hermite(l, psi_phys, sigma) * vpow
            vpow = vpow * v_phys
        return out
    if model == "sine-gordon":
        return np.imag(np.exp(1j * beta * v_phys) * (gamma * np.exp(1j * beta * psi_phys)))
    raise ValueError(f"unknown model {model!r}")


@dataclass(frozen=True)
class EnhancedData:
    """Psi snapshots with their renormalization constants on a common time grid."""

    model: str
    times: np.ndarray
    psi: tuple                  # SpectralField per time, all on one lattice
    sigma: np.ndarray
    k: int = 3
    beta: float = 1.0
    gamma: np.ndarray | None = None

    def __post_init__(self):
        lats = {p.lat for p in self.psi}
        if len(lats) > 1 or len(self.psi) != len(self.times) or len(self.sigma) != len(self.times):
            raise ValueError("enhanced data entries must share lattice and time grid")

    def wick(self, j: int) -> tuple[WickPowerField, ...]:
        """(Xi_1, ..., Xi_k) at time index j."""
        return tuple(wick_power(self.psi[j], l, self.sigma[j]) for l in range(1, self.k + 1))

    def theta(self, j: int, M: int | None = None) -> GmcField:
        return gmc_theta(self.psi[j], self.beta, float(self.gamma[j]), M)

    def force(self, j: int, v_phys: np.ndarray) -> np.ndarray:
        psi_phys = self.psi[j].to_physical()
        g = 1.0 if self.gamma is None else float(self.gamma[j])
        return nonlinearity(self.model, psi_phys, v_phys, k=self.k, sigma=float(self.sigma[j]),
                            beta=self.beta, gamma=g)


def build_enhanced_data(psi_fields, times, ledger: WickLedger, eps: float, N: float, model: str = "polynomial",
                        k: int = 3, beta: float | None = None) -> EnhancedData:
    """Attach ledger variances (and gamma for sine-Gordon) to a Psi trajectory."""
    times = np.asarray(times, dtype=float)
    sigma = np.array([ledger.sigma(eps, N, t) for t in times])
    gamma = None
    if model == "sine-gordon":
        beta = ledger.beta if beta is None else beta
        gamma = np.array([ledger.gamma(eps, N, t) for t in times])
    return EnhancedData(model, times, tuple(psi_fields), sigma, k, 1.0 if beta is None else float(beta), gamma)


# time stepping ------------------------------------------------------------

@lru_cache(maxsize=32)
def _step_tables(eps: float, M: int, radius: float, h: float):
    """Transition entries and Duhamel weights on the full lattice, zero off the disc."""
    lat = lattice(M)
    mask = lat.disc(radius)
    u, inv = np.unique(lat.b2[mask], return_inverse=True)
    if eps == 0:
        cols = [heat_symbol(u, h), duhamel_weight(0.0, u, h)]
    else:
        mt = mode_transition(eps, u, np.full(u.shape, h))
        w1 = duhamel_weight(eps, u, h)
        w2 = _d_and_dt(eps, u, np.full(u.shape, h))[0] / eps**2
        cols = [mt[:, 0, 0], mt[:, 0, 1], mt[:, 1, 0], mt[:, 1, 1], w1, w2]
    out = []
    for c in cols:
        a = np.zeros(lat.shape)
        a[mask] = c[inv]
        a.setflags(write=False)
        out.append(a)
    mask.setflags(write=False)
    return mask, tuple(out)


class RemainderStepper:
    """First-order exponential integrator with the force frozen over each step.

    The free flow of every mode is advanced exactly; the force G enters
    through the integrals of the impulse response over the step.
    """

    def __init__(self, eps: float, lat: FrequencyLattice, radius: float, h: float):
        self.eps, self.lat, self.radius, self.h = float(eps), lat, float(radius), float(h)
        self.mask, self.tables = _step_tables(self.eps, lat.M, self.radius, self.h)

    def step(self, v: np.ndarray, dv: np.ndarray | None, force: np.ndarray):
        """(v, v') -> (v, v') after one step with d/dt-forcing ``force`` (coefficient arrays)."""
        if self.eps == 0:
            decay, w = self.tables
            return decay * v + w * force, None
        m11, m12, m21, m22, w1, w2 = self.tables
        return m11 * v + m12 * dv + w1 * force, m21 * v + m22 * dv + w2 * force

    def project(self, coeffs: np.ndarray) -> np.ndarray:
        return np.where(self.mask, coeffs, 0.0)


def step_remainder(v: SpectralField, dv: SpectralField | None, eps: float, force: SpectralField, h: float,
                   radius: float):
    """One step for ``eps^2 v'' + v' + (1 - Delta) v = force`` on the disc <n> < radius."""
    st = RemainderStepper(eps, v.lat, radius, h)
    a, b = st.step(st.project(v.coeffs), None if dv is None else st.project(dv.coeffs), st.project(force.coeffs))
    return v.with_coeffs(a), (None if b is None else v.with_coeffs(b))


def _forward(values: np.ndarray, lat: FrequencyLattice) -> np.ndarray:
    return np.fft.fft2(values) * (TWO_PI / lat.M**2)


def _inverse(coeffs: np.ndarray, lat: FrequencyLattice) -> np.ndarray:
    return np.fft.ifft2(coeffs).real * (lat.M**2 / TWO_PI)


@dataclass
class Trajectory:
    """Stored solution of one eps on a compact lattice; u = psi + v."""

    eps: float
    times: np.ndarray
    psi: list = field(default_factory=list)
    v: list = field(default_factory=list)
    blowup: tuple | None = None          # (t, step) if integration was aborted

    @property
    def u(self) -> list:
        return [p + w for p, w in zip(self.psi, self.v)]

    def norms(self, s_u: float = -0.25, s_v: float = 0.5):
        """Per stored step: (t, ||u||_{H^s_u}, ||v||_{H^s_v})."""
        return [(float(t), sobolev_norm(p + w, s_u), sobolev_norm(w, s_v))
                for t, p, w in zip(self.times, self.psi, self.v)]


def _initial(cfg: ModelConfig, lat: FrequencyLattice, mask: np.ndarray):
    def prep(f):
        if f is None:
            return np.zeros(lat.shape, dtype=complex)
        return np.where(mask, f.resize(lat.M).coeffs, 0.0)
    return prep(cfg.phi0), prep(cfg.phi1)


def solve_remainder(eps: float, data_force, v0: np.ndarray, dv0: np.ndarray, lat: FrequencyLattice,
                    radius: float, h: float, K: int, record=None):
    """Integrate K frozen-force steps; ``data_force(j, v_phys)`` returns NL on the grid."""
    st = RemainderStepper(eps, lat, radius, h)
    v, dv = st.project(v0), (None if eps == 0 else st.project(dv0))
    if record is not None:
        record(0, v)
    for j in range(K):
        nl = data_force(j, _inverse(v, lat))
        g = -st.project(_forward(nl, lat))
        v, dv = st.step(v, dv, g)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > BLOWUP_LEVEL:
            raise BlowUpError(eps, (j + 1) * h, j + 1)
        if record is not None:
            record(j + 1, v)
    return v, dv


def solve_model(cfg: ModelConfig, ledger: WickLedger | None = None, on_blowup: str = "raise",
                store_every: int = 1) -> list[Trajectory]:
    """Coupled eps-family: shared-noise convolutions, renormalized remainders, u = Psi + v."""
    cfg.validate()
    if on_blowup not in ("raise", "record"):
        raise ValueError("on_blowup must be 'raise' or 'record'")
    lat = lattice(cfg.M)
    radius, h, N = cfg.radius, cfg.h, cfg.N
    times = np.linspace(0.0, cfg.T, cfg.K + 1)
    if ledger is None:
        beta = cfg.beta if cfg.model == "sine-gordon" else None
        ledger = WickLedger.build(cfg.eps_list, [N], times, beta=beta)
    store_lat = lattice(max(_store_size(N), 8))
    path = NoisePath(cfg.seed, cfg.T, cfg.K)
    states = new_states(cfg.eps_list, lat, radius)
    steppers = [RemainderStepper(e, lat, radius, h) for e in cfg.eps_list]
    mask = steppers[0].mask
    v0, dv0 = _initial(cfg, lat, mask)
    vs = [v0.copy() for _ in cfg.eps_list]
    dvs = [None if e == 0 else dv0.copy() for e in cfg.eps_list]
    alive = [True] * len(cfg.eps_list)
    trajs = [Trajectory(float(e), np.array([]), [], []) for e in cfg.eps_list]
    kept_t = []

    def store(j):
        kept_t.append(times[j])
        for i, s in enumerate(states):
            if alive[i]:
                trajs[i].psi.append(s.field(N).resize(store_lat.M))
                trajs[i].v.append(SpectralField(vs[i], lat, True).resize(store_lat.M))

    store(0)
    for j in range(cfg.K):
        for i, (s, st) in enumerate(zip(states, steppers)):
            if not alive[i]:
                continue
            eps = cfg.eps_list[i]
            psi_phys = _inverse(s.field(N).coeffs, lat)
            v_phys = _inverse(vs[i], lat)
            sig = ledger.sigma(eps, N, times[j])
            gam = ledger.gamma(eps, N, times[j]) if cfg.model == "sine-gordon" else 1.0
            nl = nonlinearity(cfg.model, psi_phys, v_phys, k=cfg.k, sigma=sig, beta=cfg.beta, gamma=gam)
            vs[i], dvs[i] = st.step(vs[i], dvs[i], -st.project(_forward(nl, lat)))
            if not np.all(np.isfinite(vs[i])) or np.max(np.abs(vs[i])) > BLOWUP_LEVEL:
                if on_blowup == "raise":
                    raise BlowUpError(eps, times[j + 1], j + 1)
                alive[i] = False
                trajs[i].blowup = (float(times[j + 1]), j + 1)
        advance_convolutions(states, path, j)
        if (j + 1) % store_every == 0 or j + 1 == cfg.K:
            store(j + 1)
    for tr in trajs:
        tr.times = np.array(kept_t[: len(tr.v)])
    return trajs


# Picard oracle --------------------------------------------------------------

def _product_weights(eps: float, b2: np.ndarray, h: float, K: int, order: int = 24):
    """A_d, B_d = int_0^h k(d h - s) (1 - s/h, s/h) ds for d = 1..K (rows) per b2 (columns)."""
    x, w = np.polynomial.legendre.leggauss(order)
    s = 0.5 * h * (x + 1.0)
    ws = 0.5 * h * w
    d = np.arange(1, K + 1)[:, None, None]
    arg = d * h - s[None, None, :]
    B2 = b2[None, :, None]
    if eps == 0:
        kern = np.exp(-arg * B2)
    else:
        kern = _d_and_dt(eps, np.broadcast_to(B2, np.broadcast_shapes(B2.shape, arg.shape)),
                         np.broadcast_to(arg, np.broadcast_shapes(B2.shape, arg.shape)))[0] / eps**2
    A = np.sum(kern * (1.0 - s / h) * ws, axis=-1)
    B = np.sum(kern * (s / h) * ws, axis=-1)
    return A, B


def picard_solve_local(eps: float, data: EnhancedData, phi0: SpectralField | None, phi1: SpectralField | None,
                       radius: float, T: float, K: int, tol: float = 1e-10, max_iter: int = 50,
                       frozen: bool = True) -> tuple[list[SpectralField], int]:
    """Fixed point of v = P_eps(t)(phi0, phi1) - int_0^t eps^-2 D(t - s) NL(v(s)) ds.

    The Duhamel integral uses product integration: NL is interpolated
    linearly between grid times and integrated exactly against per-mode
    kernel weights.  With ``frozen=True`` the enhanced data is the single
    snapshot data.psi[0] at all times.  Returns the iterate on the K + 1 grid
    points and the iteration count.
    """
    lat = data.psi[0].lat
    mask = lat.disc(radius)
    h = T / K
    b2 = lat.b2[mask]
    u, inv = np.unique(b2, return_inverse=True)
    A, B = _product_weights(eps, u, h, K)
    A, B = A[:, inv], B[:, inv]                         # (K, modes)

    zero = SpectralField.zeros(lat)
    p0 = zero if phi0 is None else phi0.resize(lat.M).with_coeffs(np.where(mask, phi0.resize(lat.M).coeffs, 0))
    p1 = zero if phi1 is None else phi1.resize(lat.M).with_coeffs(np.where(mask, phi1.resize(lat.M).coeffs, 0))
    free = np.stack([apply_P_eps(InitialDataPair(p0, p1), eps, t).coeffs[mask] for t in np.arange(K + 1) * h])

    def force(vm):
        out = np.empty_like(vm)
        for i in range(K + 1):
            full = np.zeros(lat.shape, dtype=complex)
            full[mask] = vm[i]
            j = 0 if frozen else i
            out[i] = _forward(data.force(j, _inverse(full, lat)), lat)[mask]
        return out

    weight = np.sqrt(b2)                                 # H^{1/2}: sum <n> |c|^2
    v = free.copy()
    prev_diff = np.inf
    for it in range(1, max_iter + 1):
        F = force(v)
        duh = np.zeros_like(v)
        for d in range(1, K + 1):
            duh[d:] += A[d - 1] * F[: K + 1 - d] + B[d - 1] * F[1 : K + 2 - d]
        new = free - duh
        diff = float(np.max(np.sqrt(np.sum(weight * np.abs(new - v) ** 2, axis=1))))
        v = new
        if not np.isfinite(diff):
            raise NonContraction("Picard iterates became non-finite")
        if diff < tol:
            break
        if it > 3 and diff > prev_diff:
            raise NonContraction(f"Picard increments grew at iteration {it} ({prev_diff:.3e} -> {diff:.3e})")
        prev_diff = diff
    else:
        raise NonContraction(f"no convergence within {max_iter} iterations (last increment {diff:.3e})")
    out = []
    for i in range(K + 1):
        full = np.zeros(lat.shape, dtype=complex)
        full[mask] = v[i]
        out.append(SpectralField(full, lat, True))
    return out, it
