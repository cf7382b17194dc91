"""Torus lattice, Fourier transforms, projectors and Sobolev norms.

Fields on T^2 = (R / 2piZ)^2 are stored by their coefficients in the
orthonormal basis e_n(x) = exp(i n.x) / (2 pi), so that

    f(x) = sum_n fhat(n) e_n(x),     ||f||_{L^2} = ||fhat||_{l^2}.

Coefficient arrays use numpy's FFT ordering on an M x M grid
(index k <-> frequency k for k < M/2, k - M otherwise).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "DealiasingError",
    "LatticeMismatch",
    "FrequencyLattice",
    "SpectralField",
    "lattice",
    "bracket",
    "chi",
    "dft_roundtrip",
    "project_smooth",
    "project_sharp",
    "sobolev_norm",
    "dealiased_product",
    "support_radius",
]

TWO_PI = 2.0 * np.pi


class DealiasingError(ValueError):
    """Grid too small to represent a product without aliasing."""


class LatticeMismatch(ValueError):
    pass


def bracket(n) -> float | np.ndarray:
    """Japanese bracket <n> = sqrt(1 + |n|^2) of an integer pair (or array of pairs)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + np.sum(n * n, axis=-1))


def _smooth_step_g(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def chi(r):
    """Smooth cutoff profile.

    chi = 1 on [0, 1], chi = 0 on [2, inf) and in between the C-infinity
    transition g(2 - r) / (g(2 - r) + g(r - 1)) with g(s) = exp(-1/s) for
    s > 0, g = 0 otherwise.  Monotone non-increasing on [1, 2].
    """
    r = np.abs(np.asarray(r, dtype=float))
    a = _smooth_step_g(2.0 - r)
    b = _smooth_step_g(r - 1.0)
    out = np.where(r <= 1.0, 1.0, 0.0)
    mid = (r > 1.0) & (r < 2.0)
    out = np.where(mid, a / np.where(mid, a + b, 1.0), out)
    return out if out.ndim else float(out)


class FrequencyLattice:
    """Frequencies -M/2 <= n_j < M/2 of an M x M periodic grid of side 2 pi."""

    def __init__(self, M: int):
        M = int(M)
        if M < 8 or M % 2:
            raise ValueError(f"grid size must be even and >= 8, got {M}")
        self.M = M
        k = np.fft.fftfreq(M, d=1.0 / M).astype(np.int64)
        self.n1, self.n2 = np.meshgrid(k, k, indexing="ij")
        self.b2 = (1 + self.n1**2 + self.n2**2).astype(float)
        self.bracket = np.sqrt(self.b2)
        self.nyquist = (self.n1 == -M // 2) | (self.n2 == -M // 2)
        self.cheb = np.maximum(np.abs(self.n1), np.abs(self.n2))
        x = TWO_PI * np.arange(M) / M
        self.x1, self.x2 = np.meshgrid(x, x, indexing="ij")
        for a in (self.n1, self.n2, self.b2, self.bracket, self.nyquist, self.cheb, self.x1, self.x2):
            a.setflags(write=False)

    @property
    def shape(self):
        return (self.M, self.M)

    def index(self, n) -> tuple[int, int]:
        """Array index of frequency n = (n1, n2)."""
        n1, n2 = int(n[0]), int(n[1])
        h = self.M // 2
        if not (-h <= n1 < h and -h <= n2 < h):
            raise IndexError(f"frequency {n} outside lattice M={self.M}")
        return n1 % self.M, n2 % self.M

    def disc(self, radius: float) -> np.ndarray:
        """Mask of modes with <n> < radius (strict) and off the Nyquist rows."""
        return (self.bracket < radius) & ~self.nyquist

    def __eq__(self, other):
        return isinstance(other, FrequencyLattice) and other.M == self.M

    def __hash__(self):
        return hash(("FrequencyLattice", self.M))

    def __repr__(self):
        return f"FrequencyLattice(M={self.M})"


@lru_cache(maxsize=32)
def lattice(M: int) -> FrequencyLattice:
    return FrequencyLattice(M)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a field on T^2.

    Real-tagged fields are Hermitian (fhat(-n) = conj fhat(n)) with their
    Nyquist rows set to zero.  The coefficient array is read-only.
    """

    coeffs: np.ndarray
    lat: FrequencyLattice
    real: bool = True

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.shape != self.lat.shape:
            raise LatticeMismatch(f"coefficient shape {c.shape} does not match {self.lat}")
        if self.real:
            c[self.lat.nyquist] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction -----------------------------------------------------
    @classmethod
    def zeros(cls, lat: FrequencyLattice, real: bool = True) -> SpectralField:
        return cls(np.zeros(lat.shape, dtype=complex), lat, real)

    @classmethod
    def from_modes(cls, lat: FrequencyLattice, modes: dict, real: bool = True) -> SpectralField:
        """Build from {(n1, n2): coefficient}.  Real fields get conjugate partners filled in."""
        c = np.zeros(lat.shape, dtype=complex)
        for n, v in modes.items():
            c[lat.index(n)] += v
            if real and (n[0] or n[1]):
                c[lat.index((-n[0], -n[1]))] += np.conj(v)
        return cls(c, lat, real)

    @classmethod
    def from_physical(cls, values: np.ndarray, lat: FrequencyLattice | None = None) -> SpectralField:
        values = np.asarray(values)
        lat = lat or lattice(values.shape[0])
        if values.shape != lat.shape:
            raise LatticeMismatch(f"grid shape {values.shape} does not match {lat}")
        real = not np.iscomplexobj(values)
        c = np.fft.fft2(values) * (TWO_PI / lat.M**2)
        return cls(c, lat, real)

    @classmethod
    def random(cls, lat: FrequencyLattice, rng: np.random.Generator, s: float = 0.0,
               radius: float | None = None) -> SpectralField:
        """Random real field with E|fhat(n)|^2 ~ <n>^{-2s}, optionally restricted to <n> < radius."""
        w = (rng.standard_normal(lat.shape) + 1j * rng.standard_normal(lat.shape)) * lat.b2 ** (-s / 2)
        c = hermitian_part(w, lat)
        if radius is not None:
            c[~lat.disc(radius)] = 0.0
        return cls(c, lat, True)

    # views ------------------------------------------------------------
    def to_physical(self) -> np.ndarray:
        v = np.fft.ifft2(self.coeffs) * (self.lat.M**2 / TWO_PI)
        return v.real.copy() if self.real else v

    def coefficient(self, n) -> complex:
        return complex(self.coeffs[self.lat.index(n)])

    def resize(self, M: int) -> SpectralField:
        """Zero-pad or truncate to an M x M lattice, keeping shared frequencies."""
        new = lattice(M)
        h = min(M, self.lat.M) // 2
        keep = (np.abs(self.lat.n1) < h) & (np.abs(self.lat.n2) < h)
        c = np.zeros(new.shape, dtype=complex)
        c[self.lat.n1[keep] % M, self.lat.n2[keep] % M] = self.coeffs[keep]
        return SpectralField(c, new, self.real)

    def with_coeffs(self, c: np.ndarray) -> SpectralField:
        return SpectralField(c, self.lat, self.real)

    # arithmetic -------------------------------------------------------
    def _check(self, other: SpectralField):
        if other.lat != self.lat:
            raise LatticeMismatch(f"{self.lat} vs {other.lat}")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.coeffs + other.coeffs, self.lat, self.real and other.real)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.coeffs - other.coeffs, self.lat, self.real and other.real)

    def __mul__(self, a: float) -> SpectralField:
        if not np.isscalar(a):
            raise TypeError("use dealiased_product for field products")
        return SpectralField(self.coeffs * a, self.lat, self.real and np.isrealobj(a))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        flipped = np.conj(c[(-np.arange(self.lat.M)) % self.lat.M][:, (-np.arange(self.lat.M)) % self.lat.M])
        ok = ~self.lat.nyquist
        scale = max(1.0, float(np.max(np.abs(c))))
        return bool(np.max(np.abs((c - flipped)[ok]), initial=0.0) <= tol * scale)

    # serialization ------------------------------------------------------
    def to_json(self) -> str:
        """JSON document {"M", "real", "modes": [[n1, n2, re, im], ...]} listing nonzero modes."""
        nz = np.nonzero(self.coeffs)
        modes = [[int(self.lat.n1[i, j]), int(self.lat.n2[i, j]),
                  float(self.coeffs[i, j].real), float(self.coeffs[i, j].imag)] for i, j in zip(*nz)]
        return json.dumps({"M": self.lat.M, "real": self.real, "modes": modes})

    @classmethod
    def from_json(cls, text: str) -> SpectralField:
        doc = json.loads(text)
        lat = lattice(doc["M"])
        c = np.zeros(lat.shape, dtype=complex)
        for n1, n2, re, im in doc["modes"]:
            c[lat.index((n1, n2))] = complex(re, im)
        return cls(c, lat, bool(doc["real"]))

    _HEADER = struct.Struct("<4sIIQ")   # magic, M, real flag, record count
    _RECORD = struct.Struct("<iidd")    # n1, n2, re, im

    def to_bytes(self) -> bytes:
        """Little-endian binary: header (b"SKSF", M:u32, real:u32, count:u64) then (i32, i32, f64, f64) records."""
        nz = np.nonzero(self.coeffs)
        out = [self._HEADER.pack(b"SKSF", self.lat.M, int(self.real), len(nz[0]))]
        for i, j in zip(*nz):
            v = self.coeffs[i, j]
            out.append(self._RECORD.pack(int(self.lat.n1[i, j]), int(self.lat.n2[i, j]), v.real, v.imag))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> SpectralField:
        magic, M, real, count = cls._HEADER.unpack_from(data, 0)
        if magic != b"SKSF":
            raise ValueError("not a SpectralField dump")
        lat = lattice(M)
        c = np.zeros(lat.shape, dtype=complex)
        off = cls._HEADER.size
        for _ in range(count):
            n1, n2, re, im = cls._RECORD.unpack_from(data, off)
            off += cls._RECORD.size
            c[lat.index((n1, n2))] = complex(re, im)
        return cls(c, lat, bool(real))


def hermitian_part(c: np.ndarray, lat: FrequencyLattice) -> np.ndarray:
    """(c(n) + conj c(-n)) / 2 with Nyquist rows zeroed."""
    idx = (-np.arange(lat.M)) % lat.M
    out = 0.5 * (c + np.conj(c[idx][:, idx]))
    out[lat.nyquist] = 0.0
    return out


def dft_roundtrip(field: SpectralField) -> SpectralField:
    """Inverse transform to the grid and back."""
    c = np.fft.fft2(field.to_physical()) * (TWO_PI / field.lat.M**2)
    return SpectralField(c, field.lat, field.real)


def project_smooth(field: SpectralField, N: float) -> SpectralField:
    """Smooth frequency projection: fhat(n) -> chi(<n>/N) fhat(n)."""
    if N <= 0:
        raise ValueError("N must be positive")
    return field.with_coeffs(field.coeffs * chi(field.lat.bracket / N))


def project_sharp(field: SpectralField, eps: float, side: str = "low", theta: float = 0.0) -> SpectralField:
    """Keep <n> <= (1 + theta)/(2 eps) (side="low") or the complement (side="high")."""
    if eps <= 0 or theta < 0:
        raise ValueError("need eps > 0 and theta >= 0")
    low = field.lat.bracket <= (1.0 + theta) / (2.0 * eps)
    if side == "low":
        mask = low
    elif side == "high":
        mask = ~low
    else:
        raise ValueError(f"side must be 'low' or 'high', got {side!r}")
    return field.with_coeffs(np.where(mask, field.coeffs, 0.0))


def sobolev_norm(field: SpectralField, s: float) -> float:
    """(sum_n <n>^{2s} |fhat(n)|^2)^{1/2}."""
    return float(np.sqrt(np.sum(field.lat.b2**s * np.abs(field.coeffs) ** 2)))


def support_radius(field: SpectralField) -> int:
    """Largest max(|n1|, |n2|) over nonzero coefficients (-1 for the zero field)."""
    nz = field.coeffs != 0
    return int(field.lat.cheb[nz].max()) if nz.any() else -1


def dealiased_product(fields: list[SpectralField], cutoff: int | None = None) -> SpectralField:
    """Fourier coefficients of the pointwise product of ``fields``.

    With ``cutoff=None`` the product must be exactly representable:
    sum of the support radii below M/2.  With an integer cutoff the result
    is truncated to max|n_j| <= cutoff and only needs
    sum(radii) + cutoff < M.
    """
    if not fields:
        raise ValueError("empty product")
    lat = fields[0].lat
    for f in fields[1:]:
        if f.lat != lat:
            raise LatticeMismatch(f"{lat} vs {f.lat}")
    radii = [support_radius(f) for f in fields]
    if min(radii) < 0:
        return SpectralField.zeros(lat, all(f.real for f in fields))
    total = sum(radii)
    if cutoff is None:
        if total >= lat.M // 2:
            raise DealiasingError(f"product support {total} needs M > {2 * total}, have M={lat.M}")
    elif total + cutoff >= lat.M:
        raise DealiasingError(f"degree-{len(fields)} product with cutoff {cutoff} needs M > {total + cutoff}")
    values = fields[0].to_physical()
    for f in fields[1:]:
        values = values * f.to_physical()
    out = SpectralField.from_physical(values, lat)
    if cutoff is not None:
        out = out.with_coeffs(np.where(lat.cheb <= cutoff, out.coeffs, 0.0))
    return out
