import json

import mpmath as mp
import numpy as np
import pytest

from skspec.spectral import (
    DealiasingError,
    LatticeMismatch,
    SpectralField,
    bracket,
    chi,
    dealiased_product,
    dft_roundtrip,
    lattice,
    project_sharp,
    project_smooth,
    sobolev_norm,
    support_radius,
)

TWO_PI = 2 * np.pi


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_bracket_matches_high_precision():
    assert abs(bracket((1, 0)) - float(mp.sqrt(2))) < 1e-15
    assert abs(bracket((3, -4)) - float(mp.sqrt(26))) < 1e-15


def test_lattice_rejects_odd_or_small():
    with pytest.raises(ValueError):
        lattice(9)
    with pytest.raises(ValueError):
        lattice(4)


def test_lattice_index_roundtrip():
    lat = lattice(16)
    for n in [(0, 0), (3, -2), (-7, 7), (-8, 5)]:
        i = lat.index(n)
        assert (lat.n1[i], lat.n2[i]) == n


def test_roundtrip_and_parseval(rng):
    lat = lattice(32)
    f = SpectralField.random(lat, rng, s=0.5)
    back = dft_roundtrip(f)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-12
    # L^2 norm of the grid function equals the l^2 norm of the coefficients
    u = f.to_physical()
    l2 = np.sqrt(np.sum(u**2) * (TWO_PI / lat.M) ** 2)
    assert l2 == pytest.approx(sobolev_norm(f, 0.0), rel=1e-12)


def test_single_mode_physical_values():
    lat = lattice(16)
    f = SpectralField.from_modes(lat, {(2, 1): 1.0})
    u = f.to_physical()
    expected = 2 * np.cos(2 * lat.x1 + lat.x2) / TWO_PI
    assert np.max(np.abs(u - expected)) < 1e-13


def test_real_field_is_hermitian_with_zero_nyquist(rng):
    lat = lattice(16)
    f = SpectralField.random(lat, rng)
    assert f.is_hermitian()
    assert np.all(f.coeffs[lat.nyquist] == 0)
    g = SpectralField.from_physical(rng.standard_normal(lat.shape))
    assert g.real and g.is_hermitian()


def test_coeffs_read_only(rng):
    f = SpectralField.random(lattice(8), rng)
    with pytest.raises(ValueError):
        f.coeffs[0, 0] = 1.0


def test_product_of_two_modes():
    lat = lattice(16)
    a = SpectralField.from_modes(lat, {(1, 0): 1.0}, real=False)
    b = SpectralField.from_modes(lat, {(0, 1): 1.0}, real=False)
    p = dealiased_product([a, b])
    assert p.coefficient((1, 1)) == pytest.approx(1 / TWO_PI, abs=1e-14)
    mask = np.ones(lat.shape, bool)
    mask[lat.index((1, 1))] = False
    assert np.max(np.abs(p.coeffs[mask])) < 1e-14


def test_cube_matches_trig_expansion():
    # (2 cos x / 2pi)^3 = (1/(2pi)^3) (2 cos 3x + 6 cos x)
    lat = lattice(32)
    f = SpectralField.from_modes(lat, {(1, 0): 1.0})
    p = dealiased_product([f, f, f])
    assert p.coefficient((3, 0)) == pytest.approx(1 / TWO_PI**2, abs=1e-14)
    assert p.coefficient((1, 0)) == pytest.approx(3 / TWO_PI**2, abs=1e-14)
    assert p.coefficient((-3, 0)) == pytest.approx(1 / TWO_PI**2, abs=1e-14)


def test_product_matches_direct_convolution(rng):
    lat = lattice(32)
    f = project_sharp(SpectralField.random(lat, rng), 1 / 8.0, "low")   # <n> <= 4
    g = project_sharp(SpectralField.random(lat, rng), 1 / 8.0, "low")
    p = dealiased_product([f, g])
    conv = np.zeros(lat.shape, complex)
    nz_f = np.argwhere(f.coeffs != 0)
    nz_g = np.argwhere(g.coeffs != 0)
    for i in nz_f:
        for j in nz_g:
            n = (lat.n1[tuple(i)] + lat.n1[tuple(j)], lat.n2[tuple(i)] + lat.n2[tuple(j)])
            conv[lat.index(n)] += f.coeffs[tuple(i)] * g.coeffs[tuple(j)]
    assert np.max(np.abs(p.coeffs - conv / TWO_PI)) < 1e-13


def test_product_refuses_aliasing(rng):
    lat = lattice(16)
    f = SpectralField.from_modes(lat, {(5, 0): 1.0})
    with pytest.raises(DealiasingError):
        dealiased_product([f, f])
    with pytest.raises(DealiasingError):
        dealiased_product([f, f, f], cutoff=1)
    # truncated product is still exact on the kept block
    g = SpectralField.from_modes(lattice(64), {(5, 0): 1.0})
    full = dealiased_product([g, g, g])
    cut = dealiased_product([f.resize(32), f.resize(32), f.resize(32)], cutoff=5)
    assert cut.coefficient((5, 0)) == pytest.approx(full.coefficient((5, 0)), abs=1e-14)


def test_product_lattice_mismatch():
    with pytest.raises(LatticeMismatch):
        dealiased_product([SpectralField.zeros(lattice(8)), SpectralField.zeros(lattice(16))])


def test_chi_profile():
    r = np.linspace(0, 3, 301)
    c = chi(r)
    assert np.all(c[r <= 1] == 1.0) and np.all(c[r >= 2] == 0.0)
    assert np.all(np.diff(c) <= 0)
    assert chi(1.5) == pytest.approx(0.5)


def test_projectors(rng):
    lat = lattice(32)
    f = SpectralField.random(lat, rng)
    low = project_sharp(f, 0.1, "low", 0.1)
    high = project_sharp(f, 0.1, "high", 0.1)
    assert np.allclose((low + high).coeffs, f.coeffs)
    assert np.array_equal(project_sharp(low, 0.1, "low", 0.1).coeffs, low.coeffs)
    sm = project_smooth(f, 4)
    assert sm.is_hermitian()
    assert support_radius(sm) <= 8
    with pytest.raises(ValueError):
        project_smooth(f, 0)
    with pytest.raises(ValueError):
        project_sharp(f, 0.1, "middle")


def test_serialisation_roundtrip(rng):
    f = SpectralField.random(lattice(16), rng)
    g = SpectralField.from_json(f.to_json())
    assert np.array_equal(g.coeffs, f.coeffs) and g.real
    json.loads(f.to_json())
    h = SpectralField.from_bytes(f.to_bytes())
    assert np.array_equal(h.coeffs, f.coeffs)
    with pytest.raises(ValueError):
        SpectralField.from_bytes(b"XXXX" + f.to_bytes()[4:])


def test_resize_keeps_shared_modes(rng):
    f = SpectralField.random(lattice(16), rng, radius=6)
    g = f.resize(32).resize(16)
    assert np.array_equal(g.coeffs, f.coeffs)
