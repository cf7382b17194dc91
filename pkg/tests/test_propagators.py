import mpmath as mp
import numpy as np
import pytest

from skspec.propagators import (
    InitialDataPair,
    ModeSymbolQuery,
    QuadratureError,
    apply_P_eps,
    combined_symbol,
    dhat,
    dhat_dt,
    duhamel_weight,
    duhamel_weight_closed,
    gauss_legendre,
    heat_smoothing_ratio,
    heat_symbol,
    mode_transition,
    multiplier_certificates,
    phi_series,
    pr_decomposition,
    psi_series,
    symbol_rows,
)
from skspec.spectral import SpectralField, lattice

mp.mp.dps = 50


def reference_d(eps, b2, t):
    """D and D' from the characteristic roots in 50-digit arithmetic."""
    eps, b2, t = mp.mpf(eps), mp.mpf(b2), mp.mpf(t)
    disc = 1 - 4 * b2 * eps**2
    a = 1 / (2 * eps**2)
    if disc == 0:
        return mp.e ** (-a * t) * t, mp.e ** (-a * t) * (1 - a * t)
    lam = mp.sqrt(mp.mpc(disc)) / (2 * eps**2)
    d = mp.e ** (-a * t) * mp.sinh(lam * t) / lam
    dd = mp.e ** (-a * t) * (mp.cosh(lam * t) - a * mp.sinh(lam * t) / lam)
    return float(mp.re(d)), float(mp.re(dd))


CASES = [
    (eps, b2, t)
    for eps in (0.05, 0.1, 0.3, 0.5, 1.0)
    for b2 in (1.0, 2.0, 5.0, 26.0, 101.0, 1 / (4 * 0.1**2), 4097.0)
    for t in (1e-6, 1e-3, 0.02, 0.3, 2.0)
]


@pytest.mark.parametrize("eps,b2,t", CASES)
def test_dhat_against_high_precision(eps, b2, t):
    d_ref, dd_ref = reference_d(eps, b2, t)
    # natural size of each term before any cancellation
    damp = np.exp(-t / (2 * eps**2))
    d_scale = abs(d_ref) + damp * t
    dd_scale = abs(dd_ref) + damp * (1 + t / (2 * eps**2))
    assert abs(dhat(eps, b2, t) - d_ref) <= 1e-13 * d_scale
    assert abs(dhat_dt(eps, b2, t) - dd_ref) <= 1e-13 * dd_scale


def test_series_functions():
    x = np.array([-4.0, -1.0, -0.3, 0.0, 0.7, 1.0, 9.0])
    phi = [float(mp.nsum(lambda j: mp.mpf(v) ** j / mp.factorial(2 * j + 1), [0, mp.inf])) for v in x]
    psi = [float(mp.nsum(lambda j: mp.mpf(v) ** j / mp.factorial(2 * j), [0, mp.inf])) for v in x]
    assert np.allclose(phi_series(x), phi, rtol=1e-15, atol=0)
    assert np.allclose(psi_series(x), psi, rtol=1e-15, atol=0)


def test_crossover_is_continuous():
    # sweep b2 through 1/(4 eps^2) at fixed t: no jump between regimes
    eps, t = 0.1, 0.5
    b2 = 25.0 + np.linspace(-1e-3, 1e-3, 2001)
    d = dhat(eps, b2, np.full_like(b2, t))
    assert np.max(np.abs(np.diff(d))) < 1e-9


def test_ode_residual_by_finite_differences():
    eps, b2 = 0.2, np.array([2.0, 5.0, 10.0, 50.0])
    t = 0.37
    h = 1e-4
    d = lambda s: dhat(eps, b2, np.full(b2.shape, s))
    dd = dhat_dt(eps, b2, np.full(b2.shape, t))
    fd1 = (d(t + h) - d(t - h)) / (2 * h)
    fd2 = (d(t + h) - 2 * d(t) + d(t - h)) / h**2
    assert np.allclose(dd, fd1, atol=1e-7)
    assert np.allclose(eps**2 * fd2 + dd + b2 * d(t), 0, atol=1e-5)


def test_initial_values():
    b2 = np.array([1.0, 50.0, 1e4])
    assert np.all(dhat(0.1, b2, np.zeros(3)) == 0)
    assert np.allclose(dhat_dt(0.1, b2, np.zeros(3)), 1.0)


def test_eps_zero_rejected_by_wave_symbol():
    with pytest.raises(ValueError):
        dhat(0.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        dhat(0.1, 2.0, -1.0)


def test_combined_symbol_tends_to_heat():
    b2, t = np.array([1.0, 2.0, 5.0, 10.0]), 0.4
    errs = [np.max(np.abs(combined_symbol(e, b2, np.full(4, t)) - heat_symbol(b2, t))) for e in (0.1, 0.05, 0.025)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2
    assert combined_symbol(0.0, 2.0, t) == heat_symbol(2.0, t)


def test_pr_decomposition_sums_to_combined():
    eps = 0.1
    b2 = np.array([1.0, 2.0, 10.0, 24.0])
    t = np.full(4, 0.3)
    P, R = pr_decomposition(eps, b2, t)
    assert np.allclose(P + R, combined_symbol(eps, b2, t), rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        pr_decomposition(eps, 26.0, 0.3)


def test_mode_transition_determinant_and_semigroup():
    eps, b2 = 0.15, np.array([1.0, 3.0, 20.0, 400.0])
    m1 = mode_transition(eps, b2, 0.07)
    m2 = mode_transition(eps, b2, 0.11)
    m12 = mode_transition(eps, b2, 0.18)
    assert np.allclose(m2 @ m1, m12, atol=1e-13)
    assert np.allclose(np.linalg.det(m12), np.exp(-0.18 / eps**2), rtol=1e-9)


def test_mode_query():
    q = ModeSymbolQuery(0.1, (1, 2), 0.5)
    assert q.b2 == 6.0
    assert q.combined() == pytest.approx(q.dhat() / 0.01 + q.dhat_dt())
    assert q.heat() == pytest.approx(np.exp(-3.0))
    with pytest.raises(ValueError):
        ModeSymbolQuery(-0.1, (0, 0), 1.0)


def test_apply_P_eps_matches_mode_formula():
    lat = lattice(16)
    f0 = SpectralField.from_modes(lat, {(2, 1): 0.5 + 0.2j})
    f1 = SpectralField.from_modes(lat, {(2, 1): -1.0})
    out = apply_P_eps(InitialDataPair(f0, f1), 0.2, 0.3)
    b2 = 6.0
    expect = combined_symbol(0.2, b2, 0.3) * (0.5 + 0.2j) - dhat(0.2, b2, 0.3)
    assert out.coefficient((2, 1)) == pytest.approx(expect, abs=1e-15)
    assert out.is_hermitian()
    heat = apply_P_eps(InitialDataPair(f0, f1), 0.0, 0.3)
    assert heat.coefficient((2, 1)) == pytest.approx(np.exp(-1.8) * (0.5 + 0.2j))


def test_duhamel_quadrature_matches_closed_form():
    b2 = np.array([1.0, 2.0, 5.0, 26.0, 401.0, 5000.0])
    for eps in (0.05, 0.2, 0.7):
        for h in (1e-3, 0.05, 1.0):
            q = duhamel_weight(eps, b2, h)
            c = duhamel_weight_closed(eps, b2, h)
            assert np.max(np.abs(q - c)) <= 1e-12
    assert duhamel_weight(0.0, 2.0, 0.5) == pytest.approx((1 - np.exp(-1.0)) / 2)


def test_gauss_legendre_reports_failure():
    with pytest.raises(QuadratureError):
        gauss_legendre(lambda s, idx: np.sign(s - 0.3) * np.sqrt(np.abs(s - 0.3)), [1.0], tol=1e-15, max_level=3)
    val = gauss_legendre(lambda s, idx: np.cos(s), [np.pi / 2, 1.0])
    assert np.allclose(val, [1.0, np.sin(1.0)], atol=1e-14)


def test_multiplier_certificates_are_finite_and_stable():
    cert = multiplier_certificates()
    assert set(cert) == {"mul1_low", "mul1_high", "mul2_low", "mul2_high", "mul3", "mul4"}
    assert all(np.isfinite(v) and v > 0 for v in cert.values())
    finer = multiplier_certificates(t_grid=np.geomspace(1e-5, 5.0, 200))
    for k in cert:
        assert finer[k] <= 1.5 * cert[k] + 1e-12


def test_heat_smoothing_ratio_bounded():
    rng = np.random.default_rng(3)
    lat = lattice(64)
    for alpha, beta in [(1.0, 0.0), (0.5, -0.5), (2.0, 1.0)]:
        ratios = [heat_smoothing_ratio(SpectralField.random(lat, rng, s=beta + 1.1), t, alpha, beta)
                  for t in (1e-3, 1e-2, 0.1, 1.0)]
        # sup_x x^a e^{-x} with a = (alpha-beta)/2 bounds the ratio
        a = (alpha - beta) / 2
        assert max(ratios) <= (a / np.e) ** a + 1e-12


def test_symbol_rows_shape():
    rows = symbol_rows([0.0, 0.1], [(0, 0), (1, 2)], [0.1, 1.0])
    assert len(rows) == 8
    assert np.isnan(rows[0][4]) and rows[0][6] == rows[0][7]
