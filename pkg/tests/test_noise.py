import numpy as np
import pytest

from skspec.noise import (
    ConvolutionState,
    NoisePath,
    StepMismatch,
    advance_convolutions,
    canonical_index,
    family_cov,
    family_factors,
    new_states,
    sample_path,
    shell_count,
    sigma_from_state_mc,
    simulate_convolutions,
    transition_cov,
    transition_cov_closed,
    transition_factors,
    write_path_csv,
)
from skspec.propagators import dhat, dhat_dt
from skspec.spectral import lattice


def test_shell_enumeration_is_a_bijection():
    R = 7
    reps = [(a, b) for a in range(-R, R + 1) for b in range(-R, R + 1) if a > 0 or (a == 0 and b > 0)]
    idx, flip = canonical_index([r[0] for r in reps], [r[1] for r in reps])
    assert sorted(idx.tolist()) == list(range(1, shell_count(R)))
    assert not flip.any()
    i2, f2 = canonical_index([-r[0] for r in reps], [-r[1] for r in reps])
    assert np.array_equal(i2, idx) and f2.all()
    assert canonical_index(0, 0)[0] == 0


def test_normals_prefix_stable_and_deterministic():
    p = NoisePath(11, 1.0, 4)
    a = p.normals(2, 50)
    b = p.normals(2, 500)
    assert np.array_equal(a, b[:50])
    assert np.array_equal(NoisePath(11, 1.0, 4).normals(2, 50), a)
    assert not np.array_equal(p.normals(3, 50), a)
    assert not np.array_equal(NoisePath(12, 1.0, 4).normals(2, 50), a)


def test_increments_are_hermitian_and_scaled():
    lat = lattice(16)
    p = sample_path(3, lat, T=1.0, K=8)
    db = p.increments(5, lat)
    assert np.allclose(db[lat.index((2, -3))], np.conj(db[lat.index((-2, 3))]))
    assert db[0, 0].imag == 0.0
    assert np.all(db[lat.nyquist] == 0)
    # increments agree across lattice sizes on shared modes
    big = p.increments(5, lattice(32))
    assert big[lattice(32).index((2, -3))] == db[lat.index((2, -3))]


def test_increment_variance_monte_carlo():
    lat = lattice(8)
    T, K = 1.0, 1000
    draws = []
    for seed in range(100):
        p = NoisePath(seed, T, K)
        draws.append(np.array([p.increments(j, lat, radius=2.0)[lat.index((1, 0))] for j in range(K)]))
    x = np.concatenate(draws)
    h = T / K
    n = x.size
    for comp in (x.real, x.imag):
        var = comp.var()
        se = h / 2 * np.sqrt(2.0 / n)
        assert abs(var - h / 2) < 5 * se
    z = np.array([NoisePath(s, T, 1).increments(0, lat, radius=2.0)[0, 0] for s in range(4000)])
    assert np.all(z.imag == 0)
    assert abs(z.real.var() - 1.0) < 5 * np.sqrt(2.0 / z.size)


def test_transition_cov_routes_agree():
    b2 = np.array([1.0, 2.0, 5.0, 26.0, 401.0, 5000.0])
    for eps in (0.05, 0.2, 1.0):
        for h in (1e-3, 0.05, 1.0):
            q = transition_cov(eps, b2, h)
            c = transition_cov_closed(eps, b2, h)
            assert np.max(np.abs(q - c)) < 1e-11 * max(1.0, np.max(np.abs(q)))


def test_transition_cov_structure():
    b2 = np.array([1.0, 3.0, 50.0])
    for eps in (0.1, 0.5):
        for h in (1e-4, 0.01, 0.3):
            q = transition_cov(eps, b2, h)
            assert np.all(q[:, 0, 1] ** 2 <= q[:, 0, 0] * q[:, 1, 1] * (1 + 1e-12))
            assert np.allclose(q[:, 0, 1], 0.5 * (dhat(eps, b2, np.full(3, h)) / eps**2) ** 2, rtol=1e-10)
    # small h: position variance is O(h^3)
    q1 = transition_cov(0.5, 1.0, 1e-3)[0, 0]
    q2 = transition_cov(0.5, 1.0, 2e-3)[0, 0]
    assert q2 / q1 == pytest.approx(8.0, rel=1e-2)
    # long time: stationary variances 1/(2 b2) and 1/(2 eps^2)
    q = transition_cov(0.5, 1.0, 50.0)
    assert q[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert q[1, 1] == pytest.approx(2.0, abs=1e-10)


def test_zero_noise_keeps_zero_state():
    lat = lattice(16)
    states = new_states([0.0, 0.1], lat, 6.0)
    p = NoisePath(0, 1.0, 4)
    for j in range(4):
        advance_convolutions(states, p, j, zero_noise=True)
    assert all(np.all(s.psi == 0) for s in states)


def test_identical_eps_identical_trajectories_and_step_check():
    lat = lattice(16)
    p = NoisePath(5, 1.0, 3)
    a, b = simulate_convolutions([0.1, 0.1], lat, 6.0, p)
    assert np.array_equal(a.psi, b.psi)
    assert a.field(3).is_hermitian()
    s = ConvolutionState(0.1, lat, 6.0)
    with pytest.raises(StepMismatch):
        advance_convolutions([s], p, 1)


def test_mean_square_matches_integral_eps_zero_zero_mode():
    lat = lattice(8)
    vals = np.array([simulate_convolutions([0.0], lat, 1.5, NoisePath(s, 1.0, 1))[0].psi[0] for s in range(10000)])
    m2 = np.abs(vals) ** 2
    target = (1 - np.exp(-2.0)) / 2
    assert abs(m2.mean() - target) < 5 * m2.std() / np.sqrt(m2.size)


def test_step_size_independence():
    lat = lattice(8)
    eps, T = 0.3, 0.5
    n = (1, 1)
    flat_pos = None
    res = {}
    for K in (4, 64):
        vals = []
        for s in range(1500):
            st = simulate_convolutions([eps], lat, 2.5, NoisePath(s, T, K))[0]
            vals.append(st.field().coefficient(n))
        v = np.abs(np.array(vals)) ** 2
        res[K] = (v.mean(), v.std() / np.sqrt(v.size))
    target = transition_cov(eps, 3.0, T)[0, 0]
    for K, (m, se) in res.items():
        assert abs(m - target) < 5 * se
    assert abs(res[4][0] - res[64][0]) < 5 * np.hypot(res[4][1], res[64][1])


def test_eps_continuity_of_coupled_paths():
    lat = lattice(32)
    p = NoisePath(9, 0.5, 16)
    states = simulate_convolutions([0.1, 0.101, 0.11, 0.2], lat, 12.0, p)
    from skspec.spectral import sobolev_norm
    d = [sobolev_norm(s.field() - states[0].field(), -0.5) for s in states[1:]]
    assert d[0] < d[1] < d[2]
    assert d[0] < 0.05 * d[2]


def test_mixed_family_cov_agrees_with_closed_blocks():
    b2, h = np.array([1.0, 5.0, 40.0]), 0.03
    mixed = family_cov((0.0, 0.1, 0.05), b2, h)
    assert mixed.shape == (3, 6, 6)
    heat = family_cov((0.0,), b2, h)
    assert np.allclose(mixed[:, :2, :2], heat, rtol=1e-10, atol=0)
    for e, sl in ((0.1, [0, 2, 3]), (0.05, [0, 4, 5])):
        single = family_cov((e,), b2, h)
        assert np.allclose(mixed[:, sl][:, :, sl], single, rtol=1e-9, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(mixed) > -1e-12 * mixed[:, 2, 2].max())


def test_factor_reproduces_cov_and_read_only():
    L, comps = family_factors((0.0, 0.1, 0.101), 16, 6.0, 0.05)
    assert comps[0] == ("dW", 0.0) and comps[1] == ("heat", 0.0)
    from skspec.noise import _active_layout
    b2 = _active_layout(16, 6.0)[3]
    C = family_cov((0.0, 0.1, 0.101), b2, 0.05)
    err = np.abs(L @ np.swapaxes(L, 1, 2) - C)
    assert np.all(err <= 1e-9 * np.sqrt(np.einsum("mii,mjj->mij", C, C)) + 1e-16)
    with pytest.raises(ValueError):
        L[0, 0, 0] = 1.0


def test_heat_chain_does_not_depend_on_family():
    lat = lattice(16)
    p = NoisePath(3, 0.5, 5)
    alone = simulate_convolutions([0.0], lat, 6.0, p)[0]
    shared = simulate_convolutions([0.2, 0.0, 0.05], lat, 6.0, p)[1]
    assert np.allclose(alone.psi, shared.psi, rtol=1e-9, atol=1e-12)
    assert np.array_equal(
        simulate_convolutions([0.1], lat, 6.0, p)[0].psi,
        simulate_convolutions([0.1], lat, 6.0, p)[0].psi)


def test_coupled_difference_matches_common_path_theory():
    # E|Psi_eps(T) - Psi_0(T)|^2 for one mode equals int_0^T (D/eps^2 - e^{-b2 s})^2 ds
    from scipy.integrate import quad
    from skspec.propagators import _d_and_dt

    lat = lattice(8)
    eps, T, b2 = 0.2, 0.3, 2.0
    f = lambda s: (_d_and_dt(eps, b2, s)[0] / eps**2 - np.exp(-b2 * s)) ** 2
    target = quad(f, 0, T, limit=200)[0]
    vals = []
    for seed in range(3000):
        a, b = simulate_convolutions([eps, 0.0], lat, 2.0, NoisePath(seed, T, 3))
        vals.append(abs(a.field().coefficient((1, 1)) - b.field().coefficient((1, 1))) ** 2)
    v = np.array(vals)
    assert abs(v.mean() - target) < 5 * v.std() / np.sqrt(v.size)


def test_transition_factors_read_only():
    m = transition_factors(0.1, 16, 6.0, 0.1)
    with pytest.raises(ValueError):
        m[0][0] = 1.0


def test_sigma_mc_zero_time():
    assert sigma_from_state_mc(0.0, 4, 0.0, 100) == 0.0
    with pytest.raises(ValueError):
        sigma_from_state_mc(0.0, 4, 1.0, 10)


def test_path_dump(tmp_path):
    lat = lattice(8)
    p = NoisePath(1, 1.0, 2)
    out = tmp_path / "path.csv"
    write_path_csv(p, lat, 2.0, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "j,t,n1,n2,dRe,dIm"
    assert len(lines) == 1 + 2 * 5   # modes <n> < 2 up to conjugation: 0, (1,0), (0,1), (1,1), (1,-1)
