"""Experiment drivers shared by the batch CLI and the test suite.

Each driver returns an :class:`ExperimentResult`: named tables (column
names plus rows) and a list of pass/fail :class:`Check` records.  Work that
is independent across seeds goes through a ``mapper`` argument (builtin
``map`` by default) so callers can swap in a process pool; per-seed
functions are module-level and therefore picklable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .analysis import (
    ConvergenceReport,
    cov_difference_check,
    covariance_band_check,
    default_probes,
    fit_rate,
    green_band_check,
    path_distance,
)
from .dynamics import ModelConfig, build_enhanced_data, picard_solve_local, solve_model, solve_remainder
from .noise import NoisePath, _store_size, simulate_convolutions
from .propagators import combined_symbol, heat_symbol, multiplier_certificates, symbol_rows
from .renorm import WickLedger, gmc_theta, sigma_variance, wick_power
from .spectral import SpectralField, lattice, sobolev_norm

__all__ = [
    "Check",
    "ExperimentResult",
    "heat_limit_errors",
    "symbols_experiment",
    "variance_law",
    "wick_seed",
    "wick_experiment",
    "cov_experiment",
    "oracle_experiment",
    "sk_seed",
    "sk_experiment",
    "default_steps",
]


@dataclass
class Check:
    name: str
    passed: bool
    value: float | list | None = None
    limit: float | list | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"check": self.name, "pass": bool(self.passed), "value": self.value,
                "limit": self.limit, "note": self.note}


@dataclass
class ExperimentResult:
    tables: dict = field(default_factory=dict)    # name -> (columns, rows)
    checks: list = field(default_factory=list)
    blowups: list = field(default_factory=list)   # (seed, eps, t, step)
    records: list = field(default_factory=list)   # extra JSON-able dicts

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _stderr(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


# symbols -------------------------------------------------------------------

def heat_limit_errors(n=(1, 0), t: float = 0.5, eps=(0.1, 0.05, 0.025)):
    """|combined - heat| at one mode and time for each eps, and successive ratios."""
    b2 = float(1 + n[0] ** 2 + n[1] ** 2)
    err = [abs(combined_symbol(e, b2, t) - heat_symbol(b2, t)) for e in eps]
    ratios = [a / b for a, b in zip(err, err[1:])]
    return err, ratios


def symbols_experiment(eps=(0.1, 0.05, 0.025), modes=((1, 0), (2, 1), (4, 4)), times=(0.1, 0.5, 1.0),
                       theta: float = 0.1, heat_mode=(1, 0), heat_time: float = 0.5,
                       ratio_band=(2.5, 6.0)) -> ExperimentResult:
    res = ExperimentResult()
    rows = symbol_rows(list(eps) + ([0.0] if 0.0 not in eps else []), modes, times)
    res.tables["symbols"] = (("eps", "n1", "n2", "t", "dhat", "dhat_dt", "combined", "heat"), rows)
    cert = multiplier_certificates(theta=theta)
    res.tables["certificates"] = (("name", "constant"), sorted(cert.items()))
    res.checks.append(Check("certificates_finite", all(np.isfinite(v) for v in cert.values()),
                            cert, None, f"theta={theta}"))
    err, ratios = heat_limit_errors(heat_mode, heat_time, eps)
    res.tables["heat_limit"] = (("eps", "error"), list(zip(map(float, eps), err)))
    res.checks.append(Check("heat_limit_decreasing", bool(np.all(np.diff(err) < 0)), err))
    lo, hi = ratio_band
    res.checks.append(Check("heat_limit_ratio", all(lo <= r <= hi for r in ratios), ratios, [lo, hi],
                            f"n={tuple(heat_mode)}, t={heat_time}"))
    return res


# variances and Wick powers -------------------------------------------------

def variance_law(N: float = 256, t: float = 1.0, eps=(0.2, 0.1, 0.05), band=(0.85, 1.15)):
    """Checks on sigma: log growth at eps = 0 and the eps -> 0 limit with N = floor(eps^-0.9)."""
    ratio = sigma_variance(0.0, N, t) * 4 * math.pi / math.log(N)
    gaps = []
    for e in eps:
        Ne = math.floor(e ** -0.9)
        gaps.append(abs(sigma_variance(e, Ne, t) - sigma_variance(0.0, Ne, t)))
    return [Check("variance_log_law", band[0] <= ratio <= band[1], ratio, list(band), f"N={N}, t={t}"),
            Check("variance_eps_limit", bool(np.all(np.diff(gaps) < 0)), gaps, None,
                  f"eps={list(eps)}, N=floor(eps^-0.9)")]


def _wick_lattice(N: float):
    # holds the square of a field supported on <n> < 2N
    return lattice(_store_size(2 * N))


def wick_seed(seed: int, eps_list, N_list, t: float, sigmas: dict, ell: int = 2,
              beta: float | None = None, gammas: dict | None = None, s: float = -0.5):
    """Per-seed Cauchy distances for Wick powers (and Theta when ``beta`` is set).

    One convolution state per eps, cut off at every N and 2N, so all levels
    see the same noise.  Rows: (seed, eps, N, wick_dist, theta_dist,
    theta_mean_re, theta_mean_im); the Theta columns are NaN without beta.
    """
    levels = sorted(set(N_list) | {2 * N for N in N_list})
    top = max(levels)
    lat = lattice(_store_size(top))
    path = NoisePath(seed, t, 1)
    # one eps at a time: each state is a marginal here, so no joint factor is needed
    states = [simulate_convolutions([e], lat, 2.0 * top, path)[0] for e in eps_list]
    Mt = _store_size(2 * max(N_list)) if beta is not None else None
    rows = []
    for e, st in zip(eps_list, states):
        wick, theta = {}, {}
        for L in levels:
            psi = st.field(L, _wick_lattice(L))
            wick[L] = wick_power(psi, ell, sigmas[(e, L)]).spectral
            if beta is not None and L <= 2 * max(N_list):
                theta[L] = gmc_theta(psi.resize(Mt), beta, gammas[(e, L)])
        for N in sorted(N_list):
            big = wick[2 * N].lat.M
            dw = sobolev_norm(wick[2 * N] - wick[N].resize(big), s)
            if beta is not None:
                dt = sobolev_norm(theta[2 * N].spectral - theta[N].spectral, s)
                m = complex(theta[N].values.mean())
                rows.append((seed, float(e), float(N), dw, dt, m.real, m.imag))
            else:
                rows.append((seed, float(e), float(N), dw, float("nan"), float("nan"), float("nan")))
    return rows


def wick_experiment(seeds, eps=(0.0, 0.1), N_list=(8, 16, 32, 64), t: float = 1.0, ell: int = 2,
                    beta: float | None = None, log_law_N: float = 256, mapper=map) -> ExperimentResult:
    res = ExperimentResult()
    levels = sorted(set(N_list) | {2 * N for N in N_list})
    ledger = WickLedger.build(eps, levels, [t], beta=beta)
    res.tables["wick_ledger"] = (("eps", "N", "t", "sigma", "gamma"), ledger.rows())
    sig = {(e, L): ledger.sigma(e, L, t) for e in eps for L in levels}
    gam = {(e, L): ledger.gamma(e, L, t) for e in eps for L in levels} if beta is not None else None
    work = partial(wick_seed, eps_list=tuple(eps), N_list=tuple(N_list), t=t, sigmas=sig, ell=ell,
                   beta=beta, gammas=gam)
    rows = [r for chunk in mapper(work, seeds) for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    res.tables["wick_cauchy_seeds"] = (("seed", "eps", "N", "wick_dist", "theta_dist", "theta_mean_re",
                                        "theta_mean_im"), rows)
    summary = []
    arr = np.array(rows, dtype=float)
    for e in eps:
        means, tmeans = [], []
        for N in sorted(N_list):
            sel = arr[(arr[:, 1] == e) & (arr[:, 2] == N)]
            means.append(float(sel[:, 3].mean()))
            tmeans.append(float(sel[:, 4].mean()))
            summary.append((float(e), float(N), means[-1], _stderr(sel[:, 3]), tmeans[-1], _stderr(sel[:, 4])))
        res.checks.append(Check(f"wick_cauchy_decreasing[eps={e:g}]", bool(np.all(np.diff(means) < 0)), means,
                                None, f"ell={ell}, t={t}, {len(seeds)} seeds"))
        if beta is not None:
            res.checks.append(Check(f"gmc_cauchy_decreasing[eps={e:g}]", bool(np.all(np.diff(tmeans) < 0)),
                                    tmeans, None, f"beta^2={beta**2:.6g}"))
            for N in sorted(N_list):
                sel = arr[(arr[:, 1] == e) & (arr[:, 2] == N)]
                dev = abs(sel[:, 5].mean() - 1.0)
                se = _stderr(sel[:, 5])
                res.checks.append(Check(f"gmc_mean[eps={e:g},N={N:g}]", bool(dev <= 5 * se), dev, 5 * se,
                                        "|mean Re Theta - 1| <= 5 stderr"))
    res.tables["wick_cauchy"] = (("eps", "N", "wick_mean", "wick_stderr", "theta_mean", "theta_stderr"), summary)
    if log_law_N:
        res.checks.extend(variance_law(log_law_N, t))
    return res


# covariance ----------------------------------------------------------------

def cov_experiment(eps=(0.0, 0.1, 0.3), N_list=(16, 64), width: float = 3.0, levels: int = 6,
                   times=(0.01, 0.1, 1.0), delta: float = 0.1) -> ExperimentResult:
    res = ExperimentResult()
    probes = default_probes(times, levels)
    rows = []
    reports = []
    for e in eps:
        for N in N_list:
            reports.append(covariance_band_check(e, N, probes, width))
    for N in N_list:
        reports.append(green_band_check(N, probes, width))
    Ns = sorted(N_list)
    for N1, N2 in zip(Ns, Ns[1:]):
        if N1 >= 8:
            for e in eps:
                reports.append(cov_difference_check(N1, N2, e, probes, delta))
    for rep in reports:
        eps_v = float(rep.params.get("eps", float("nan")))
        N_v = float(rep.params.get("N", rep.params.get("N1", float("nan"))))
        for t, x1, x2, v, p, d in rep.rows():
            rows.append((rep.check, eps_v, N_v, t, x1, x2, v, p, d))
        label = ",".join(f"{k}={v:g}" for k, v in rep.params.items())
        res.checks.append(Check(f"{rep.check}[{label}]", rep.passed, list(rep.band),
                                None if math.isinf(rep.width_limit) else rep.width_limit))
        res.records.append(dict(check=rep.check, params=rep.params, constant_or_band=list(rep.band),
                                passed=rep.passed))
    res.tables["cov_band"] = (("check", "eps", "N", "t", "x1", "x2", "value", "prediction", "difference"), rows)
    return res


# solver oracle -------------------------------------------------------------

def _oracle_data(eps: float, N: float, M: int, seed: int, k: int):
    lat = lattice(M)
    st = simulate_convolutions([eps], lat, 2.0 * N, NoisePath(seed, 1.0, 1))[0]
    led = WickLedger.build([eps], [N], [1.0])
    return lat, build_enhanced_data([st.field(N)], [1.0], led, eps, N, model="polynomial", k=k)


def _smooth_phi0(lat):
    return SpectralField.from_modes(lat, {(1, 0): 1.0, (0, 2): 0.5j, (2, 1): -0.3})


def oracle_experiment(eps=(0.0, 0.1), N: float = 8, k: int = 3, T: float = 0.05, K: int = 256,
                      K_list=(32, 64, 128), K_ref: int = 512, seed: int = 3, tol: float = 1e-3,
                      slope_band=(0.8, 1.3)) -> ExperimentResult:
    """Picard fixed point against the exponential stepper on a frozen enhanced-data snapshot."""
    res = ExperimentResult()
    M = (k + 1) * 2 * int(math.ceil(N))
    radius = 2.0 * N
    rows, conv = [], []
    for e in eps:
        lat, data = _oracle_data(e, N, M, seed, k)
        phi0 = _smooth_phi0(lat)
        zeros = np.zeros(lat.shape, dtype=complex)

        def run(Kk):
            rec = []
            solve_remainder(e, lambda j, v: data.force(0, v), phi0.coeffs, zeros, lat, radius, T / Kk, Kk,
                            record=lambda j, v: rec.append(SpectralField(v, lat)))
            return rec

        pic, iters = picard_solve_local(e, data, phi0, None, radius, T, K, tol=1e-11)
        diff = max(sobolev_norm(a - b, 0.5) for a, b in zip(pic, run(K)))
        rows.append((float(e), "picard_vs_stepper", K, diff, iters))
        res.checks.append(Check(f"oracle_agreement[eps={e:g}]", diff <= tol, diff, tol, f"K={K}, T={T}"))
        ref = run(K_ref)
        errs = []
        for Kk in K_list:
            sol = run(Kk)
            stride = K_ref // Kk
            errs.append(max(sobolev_norm(sol[i] - ref[i * stride], 0.5) for i in range(Kk + 1)))
            rows.append((float(e), "self_convergence", Kk, errs[-1], 0))
        slope = fit_rate(ConvergenceReport([T / Kk for Kk in K_list], errs))
        conv.append((float(e), slope))
        res.checks.append(Check(f"stepper_order[eps={e:g}]", slope_band[0] <= slope <= slope_band[1], slope,
                                list(slope_band), f"K={list(K_list)} against K={K_ref}"))
    res.tables["oracle"] = (("eps", "kind", "K", "sup_h_half_difference", "iterations"), rows)
    res.tables["oracle_slopes"] = (("eps", "slope"), conv)
    return res


# Smoluchowski-Kramers runs ---------------------------------------------------

def default_steps(T: float, eps_list) -> int:
    """K with h <= (smallest positive eps)^2."""
    pos = [e for e in eps_list if e > 0]
    return max(1, math.ceil(T / min(pos) ** 2 - 1e-9)) if pos else 64


def sk_seed(seed: int, model: str, eps_list, N: float, M: int, T: float, K: int, k: int = 3,
            beta: float = math.sqrt(math.pi), s: float = -0.25, keep_fields: bool = False):
    """One replica: solve the coupled eps-family and measure sup_t ||u_eps - u_0||_{H^s}.

    Returns a dict with ``distances`` rows (seed, eps, distance, blowup_t),
    ``norms`` rows (seed, eps, t, ||u||_{H^-1/4}, ||v||_{H^1/2}) and, with
    ``keep_fields``, the trajectories themselves.
    """
    cfg = ModelConfig(model=model, k=k, beta=beta, eps_list=tuple(eps_list), N=N, M=M, T=T, K=K, seed=seed)
    trajs = solve_model(cfg, on_blowup="record")
    ref = next(tr for tr in trajs if tr.eps == 0.0)
    dist, norms, blow = [], [], []
    for tr in trajs:
        bt = float("nan") if tr.blowup is None else tr.blowup[0]
        if tr.blowup is not None:
            blow.append((seed, tr.eps, tr.blowup[0], tr.blowup[1]))
        if tr.eps != 0.0:
            ok = tr.blowup is None and ref.blowup is None
            dist.append((seed, tr.eps, path_distance(tr, ref, s) if ok else float("nan"), bt))
        norms.extend((seed, tr.eps, t, nu, nv) for t, nu, nv in tr.norms())
    out = {"seed": seed, "distances": dist, "norms": norms, "blowups": blow}
    if keep_fields:
        out["trajectories"] = trajs
    return out


def sk_experiment(seeds, model: str = "polynomial", eps=(0.2, 0.1, 0.05, 0.0), N: float = 32, M: int = 256,
                  T: float = 0.25, K: int | None = None, k: int = 3, beta: float = math.sqrt(math.pi),
                  fraction: float = 0.8, ratio: float = 0.5, mapper=map) -> ExperimentResult:
    """Shared-noise eps-family per seed; distance to the eps = 0 solution in H^{-1/4}."""
    if 0.0 not in eps:
        raise ValueError("the eps list must contain 0 (the limiting equation)")
    K = default_steps(T, eps) if K is None else K
    work = partial(sk_seed, model=model, eps_list=tuple(eps), N=N, M=M, T=T, K=K, k=k, beta=beta)
    outs = sorted(mapper(work, seeds), key=lambda o: o["seed"])
    res = ExperimentResult()
    dist = [r for o in outs for r in o["distances"]]
    res.tables["sk_distances"] = (("seed", "eps", "sup_distance", "blowup_t"), dist)
    res.tables["trajectory_norms"] = (("seed", "eps", "t", "norm_u_h_minus_quarter", "norm_v_h_half"),
                                      [r for o in outs for r in o["norms"]])
    res.blowups = [b for o in outs for b in o["blowups"]]
    pos = sorted((e for e in eps if e > 0), reverse=True)
    table = {(r[0], r[1]): r[2] for r in dist}
    decreasing = 0
    for o in outs:
        d = [table[(o["seed"], e)] for e in pos]
        decreasing += bool(np.all(np.isfinite(d)) and np.all(np.diff(d) < 0))
    means, errs = [], []
    for e in pos:
        d = np.array([table[(o["seed"], e)] for o in outs])
        d = d[np.isfinite(d)]
        means.append(float(d.mean()) if d.size else float("nan"))
        errs.append(_stderr(d))
    report = ConvergenceReport(pos, means, label=f"{model} sup_t H^-1/4 distance to eps=0")
    res.tables["convergence"] = (("eps", "mean_distance", "stderr", "decreasing"),
                                 [(e, m, se, report.monotone) for e, m, se in zip(pos, means, errs)])
    frac = decreasing / len(outs)
    res.checks.append(Check("sk_seedwise_decrease", frac >= fraction, frac, fraction,
                            f"{decreasing}/{len(outs)} seeds strictly decreasing"))
    r = means[-1] / means[0]
    res.checks.append(Check("sk_mean_ratio", bool(r <= ratio), r, ratio,
                            f"mean at eps={pos[-1]:g} over mean at eps={pos[0]:g}, K={K}"))
    res.records.append({"convergence": report.to_dict(), "K": K})
    return res
