"""Exit criteria, each run at its stated tolerance.

Every check prints one PASS/FAIL line (also collected in the terminal
summary). Criteria 5 and 8 run full-length MCMC studies and take about 20
minutes each on one core; select with ``-m "not slow"`` to skip them.
"""

import itertools
import math
import time
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest
from scipy import stats

from thinar.consequences import naive_limits, naive_pois_ar_mle, nu_lim_fd_slope, prop_bounds
from thinar.data import ObservedSeries
from thinar.fit import APPROX_CONFIG, EXACT_CONFIG, fit_approx, fit_exact
from thinar.mcmc import ChainConfig, mcse_mean, mcse_quantile, run_chains, split_rhat
from thinar.mcmc.latent import proposal_width, update_latent_counts
from thinar.models import ModelSpec
from thinar.models.exact import log_joint_exact
from thinar.moments import invert_moments, moment_standard_errors, observed_moments, sample_moments
from thinar.reconstruct import perfect_match_rate, reconstruct_counts
from thinar.rng import stream
from thinar.simulate import ThinnedArParams, simulate_general, simulate_thinned_pois_ar

pytestmark = pytest.mark.acceptance

# tolerances, pinned
SE_MULT = 3.0
ROUND_TRIP_TOL = 1e-9
BISECTION_TOL = 1e-8
GOF_LEVEL = 0.01
TV_MAX = 0.02
RHAT_MAX = 1.01
AGREE_FRACTION = 0.8
AGREE_SE_MULT = 2.0
MATCH_RANGE = (50.0, 90.0)
COVERAGE_MIN = 17


def load_config(name):
    return ModelSpec.from_json(resources.files("thinar") / "configs" / f"{name}.json")


def bisect(f, lo, hi, tol=BISECTION_TOL / 100):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_1_moment_map_fidelity(verdict):
    start = time.perf_counter()
    worst, ok = 0.0, True
    for pi, phi in itertools.product((0.4, 0.6, 0.8), repeat=2):
        p = ThinnedArParams(10, phi, pi)
        y = simulate_thinned_pois_ar(p, 10**6, seed=101).y
        m, se, th = sample_moments(y), moment_standard_errors(y), observed_moments(p)
        for f in ("mean", "variance", "acf1"):
            z = abs(getattr(m, f) - getattr(th, f)) / getattr(se, f)
            worst = max(worst, z)
            ok &= z < SE_MULT
    elapsed = time.perf_counter() - start
    assert verdict("criterion 1 moment-map fidelity", ok and elapsed < 30,
                   f"max |z| = {worst:.2f} (< {SE_MULT}), {elapsed:.1f} s (< 30 s)")


def test_2_moment_round_trip(verdict):
    start = time.perf_counter()
    err = 0.0
    for nu, phi, pi in itertools.product((0.2, 0.5, 0.8), repeat=3):
        est = invert_moments(observed_moments(ThinnedArParams(nu, phi, pi)))
        err = max(err, abs(est.phi - phi), abs(est.pi - pi), abs(est.nu - nu))
    elapsed = time.perf_counter() - start
    assert verdict("criterion 2 moment inversion round trip", err < ROUND_TRIP_TOL and elapsed < 1,
                   f"max abs error {err:.2e} (< {ROUND_TRIP_TOL:g}), {elapsed:.3f} s")


def test_3a_limit_crosses_at_printed_root(verdict):
    nu, phi = 5.0, 0.8

    def printed(pi):
        return phi - math.sqrt(1 - 1 / ((1 - pi) + 1 / pi))

    def excess(pi):
        return naive_limits(ThinnedArParams(nu, phi, pi)).nu_lim - nu

    root_printed = bisect(printed, 0.05, 0.95)
    root_limit = bisect(excess, 0.05, 0.95)
    gap = abs(root_printed - root_limit)
    assert verdict("criterion 3 part 1 crossing at printed root", gap <= BISECTION_TOL,
                   f"printed root {root_printed:.10f}, limit crosses at {root_limit:.10f}, gap {gap:.2e} "
                   f"(<= {BISECTION_TOL:g})")


def test_3b_naive_fit_matches_limits(verdict):
    start = time.perf_counter()
    lim = naive_limits(ThinnedArParams(10, 0.4, 0.4))
    y = simulate_thinned_pois_ar(ThinnedArParams(10, 0.4, 0.4), 10**6, seed=103).y
    fit = naive_pois_ar_mle(y)
    z_phi = abs(fit.phi_hat - lim.phi_lim) / fit.se_phi
    z_nu = abs(fit.nu_hat - lim.nu_lim) / fit.se_nu
    pinned = abs(lim.phi_lim - 0.176991) < 5e-7
    elapsed = time.perf_counter() - start
    ok = z_phi < SE_MULT and z_nu < SE_MULT and pinned and elapsed < 60
    assert verdict("criterion 3 part 2 naive MLE vs limits", ok,
                   f"phi_lim {lim.phi_lim:.6f}, |z_phi| {z_phi:.2f}, |z_nu| {z_nu:.2f}, {elapsed:.1f} s")


def test_4_sign_consistency(verdict):
    start = time.perf_counter()
    grid = np.linspace(0.01, 0.99, 50)
    neither = forms_disagree = 0
    for pi, phi in itertools.product(grid, grid):
        b = prop_bounds(pi, phi, warn=False)
        fd_neg = nu_lim_fd_slope(pi, phi) < 0
        neither += (b.nu_prime_negative != fd_neg) and (b.nu_prime_negative_alt != fd_neg)
        forms_disagree += b.nu_prime_negative != b.nu_prime_negative_alt
    elapsed = time.perf_counter() - start
    assert verdict("criterion 4 derivative sign vs printed forms", neither == 0 and elapsed < 10,
                   f"{neither}/2500 points agree with neither form; the two forms disagree at "
                   f"{forms_disagree} points; {elapsed:.1f} s")


def test_6_latent_gaussian_transform(verdict):
    start = time.perf_counter()
    pvals = {}
    for lam in (5.0, 50.0, 500.0):
        z = stream(106, int(lam)).standard_normal(10**5)
        x = reconstruct_counts(z, np.full_like(z, lam)).x
        hi = int(stats.poisson.ppf(1 - 1e-9, lam)) + 1
        expected = 10**5 * stats.poisson.pmf(np.arange(hi + 1), lam)
        expected[-1] += 10**5 * stats.poisson.sf(hi, lam)
        observed = np.bincount(np.minimum(x, hi), minlength=hi + 1).astype(float)
        # pool adjacent cells until each expects at least 5
        edges = np.searchsorted(np.cumsum(expected), np.arange(5, expected.sum(), 5), side="left")
        edges = np.unique(np.concatenate([[0], edges + 1]))
        edges = edges[edges <= hi]
        o = np.add.reduceat(observed, edges)
        e = np.add.reduceat(expected, edges)
        if e[-1] < 5:
            o[-2] += o[-1]
            e[-2] += e[-1]
            o, e = o[:-1], e[:-1]
        pvals[lam] = stats.chisquare(o, e).pvalue
    elapsed = time.perf_counter() - start
    ok = all(p > GOF_LEVEL for p in pvals.values()) and elapsed < 10
    assert verdict("criterion 6 latent Gaussian transform", ok,
                   ", ".join(f"lambda={k:g}: p={v:.3f}" for k, v in pvals.items()) + f"; {elapsed:.1f} s")


def test_7_sampler_correctness(verdict):
    start = time.perf_counter()
    params = ThinnedArParams(3.0, 0.5, 0.6)
    y = np.array([2, 1, 3])
    x1 = 4
    cells = list(itertools.product(range(y[1], 31), range(y[2], 31)))
    logw = np.array([log_joint_exact(params, [x1, a, b], y) for a, b in cells])
    w = np.exp(logw - logw.max())
    exact = dict(zip(cells, w / w.sum()))
    rng = stream(107)
    x = np.array([x1, 5, 5])
    width = proposal_width(params.nu, params.phi)
    counts: dict = {}
    n = 2 * 10**6
    for _ in range(n):
        x, _ = update_latent_counts(x, y, params, width, rng)
        key = (int(x[1]), int(x[2]))
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(exact.get(k, 0.0) - counts.get(k, 0) / n) for k in set(exact) | set(counts))

    def target(u, want_gradient=True):
        return -0.5 * float(u @ u), (-u if want_gradient else None)

    store = run_chains(target, ChainConfig(4, 5000, 1000, seed=107), dim=5)
    rhats = [split_rhat(store.draws[:, :, k]) for k in range(5)]
    mean_z = max(abs(store.draws[:, :, k].mean()) / mcse_mean(store.draws[:, :, k]) for k in range(5))
    elapsed = time.perf_counter() - start
    ok = tv <= TV_MAX and max(rhats) < RHAT_MAX and elapsed < 300
    assert verdict("criterion 7 sampler correctness", ok,
                   f"TV {tv:.4f} (<= {TV_MAX}), max split R-hat {max(rhats):.4f} (< {RHAT_MAX}), "
                   f"max |mean|/MCSE {mean_z:.2f}, {elapsed:.0f} s")


SCENARIOS = [(0.4, 0.4), (0.6, 0.6), (0.8, 0.8)]
N_REPLICATES = 10


@pytest.fixture(scope="module")
def paired_study():
    """Paired exact and approximate fits on simulated T=50 series, per scenario and replicate."""
    base = load_config("sim_study")
    rows = []
    for s, (pi, phi) in enumerate(SCENARIOS):
        spec = replace(base, truth={"nu.intercept": 10.0, "phi.intercept": phi, "pi.intercept": pi})
        for r in range(N_REPLICATES):
            sim = simulate_thinned_pois_ar(ThinnedArParams(10, phi, pi), 50, seed=105, stream=(s, r))
            data = ObservedSeries.single(sim.y, x=sim.x)
            ex = fit_exact(spec, data, replace(EXACT_CONFIG, seed=105), stream_keys=(s, r))
            ap = fit_approx(spec, data, replace(APPROX_CONFIG, seed=105), stream_keys=(s, r))
            row = {"scenario": (pi, phi), "replicate": r,
                   "rhat_exact": ex.rhat_max(["nu", "phi", "pi"]), "rhat_approx": ap.rhat_max(["nu", "phi", "pi"]),
                   "match": perfect_match_rate(ex.counts.drop_first(), ap.counts.drop_first())}
            for par in ("phi", "pi"):
                xe, xa = ex.store.column(par), ap.store.column(par)
                row[f"diff_{par}"] = abs(np.median(xa) - np.median(xe))
                row[f"mcse_{par}"] = math.hypot(mcse_quantile(xe, 0.5), mcse_quantile(xa, 0.5))
            rows.append(row)
    return rows


def _retained(rows):
    # a replicate is kept when the approximate fit converged; exact-model R-hat is then checked separately
    return [r for r in rows if r["rhat_approx"] < RHAT_MAX]


@pytest.mark.slow
def test_5a_posterior_medians_agree(paired_study, verdict):
    kept = _retained(paired_study)
    agree = [all(r[f"diff_{p}"] < AGREE_SE_MULT * r[f"mcse_{p}"] for p in ("phi", "pi")) for r in kept]
    frac = float(np.mean(agree)) if kept else 0.0
    per_par = {p: float(np.mean([r[f"diff_{p}"] < AGREE_SE_MULT * r[f"mcse_{p}"] for r in kept])) if kept else 0.0
               for p in ("phi", "pi")}
    assert verdict("criterion 5a approximate vs exact medians", frac >= AGREE_FRACTION,
                   f"{sum(agree)}/{len(kept)} retained replicates within {AGREE_SE_MULT}x combined MCSE for both "
                   f"phi and pi (phi alone {per_par['phi']:.0%}, pi alone {per_par['pi']:.0%}); need "
                   f">= {AGREE_FRACTION:.0%}")


@pytest.mark.slow
def test_5b_perfect_match_rate(paired_study, verdict):
    kept = [r for r in _retained(paired_study) if r["scenario"] == (0.8, 0.8)]
    rate = float(np.median([r["match"] for r in kept])) if kept else float("nan")
    ok = MATCH_RANGE[0] <= rate <= MATCH_RANGE[1]
    assert verdict("criterion 5b perfect-match rate at (0.8, 0.8)", ok,
                   f"median {rate:.2f} over {len(kept)} retained replicates, need {MATCH_RANGE}")


@pytest.mark.slow
def test_5c_exact_rhat(paired_study, verdict):
    kept = _retained(paired_study)
    worst = max((r["rhat_exact"] for r in kept), default=float("nan"))
    q = np.quantile([r["rhat_exact"] for r in kept], [0.025, 0.5, 0.975]) if kept else [float("nan")] * 3
    ok = bool(kept) and worst <= RHAT_MAX
    assert verdict("criterion 5c exact-model R-hat", ok,
                   f"{len(kept)}/{len(paired_study)} replicates retained, exact R-hat quantiles "
                   f"({q[0]:.3f}, {q[1]:.3f}, {q[2]:.3f}), max {worst:.3f} (<= {RHAT_MAX})")


@pytest.mark.slow
def test_8_reporting_probability_coverage(verdict):
    start = time.perf_counter()
    spec = load_config("rotavirus")
    truth = float(np.ravel(spec.truth["pi.intercept"])[0])
    config = replace(APPROX_CONFIG, seed=108, n_leapfrog=64)
    covered = 0
    for r in range(20):
        sim = simulate_general(spec, spec.t_len, 1, seed=108, replicate=r)[0]
        fit = fit_approx(spec, ObservedSeries.single(sim.y), config, reconstruct=False, stream_keys=(r,))
        lo, hi = np.quantile(fit.store.pooled("pi.intercept"), [0.025, 0.975])
        covered += lo <= truth <= hi
    elapsed = time.perf_counter() - start
    ok = covered >= COVERAGE_MIN and elapsed < 3600
    assert verdict("criterion 8 reporting-probability coverage", ok,
                   f"95% CrI covers pi = {1 / (1 + math.exp(-truth)):.2f} in {covered}/20 replicates "
                   f"(need >= {COVERAGE_MIN}), {elapsed / 60:.0f} min")
